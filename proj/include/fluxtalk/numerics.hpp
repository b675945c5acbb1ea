#pragma once

// Numerical building blocks shared by the calibration and CZ analyses:
// nonlinear least squares, weighted straight-line regression, the Lorentzian
// lineshape, a few robust statistics, and FFT peak location.

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>
#include <unsupported/Eigen/LevenbergMarquardt>

#include "fluxtalk/constants.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "fluxtalk/errors.hpp"

namespace fluxtalk::num {

// ---------------------------------------------------------------------------
// Statistics

inline double mean(std::span<const double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample standard deviation (n - 1).
inline double stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  double m = *mid;
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), mid));
  return m;
}

// Median absolute deviation scaled to a Gaussian sigma.
inline double robust_sigma(std::span<const double> v) {
  const double m = median({v.begin(), v.end()});
  std::vector<double> dev(v.size());
  std::transform(v.begin(), v.end(), dev.begin(), [m](double x) { return std::abs(x - m); });
  return 1.4826 * median(std::move(dev));
}

// ---------------------------------------------------------------------------
// Lineshape

// Peak-normalised Lorentzian: 1 at the centre, 1/2 at centre +- fwhm/2.
inline double lorentzian(double x, double center, double fwhm) {
  const double hw = 0.5 * fwhm;
  const double dx = x - center;
  return hw * hw / (dx * dx + hw * hw);
}

// ---------------------------------------------------------------------------
// Nonlinear least squares

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Fills `r` (size m) with weighted residuals at parameters x.
using ResidualFn = std::function<void(const Vector& x, Vector& r)>;

struct LsqOptions {
  int max_evaluations = 4000;
  double xtol = 1e-12;
  double ftol = 1e-14;
  // Relative finite-difference step for the Jacobian.
  double diff_step = 1e-7;
  // Scale the covariance by chi^2 / dof (residuals carry relative weights).
  bool scale_covariance = true;
};

struct LsqResult {
  Vector x;
  Matrix covariance;
  double chi2 = 0.0;
  int dof = 0;
  int status = 0;
  bool converged = false;

  double sigma(Eigen::Index i) const { return std::sqrt(std::max(covariance(i, i), 0.0)); }
  double reduced_chi2() const { return dof > 0 ? chi2 / dof : 0.0; }
};

namespace detail {

// Central-difference Jacobian of a residual function.
inline Matrix jacobian(const ResidualFn& f, const Vector& x, Eigen::Index m, double rel) {
  Matrix jac(m, x.size());
  Vector xp = x, rp(m), rm(m);
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = rel * std::max(std::abs(x[j]), 1e-3);
    xp[j] = x[j] + h;
    f(xp, rp);
    xp[j] = x[j] - h;
    f(xp, rm);
    xp[j] = x[j];
    jac.col(j) = (rp - rm) / (2.0 * h);
  }
  return jac;
}

struct LmAdapter : Eigen::DenseFunctor<double> {
  LmAdapter(const ResidualFn& f, int n, int m, double rel)
      : Eigen::DenseFunctor<double>(n, m), fn(f), step(rel) {}
  int operator()(const InputType& x, ValueType& r) const {
    fn(x, r);
    return 0;
  }
  int df(const InputType& x, JacobianType& jac) const {
    jac = jacobian(fn, x, values(), step);
    return 0;
  }
  const ResidualFn& fn;
  double step;
};

}  // namespace detail

// Minimises sum r_i(x)^2 by Levenberg-Marquardt and reports the covariance
// (J^T J)^-1 at the optimum.
inline LsqResult least_squares(const ResidualFn& f, Vector x0, Eigen::Index m,
                               const LsqOptions& opt = {}) {
  const auto n = x0.size();
  if (m < n) fail(ErrorKind::kPrecondition, "least squares: fewer residuals than parameters");
  detail::LmAdapter adapter(f, static_cast<int>(n), static_cast<int>(m), opt.diff_step);
  Eigen::LevenbergMarquardt<detail::LmAdapter> lm(adapter);
  lm.setMaxfev(opt.max_evaluations);
  lm.setXtol(opt.xtol);
  lm.setFtol(opt.ftol);
  const auto status = lm.minimize(x0);

  LsqResult res;
  res.x = x0;
  res.status = static_cast<int>(status);
  res.converged = status != Eigen::LevenbergMarquardtSpace::ImproperInputParameters &&
                  status != Eigen::LevenbergMarquardtSpace::TooManyFunctionEvaluation &&
                  status != Eigen::LevenbergMarquardtSpace::UserAsked;
  Vector r(m);
  f(x0, r);
  res.chi2 = r.squaredNorm();
  res.dof = static_cast<int>(m - n);
  const Matrix jac = detail::jacobian(f, x0, m, opt.diff_step);
  const Matrix jtj = jac.transpose() * jac;
  res.covariance = jtj.completeOrthogonalDecomposition().pseudoInverse();
  if (opt.scale_covariance && res.dof > 0) res.covariance *= res.reduced_chi2();
  res.covariance = (0.5 * (res.covariance + res.covariance.transpose())).eval();
  for (Eigen::Index i = 0; i < res.x.size(); ++i) {
    if (!std::isfinite(res.x[i])) res.converged = false;
  }
  if (!std::isfinite(res.chi2)) res.converged = false;
  return res;
}

// ---------------------------------------------------------------------------
// Straight-line regression y = intercept + slope * x

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_sigma = 0.0;
  double intercept_sigma = 0.0;
  double reduced_chi2 = 0.0;
  std::size_t points = 0;
};

// Weighted least squares with weights 1/sigma^2. Degenerate sigmas (empty,
// non-positive or non-finite) fall back to an unweighted fit. Uncertainties
// are scaled by the reduced chi^2 of the residuals.
inline LineFit fit_line(std::span<const double> x, std::span<const double> y,
                        std::span<const double> sigma = {}) {
  const std::size_t n = x.size();
  if (y.size() != n) fail(ErrorKind::kDimension, "fit_line: x/y size mismatch");
  if (n < 3) fail(ErrorKind::kPrecondition, "fit_line: need at least 3 points");
  bool weighted = sigma.size() == n;
  if (weighted) {
    for (double s : sigma) weighted = weighted && std::isfinite(s) && s > 0.0;
  }
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weighted ? 1.0 / (sigma[i] * sigma[i]) : 1.0;
    sw += w;
    sx += w * x[i];
    sy += w * y[i];
  }
  const double xm = sx / sw, ym = sy / sw;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weighted ? 1.0 / (sigma[i] * sigma[i]) : 1.0;
    sxx += w * (x[i] - xm) * (x[i] - xm);
    sxy += w * (x[i] - xm) * (y[i] - ym);
  }
  if (!(sxx > 0.0)) fail(ErrorKind::kPrecondition, "fit_line: x values have no spread");
  LineFit f;
  f.points = n;
  f.slope = sxy / sxx;
  f.intercept = ym - f.slope * xm;
  double chi2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weighted ? 1.0 / (sigma[i] * sigma[i]) : 1.0;
    const double r = y[i] - f.intercept - f.slope * x[i];
    chi2 += w * r * r;
  }
  f.reduced_chi2 = chi2 / static_cast<double>(n - 2);
  const double scale = f.reduced_chi2;
  f.slope_sigma = std::sqrt(scale / sxx);
  f.intercept_sigma = std::sqrt(scale * (1.0 / sw + xm * xm / sxx));
  return f;
}

// ---------------------------------------------------------------------------
// Spectral peak location

// Vertex offset in (-0.5, 0.5] of the parabola through three equally spaced
// samples, measured from the middle one.
inline double parabolic_offset(double left, double mid, double right) {
  const double denom = left - 2.0 * mid + right;
  if (denom == 0.0) return 0.0;
  return std::clamp(0.5 * (left - right) / denom, -0.5, 0.5);
}

struct SpectrumPeak {
  double frequency = 0.0;  // cycles per unit of the sample spacing's inverse
  double magnitude = 0.0;
  std::size_t bin = 0;
};

enum class Window { kRectangular, kHann };

// Magnitude spectrum (one-sided, bins 0..nfft/2) of a real trace, zero padded
// to nfft points after removing its mean and applying the window.
inline std::vector<double> magnitude_spectrum(std::span<const double> trace, std::size_t nfft,
                                              Window window = Window::kRectangular) {
  std::vector<double> padded(std::max(nfft, trace.size()), 0.0);
  const double m = mean(trace);
  const std::size_t n = trace.size();
  for (std::size_t i = 0; i < n; ++i) {
    double w = 1.0;
    if (window == Window::kHann && n > 1) {
      w = 0.5 - 0.5 * std::cos(constants::kTwoPi * static_cast<double>(i) / static_cast<double>(n - 1));
    }
    padded[i] = (trace[i] - m) * w;
  }
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> out;
  fft.fwd(out, padded);
  std::vector<double> mag(padded.size() / 2 + 1);
  for (std::size_t k = 0; k < mag.size(); ++k) mag[k] = std::abs(out[k]);
  return mag;
}

// Dominant positive-frequency peak of a uniformly sampled trace, refined by
// 3-point parabolic interpolation. Ties resolve to the lower frequency.
// `spacing` is the sample step; the result is in 1/spacing units.
inline SpectrumPeak dominant_frequency(std::span<const double> trace, double spacing,
                                       std::size_t pad_factor = 16,
                                       Window window = Window::kRectangular) {
  if (trace.size() < 4) fail(ErrorKind::kPrecondition, "spectrum: trace too short");
  std::size_t nfft = 1;
  while (nfft < trace.size() * pad_factor) nfft <<= 1;
  const auto mag = magnitude_spectrum(trace, nfft, window);
  std::size_t best = 0;
  for (std::size_t k = 1; k < mag.size(); ++k) {
    if (mag[k] > mag[best]) best = k;
  }
  SpectrumPeak peak;
  peak.bin = best;
  peak.magnitude = mag[best];
  if (best == 0 || peak.magnitude == 0.0) return peak;
  double offset = 0.0;
  if (best + 1 < mag.size()) offset = parabolic_offset(mag[best - 1], mag[best], mag[best + 1]);
  peak.frequency = (static_cast<double>(best) + offset) / (static_cast<double>(nfft) * spacing);
  return peak;
}

}  // namespace fluxtalk::num
