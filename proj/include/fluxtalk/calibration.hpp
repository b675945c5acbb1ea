#pragma once

// Measurement analysis: peak extraction, spectrum fits, crosstalk slopes from
// MZLC and Ramsey scans, matrix assembly, metrics and compensation checks.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fluxtalk/constants.hpp"
#include "fluxtalk/device_model.hpp"
#include "fluxtalk/errors.hpp"
#include "fluxtalk/linalg.hpp"
#include "fluxtalk/numerics.hpp"
#include "fluxtalk/rng.hpp"
#include "fluxtalk/scan_map.hpp"
#include "fluxtalk/virtual_device.hpp"

namespace fluxtalk::cal {

// ---------------------------------------------------------------------------
// Lorentzian line fits

struct LorentzFit {
  double center = 0.0;
  double center_sigma = 0.0;
  double fwhm = 0.0;
  double amplitude = 0.0;
  double amplitude_sigma = 0.0;
  double offset = 0.0;
};

// offset + amplitude * L(x; center, fwhm) fitted around the sample maximum.
// x must be sorted ascending with at least 5 samples. Returns nullopt if the
// fit does not converge or the maximum sits on the first or last sample.
inline std::optional<LorentzFit> fit_lorentzian(std::span<const double> x,
                                                std::span<const double> y) {
  const std::size_t n = x.size();
  if (y.size() != n) fail(ErrorKind::kDimension, "fit_lorentzian: x/y size mismatch");
  if (n < 5) fail(ErrorKind::kPrecondition, "fit_lorentzian: need at least 5 samples");

  const std::size_t imax =
      static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
  if (imax == 0 || imax + 1 == n) return std::nullopt;
  const double base = num::median({y.begin(), y.end()});
  const double height = y[imax] - base;
  const double half = base + 0.5 * height;
  std::size_t lo = imax, hi = imax;
  while (lo > 0 && y[lo - 1] > half) --lo;
  while (hi + 1 < n && y[hi + 1] > half) ++hi;
  const double step = (x[n - 1] - x[0]) / static_cast<double>(n - 1);
  const double fwhm0 = std::max(x[hi] - x[lo] + step, step);

  // Window of +-4 estimated linewidths, never fewer than 5 samples.
  const double reach = 4.0 * fwhm0;
  std::size_t a = imax, b = imax;
  while (a > 0 && x[imax] - x[a - 1] <= reach) --a;
  while (b + 1 < n && x[b + 1] - x[imax] <= reach) ++b;
  while (b - a + 1 < 5) {
    if (a > 0) --a;
    if (b - a + 1 < 5 && b + 1 < n) ++b;
  }
  const std::size_t m = b - a + 1;

  // Work in units of the grid step around the maximum so parameters are O(1).
  const double x0 = x[imax];
  const double scale = height != 0.0 ? std::abs(height) : 1.0;
  std::vector<double> u(m), w(m);
  for (std::size_t i = 0; i < m; ++i) {
    u[i] = (x[a + i] - x0) / step;
    w[i] = (y[a + i] - base) / scale;
  }
  const auto resid = [&](const num::Vector& p, num::Vector& r) {
    for (std::size_t i = 0; i < m; ++i) {
      r[static_cast<Eigen::Index>(i)] = p[3] + p[2] * num::lorentzian(u[i], p[0], p[1]) - w[i];
    }
  };
  num::Vector p0(4);
  p0 << 0.0, fwhm0 / step, 1.0, 0.0;
  num::LsqOptions lsq;
  lsq.max_evaluations = 1000;
  num::LsqResult res;
  try {
    res = num::least_squares(resid, p0, static_cast<Eigen::Index>(m), lsq);
  } catch (const Error&) {
    return std::nullopt;
  }
  if (!res.converged) return std::nullopt;

  LorentzFit f;
  f.center = x0 + res.x[0] * step;
  f.center_sigma = res.sigma(0) * step;
  f.fwhm = std::abs(res.x[1]) * step;
  f.amplitude = res.x[2] * scale;
  f.amplitude_sigma = res.sigma(2) * scale;
  f.offset = base + res.x[3] * scale;
  if (!std::isfinite(f.center) || !std::isfinite(f.center_sigma)) return std::nullopt;
  return f;
}

// ---------------------------------------------------------------------------
// Spectroscopy

struct PeakSeries {
  std::vector<double> bias;       // V
  std::vector<double> peak_freq;  // MHz
  std::vector<double> peak_sigma; // MHz

  std::size_t size() const noexcept { return bias.size(); }
  void validate() const {
    if (peak_freq.size() != bias.size() || peak_sigma.size() != bias.size()) {
      fail(ErrorKind::kDimension, "peak series arrays differ in length");
    }
    for (double s : peak_sigma) {
      if (!(s > 0.0)) fail(ErrorKind::kDomain, "peak sigma must be > 0");
    }
  }
};

// Floor for reported centre uncertainties so downstream weights stay finite.
inline constexpr double kMinPeakSigmaMhz = 1e-9;

struct PeakOptions {
  double min_amplitude_noise = 3.0;   // fitted amplitude / robust column noise
  double min_amplitude_snr = 10.0;    // fitted amplitude / its standard error
  double max_fwhm_fraction = 0.25;    // of the frequency span
};

// Per-column Lorentzian fit of a spectroscopy map. A column is dropped when
// its fitted amplitude is below 3 noise sigmas (robust estimate over the
// column) or poorly determined, its linewidth is below one grid step or
// broader than a quarter of the span, or its centre leaves the grid.
// Single-sample noise spikes fit with amplitude/sigma below ~8; real lines
// at the default noise level sit near 20.
inline PeakSeries extract_peaks(const ScanMap& scan, const PeakOptions& opt = {}) {
  if (scan.kind != ScanKind::kSpectroscopy) {
    fail(ErrorKind::kPrecondition, "extract_peaks: expected a spectroscopy scan");
  }
  const auto& f = scan.y_axis.values;
  if (f.size() < 5) fail(ErrorKind::kPrecondition, "extract_peaks: need >= 5 frequency points");
  const double step = (f.back() - f.front()) / static_cast<double>(f.size() - 1);

  PeakSeries out;
  for (std::size_t ix = 0; ix < scan.x_axis.size(); ++ix) {
    const auto col = scan.column(ix);
    const double noise = num::robust_sigma(col);
    const auto fit = fit_lorentzian(f, col);
    if (!fit) continue;
    if (!(fit->amplitude > opt.min_amplitude_noise * noise) || fit->amplitude <= 0.0) continue;
    if (fit->amplitude < opt.min_amplitude_snr * fit->amplitude_sigma) continue;
    if (fit->fwhm < step || fit->fwhm > opt.max_fwhm_fraction * (f.back() - f.front())) continue;
    if (fit->center < f.front() || fit->center > f.back()) continue;
    out.bias.push_back(scan.x_axis.values[ix]);
    out.peak_freq.push_back(fit->center);
    out.peak_sigma.push_back(std::max(fit->center_sigma, kMinPeakSigmaMhz));
  }
  if (out.size() == 0) fail(ErrorKind::kNoSignal, "extract_peaks: no column holds a peak");
  return out;
}

struct SpectrumFit {
  double f01_max_mhz = 0.0;
  double ac_rad_per_v = 0.0;
  double v_ofs_v = 0.0;
  double d = 0.0;              // fixed input
  double ec_over_h_mhz = 0.0;  // fixed input
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();  // (f01_max, A_c, V_ofs)
  double residual_rms_mhz = 0.0;
  std::size_t points_used = 0;

  double sigma(int i) const { return std::sqrt(std::max(covariance(i, i), 0.0)); }

  model::TransmonParams params(std::string label = {},
                               model::Role role = model::Role::kQubit) const {
    return {std::move(label), role, f01_max_mhz, ec_over_h_mhz, d, ac_rad_per_v, v_ofs_v};
  }
};

struct SpectrumFitOptions {
  int max_evaluations = 4000;
  // Points further than this many robust sigmas from the first fit are
  // dropped and the fit repeated once. 0 disables the pass.
  double outlier_threshold = 6.0;
};

namespace detail {

inline double wrap_offset(double v_ofs, double ac) {
  const double period = constants::kPi / ac;
  return v_ofs - period * std::round(v_ofs / period);
}

}  // namespace detail

// Weighted fit of f01(V) over (f01_max, A_c, V_ofs) with d and E_C/h fixed.
inline SpectrumFit fit_spectrum(const PeakSeries& peaks, double d, double ec_over_h_mhz,
                                const SpectrumFitOptions& opt = {}) {
  peaks.validate();
  if (!(d >= 0.0 && d < 1.0)) fail(ErrorKind::kDomain, "fit_spectrum: d must lie in [0, 1)");
  if (!(ec_over_h_mhz > 0.0)) fail(ErrorKind::kDomain, "fit_spectrum: E_C/h must be > 0");
  if (peaks.size() < 5) fail(ErrorKind::kPrecondition, "fit_spectrum: need at least 5 peaks");

  std::vector<std::size_t> use(peaks.size());
  for (std::size_t i = 0; i < use.size(); ++i) use[i] = i;

  // Start at the highest peak after a 3-point running median along bias, so a
  // lone spurious line cannot seed the fit.
  std::vector<std::size_t> order(peaks.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return peaks.bias[a] < peaks.bias[b]; });
  double fmax0 = -std::numeric_limits<double>::infinity();
  double vofs0 = 0.0;
  for (std::size_t j = 0; j < order.size(); ++j) {
    const std::size_t lo = j > 0 ? j - 1 : 0, hi = std::min(j + 1, order.size() - 1);
    std::vector<double> win;
    for (std::size_t k = lo; k <= hi; ++k) win.push_back(peaks.peak_freq[order[k]]);
    const double smooth = win.size() == 3 ? num::median(win) : *std::min_element(win.begin(), win.end());
    if (smooth > fmax0) {
      fmax0 = smooth;
      vofs0 = peaks.bias[order[j]];
    }
  }

  // A_c from inverting the model point by point at the initial f01_max/V_ofs.
  const double d2 = d * d;
  std::vector<double> ac_guesses;
  for (std::size_t i = 0; i < peaks.size(); ++i) {
    const double dv = std::abs(peaks.bias[i] - vofs0);
    if (dv <= 0.0) continue;
    const double k = (peaks.peak_freq[i] + ec_over_h_mhz) / (fmax0 + ec_over_h_mhz);
    const double c2 = (std::pow(k, 4) - d2) / (1.0 - d2);
    if (!(c2 > 0.0 && c2 < 1.0)) continue;
    const double phi = std::acos(std::sqrt(c2));
    if (phi > 0.05 && phi < 1.5) ac_guesses.push_back(phi / dv);
  }
  const auto [bmin, bmax] = std::minmax_element(peaks.bias.begin(), peaks.bias.end());
  const double span = *bmax - *bmin;
  if (!(span > 0.0)) fail(ErrorKind::kPrecondition, "fit_spectrum: bias span is zero");
  const double ac0 = ac_guesses.empty() ? constants::kPi / span : num::median(ac_guesses);
  if (span * ac0 / constants::kPi < 0.25) {
    fail(ErrorKind::kPrecondition, "fit_spectrum: bias span covers less than 1/4 flux period");
  }

  num::LsqOptions lsq;
  lsq.max_evaluations = opt.max_evaluations;
  num::Vector x(3);
  x << fmax0, ac0, vofs0;
  num::LsqResult res;

  const auto run = [&] {
    const auto resid = [&](const num::Vector& p, num::Vector& r) {
      const model::TransmonParams tp{"", model::Role::kQubit, p[0], ec_over_h_mhz, d, p[1], p[2]};
      for (std::size_t j = 0; j < use.size(); ++j) {
        const std::size_t i = use[j];
        r[static_cast<Eigen::Index>(j)] =
            (model::f01_of_voltage(tp, peaks.bias[i]) - peaks.peak_freq[i]) / peaks.peak_sigma[i];
      }
    };
    res = num::least_squares(resid, x, static_cast<Eigen::Index>(use.size()), lsq);
    if (!res.converged) {
      fail(ErrorKind::kFit, "fit_spectrum: no convergence, chi2 = " + std::to_string(res.chi2));
    }
    x = res.x;
  };
  run();

  if (opt.outlier_threshold > 0.0) {
    const model::TransmonParams tp{"", model::Role::kQubit, x[0], ec_over_h_mhz, d, x[1], x[2]};
    std::vector<double> r(use.size());
    for (std::size_t j = 0; j < use.size(); ++j) {
      const std::size_t i = use[j];
      r[j] = (model::f01_of_voltage(tp, peaks.bias[i]) - peaks.peak_freq[i]) / peaks.peak_sigma[i];
    }
    const double cut = opt.outlier_threshold * std::max(num::robust_sigma(r), 1.0);
    std::vector<std::size_t> keep;
    for (std::size_t j = 0; j < use.size(); ++j) {
      if (std::abs(r[j]) <= cut) keep.push_back(use[j]);
    }
    if (keep.size() < use.size() && keep.size() >= 5) {
      use = std::move(keep);
      run();
    }
  }

  SpectrumFit out;
  out.f01_max_mhz = x[0];
  out.ac_rad_per_v = std::abs(x[1]);
  out.v_ofs_v = detail::wrap_offset(x[2], out.ac_rad_per_v);
  out.d = d;
  out.ec_over_h_mhz = ec_over_h_mhz;
  out.covariance = res.covariance;
  if (x[1] < 0.0) {
    // A_c -> |A_c| flips the sign of its cross terms.
    out.covariance.row(1) *= -1.0;
    out.covariance.col(1) *= -1.0;
  }
  out.points_used = use.size();
  const auto tp = out.params();
  double ss = 0.0;
  for (std::size_t i : use) {
    const double r = model::f01_of_voltage(tp, peaks.bias[i]) - peaks.peak_freq[i];
    ss += r * r;
  }
  out.residual_rms_mhz = std::sqrt(ss / static_cast<double>(use.size()));
  return out;
}

// ---------------------------------------------------------------------------
// Crosstalk estimates

enum class Method { kMzlc, kRamsey };

inline const char* to_string(Method m) { return m == Method::kMzlc ? "mzlc" : "ramsey"; }

inline Method method_from_string(const std::string& s) {
  if (s == "mzlc") return Method::kMzlc;
  if (s == "ramsey") return Method::kRamsey;
  fail(ErrorKind::kConfig, "unknown method '" + s + "'");
}

struct CrosstalkEstimate {
  std::string probe;
  std::string source;
  double x = 0.0;
  double sigma = 0.0;
  Method method = Method::kMzlc;
  double intercept_freq_mhz = 0.0;
  std::size_t columns_used = 0;
};

// Ridge of an MZLC map: per source column the probe-bias resonance position
// from a Lorentzian fit, then a weighted line through those positions.
// X = -slope. With a probe spectrum, intercept_freq is f01 at the ridge
// intercept; otherwise the drive frequency.
inline CrosstalkEstimate extract_ridge_mzlc(const ScanMap& scan,
                                            const SpectrumFit* probe_fit = nullptr) {
  if (scan.kind != ScanKind::kMzlc) fail(ErrorKind::kPrecondition, "expected an mzlc scan");
  if (!scan.meta.source_label) fail(ErrorKind::kPrecondition, "mzlc scan has no source label");
  const auto& vp = scan.y_axis.values;
  std::vector<double> xs, ys, ss;
  for (std::size_t ix = 0; ix < scan.x_axis.size(); ++ix) {
    const auto col = scan.column(ix);
    const double noise = num::robust_sigma(col);
    const auto fit = fit_lorentzian(vp, col);
    if (!fit || !(fit->amplitude > 3.0 * noise) || fit->amplitude <= 0.0) continue;
    if (fit->center < vp.front() || fit->center > vp.back()) continue;
    xs.push_back(scan.x_axis.values[ix]);
    ys.push_back(fit->center);
    ss.push_back(fit->center_sigma);
  }
  if (xs.size() < 3) {
    fail(ErrorKind::kNoSignal, "mzlc: fewer than 3 usable ridge columns (" + scan.file_stem() + ")");
  }
  const auto line = num::fit_line(xs, ys, ss);

  CrosstalkEstimate e;
  e.probe = scan.meta.probe_label;
  e.source = *scan.meta.source_label;
  e.x = -line.slope;
  e.sigma = line.slope_sigma;
  e.method = Method::kMzlc;
  e.columns_used = xs.size();
  if (probe_fit != nullptr) {
    e.intercept_freq_mhz = model::f01_of_voltage(probe_fit->params(), line.intercept);
  } else {
    e.intercept_freq_mhz = scan.meta.drive_freq_mhz.value_or(0.0);
  }
  return e;
}

// Ramsey fringes: the detuning of each source column is the dominant FFT
// frequency along the delay axis. The slope d(detuning)/dV_s divided by the
// probe's local df01/dV gives X. The uncertainty combines the regression
// with the spectrum-fit covariance propagated through df01/dV.
inline CrosstalkEstimate extract_ridge_ramsey(const ScanMap& scan, const SpectrumFit& probe_fit) {
  if (scan.kind != ScanKind::kRamsey) fail(ErrorKind::kPrecondition, "expected a ramsey scan");
  if (!scan.meta.source_label || !scan.meta.probe_bias_v || !scan.meta.drive_freq_mhz) {
    fail(ErrorKind::kPrecondition, "ramsey scan lacks source, probe bias or drive metadata");
  }
  if (!scan.y_axis.uniform() || !scan.x_axis.uniform()) {
    fail(ErrorKind::kPrecondition, "ramsey: grids must be uniform");
  }
  const double dt_ns = scan.y_axis.step();
  const double v_p = *scan.meta.probe_bias_v;
  const double f_drive = *scan.meta.drive_freq_mhz;
  const auto params = probe_fit.params();
  const double sign = model::f01_of_voltage(params, v_p) >= f_drive ? 1.0 : -1.0;

  std::vector<double> xs, det;
  for (std::size_t ix = 0; ix < scan.x_axis.size(); ++ix) {
    const auto peak = num::dominant_frequency(scan.column(ix), dt_ns, 16, num::Window::kHann);
    if (peak.bin == 0 || !(peak.frequency > 0.0)) continue;
    xs.push_back(scan.x_axis.values[ix]);
    det.push_back(sign * peak.frequency / constants::kMHzNs);
  }
  if (xs.size() < 3) {
    fail(ErrorKind::kNoSignal, "ramsey: no fringes (" + scan.file_stem() + ")");
  }
  const auto line = num::fit_line(xs, det);

  const double fp = model::df01_dv(params, v_p);
  if (!(std::abs(fp) > 0.0)) fail(ErrorKind::kDegenerate, "ramsey: probe biased at a sweet spot");

  // Delta-method propagation of the spectrum covariance into df01/dV.
  Eigen::Vector3d grad;
  const double theta[3] = {probe_fit.f01_max_mhz, probe_fit.ac_rad_per_v, probe_fit.v_ofs_v};
  for (int k = 0; k < 3; ++k) {
    const double h = 1e-6 * std::max(std::abs(theta[k]), 1e-3);
    auto up = params, dn = params;
    double* fields_up[3] = {&up.f01_max_mhz, &up.ac_rad_per_v, &up.v_ofs_v};
    double* fields_dn[3] = {&dn.f01_max_mhz, &dn.ac_rad_per_v, &dn.v_ofs_v};
    *fields_up[k] += h;
    *fields_dn[k] -= h;
    grad[k] = (model::df01_dv(up, v_p) - model::df01_dv(dn, v_p)) / (2.0 * h);
  }
  const double var_fp = std::max(grad.dot(probe_fit.covariance * grad), 0.0);

  CrosstalkEstimate e;
  e.probe = scan.meta.probe_label;
  e.source = *scan.meta.source_label;
  e.x = line.slope / fp;
  const double rel_slope = line.slope_sigma / std::abs(fp);
  const double rel_fp = std::abs(e.x) * std::sqrt(var_fp) / std::abs(fp);
  e.sigma = std::hypot(rel_slope, rel_fp);
  e.method = Method::kRamsey;
  e.intercept_freq_mhz = f_drive + line.intercept;
  e.columns_used = xs.size();
  return e;
}

// ---------------------------------------------------------------------------
// Matrix assembly and metrics

namespace detail {

inline std::vector<const CrosstalkEstimate*> index_estimates(
    std::span<const CrosstalkEstimate> estimates, const std::vector<std::string>& labels) {
  const std::size_t n = labels.size();
  const auto find = [&](const std::string& l) -> std::size_t {
    const auto it = std::find(labels.begin(), labels.end(), l);
    if (it == labels.end()) fail(ErrorKind::kUnknownLabel, "estimate names unknown label " + l);
    return static_cast<std::size_t>(it - labels.begin());
  };
  std::vector<const CrosstalkEstimate*> slot(n * n, nullptr);
  for (const auto& e : estimates) {
    const std::size_t p = find(e.probe), s = find(e.source);
    if (p == s) fail(ErrorKind::kPrecondition, "estimate with probe == source (" + e.probe + ")");
    if (slot[p * n + s] != nullptr) {
      fail(ErrorKind::kPrecondition, "duplicate estimate " + e.probe + "<-" + e.source);
    }
    slot[p * n + s] = &e;
  }
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t s = 0; s < n; ++s) {
      if (p != s && slot[p * n + s] == nullptr) {
        fail(ErrorKind::kPrecondition, "missing estimate " + labels[p] + "<-" + labels[s]);
      }
    }
  }
  return slot;
}

}  // namespace detail

inline model::CrosstalkMatrix assemble_matrix(std::span<const CrosstalkEstimate> estimates,
                                              const std::vector<std::string>& labels) {
  const std::size_t n = labels.size();
  const auto slot = detail::index_estimates(estimates, labels);
  DenseMatrix x = DenseMatrix::identity(n);
  for (std::size_t i = 0; i < n * n; ++i) {
    if (slot[i] != nullptr) x(i / n, i % n) = slot[i]->x;
  }
  return model::CrosstalkMatrix(labels, std::move(x));
}

// Per-entry sigmas laid out like assemble_matrix (diagonal 0).
inline DenseMatrix assemble_sigmas(std::span<const CrosstalkEstimate> estimates,
                                   const std::vector<std::string>& labels) {
  const std::size_t n = labels.size();
  const auto slot = detail::index_estimates(estimates, labels);
  DenseMatrix s(n, n);
  for (std::size_t i = 0; i < n * n; ++i) {
    if (slot[i] != nullptr) s(i / n, i % n) = slot[i]->sigma;
  }
  return s;
}

struct CrosstalkMetrics {
  double largest_negative = 0.0;
  double largest_positive = 0.0;
  double average_abs = 0.0;
  double total_abs = 0.0;
  double matrix_asymmetry = 0.0;
  DenseMatrix db_map;
};

inline constexpr double kDbFloor = -120.0;

inline double to_db(double x, double floor_db = kDbFloor) {
  const double a = std::abs(x);
  if (a == 0.0) return floor_db;
  return std::max(20.0 * std::log10(a), floor_db);
}

inline CrosstalkMetrics metrics(const DenseMatrix& x, double db_floor = kDbFloor) {
  const std::size_t n = x.rows();
  if (x.cols() != n) fail(ErrorKind::kDimension, "metrics: matrix must be square");
  if (n < 2) fail(ErrorKind::kPrecondition, "metrics: need N >= 2");
  CrosstalkMetrics m;
  m.db_map = DenseMatrix(n, n);
  bool first = true;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      m.db_map(i, k) = to_db(x(i, k), db_floor);
      if (i == k) continue;
      const double v = x(i, k);
      if (first) {
        m.largest_negative = m.largest_positive = v;
        first = false;
      }
      m.largest_negative = std::min(m.largest_negative, v);
      m.largest_positive = std::max(m.largest_positive, v);
      m.total_abs += std::abs(v);
      m.matrix_asymmetry += std::abs(std::abs(v) - std::abs(x(k, i)));
    }
  }
  m.average_abs = m.total_abs / static_cast<double>(n * (n - 1));
  return m;
}

inline CrosstalkMetrics metrics(const model::CrosstalkMatrix& x, double db_floor = kDbFloor) {
  return metrics(x.entries(), db_floor);
}

// ---------------------------------------------------------------------------
// End-to-end characterization

enum class MethodSelection { kMzlc, kRamsey, kBoth };

inline MethodSelection method_selection_from_string(const std::string& s) {
  if (s == "mzlc") return MethodSelection::kMzlc;
  if (s == "ramsey") return MethodSelection::kRamsey;
  if (s == "both") return MethodSelection::kBoth;
  fail(ErrorKind::kConfig, "unknown method '" + s + "' (mzlc|ramsey|both)");
}

struct SpectroscopyPlan {
  std::size_t bias_points = 121;     // over one flux period centred on 0 V
  double below_max_mhz = 1500.0;     // frequency window relative to design f01_max
  double above_max_mhz = 50.0;
  double step_mhz = 1.0;
};

struct MzlcPlan {
  double operating_flux = constants::kPi / 4.0;  // probe working point
  double source_half_range_v = 0.3;
  std::size_t source_points = 61;
  double probe_half_range_v = 0.03;
  double probe_step_linewidths = 0.25;
  std::size_t max_probe_points = 2001;
};

struct RamseyPlan {
  double detuning_mhz = 9.0;   // drive below f01 at the working point
  double t_max_ns = 2000.0;
  double dt_ns = 10.0;
  double source_half_range_v = 0.05;
  // The source sweep is narrowed so |X| up to this value moves the fringe
  // frequency by at most max_sweep_mhz.
  double max_expected_crosstalk = 0.07;
  double max_sweep_mhz = 5.0;
  std::size_t source_points = 41;
};

struct CharacterizeOptions {
  MethodSelection method = MethodSelection::kMzlc;
  int repeats = 1;
  SpectroscopyPlan spectroscopy;
  MzlcPlan mzlc;
  RamseyPlan ramsey;
  // Cancellation matrix applied to every scan (compensated re-measurement).
  std::optional<DenseMatrix> compensation;
  // Reuse these spectrum fits (one per element) instead of measuring.
  std::optional<std::vector<SpectrumFit>> spectra;
  unsigned jobs = 1;
  // Keep the spectroscopy scans and the first repeat of every pair scan.
  bool keep_scans = false;
};

struct MatrixResult {
  Method method = Method::kMzlc;
  model::CrosstalkMatrix matrix;
  DenseMatrix sigma;
  std::vector<CrosstalkEstimate> estimates;  // aggregated over repeats
  int repeats = 1;
};

struct PairAgreement {
  std::string probe;
  std::string source;
  double difference = 0.0;
  double combined_sigma = 0.0;
  bool within_2sigma = false;
};

struct Characterization {
  std::vector<std::string> labels;
  std::vector<SpectrumFit> spectra;
  std::optional<MatrixResult> mzlc;
  std::optional<MatrixResult> ramsey;
  std::vector<PairAgreement> agreement;  // only when both methods ran
  std::vector<ScanMap> scans;            // when CharacterizeOptions::keep_scans

  const MatrixResult& primary() const { return mzlc ? *mzlc : *ramsey; }
};

namespace detail {

// Runs task(i) for i in [0, n) on up to `jobs` threads. Results must be
// written to per-index slots; the first failure by index is rethrown.
template <class Task>
void parallel_for(std::size_t n, unsigned jobs, Task task) {
  std::vector<std::exception_ptr> errors(n);
  const auto body = [&](std::atomic<std::size_t>& next) {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        task(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::atomic<std::size_t> next{0};
  const unsigned workers = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(n)));
  if (workers <= 1) {
    body(next);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back([&] { body(next); });
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline sim::ScanOptions scan_options(const CharacterizeOptions& opt, std::uint64_t salt) {
  sim::ScanOptions so;
  so.salt = salt;
  so.compensation = opt.compensation ? &*opt.compensation : nullptr;
  return so;
}

inline std::vector<double> grid(double lo, double hi, double step) {
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = lo + step * static_cast<double>(i);
  return g;
}

inline double probe_working_voltage(const SpectrumFit& fit, double operating_flux) {
  return fit.v_ofs_v + operating_flux / fit.ac_rad_per_v;
}

inline MatrixResult aggregate(Method method, const std::vector<std::string>& labels,
                              const std::vector<std::vector<CrosstalkEstimate>>& per_pair,
                              int repeats) {
  std::vector<CrosstalkEstimate> agg;
  agg.reserve(per_pair.size());
  for (const auto& runs : per_pair) {
    CrosstalkEstimate e = runs.front();
    if (runs.size() > 1) {
      std::vector<double> xs, fs;
      for (const auto& r : runs) {
        xs.push_back(r.x);
        fs.push_back(r.intercept_freq_mhz);
      }
      e.x = num::mean(xs);
      e.sigma = num::stddev(xs);
      e.intercept_freq_mhz = num::mean(fs);
    }
    agg.push_back(std::move(e));
  }
  return MatrixResult{method, assemble_matrix(agg, labels), assemble_sigmas(agg, labels),
                      std::move(agg), repeats};
}

}  // namespace detail

// Spectroscopy of every element on its own line, then peak extraction and fit.
inline std::vector<SpectrumFit> measure_spectra(const sim::DeviceConfig& dev,
                                                const CharacterizeOptions& opt = {},
                                                std::vector<ScanMap>* scans = nullptr) {
  const auto& plan = opt.spectroscopy;
  std::vector<SpectrumFit> fits(dev.size());
  if (scans != nullptr) scans->assign(dev.size(), ScanMap{});
  detail::parallel_for(dev.size(), opt.jobs, [&](std::size_t i) {
    const auto& t = dev.transmons()[i];
    const double period = t.period_v();
    const auto v = linspace(-0.5 * period, 0.5 * period, plan.bias_points);
    const auto f = detail::grid(t.f01_max_mhz - plan.below_max_mhz,
                                t.f01_max_mhz + plan.above_max_mhz, plan.step_mhz);
    const auto scan = sim::two_tone_scan(dev, t.label, v, f, std::nullopt,
                                         detail::scan_options(opt, derive_seed({0x5bec, 0})));
    fits[i] = fit_spectrum(extract_peaks(scan), t.d, t.ec_over_h_mhz);
    if (scans != nullptr) (*scans)[i] = scan;
  });
  return fits;
}

inline ScanMap plan_mzlc_scan(const sim::DeviceConfig& dev, const SpectrumFit& probe_fit,
                              std::size_t probe, std::size_t source,
                              const CharacterizeOptions& opt, std::uint64_t salt) {
  const auto& plan = opt.mzlc;
  const auto fp = probe_fit.params(dev.transmons()[probe].label);
  const double v_op = detail::probe_working_voltage(probe_fit, plan.operating_flux);
  const double f_drive = model::f01_of_voltage(fp, v_op);
  const double linewidth_v = dev.noise().fwhm() / std::abs(model::df01_dv(fp, v_op));
  const double step = std::max(plan.probe_step_linewidths * linewidth_v,
                               2.0 * plan.probe_half_range_v /
                                   static_cast<double>(plan.max_probe_points - 1));
  const auto n_probe =
      static_cast<std::size_t>(std::ceil(2.0 * plan.probe_half_range_v / step)) + 1;
  const auto vp = linspace(v_op - plan.probe_half_range_v, v_op + plan.probe_half_range_v, n_probe);
  const auto vs = linspace(-plan.source_half_range_v, plan.source_half_range_v, plan.source_points);
  return sim::mzlc_scan(dev, fp.label, dev.transmons()[source].label, f_drive, vs, vp,
                        detail::scan_options(opt, salt));
}

inline ScanMap plan_ramsey_scan(const sim::DeviceConfig& dev, const SpectrumFit& probe_fit,
                                std::size_t probe, std::size_t source,
                                const CharacterizeOptions& opt, std::uint64_t salt) {
  const auto& plan = opt.ramsey;
  const auto fp = probe_fit.params(dev.transmons()[probe].label);
  const double v_op = detail::probe_working_voltage(probe_fit, opt.mzlc.operating_flux);
  const double f_drive = model::f01_of_voltage(fp, v_op) - plan.detuning_mhz;
  const double slope = std::abs(model::df01_dv(fp, v_op));
  const double half = std::min(plan.source_half_range_v,
                               plan.max_sweep_mhz / (slope * plan.max_expected_crosstalk));
  const auto vs = linspace(-half, half, plan.source_points);
  const auto t = detail::grid(0.0, plan.t_max_ns, plan.dt_ns);
  return sim::ramsey_scan(dev, fp.label, dev.transmons()[source].label, t, vs, v_op, f_drive,
                          detail::scan_options(opt, salt));
}

// Full pipeline: spectra, then every ordered (probe, source) pair by the
// selected method(s), repeated and aggregated.
inline Characterization characterize(const sim::DeviceConfig& dev,
                                     const CharacterizeOptions& opt = {}) {
  if (opt.repeats < 1) fail(ErrorKind::kConfig, "repeats must be >= 1");
  const std::size_t n = dev.size();
  Characterization out;
  out.labels = dev.x_true().labels();
  if (opt.spectra) {
    if (opt.spectra->size() != n) fail(ErrorKind::kDimension, "one spectrum fit per element");
    out.spectra = *opt.spectra;
  } else {
    out.spectra = measure_spectra(dev, opt, opt.keep_scans ? &out.scans : nullptr);
  }
  if (n < 2) {
    out.mzlc = MatrixResult{Method::kMzlc, model::CrosstalkMatrix::identity(out.labels),
                            DenseMatrix(n, n), {}, opt.repeats};
    return out;
  }

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t s = 0; s < n; ++s) {
      if (p != s) pairs.emplace_back(p, s);
    }
  }
  const auto reps = static_cast<std::size_t>(opt.repeats);

  const auto run = [&](Method method) {
    std::vector<std::vector<CrosstalkEstimate>> per_pair(pairs.size(),
                                                         std::vector<CrosstalkEstimate>(reps));
    std::vector<ScanMap> kept(opt.keep_scans ? pairs.size() : 0);
    detail::parallel_for(pairs.size() * reps, opt.jobs, [&](std::size_t task) {
      const std::size_t k = task / reps, r = task % reps;
      const auto [p, s] = pairs[k];
      const std::uint64_t salt = derive_seed({static_cast<std::uint64_t>(method), r});
      ScanMap scan;
      if (method == Method::kMzlc) {
        scan = plan_mzlc_scan(dev, out.spectra[p], p, s, opt, salt);
        per_pair[k][r] = extract_ridge_mzlc(scan, &out.spectra[p]);
      } else {
        scan = plan_ramsey_scan(dev, out.spectra[p], p, s, opt, salt);
        per_pair[k][r] = extract_ridge_ramsey(scan, out.spectra[p]);
      }
      if (opt.keep_scans && r == 0) kept[k] = std::move(scan);
    });
    for (auto& sc : kept) out.scans.push_back(std::move(sc));
    return detail::aggregate(method, out.labels, per_pair, opt.repeats);
  };

  if (opt.method != MethodSelection::kRamsey) out.mzlc = run(Method::kMzlc);
  if (opt.method != MethodSelection::kMzlc) out.ramsey = run(Method::kRamsey);

  if (out.mzlc && out.ramsey) {
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const auto& a = out.mzlc->estimates[k];
      const auto& b = out.ramsey->estimates[k];
      PairAgreement g{a.probe, a.source, a.x - b.x, std::hypot(a.sigma, b.sigma), false};
      g.within_2sigma = std::abs(g.difference) < 2.0 * g.combined_sigma;
      out.agreement.push_back(std::move(g));
    }
  }
  return out;
}

// Re-measures the crosstalk by MZLC with every applied voltage vector
// pre-multiplied by x_est^-1. A correct estimate yields the identity.
inline model::CrosstalkMatrix verify_compensation(const sim::DeviceConfig& dev,
                                                  const model::CrosstalkMatrix& x_est,
                                                  CharacterizeOptions opt = {}) {
  if (x_est.labels() != dev.x_true().labels()) {
    fail(ErrorKind::kConfig, "estimate labels differ from the device's");
  }
  opt.compensation = x_est.cancellation();
  opt.method = MethodSelection::kMzlc;
  return characterize(dev, opt).mzlc->matrix;
}

}  // namespace fluxtalk::cal
