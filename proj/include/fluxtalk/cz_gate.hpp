#pragma once

// Coupler-mediated CZ interaction between |11> and |02>: effective coupling,
// diabatic pulse reduction, the SWAP oscillation model used to fit chevrons,
// and the inversion from a target coupling to a coupler bias.
//
// Every public frequency is a linear frequency in MHz (omega / 2pi) and every
// time is in ns. The coupling formulas are homogeneous in frequency, so the
// 2pi only appears in the accumulated phase 2pi * D * Omega * t.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fluxtalk/constants.hpp"
#include "fluxtalk/device_model.hpp"
#include "fluxtalk/errors.hpp"
#include "fluxtalk/numerics.hpp"
#include "fluxtalk/scan_map.hpp"

namespace fluxtalk::cz {

struct PulseParams {
  double duration_ns = 100.0;   // T
  double t_eff_ns = 278.0;      // rising-edge time constant
  double a_eff_over_a = -1.0;   // transient amplitude relative to the plateau
};

struct CZParams {
  double g12_mhz = 5.0;
  double g1c_mhz = 100.0;
  double g2c_mhz = 100.0;
  double ec2_over_h_mhz = 207.6;
  double delta21_mhz = 9.33;
  double residual_offset_mhz = 0.435;
  PulseParams pulse;

  void validate() const {
    if (!(g1c_mhz > 0.0) || !(g2c_mhz > 0.0)) fail(ErrorKind::kDomain, "g1c, g2c must be > 0");
    if (!(pulse.duration_ns > 0.0) || !(pulse.t_eff_ns > 0.0)) {
      fail(ErrorKind::kDomain, "pulse T and t_eff must be > 0");
    }
  }
};

// |02>-|11> resonance: Q2's 0-1 frequency for a given Q1 frequency and detuning.
inline double q2_frequency_for_cz(double f_q1, double ec2, double delta21) {
  return f_q1 + ec2 + delta21;
}

inline constexpr double kPoleGuardMhz = 1e-6;

// B02 in 1/MHz, terms as written for the |11>-|02> coupling:
// 1/D1 + 1/(D2 - Ec2) + 1/S1 + 1/(S2 + Ec2), D_j = f_c - f_j, S_j = f_c + f_j.
inline double b02(double f_c, double f_q1, double f_q2, double ec2) {
  const double den[4] = {f_c - f_q1, f_c - f_q2 - ec2, f_c + f_q1, f_c + f_q2 + ec2};
  static constexpr const char* kNames[4] = {"Delta1", "Delta2 - Ec2", "Sigma1", "Sigma2 + Ec2"};
  double sum = 0.0;
  for (int i = 0; i < 4; ++i) {
    if (std::abs(den[i]) < kPoleGuardMhz) {
      fail(ErrorKind::kPole, std::string("B02 pole: ") + kNames[i] + " ~ 0 at f_c = " +
                                 std::to_string(f_c) + " MHz");
    }
    sum += 1.0 / den[i];
  }
  return sum;
}

// g_eff = sqrt(2) (g12 - g1c g2c B02 / 2).
inline double g_eff(const CZParams& p, double f_c, double f_q1, double f_q2) {
  return std::sqrt(2.0) * (p.g12_mhz - 0.5 * p.g1c_mhz * p.g2c_mhz *
                                           b02(f_c, f_q1, f_q2, p.ec2_over_h_mhz));
}

// Dispersive simplification sqrt(2) (g12 - 2 g1c g2c / (f_c - f)); meaningful
// for f_c above f (see approx_regime_valid).
inline double g_eff_approx(const CZParams& p, double f_c, double f) {
  const double det = f_c - f;
  if (std::abs(det) < kPoleGuardMhz) fail(ErrorKind::kPole, "g_eff_approx: f_c == f");
  return std::sqrt(2.0) * (p.g12_mhz - 2.0 * p.g1c_mhz * p.g2c_mhz / det);
}

inline bool approx_regime_valid(double f_c, double f) { return f_c > f; }

// Coupler frequency at which g_eff_approx vanishes.
inline double approx_nulling_frequency(const CZParams& p, double f) {
  return f + 2.0 * p.g1c_mhz * p.g2c_mhz / p.g12_mhz;
}

// Ratio of the area of a pulse with an exponential rising edge,
// A + A_eff exp(-t / t_eff), to the ideal rectangle A * T.
inline double pulse_reduction(double duration_ns, double t_eff_ns, double a_eff_over_a) {
  if (!(duration_ns > 0.0) || !(t_eff_ns > 0.0)) {
    fail(ErrorKind::kDomain, "pulse_reduction: T and t_eff must be > 0");
  }
  return (duration_ns + a_eff_over_a * t_eff_ns * -std::expm1(-duration_ns / t_eff_ns)) /
         duration_ns;
}

inline double pulse_reduction(const PulseParams& pulse) {
  return pulse_reduction(pulse.duration_ns, pulse.t_eff_ns, pulse.a_eff_over_a);
}

// Omega = sqrt(4 g^2 + delta^2), MHz.
inline double rabi_frequency(double delta21, double g) {
  return std::sqrt(4.0 * g * g + delta21 * delta21);
}

// SWAP oscillation model 2 g^2 [1 + cos(D t Omega)] / Omega^2, t in ns.
inline double p11(double delta21, double g, double t_ns, double d_factor) {
  const double omega = rabi_frequency(delta21, g);
  if (!(omega > 0.0)) fail(ErrorKind::kDegenerate, "p11: Omega = 0 (g = 0 and delta21 = 0)");
  const double phase = constants::kTwoPi * d_factor * omega * t_ns * constants::kMHzNs;
  return 2.0 * g * g * (1.0 + std::cos(phase)) / (omega * omega);
}

// ---------------------------------------------------------------------------
// Fitting

struct OmegaFit {
  double omega_mhz = 0.0;
  double sigma_mhz = 0.0;
  double offset = 0.0;      // a
  double amplitude = 0.0;   // b
  double amplitude_sigma = 0.0;
};

// Fits a + b cos(2pi D Omega t) to a population trace. Omega starts from the
// FFT peak of the mean-removed trace.
inline OmegaFit fit_omega(std::span<const double> trace, std::span<const double> t_ns,
                          double d_factor) {
  const std::size_t n = trace.size();
  if (t_ns.size() != n) fail(ErrorKind::kDimension, "fit_omega: trace/time size mismatch");
  if (n < 8) fail(ErrorKind::kPrecondition, "fit_omega: need at least 8 points");
  if (!(d_factor > 0.0)) fail(ErrorKind::kDomain, "fit_omega: D must be > 0");
  const double dt = t_ns[1] - t_ns[0];
  for (std::size_t i = 2; i < n; ++i) {
    if (std::abs(t_ns[i] - t_ns[i - 1] - dt) > 1e-9 * std::abs(dt)) {
      fail(ErrorKind::kPrecondition, "fit_omega: time grid must be uniform");
    }
  }
  const double spread = num::stddev(trace);
  const double level = num::mean(trace);
  if (!(spread > 1e-12 * (1.0 + std::abs(level)))) {
    fail(ErrorKind::kNoSignal, "fit_omega: flat trace");
  }
  const auto peak = num::dominant_frequency(trace, dt);
  if (peak.bin == 0 || !(peak.frequency > 0.0)) {
    fail(ErrorKind::kNoSignal, "fit_omega: no oscillation (FFT peak at DC)");
  }
  const double nu0 = peak.frequency / constants::kMHzNs;  // MHz

  // Initial a, b by linear least squares at fixed frequency.
  double a0 = level, b0 = 0.0;
  {
    double scc = 0, sc = 0, sy = 0, syc = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double c = std::cos(constants::kTwoPi * nu0 * t_ns[i] * constants::kMHzNs);
      scc += c * c;
      sc += c;
      sy += trace[i];
      syc += trace[i] * c;
    }
    const double det = static_cast<double>(n) * scc - sc * sc;
    if (det != 0.0) {
      b0 = (static_cast<double>(n) * syc - sc * sy) / det;
      a0 = (sy - b0 * sc) / static_cast<double>(n);
    }
  }

  const auto resid = [&](const num::Vector& x, num::Vector& r) {
    for (std::size_t i = 0; i < n; ++i) {
      const double phase = constants::kTwoPi * x[2] * t_ns[i] * constants::kMHzNs;
      r[static_cast<Eigen::Index>(i)] = trace[i] - (x[0] + x[1] * std::cos(phase));
    }
  };
  num::Vector x0(3);
  x0 << a0, b0, nu0;
  const auto res = num::least_squares(resid, x0, static_cast<Eigen::Index>(n));
  if (!res.converged) fail(ErrorKind::kFit, "fit_omega: did not converge");

  OmegaFit out;
  const double nu = std::abs(res.x[2]);
  out.offset = res.x[0];
  out.amplitude = res.x[1];
  out.amplitude_sigma = res.sigma(1);
  out.omega_mhz = nu / d_factor;
  out.sigma_mhz = res.sigma(2) / d_factor;
  const double span = t_ns[n - 1] - t_ns[0];
  if (nu * span * constants::kMHzNs < 0.5) {
    fail(ErrorKind::kPrecondition, "fit_omega: trace spans less than half an oscillation");
  }
  return out;
}

struct GeffPoint {
  double flux = 0.0;       // normalized coupler flux
  double g_mhz = 0.0;      // |g_eff|
  double sigma_mhz = 0.0;
  bool below_floor = false;  // Omega <= delta21, unresolved, or amplitude inconsistent
  double omega_mhz = 0.0;    // raw fitted Omega; 0 when the fit failed
  double omega_sigma_mhz = 0.0;
};

// Per-column Omega fit, then |g_eff| = sqrt(max(Omega^2 - delta21^2, 0)) / 2.
// Columns whose oscillation is not resolved, or whose amplitude disagrees with
// the fitted Omega, are flagged below_floor.
inline std::vector<GeffPoint> extract_geff_curve(const ScanMap& map, double delta21,
                                                 double d_factor) {
  if (map.kind != ScanKind::kCzSwap) fail(ErrorKind::kPrecondition, "expected a cz_swap scan");
  if (map.x_axis.size() < 3) fail(ErrorKind::kPrecondition, "need at least 3 flux columns");
  std::vector<GeffPoint> curve;
  curve.reserve(map.x_axis.size());
  for (std::size_t ix = 0; ix < map.x_axis.size(); ++ix) {
    GeffPoint pt;
    pt.flux = map.x_axis.values[ix];
    const auto trace = map.column(ix);
    try {
      const auto fit = fit_omega(trace, map.y_axis.values, d_factor);
      pt.omega_mhz = fit.omega_mhz;
      pt.omega_sigma_mhz = fit.sigma_mhz;
      const double excess = fit.omega_mhz * fit.omega_mhz - delta21 * delta21;
      // The swap model ties the amplitude to Omega: b = 2 g^2 / Omega^2. A
      // noise peak picked by the FFT has a free frequency but a tiny b.
      const double expected_b = 0.5 * std::max(excess, 0.0) / (fit.omega_mhz * fit.omega_mhz);
      const double b = std::abs(fit.amplitude);
      const bool resolved = b > 5.0 * fit.amplitude_sigma;
      const bool consistent =
          std::abs(b - expected_b) <= std::max(5.0 * fit.amplitude_sigma, 0.5 * expected_b);
      pt.below_floor = excess <= 0.0 || !resolved || !consistent;
      pt.g_mhz = 0.5 * std::sqrt(std::max(excess, 0.0));
      pt.sigma_mhz = pt.g_mhz > 0.0 ? fit.omega_mhz * fit.sigma_mhz / (4.0 * pt.g_mhz)
                                    : 0.5 * fit.sigma_mhz;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNoSignal && e.kind() != ErrorKind::kFit &&
          e.kind() != ErrorKind::kPrecondition) {
        throw;
      }
      pt.below_floor = true;
    }
    curve.push_back(pt);
  }
  return curve;
}

struct GeffCurveFit {
  double g12_mhz = 0.0;
  double g1c_g2c_mhz2 = 0.0;
  double offset_mhz = 0.0;
  double g1c_mhz = 0.0;  // split of the product at the configured ratio
  double g2c_mhz = 0.0;
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();  // (g12, g1c*g2c, offset)
  double nulling_flux = 0.0;                             // >= 0 branch
  std::size_t points_used = 0;
  // Only set by the joint fit (GeffFitOptions::fit_delta21).
  std::optional<double> delta21_mhz;
  double delta21_sigma_mhz = 0.0;

  double sigma(int i) const { return std::sqrt(std::max(covariance(i, i), 0.0)); }
};

struct GeffFitOptions {
  double g1c_over_g2c = 1.0;
  // Points with |flux| >= this are left out (resonator hybridisation window).
  double max_abs_flux = 1e9;
  std::size_t min_points_per_side = 6;
  double sigma_floor_mhz = 1e-6;
  // Refit Omega(flux) = sqrt(4 (|g_eff| + offset)^2 + delta21^2) with delta21
  // free, starting from `delta21_mhz`. Off by default: delta21 is an input.
  bool fit_delta21 = false;
  double delta21_mhz = 0.0;
};

// Model |g_eff(f_c(flux))| + offset with f_c from the coupler spectrum.
inline double geff_model(double g12, double product, double flux,
                         const model::TransmonParams& coupler, double f_q1, double f_q2,
                         double ec2) {
  const double f_c = model::f01_of_flux(coupler, flux);
  return std::sqrt(2.0) * (g12 - 0.5 * product * b02(f_c, f_q1, f_q2, ec2));
}

// First root of g_eff along flux in [lo, hi] (flux >= 0 branch), by bisection.
inline std::optional<double> nulling_flux(double g12, double product,
                                          const model::TransmonParams& coupler, double f_q1,
                                          double f_q2, double ec2, double lo, double hi,
                                          std::size_t scan_points = 2000) {
  const auto g = [&](double phi) { return geff_model(g12, product, phi, coupler, f_q1, f_q2, ec2); };
  double prev_phi = lo;
  double prev = g(lo);
  for (std::size_t i = 1; i <= scan_points; ++i) {
    const double phi = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(scan_points);
    const double cur = g(phi);
    if ((prev <= 0.0) != (cur <= 0.0)) {
      double a = prev_phi, b = phi, ga = prev;
      for (int it = 0; it < 200 && b - a > 1e-15; ++it) {
        const double m = 0.5 * (a + b);
        const double gm = g(m);
        if ((gm <= 0.0) == (ga <= 0.0)) {
          a = m;
          ga = gm;
        } else {
          b = m;
        }
      }
      return 0.5 * (a + b);
    }
    prev_phi = phi;
    prev = cur;
  }
  return std::nullopt;
}

// Least squares of |g_eff| + offset over (g12, g1c*g2c, offset). The two
// couplings only enter as a product; `g1c_over_g2c` splits it for reporting.
inline GeffCurveFit fit_geff_curve(std::span<const GeffPoint> series,
                                   const model::TransmonParams& coupler, double f_q1,
                                   double f_q2, double ec2, const GeffFitOptions& opt = {}) {
  // Locate the null from the data: the smallest |g| (flagged columns count as 0).
  double null_freq = 0.0;
  {
    double best = 1e300;
    for (const auto& p : series) {
      if (std::abs(p.flux) >= opt.max_abs_flux) continue;
      const double g = p.below_floor ? 0.0 : p.g_mhz;
      if (g < best) {
        best = g;
        null_freq = model::f01_of_flux(coupler, p.flux);
      }
    }
  }
  std::vector<double> flux, g, sigma, sign;
  std::size_t above = 0, below = 0;
  for (const auto& p : series) {
    if (p.below_floor || std::abs(p.flux) >= opt.max_abs_flux) continue;
    const double f_c = model::f01_of_flux(coupler, p.flux);
    const bool is_above = f_c > null_freq;
    (is_above ? above : below)++;
    flux.push_back(p.flux);
    g.push_back(p.g_mhz);
    sigma.push_back(std::max(p.sigma_mhz, opt.sigma_floor_mhz));
    sign.push_back(is_above ? 1.0 : -1.0);
  }
  if (above < opt.min_points_per_side || below < opt.min_points_per_side) {
    fail(ErrorKind::kIdentifiability,
         "fit_geff_curve: need >= " + std::to_string(opt.min_points_per_side) +
             " resolved points on both sides of the nulling flux (have " +
             std::to_string(above) + " above, " + std::to_string(below) + " below)");
  }
  const auto m = static_cast<Eigen::Index>(flux.size());

  // With the sign of g_eff fixed per side, s|g| = sqrt2 g12 - P B02 / sqrt2 + s c
  // is linear in (g12, P, c): solve it for the starting point.
  Eigen::MatrixXd a(m, 3);
  Eigen::VectorXd rhs(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const double bb = b02(model::f01_of_flux(coupler, flux[k]), f_q1, f_q2, ec2);
    a(i, 0) = std::sqrt(2.0) / sigma[k];
    a(i, 1) = -bb / std::sqrt(2.0) / sigma[k];
    a(i, 2) = sign[k] / sigma[k];
    rhs[i] = sign[k] * g[k] / sigma[k];
  }
  num::Vector x0 = a.colPivHouseholderQr().solve(rhs);

  const auto resid = [&](const num::Vector& x, num::Vector& r) {
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto k = static_cast<std::size_t>(i);
      const double model_g =
          std::abs(geff_model(x[0], x[1], flux[k], coupler, f_q1, f_q2, ec2)) + x[2];
      r[i] = (g[k] - model_g) / sigma[k];
    }
  };
  const auto res = num::least_squares(resid, x0, m);
  if (!res.converged) fail(ErrorKind::kFit, "fit_geff_curve: did not converge");

  GeffCurveFit out;
  out.g12_mhz = res.x[0];
  out.g1c_g2c_mhz2 = res.x[1];
  out.offset_mhz = res.x[2];
  out.covariance = res.covariance;
  out.points_used = flux.size();
  const double prod = std::max(out.g1c_g2c_mhz2, 0.0);
  out.g1c_mhz = std::sqrt(prod * opt.g1c_over_g2c);
  out.g2c_mhz = std::sqrt(prod / opt.g1c_over_g2c);
  double flux_hi = 0.0;
  for (double f : flux) flux_hi = std::max(flux_hi, std::abs(f));

  if (opt.fit_delta21) {
    std::vector<const GeffPoint*> pts;
    for (const auto& p : series) {
      if (p.omega_mhz > 0.0 && p.omega_sigma_mhz > 0.0 && std::abs(p.flux) < opt.max_abs_flux) {
        pts.push_back(&p);
      }
    }
    const auto mo = static_cast<Eigen::Index>(pts.size());
    const auto joint = [&](const num::Vector& x, num::Vector& r) {
      for (Eigen::Index i = 0; i < mo; ++i) {
        const auto& p = *pts[static_cast<std::size_t>(i)];
        const double gg =
            std::abs(geff_model(x[0], x[1], p.flux, coupler, f_q1, f_q2, ec2)) + x[2];
        const double omega = std::sqrt(4.0 * gg * gg + x[3] * x[3]);
        r[i] = (p.omega_mhz - omega) / std::max(p.omega_sigma_mhz, opt.sigma_floor_mhz);
      }
    };
    num::Vector x4(4);
    x4 << res.x[0], res.x[1], res.x[2], opt.delta21_mhz;
    const auto jr = num::least_squares(joint, x4, mo);
    if (!jr.converged) fail(ErrorKind::kFit, "fit_geff_curve: joint delta21 fit did not converge");
    out.g12_mhz = jr.x[0];
    out.g1c_g2c_mhz2 = jr.x[1];
    out.offset_mhz = jr.x[2];
    out.covariance = jr.covariance.topLeftCorner<3, 3>();
    out.delta21_mhz = std::abs(jr.x[3]);
    out.delta21_sigma_mhz = jr.sigma(3);
    out.points_used = pts.size();
  }

  out.nulling_flux = nulling_flux(out.g12_mhz, out.g1c_g2c_mhz2, coupler, f_q1, f_q2, ec2, 0.0,
                                  flux_hi)
                         .value_or(std::numeric_limits<double>::quiet_NaN());
  return out;
}

// ---------------------------------------------------------------------------
// Inversion: target coupling -> coupler bias

enum class InversionMode { kApprox, kFull };

// Coupler frequency that realises g_target with the dispersive form.
inline double coupler_frequency_for_geff_approx(const CZParams& p, double g_target, double f) {
  const double den = p.g12_mhz - g_target / std::sqrt(2.0);
  if (std::abs(den) < 1e-12 * (1.0 + std::abs(p.g12_mhz))) {
    fail(ErrorKind::kPole, "g_target = sqrt(2) g12 is unreachable (pole of the inversion)");
  }
  return f + 2.0 * p.g1c_mhz * p.g2c_mhz / den;
}

// Coupler frequency that realises g_target with the full B02 expression, by
// bisection between the highest pole below f01_max and f01_max.
inline double coupler_frequency_for_geff_full(const CZParams& p, double g_target, double f_q1,
                                              double f_q2, double f_c_max) {
  const double poles[2] = {f_q1, f_q2 + p.ec2_over_h_mhz};
  const double lo0 = std::max(poles[0], poles[1]);
  if (!(f_c_max > lo0)) fail(ErrorKind::kRange, "coupler band lies below the B02 poles");
  const auto h = [&](double fc) { return g_eff(p, fc, f_q1, f_q2) - g_target; };
  double lo = lo0 + 1e-3;
  double hi = f_c_max;
  double hlo = h(lo), hhi = h(hi);
  if ((hlo <= 0.0) == (hhi <= 0.0)) {
    fail(ErrorKind::kRange, "g_target not reachable within the coupler band (full model)");
  }
  for (int it = 0; it < 200 && hi - lo > 1e-12 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double hm = h(mid);
    if ((hm <= 0.0) == (hlo <= 0.0)) {
      lo = mid;
      hlo = hm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

// Coupler idle bias for a target coupling. `f` is Q1's operating frequency;
// the full mode places Q2 at the |11>-|02> condition (q2_frequency_for_cz).
inline double coupler_idle_voltage(const CZParams& p, const model::TransmonParams& coupler,
                                   double g_target, double f, model::Branch branch,
                                   InversionMode mode = InversionMode::kApprox) {
  double f_c = 0.0;
  if (mode == InversionMode::kApprox) {
    f_c = coupler_frequency_for_geff_approx(p, g_target, f);
  } else {
    const double f_q2 = q2_frequency_for_cz(f, p.ec2_over_h_mhz, p.delta21_mhz);
    f_c = coupler_frequency_for_geff_full(p, g_target, f, f_q2, coupler.f01_max_mhz);
  }
  return model::idle_voltage(coupler, f_c, branch);
}

}  // namespace fluxtalk::cz
