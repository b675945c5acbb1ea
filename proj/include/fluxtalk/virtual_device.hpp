#pragma once

// Synthetic chip: produces spectroscopy, MZLC, Ramsey and CZ-SWAP scans from a
// ground-truth device description. Calibration code only ever sees ScanMaps.
//
// Every column of a scan draws from its own RNG stream keyed by
// (scan seed, scan kind, column index), so generation order does not matter.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fluxtalk/cz_gate.hpp"
#include "fluxtalk/device_model.hpp"
#include "fluxtalk/errors.hpp"
#include "fluxtalk/linalg.hpp"
#include "fluxtalk/numerics.hpp"
#include "fluxtalk/rng.hpp"
#include "fluxtalk/scan_map.hpp"

namespace fluxtalk::sim {

struct Coherence {
  double t1_us = 10.0;
  double t2_ramsey_us = 2.5;
  double assignment_fidelity = 0.9;
};

struct NoiseModel {
  double signal_noise_sigma = 0.05;     // spectroscopy / MZLC, in units of the peak height
  double lorentzian_fwhm_mhz = 3.0;
  double drive_broadening_mhz = 0.0;
  double population_noise_sigma = 0.01; // CZ chevron
  int ramsey_shots = 1000;              // 0 = exact expectation values
  std::vector<Coherence> per_element;   // aligned with DeviceConfig::transmons

  double fwhm() const { return lorentzian_fwhm_mhz + drive_broadening_mhz; }

  // Throws on hard violations; returns human-readable warnings for soft ones.
  std::vector<std::string> validate(std::size_t n_elements) const {
    if (!(lorentzian_fwhm_mhz > 0.0)) fail(ErrorKind::kConfig, "lorentzian_fwhm must be > 0");
    if (drive_broadening_mhz < 0.0) fail(ErrorKind::kConfig, "drive_broadening must be >= 0");
    if (signal_noise_sigma < 0.0 || population_noise_sigma < 0.0) {
      fail(ErrorKind::kConfig, "noise sigmas must be >= 0");
    }
    if (ramsey_shots < 0) fail(ErrorKind::kConfig, "ramsey_shots must be >= 0");
    if (per_element.size() != n_elements) {
      fail(ErrorKind::kConfig, "noise.per_element must have one entry per transmon");
    }
    std::vector<std::string> warnings;
    for (std::size_t i = 0; i < per_element.size(); ++i) {
      const auto& c = per_element[i];
      if (!(c.assignment_fidelity > 0.5 && c.assignment_fidelity <= 1.0)) {
        fail(ErrorKind::kConfig, "assignment fidelity must lie in (0.5, 1]");
      }
      if (!(c.t1_us > 0.0) || !(c.t2_ramsey_us > 0.0)) {
        fail(ErrorKind::kConfig, "T1 and T2 must be > 0");
      }
      if (c.t2_ramsey_us > 2.0 * c.t1_us) {
        warnings.push_back("element " + std::to_string(i) + ": T2_ramsey > 2 T1");
      }
    }
    return warnings;
  }

  // No additive noise, perfect readout, exact Ramsey populations.
  NoiseModel noiseless() const {
    NoiseModel n = *this;
    n.signal_noise_sigma = 0.0;
    n.population_noise_sigma = 0.0;
    n.ramsey_shots = 0;
    for (auto& c : n.per_element) c.assignment_fidelity = 1.0;
    return n;
  }
};

// Which crosstalk path distorts an uncompensated CZ-SWAP scan.
enum class CzCrosstalkPath {
  kCouplerFromQubits,  // qubit flux pulses leak into the coupler loop
  kQubitsFromCoupler,  // the coupler pulse leaks into both qubit loops
};

struct CzSetup {
  std::string q1 = "Q1";
  std::string q2 = "Q2";
  std::string coupler = "C2";
  double f_q1_mhz = 4700.0;  // Q1 during the interaction; Q2 follows from delta21
  cz::CZParams params;
  CzCrosstalkPath path = CzCrosstalkPath::kCouplerFromQubits;

  double f_q2_mhz() const {
    return cz::q2_frequency_for_cz(f_q1_mhz, params.ec2_over_h_mhz, params.delta21_mhz);
  }
};

class DeviceConfig {
 public:
  DeviceConfig(std::vector<model::TransmonParams> transmons, model::CrosstalkMatrix x_true,
               CzSetup cz, NoiseModel noise, std::uint64_t seed)
      : transmons_(std::move(transmons)),
        x_true_(std::move(x_true)),
        cz_(std::move(cz)),
        noise_(std::move(noise)),
        seed_(seed) {
    if (transmons_.size() != x_true_.size()) {
      fail(ErrorKind::kConfig, "transmon count and crosstalk matrix size differ");
    }
    for (std::size_t i = 0; i < transmons_.size(); ++i) {
      transmons_[i].validate();
      if (transmons_[i].label != x_true_.labels()[i]) {
        fail(ErrorKind::kConfig, "crosstalk labels must follow transmon order");
      }
    }
    if (noise_.per_element.empty()) noise_.per_element.assign(transmons_.size(), Coherence{});
    warnings_ = noise_.validate(transmons_.size());
    cz_.params.validate();
  }

  const std::vector<model::TransmonParams>& transmons() const noexcept { return transmons_; }
  const model::CrosstalkMatrix& x_true() const noexcept { return x_true_; }
  const CzSetup& cz() const noexcept { return cz_; }
  const NoiseModel& noise() const noexcept { return noise_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }
  std::size_t size() const noexcept { return transmons_.size(); }

  std::size_t index_of(const std::string& label) const { return x_true_.index_of(label); }
  const model::TransmonParams& element(const std::string& label) const {
    return transmons_[index_of(label)];
  }

  DeviceConfig with_seed(std::uint64_t seed) const {
    DeviceConfig d = *this;
    d.seed_ = seed;
    return d;
  }
  DeviceConfig with_noise(NoiseModel noise) const {
    return DeviceConfig(transmons_, x_true_, cz_, std::move(noise), seed_);
  }
  DeviceConfig with_crosstalk(model::CrosstalkMatrix x) const {
    return DeviceConfig(transmons_, std::move(x), cz_, noise_, seed_);
  }

 private:
  std::vector<model::TransmonParams> transmons_;
  model::CrosstalkMatrix x_true_;
  CzSetup cz_;
  NoiseModel noise_;
  std::uint64_t seed_ = 0;
  std::vector<std::string> warnings_;
};

// Per-call knobs shared by all scan generators.
struct ScanOptions {
  // Distinguishes repeated scans of the same kind/pair (e.g. repeat index).
  std::uint64_t salt = 0;
  // Pre-multiplies every target voltage vector (cancellation matrix X^-1).
  const DenseMatrix* compensation = nullptr;
};

namespace detail {

inline void require_grid(std::span<const double> g, const char* what) {
  if (g.empty()) fail(ErrorKind::kPrecondition, std::string(what) + " grid is empty");
  for (std::size_t i = 1; i < g.size(); ++i) {
    if (!(g[i] > g[i - 1])) fail(ErrorKind::kPrecondition, std::string(what) + " grid not sorted");
  }
}

// M = X_true * C: maps target line voltages to effective SQUID voltages.
inline DenseMatrix mixing(const DeviceConfig& dev, const ScanOptions& opt) {
  if (opt.compensation == nullptr) return dev.x_true().entries();
  return dev.x_true().entries() * *opt.compensation;
}

inline std::uint64_t scan_seed(const DeviceConfig& dev, ScanKind kind, std::uint64_t salt,
                               std::uint64_t a, std::uint64_t b) {
  return derive_seed({dev.seed(), static_cast<std::uint64_t>(kind), salt, a, b});
}

inline Axis flux_axis(std::string name, const model::TransmonParams& p,
                      std::vector<double> volts) {
  Axis ax{std::move(name), "V", std::move(volts), {}};
  ax.normalized_flux.reserve(ax.values.size());
  for (double v : ax.values) ax.normalized_flux.push_back(model::normalized_flux(p, v));
  return ax;
}

}  // namespace detail

// Two-tone spectroscopy of `probe` while sweeping one Z-line (the probe's own
// line unless `swept` names another). Signal = Lorentzian + Gaussian noise.
inline ScanMap two_tone_scan(const DeviceConfig& dev, const std::string& probe,
                             std::span<const double> v_grid, std::span<const double> f_grid,
                             const std::optional<std::string>& swept = std::nullopt,
                             const ScanOptions& opt = {}) {
  detail::require_grid(v_grid, "voltage");
  detail::require_grid(f_grid, "frequency");
  const std::size_t ip = dev.index_of(probe);
  const std::size_t is = swept ? dev.index_of(*swept) : ip;
  const auto& p = dev.transmons()[ip];
  const double gain = detail::mixing(dev, opt)(ip, is);
  const double fwhm = dev.noise().fwhm();
  const double sigma = dev.noise().signal_noise_sigma;

  ScanMap scan;
  scan.kind = ScanKind::kSpectroscopy;
  scan.x_axis = detail::flux_axis("bias_" + dev.transmons()[is].label, dev.transmons()[is],
                                  {v_grid.begin(), v_grid.end()});
  scan.y_axis = Axis{"drive_frequency", "MHz", {f_grid.begin(), f_grid.end()}, {}};
  scan.meta.probe_label = probe;
  if (is != ip) scan.meta.source_label = dev.transmons()[is].label;
  scan.meta.seed = detail::scan_seed(dev, scan.kind, opt.salt, ip, is);
  scan.signal.assign(f_grid.size(), std::vector<double>(v_grid.size()));

  for (std::size_t ix = 0; ix < v_grid.size(); ++ix) {
    Rng rng = make_rng({scan.meta.seed, static_cast<std::uint64_t>(scan.kind), ix});
    std::normal_distribution<double> noise(0.0, 1.0);
    const double f01 = model::f01_of_voltage(p, gain * v_grid[ix]);
    for (std::size_t iy = 0; iy < f_grid.size(); ++iy) {
      double s = num::lorentzian(f_grid[iy], f01, fwhm);
      if (sigma > 0.0) s += sigma * noise(rng);
      scan.signal[iy][ix] = s;
    }
  }
  return scan;
}

// MZLC: probe driven at fixed f_drive while probe and source lines are biased
// together. Axes: x = source voltage, y = probe voltage.
inline ScanMap mzlc_scan(const DeviceConfig& dev, const std::string& probe,
                         const std::string& source, double f_drive,
                         std::span<const double> s_grid, std::span<const double> p_grid,
                         const ScanOptions& opt = {}) {
  detail::require_grid(s_grid, "source");
  detail::require_grid(p_grid, "probe");
  const std::size_t ip = dev.index_of(probe);
  const std::size_t is = dev.index_of(source);
  if (ip == is) fail(ErrorKind::kPrecondition, "mzlc: probe and source must differ");
  const auto& p = dev.transmons()[ip];
  if (!(f_drive >= model::f01_min(p) && f_drive <= p.f01_max_mhz)) {
    fail(ErrorKind::kRange, "mzlc: drive frequency outside the probe's band");
  }
  const DenseMatrix m = detail::mixing(dev, opt);
  const double m_pp = m(ip, ip), m_ps = m(ip, is);
  const double fwhm = dev.noise().fwhm();
  const double sigma = dev.noise().signal_noise_sigma;

  ScanMap scan;
  scan.kind = ScanKind::kMzlc;
  scan.x_axis = detail::flux_axis("source_bias", dev.transmons()[is], {s_grid.begin(), s_grid.end()});
  scan.y_axis = detail::flux_axis("probe_bias", p, {p_grid.begin(), p_grid.end()});
  scan.meta.probe_label = probe;
  scan.meta.source_label = source;
  scan.meta.drive_freq_mhz = f_drive;
  scan.meta.seed = detail::scan_seed(dev, scan.kind, opt.salt, ip, is);
  scan.signal.assign(p_grid.size(), std::vector<double>(s_grid.size()));

  for (std::size_t ix = 0; ix < s_grid.size(); ++ix) {
    Rng rng = make_rng({scan.meta.seed, static_cast<std::uint64_t>(scan.kind), ix});
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t iy = 0; iy < p_grid.size(); ++iy) {
      const double v_eff = m_pp * p_grid[iy] + m_ps * s_grid[ix];
      double s = num::lorentzian(f_drive, model::f01_of_voltage(p, v_eff), fwhm);
      if (sigma > 0.0) s += sigma * noise(rng);
      scan.signal[iy][ix] = s;
    }
  }
  return scan;
}

// Ramsey fringes of the probe versus delay while the source line is swept and
// the probe line is held at v_p_fixed. Signal = shot-averaged excited-state
// population after assignment errors. Axes: x = source voltage, y = delay (ns).
inline ScanMap ramsey_scan(const DeviceConfig& dev, const std::string& probe,
                           const std::string& source, std::span<const double> delay_ns,
                           std::span<const double> s_grid, double v_p_fixed, double f_drive,
                           const ScanOptions& opt = {}) {
  detail::require_grid(s_grid, "source");
  detail::require_grid(delay_ns, "delay");
  const std::size_t ip = dev.index_of(probe);
  const std::size_t is = dev.index_of(source);
  if (ip == is) fail(ErrorKind::kPrecondition, "ramsey: probe and source must differ");
  const auto& p = dev.transmons()[ip];
  const auto& coh = dev.noise().per_element[ip];
  const DenseMatrix m = detail::mixing(dev, opt);
  const double m_pp = m(ip, ip), m_ps = m(ip, is);
  const double fa = coh.assignment_fidelity;
  const double t2_ns = coh.t2_ramsey_us * 1e3;
  const int shots = dev.noise().ramsey_shots;

  ScanMap scan;
  scan.kind = ScanKind::kRamsey;
  scan.x_axis = detail::flux_axis("source_bias", dev.transmons()[is], {s_grid.begin(), s_grid.end()});
  scan.y_axis = Axis{"delay", "ns", {delay_ns.begin(), delay_ns.end()}, {}};
  scan.meta.probe_label = probe;
  scan.meta.source_label = source;
  scan.meta.drive_freq_mhz = f_drive;
  scan.meta.probe_bias_v = v_p_fixed;
  scan.meta.seed = detail::scan_seed(dev, scan.kind, opt.salt, ip, is);
  scan.signal.assign(delay_ns.size(), std::vector<double>(s_grid.size()));

  for (std::size_t ix = 0; ix < s_grid.size(); ++ix) {
    Rng rng = make_rng({scan.meta.seed, static_cast<std::uint64_t>(scan.kind), ix});
    const double v_eff = m_pp * v_p_fixed + m_ps * s_grid[ix];
    const double detuning = model::f01_of_voltage(p, v_eff) - f_drive;
    for (std::size_t iy = 0; iy < delay_ns.size(); ++iy) {
      const double t = delay_ns[iy];
      const double excited =
          0.5 * (1.0 + std::exp(-t / t2_ns) *
                           std::cos(constants::kTwoPi * detuning * t * constants::kMHzNs));
      const double reported = fa * excited + (1.0 - fa) * (1.0 - excited);
      double s = reported;
      if (shots > 0) {
        std::binomial_distribution<int> counts(shots, std::clamp(reported, 0.0, 1.0));
        s = static_cast<double>(counts(rng)) / shots;
      }
      scan.signal[iy][ix] = s;
    }
  }
  return scan;
}

// Qubit and coupler frequencies seen during the CZ interaction at coupler
// flux `phi`.
struct CzOperatingPoint {
  double f_c = 0.0;
  double f_q1 = 0.0;
  double f_q2 = 0.0;
};

inline CzOperatingPoint cz_operating_point(const DeviceConfig& dev, double phi, bool compensated) {
  const auto& cz = dev.cz();
  const std::size_t ic = dev.index_of(cz.coupler);
  const std::size_t i1 = dev.index_of(cz.q1);
  const std::size_t i2 = dev.index_of(cz.q2);
  const auto& pc = dev.transmons()[ic];
  const auto& p1 = dev.transmons()[i1];
  const auto& p2 = dev.transmons()[i2];

  std::vector<double> target(dev.size(), 0.0);
  target[ic] = model::voltage_of_flux(pc, phi);
  target[i1] = model::idle_voltage(p1, cz.f_q1_mhz);
  target[i2] = model::idle_voltage(p2, cz.f_q2_mhz());

  std::vector<double> v_eff = target;
  if (!compensated) {
    const auto& x = dev.x_true();
    const auto leak = [&](std::size_t det, std::size_t src) {
      v_eff[det] += x(det, src) * target[src];
    };
    if (cz.path == CzCrosstalkPath::kCouplerFromQubits) {
      leak(ic, i1);
      leak(ic, i2);
    } else {
      leak(i1, ic);
      leak(i2, ic);
    }
  }
  return {model::f01_of_voltage(pc, v_eff[ic]), model::f01_of_voltage(p1, v_eff[i1]),
          model::f01_of_voltage(p2, v_eff[i2])};
}

// |11> population versus coupler flux (x, normalized) and interaction time
// (y, ns). The simulated coupling is |g_eff| plus the residual offset.
inline ScanMap cz_swap_scan(const DeviceConfig& dev, std::span<const double> flux_grid,
                            std::span<const double> t_grid, bool compensated,
                            const ScanOptions& opt = {}) {
  detail::require_grid(flux_grid, "flux");
  detail::require_grid(t_grid, "time");
  const auto& cz = dev.cz();
  const double d_factor = cz::pulse_reduction(cz.params.pulse);
  const double sigma = dev.noise().population_noise_sigma;

  ScanMap scan;
  scan.kind = ScanKind::kCzSwap;
  scan.x_axis = Axis{"coupler_flux", "rad", {flux_grid.begin(), flux_grid.end()}, {}};
  scan.x_axis.normalized_flux = scan.x_axis.values;
  scan.y_axis = Axis{"interaction_time", "ns", {t_grid.begin(), t_grid.end()}, {}};
  scan.meta.probe_label = cz.coupler;
  scan.meta.seed = detail::scan_seed(dev, scan.kind, opt.salt, compensated ? 1 : 0, 0);
  scan.signal.assign(t_grid.size(), std::vector<double>(flux_grid.size()));

  for (std::size_t ix = 0; ix < flux_grid.size(); ++ix) {
    Rng rng = make_rng({scan.meta.seed, static_cast<std::uint64_t>(scan.kind), ix});
    std::normal_distribution<double> noise(0.0, 1.0);
    const auto op = cz_operating_point(dev, flux_grid[ix], compensated);
    const double g = std::abs(cz::g_eff(cz.params, op.f_c, op.f_q1, op.f_q2)) +
                     cz.params.residual_offset_mhz;
    const double delta = op.f_q2 - cz.params.ec2_over_h_mhz - op.f_q1;
    for (std::size_t iy = 0; iy < t_grid.size(); ++iy) {
      double s = cz::p11(delta, g, t_grid[iy], d_factor);
      if (sigma > 0.0) s += sigma * noise(rng);
      scan.signal[iy][ix] = s;
    }
  }
  return scan;
}

// Mean |map(phi) - map(-phi)| over mirrored column pairs. The flux grid must
// be symmetric about zero.
inline double symmetry_residual(const ScanMap& map) {
  const auto& x = map.x_axis.values;
  const std::size_t n = x.size();
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n / 2; ++i) {
    const std::size_t j = n - 1 - i;
    if (std::abs(x[i] + x[j]) > 1e-9 * (1.0 + std::abs(x[i]))) {
      fail(ErrorKind::kPrecondition, "symmetry_residual: flux grid not symmetric about 0");
    }
    for (std::size_t iy = 0; iy < map.y_axis.size(); ++iy) {
      acc += std::abs(map.signal[iy][i] - map.signal[iy][j]);
      ++count;
    }
  }
  return count ? acc / static_cast<double>(count) : 0.0;
}

// ---------------------------------------------------------------------------
// Device templates

// Elements C1, Q1, C2, Q2 with the measured sweet-spot frequencies and
// charging energies, d = 0.65 (qubits) / 0 (couplers), and a planted crosstalk
// matrix with aggregates
// (min -58.0, max 43.0, mean |X| 26.5, total 318.0, asymmetry 143.6 permil).
inline DeviceConfig reference_device(std::uint64_t seed = 0) {
  using model::Role;
  std::vector<model::TransmonParams> t = {
      {"C1", Role::kCoupler, 8044.6, 119.8, 0.0, 2.2, 0.05},
      {"Q1", Role::kQubit, 4768.6, 206.2, 0.65, 1.9, -0.08},
      {"C2", Role::kCoupler, 7909.3, 127.2, 0.0, 2.0, 0.12},
      {"Q2", Role::kQubit, 5081.9, 207.6, 0.65, 1.8, -0.03},
  };
  const double k = 1e-3;
  DenseMatrix x = DenseMatrix::from_rows({
      {1.0, -58.0 * k, 12.0 * k, 5.0 * k},
      {30.0 * k, 1.0, 43.0 * k, -20.0 * k},
      {-8.5 * k, -25.0 * k, 1.0, -52.9 * k},
      {9.0 * k, 14.0 * k, 40.6 * k, 1.0},
  });
  NoiseModel noise;
  noise.per_element = {
      {4.8, 2.3, 0.839},
      {11.1, 2.4, 0.901},
      {4.9, 3.3, 0.724},
      {6.0, 2.1, 0.916},
  };
  CzSetup cz;
  cz.params.ec2_over_h_mhz = t[3].ec_over_h_mhz;
  return DeviceConfig(t, model::CrosstalkMatrix({"C1", "Q1", "C2", "Q2"}, x), cz, noise, seed);
}

// Same elements as reference_device, off-diagonal crosstalk uniform in
// [-60, 60] permil drawn from `seed`.
inline DeviceConfig random_device(std::uint64_t seed) {
  const auto base = reference_device(seed);
  Rng rng = make_rng({seed, 0x7261'6e64ULL});
  std::uniform_real_distribution<double> u(-0.060, 0.060);
  const std::size_t n = base.size();
  for (;;) {
    DenseMatrix x = DenseMatrix::identity(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i != j) x(i, j) = u(rng);
      }
    }
    try {
      return base.with_crosstalk(model::CrosstalkMatrix(base.x_true().labels(), x));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kSingular) throw;
    }
  }
}

}  // namespace fluxtalk::sim
