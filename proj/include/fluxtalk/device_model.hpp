#pragma once

// Closed-form physics of a flux-tunable transmon (qubit or coupler) and the
// linear flux-crosstalk map between Z-lines.
//
// Units: frequencies in MHz (f = E/h), voltages in V, A_c in rad/V, junction
// areas in um^2, R_J in Ohm*um^2, superconducting gap in ueV, temperature in K.
// Josephson energies are returned in GHz (E_J / h).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fluxtalk/constants.hpp"
#include "fluxtalk/errors.hpp"
#include "fluxtalk/linalg.hpp"

namespace fluxtalk::model {

enum class Role { kQubit, kCoupler };

inline const char* to_string(Role r) { return r == Role::kQubit ? "qubit" : "coupler"; }

inline Role role_from_string(const std::string& s) {
  if (s == "qubit") return Role::kQubit;
  if (s == "coupler") return Role::kCoupler;
  fail(ErrorKind::kConfig, "unknown transmon role '" + s + "'");
}

enum class Branch { kPlus, kMinus };

enum class JunctionId { kJ1, kJ2 };

// SQUID junction pair as drawn. `canonical()` swaps so that j2 is the larger.
struct JunctionDesign {
  double area_j1_um2 = 0.0;
  double area_j2_um2 = 0.0;
  double resistance_area_ohm_um2 = 0.0;  // R_J, so that R_N = R_J / A
  double gap_uev = 180.0;                // aluminium
  double temperature_k = 0.0;

  JunctionDesign canonical() const {
    JunctionDesign j = *this;
    if (j.area_j1_um2 > j.area_j2_um2) std::swap(j.area_j1_um2, j.area_j2_um2);
    return j;
  }

  double area_ratio() const {
    const auto j = canonical();
    return j.area_j2_um2 / j.area_j1_um2;
  }
};

// Ambegaokar-Baratoff Josephson energy of one junction, E_J / h in GHz.
inline double josephson_energy(const JunctionDesign& j, JunctionId which) {
  namespace c = constants;
  const double area = which == JunctionId::kJ1 ? j.area_j1_um2 : j.area_j2_um2;
  if (!(area > 0.0)) fail(ErrorKind::kDomain, "junction area must be positive");
  if (!(j.gap_uev > 0.0)) fail(ErrorKind::kDomain, "superconducting gap must be positive");
  if (!(j.resistance_area_ohm_um2 > 0.0)) {
    fail(ErrorKind::kDomain, "junction resistance-area product must be positive");
  }
  if (j.temperature_k < 0.0) fail(ErrorKind::kDomain, "temperature must be >= 0");

  const double gap_j = j.gap_uev * c::kMicroElectronVolt;
  const double r_normal = j.resistance_area_ohm_um2 / area;
  const double thermal =
      j.temperature_k == 0.0 ? 1.0
                             : std::tanh(gap_j / (2.0 * c::kBoltzmann * j.temperature_k));
  const double ej_joule =
      c::kFluxQuantum * gap_j / (4.0 * c::kElementaryCharge * r_normal) * thermal;
  return ej_joule / c::kJoulePerGHz;
}

// d = (gamma - 1) / (gamma + 1), gamma = larger / smaller junction area.
inline double junction_asymmetry_from_ratio(double gamma) {
  if (!(gamma > 0.0)) fail(ErrorKind::kDomain, "area ratio must be positive");
  if (gamma < 1.0) gamma = 1.0 / gamma;
  return (gamma - 1.0) / (gamma + 1.0);
}

inline double junction_asymmetry(const JunctionDesign& j) {
  if (!(j.area_j1_um2 > 0.0) || !(j.area_j2_um2 > 0.0)) {
    fail(ErrorKind::kDomain, "junction areas must be positive");
  }
  return junction_asymmetry_from_ratio(j.area_ratio());
}

// Effective SQUID Josephson energy at normalized flux phi = pi*Phi/Phi0.
// Uses sqrt(cos^2 + d^2 sin^2), the singularity-free form of
// |cos| * sqrt(1 + d^2 tan^2).
inline double ej_of_flux(double ej_max, double d, double phi) {
  const double c = std::cos(phi);
  const double s = std::sin(phi);
  return ej_max * std::sqrt(c * c + d * d * s * s);
}

// Transmon asymptotics: f01 = sqrt(8 E_J E_C) - E_C (all as frequencies).
inline double f01_from_ej(double ej_mhz, double ec_mhz) {
  return std::sqrt(8.0 * ej_mhz * ec_mhz) - ec_mhz;
}

inline double ej_from_f01(double f01_mhz, double ec_mhz) {
  const double s = f01_mhz + ec_mhz;
  return s * s / (8.0 * ec_mhz);
}

struct TransmonParams {
  std::string label;
  Role role = Role::kQubit;
  double f01_max_mhz = 0.0;
  double ec_over_h_mhz = 0.0;
  double d = 0.0;
  double ac_rad_per_v = 1.0;
  double v_ofs_v = 0.0;

  void validate() const {
    if (!(f01_max_mhz > 0.0)) fail(ErrorKind::kDomain, label + ": f01_max must be > 0");
    if (!(ec_over_h_mhz > 0.0)) fail(ErrorKind::kDomain, label + ": E_C/h must be > 0");
    if (!(d >= 0.0 && d < 1.0)) fail(ErrorKind::kDomain, label + ": d must lie in [0, 1)");
    if (!(ac_rad_per_v > 0.0)) fail(ErrorKind::kDomain, label + ": A_c must be > 0");
    if (!std::isfinite(v_ofs_v)) fail(ErrorKind::kDomain, label + ": V_ofs must be finite");
  }

  // Voltage period of the spectrum.
  double period_v() const { return constants::kPi / ac_rad_per_v; }

  friend bool operator==(const TransmonParams&, const TransmonParams&) = default;
};

// pi * Phi / Phi0 seen by the SQUID at effective line voltage v.
inline double normalized_flux(const TransmonParams& p, double v) {
  return p.ac_rad_per_v * (v - p.v_ofs_v);
}

// Inverse of normalized_flux.
inline double voltage_of_flux(const TransmonParams& p, double phi) {
  return p.v_ofs_v + phi / p.ac_rad_per_v;
}

inline double f01_of_flux(const TransmonParams& p, double phi) {
  const double c = std::cos(phi);
  const double bracket = p.d * p.d + (1.0 - p.d * p.d) * c * c;
  return (p.f01_max_mhz + p.ec_over_h_mhz) * std::pow(bracket, 0.25) - p.ec_over_h_mhz;
}

inline double f01_of_voltage(const TransmonParams& p, double v_eff) {
  return f01_of_flux(p, normalized_flux(p, v_eff));
}

// d f01 / d v_eff, analytic. Zero at the sweet spot.
inline double df01_dv(const TransmonParams& p, double v_eff) {
  const double phi = normalized_flux(p, v_eff);
  const double d2 = p.d * p.d;
  const double c = std::cos(phi);
  const double bracket = d2 + (1.0 - d2) * c * c;
  if (bracket <= 0.0) return 0.0;
  const double dbracket = -(1.0 - d2) * std::sin(2.0 * phi);
  return (p.f01_max_mhz + p.ec_over_h_mhz) * 0.25 * std::pow(bracket, -0.75) * dbracket *
         p.ac_rad_per_v;
}

// Lowest attainable f01 (half flux quantum).
inline double f01_min(const TransmonParams& p) {
  return (p.f01_max_mhz + p.ec_over_h_mhz) * std::sqrt(p.d) - p.ec_over_h_mhz;
}

// Bias voltage that places the element at f01_target. kPlus biases above
// V_ofs, kMinus below; both lie within half a period of V_ofs.
inline double idle_voltage(const TransmonParams& p, double f01_target,
                           Branch branch = Branch::kPlus) {
  if (p.d >= 1.0) fail(ErrorKind::kDegenerate, p.label + ": d = 1 has no flux dependence");
  const double d2 = p.d * p.d;
  const double k = (f01_target + p.ec_over_h_mhz) / (p.f01_max_mhz + p.ec_over_h_mhz);
  double arg = 2.0 / (1.0 - d2) * std::pow(k, 4) - (1.0 + d2) / (1.0 - d2);
  constexpr double kClampSlack = 1e-12;
  const bool below_band = !(k >= 0.0) || arg < -1.0 - kClampSlack;
  if (below_band || arg > 1.0 + kClampSlack) {
    fail(ErrorKind::kRange,
         p.label + ": target " + std::to_string(f01_target) + " MHz outside band [" +
             std::to_string(f01_min(p)) + ", " + std::to_string(p.f01_max_mhz) + "] MHz");
  }
  arg = std::clamp(arg, -1.0, 1.0);
  const double offset = std::acos(arg) / (2.0 * p.ac_rad_per_v);
  return branch == Branch::kPlus ? p.v_ofs_v + offset : p.v_ofs_v - offset;
}

// Dimensionless crosstalk matrix X: row = detector element, column = source
// Z-line. V_eff = X * V_Z. Diagonal is exactly 1.
class CrosstalkMatrix {
 public:
  static constexpr double kDefaultDetFloor = 1e-9;

  CrosstalkMatrix(std::vector<std::string> labels, DenseMatrix entries,
                  double det_floor = kDefaultDetFloor)
      : labels_(std::move(labels)), entries_(std::move(entries)) {
    const std::size_t n = labels_.size();
    if (entries_.rows() != n || entries_.cols() != n) {
      fail(ErrorKind::kDimension, "crosstalk matrix must be N x N with N labels");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (entries_(i, i) != 1.0) {
        fail(ErrorKind::kDomain, "crosstalk matrix diagonal must be exactly 1 (" +
                                     labels_[i] + ")");
      }
      for (std::size_t j = 0; j < n; ++j) {
        if (!std::isfinite(entries_(i, j))) fail(ErrorKind::kDomain, "non-finite entry");
      }
      for (std::size_t j = 0; j < i; ++j) {
        if (labels_[i] == labels_[j]) fail(ErrorKind::kConfig, "duplicate label " + labels_[i]);
      }
    }
    inv_ = invert(entries_, det_floor);
  }

  static CrosstalkMatrix identity(std::vector<std::string> labels) {
    const auto n = labels.size();
    return CrosstalkMatrix(std::move(labels), DenseMatrix::identity(n));
  }

  std::size_t size() const noexcept { return labels_.size(); }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  const DenseMatrix& entries() const noexcept { return entries_; }
  double operator()(std::size_t i, std::size_t k) const { return entries_(i, k); }

  // Cancellation matrix X^-1.
  const DenseMatrix& cancellation() const noexcept { return inv_.inverse; }
  double determinant() const noexcept { return inv_.determinant; }
  double condition_number() const noexcept { return inv_.condition_1; }

  std::size_t index_of(const std::string& label) const {
    const auto it = std::find(labels_.begin(), labels_.end(), label);
    if (it == labels_.end()) fail(ErrorKind::kUnknownLabel, "no flux line '" + label + "'");
    return static_cast<std::size_t>(it - labels_.begin());
  }

 private:
  std::vector<std::string> labels_;
  DenseMatrix entries_;
  InverseResult inv_;
};

// V_eff = X * V_Z.
inline std::vector<double> effective_voltage(const CrosstalkMatrix& x,
                                             std::span<const double> v_z) {
  if (v_z.size() != x.size()) fail(ErrorKind::kDimension, "voltage vector size mismatch");
  return x.entries() * v_z;
}

// V_Z = X^-1 * V_target, computed by solving X V_Z = V_target.
inline std::vector<double> compensate(const CrosstalkMatrix& x,
                                      std::span<const double> v_target) {
  if (v_target.size() != x.size()) fail(ErrorKind::kDimension, "voltage vector size mismatch");
  return LuDecomposition(x.entries()).solve(v_target);
}

}  // namespace fluxtalk::model
