#pragma once

// JSON mapping for device descriptions, scans and analysis results.
// Frequencies carry an _MHz suffix, voltages _V, times _ns/_us.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fluxtalk/calibration.hpp"
#include "fluxtalk/cz_gate.hpp"
#include "fluxtalk/device_model.hpp"
#include "fluxtalk/errors.hpp"
#include "fluxtalk/linalg.hpp"
#include "fluxtalk/scan_map.hpp"
#include "fluxtalk/virtual_device.hpp"

namespace fluxtalk {

using json = nlohmann::ordered_json;

namespace io {

template <class T>
T get(const json& j, const char* key) {
  if (!j.contains(key)) fail(ErrorKind::kConfig, std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("field '") + key + "': " + e.what());
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  return get<T>(j, key);
}

inline json matrix_rows(const DenseMatrix& m) { return m.to_rows(); }

inline DenseMatrix matrix_from_rows(const json& rows) {
  try {
    return DenseMatrix::from_rows(rows.get<std::vector<std::vector<double>>>());
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("matrix rows: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Device

inline json to_json(const model::TransmonParams& p) {
  return {{"label", p.label},          {"role", model::to_string(p.role)},
          {"f01_max_MHz", p.f01_max_mhz}, {"EC_over_h_MHz", p.ec_over_h_mhz},
          {"d", p.d},                  {"Ac_rad_per_V", p.ac_rad_per_v},
          {"V_ofs_V", p.v_ofs_v}};
}

inline model::TransmonParams transmon_from_json(const json& j) {
  model::TransmonParams p;
  p.label = get<std::string>(j, "label");
  p.role = model::role_from_string(get<std::string>(j, "role"));
  p.f01_max_mhz = get<double>(j, "f01_max_MHz");
  p.ec_over_h_mhz = get<double>(j, "EC_over_h_MHz");
  p.d = get<double>(j, "d");
  p.ac_rad_per_v = get<double>(j, "Ac_rad_per_V");
  p.v_ofs_v = get<double>(j, "V_ofs_V");
  return p;
}

inline json to_json(const model::CrosstalkMatrix& x) {
  return {{"labels", x.labels()}, {"rows", matrix_rows(x.entries())}};
}

inline model::CrosstalkMatrix crosstalk_from_json(const json& j) {
  return model::CrosstalkMatrix(get<std::vector<std::string>>(j, "labels"),
                                matrix_from_rows(j.at("rows")));
}

inline json to_json(const sim::NoiseModel& n, const std::vector<std::string>& labels) {
  json coh = json::array();
  for (std::size_t i = 0; i < n.per_element.size(); ++i) {
    const auto& c = n.per_element[i];
    coh.push_back({{"label", i < labels.size() ? labels[i] : std::string()},
                   {"T1_us", c.t1_us},
                   {"T2_ramsey_us", c.t2_ramsey_us},
                   {"assignment_fidelity", c.assignment_fidelity}});
  }
  return {{"signal_noise_sigma", n.signal_noise_sigma},
          {"lorentzian_fwhm_MHz", n.lorentzian_fwhm_mhz},
          {"drive_broadening_MHz", n.drive_broadening_mhz},
          {"population_noise_sigma", n.population_noise_sigma},
          {"ramsey_shots", n.ramsey_shots},
          {"coherence", coh}};
}

inline sim::NoiseModel noise_from_json(const json& j) {
  sim::NoiseModel n;
  n.signal_noise_sigma = get_or(j, "signal_noise_sigma", n.signal_noise_sigma);
  n.lorentzian_fwhm_mhz = get_or(j, "lorentzian_fwhm_MHz", n.lorentzian_fwhm_mhz);
  n.drive_broadening_mhz = get_or(j, "drive_broadening_MHz", n.drive_broadening_mhz);
  n.population_noise_sigma = get_or(j, "population_noise_sigma", n.population_noise_sigma);
  n.ramsey_shots = get_or(j, "ramsey_shots", n.ramsey_shots);
  if (j.contains("coherence")) {
    for (const auto& c : j.at("coherence")) {
      sim::Coherence e;
      e.t1_us = get_or(c, "T1_us", e.t1_us);
      e.t2_ramsey_us = get_or(c, "T2_ramsey_us", e.t2_ramsey_us);
      e.assignment_fidelity = get_or(c, "assignment_fidelity", e.assignment_fidelity);
      n.per_element.push_back(e);
    }
  }
  return n;
}

inline const char* to_string(sim::CzCrosstalkPath p) {
  return p == sim::CzCrosstalkPath::kCouplerFromQubits ? "coupler_from_qubits"
                                                       : "qubits_from_coupler";
}

inline sim::CzCrosstalkPath cz_path_from_string(const std::string& s) {
  if (s == "coupler_from_qubits") return sim::CzCrosstalkPath::kCouplerFromQubits;
  if (s == "qubits_from_coupler") return sim::CzCrosstalkPath::kQubitsFromCoupler;
  fail(ErrorKind::kConfig, "unknown crosstalk_path '" + s + "'");
}

inline json to_json(const sim::CzSetup& cz) {
  const auto& p = cz.params;
  return {{"q1", cz.q1},
          {"q2", cz.q2},
          {"coupler", cz.coupler},
          {"f_q1_MHz", cz.f_q1_mhz},
          {"g12_MHz", p.g12_mhz},
          {"g1c_MHz", p.g1c_mhz},
          {"g2c_MHz", p.g2c_mhz},
          {"EC2_over_h_MHz", p.ec2_over_h_mhz},
          {"delta21_MHz", p.delta21_mhz},
          {"residual_offset_MHz", p.residual_offset_mhz},
          {"pulse",
           {{"T_ns", p.pulse.duration_ns},
            {"t_eff_ns", p.pulse.t_eff_ns},
            {"A_eff_over_A", p.pulse.a_eff_over_a}}},
          {"crosstalk_path", to_string(cz.path)}};
}

inline sim::CzSetup cz_from_json(const json& j) {
  sim::CzSetup cz;
  auto& p = cz.params;
  cz.q1 = get_or(j, "q1", cz.q1);
  cz.q2 = get_or(j, "q2", cz.q2);
  cz.coupler = get_or(j, "coupler", cz.coupler);
  cz.f_q1_mhz = get_or(j, "f_q1_MHz", cz.f_q1_mhz);
  p.g12_mhz = get_or(j, "g12_MHz", p.g12_mhz);
  p.g1c_mhz = get_or(j, "g1c_MHz", p.g1c_mhz);
  p.g2c_mhz = get_or(j, "g2c_MHz", p.g2c_mhz);
  p.ec2_over_h_mhz = get_or(j, "EC2_over_h_MHz", p.ec2_over_h_mhz);
  p.delta21_mhz = get_or(j, "delta21_MHz", p.delta21_mhz);
  p.residual_offset_mhz = get_or(j, "residual_offset_MHz", p.residual_offset_mhz);
  if (j.contains("pulse")) {
    const auto& q = j.at("pulse");
    p.pulse.duration_ns = get_or(q, "T_ns", p.pulse.duration_ns);
    p.pulse.t_eff_ns = get_or(q, "t_eff_ns", p.pulse.t_eff_ns);
    p.pulse.a_eff_over_a = get_or(q, "A_eff_over_A", p.pulse.a_eff_over_a);
  }
  if (j.contains("crosstalk_path")) {
    cz.path = cz_path_from_string(get<std::string>(j, "crosstalk_path"));
  }
  return cz;
}

inline json to_json(const sim::DeviceConfig& dev) {
  json t = json::array();
  for (const auto& p : dev.transmons()) t.push_back(to_json(p));
  return {{"transmons", t},
          {"crosstalk", to_json(dev.x_true())},
          {"noise", to_json(dev.noise(), dev.x_true().labels())},
          {"cz", to_json(dev.cz())},
          {"seed", dev.seed()}};
}

inline sim::DeviceConfig device_from_json(const json& j) {
  if (!j.is_object()) fail(ErrorKind::kConfig, "device description must be a JSON object");
  std::vector<model::TransmonParams> t;
  if (!j.contains("transmons")) fail(ErrorKind::kConfig, "missing field 'transmons'");
  for (const auto& e : j.at("transmons")) t.push_back(transmon_from_json(e));
  std::vector<std::string> labels;
  for (const auto& p : t) labels.push_back(p.label);
  auto x = j.contains("crosstalk") ? crosstalk_from_json(j.at("crosstalk"))
                                   : model::CrosstalkMatrix::identity(labels);
  auto noise = j.contains("noise") ? noise_from_json(j.at("noise")) : sim::NoiseModel{};
  auto cz = j.contains("cz") ? cz_from_json(j.at("cz")) : sim::CzSetup{};
  return sim::DeviceConfig(std::move(t), std::move(x), std::move(cz), std::move(noise),
                           get_or<std::uint64_t>(j, "seed", 0));
}

// ---------------------------------------------------------------------------
// Scans

inline json to_json(const Axis& a) {
  json j = {{"name", a.name}, {"unit", a.unit}, {"values", a.values}};
  if (!a.normalized_flux.empty()) j["normalized_flux"] = a.normalized_flux;
  return j;
}

inline Axis axis_from_json(const json& j) {
  Axis a;
  a.name = get<std::string>(j, "name");
  a.unit = get<std::string>(j, "unit");
  a.values = get<std::vector<double>>(j, "values");
  a.normalized_flux = get_or(j, "normalized_flux", std::vector<double>{});
  return a;
}

inline json to_json(const ScanMap& s) {
  json meta = {{"probe_label", s.meta.probe_label}};
  if (s.meta.source_label) meta["source_label"] = *s.meta.source_label;
  if (s.meta.drive_freq_mhz) meta["drive_freq_MHz"] = *s.meta.drive_freq_mhz;
  if (s.meta.probe_bias_v) meta["probe_bias_V"] = *s.meta.probe_bias_v;
  meta["seed"] = s.meta.seed;
  return {{"kind", to_string(s.kind)},
          {"x_axis", to_json(s.x_axis)},
          {"y_axis", to_json(s.y_axis)},
          {"signal", s.signal},
          {"meta", meta}};
}

inline ScanMap scan_from_json(const json& j) {
  ScanMap s;
  s.kind = scan_kind_from_string(get<std::string>(j, "kind"));
  s.x_axis = axis_from_json(j.at("x_axis"));
  s.y_axis = axis_from_json(j.at("y_axis"));
  s.signal = get<std::vector<std::vector<double>>>(j, "signal");
  const auto& m = j.at("meta");
  s.meta.probe_label = get<std::string>(m, "probe_label");
  if (m.contains("source_label")) s.meta.source_label = get<std::string>(m, "source_label");
  if (m.contains("drive_freq_MHz")) s.meta.drive_freq_mhz = get<double>(m, "drive_freq_MHz");
  if (m.contains("probe_bias_V")) s.meta.probe_bias_v = get<double>(m, "probe_bias_V");
  s.meta.seed = get_or<std::uint64_t>(m, "seed", 0);
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Analysis results

inline json to_json(const cal::SpectrumFit& f, const std::string& label) {
  json cov = json::array();
  for (int i = 0; i < 3; ++i) {
    cov.push_back({f.covariance(i, 0), f.covariance(i, 1), f.covariance(i, 2)});
  }
  return {{"label", label},
          {"f01_max_MHz", f.f01_max_mhz},
          {"Ac_rad_per_V", f.ac_rad_per_v},
          {"V_ofs_V", f.v_ofs_v},
          {"d", f.d},
          {"EC_over_h_MHz", f.ec_over_h_mhz},
          {"covariance", cov},
          {"residual_rms_MHz", f.residual_rms_mhz},
          {"points_used", f.points_used}};
}

inline json to_json(const cal::MatrixResult& r) {
  return {{"labels", r.matrix.labels()},
          {"rows", matrix_rows(r.matrix.entries())},
          {"sigmas", matrix_rows(r.sigma)},
          {"method", cal::to_string(r.method)},
          {"repeats", r.repeats}};
}

// Reads {labels, rows[, sigmas, method, repeats]}.
inline cal::MatrixResult matrix_result_from_json(const json& j) {
  auto x = crosstalk_from_json(j);
  const std::size_t n = x.size();
  DenseMatrix sig = j.contains("sigmas") ? matrix_from_rows(j.at("sigmas")) : DenseMatrix(n, n);
  if (sig.rows() != n || sig.cols() != n) fail(ErrorKind::kConfig, "sigmas must be N x N");
  const auto method = cal::method_from_string(get_or<std::string>(j, "method", "mzlc"));
  return cal::MatrixResult{method, std::move(x), std::move(sig), {}, get_or(j, "repeats", 1)};
}

inline json to_json(const cal::CrosstalkMetrics& m) {
  constexpr double kPermil = 1e3;
  return {{"largest_negative_permil", m.largest_negative * kPermil},
          {"largest_positive_permil", m.largest_positive * kPermil},
          {"average_permil", m.average_abs * kPermil},
          {"total_permil", m.total_abs * kPermil},
          {"asymmetry_permil", m.matrix_asymmetry * kPermil},
          {"db_map", matrix_rows(m.db_map)}};
}

inline json to_json(const cal::CrosstalkEstimate& e) {
  return {{"probe", e.probe},
          {"source", e.source},
          {"x", e.x},
          {"sigma", e.sigma},
          {"method", cal::to_string(e.method)},
          {"intercept_freq_MHz", e.intercept_freq_mhz},
          {"columns_used", e.columns_used}};
}

inline json to_json(const cal::PairAgreement& a) {
  return {{"probe", a.probe},
          {"source", a.source},
          {"difference", a.difference},
          {"combined_sigma", a.combined_sigma},
          {"within_2sigma", a.within_2sigma}};
}

inline json to_json(const cz::GeffCurveFit& f) {
  json cov = json::array();
  for (int i = 0; i < 3; ++i) {
    cov.push_back({f.covariance(i, 0), f.covariance(i, 1), f.covariance(i, 2)});
  }
  json j = {{"g12_MHz", f.g12_mhz},
            {"g1c_g2c_MHz2", f.g1c_g2c_mhz2},
            {"offset_MHz", f.offset_mhz},
            {"g1c_MHz", f.g1c_mhz},
            {"g2c_MHz", f.g2c_mhz},
            {"covariance", cov},
            {"nulling_flux", f.nulling_flux},
            {"points_used", f.points_used}};
  if (f.delta21_mhz) {
    j["delta21_MHz"] = *f.delta21_mhz;
    j["delta21_sigma_MHz"] = f.delta21_sigma_mhz;
  }
  return j;
}

}  // namespace io
}  // namespace fluxtalk
