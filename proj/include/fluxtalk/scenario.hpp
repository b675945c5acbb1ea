#pragma once

// Scenario configuration and the end-to-end workflows behind the command line
// tool: characterize, compensate-verify and the CZ map. Everything written
// here is a pure function of (config, seed) except run_manifest.json.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fluxtalk/calibration.hpp"
#include "fluxtalk/cz_gate.hpp"
#include "fluxtalk/errors.hpp"
#include "fluxtalk/scan_map.hpp"
#include "fluxtalk/serialization.hpp"
#include "fluxtalk/virtual_device.hpp"

namespace fluxtalk::app {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kSeedEnv = "FLUXTALK_SEED";

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// File helpers

inline json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, path.string() + ": " + e.what());
  }
}

inline void write_text_file(const fs::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << content;
  out.flush();
  if (!out) fail(ErrorKind::kIo, "write failed for " + path.string());
}

inline void write_json_file(const fs::path& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

inline std::string scan_csv(const ScanMap& s) {
  std::ostringstream os;
  write_csv(os, s);
  return os.str();
}

// Creates the directory and proves it is writable.
inline void prepare_output_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) fail(ErrorKind::kIo, "cannot create output directory " + dir.string());
  const auto probe = dir / ".fluxtalk_write_test";
  write_text_file(probe, "");
  fs::remove(probe, ec);
}

inline std::uint64_t fnv1a64(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline std::optional<std::uint64_t> seed_from_env() {
  const char* s = std::getenv(kSeedEnv);
  if (s == nullptr || *s == '\0') return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (end == s || *end != '\0') fail(ErrorKind::kConfig, std::string(kSeedEnv) + " is not an integer");
  return static_cast<std::uint64_t>(v);
}

// ---------------------------------------------------------------------------
// Scenario

struct CzGrid {
  std::size_t flux_points = 81;  // symmetric about 0
  double flux_max = 1.0;         // normalized coupler flux
  double t_max_ns = 2000.0;
  double dt_ns = 10.0;
  double max_abs_flux_fit = 1e9;
  bool fit_delta21 = false;
  double g1c_over_g2c = 1.0;
};

struct ScenarioConfig {
  json device;  // resolved device description
  cal::MethodSelection method = cal::MethodSelection::kMzlc;
  int repeats = 100;
  cal::SpectroscopyPlan spectroscopy;
  cal::MzlcPlan mzlc;
  cal::RamseyPlan ramsey;
  CzGrid cz;
  std::string output_dir = "fluxtalk_out";
  std::optional<std::uint64_t> seed;
  unsigned jobs = 1;
  bool write_scans = true;

  void validate() const {
    if (device.is_null()) fail(ErrorKind::kConfig, "no device given (config 'device' or --device)");
    if (repeats < 1) fail(ErrorKind::kConfig, "repeats must be >= 1");
    if (jobs < 1) fail(ErrorKind::kConfig, "jobs must be >= 1");
    if (spectroscopy.bias_points < 5 || !(spectroscopy.step_mhz > 0.0)) {
      fail(ErrorKind::kConfig, "spectroscopy grid needs >= 5 bias points and a positive step");
    }
    if (mzlc.source_points < 3 || !(mzlc.source_half_range_v > 0.0) ||
        !(mzlc.probe_half_range_v > 0.0) || mzlc.max_probe_points < 5) {
      fail(ErrorKind::kConfig, "mzlc grid is empty or degenerate");
    }
    if (ramsey.source_points < 3 || !(ramsey.dt_ns > 0.0) || !(ramsey.t_max_ns > ramsey.dt_ns)) {
      fail(ErrorKind::kConfig, "ramsey grid is empty or degenerate");
    }
    if (cz.flux_points < 3 || !(cz.flux_max > 0.0) || !(cz.dt_ns > 0.0) ||
        !(cz.t_max_ns > cz.dt_ns)) {
      fail(ErrorKind::kConfig, "cz grid is empty or degenerate");
    }
  }

  // Seed precedence: explicit (flag or config) > FLUXTALK_SEED > device file.
  sim::DeviceConfig build_device() const {
    auto dev = io::device_from_json(device);
    if (seed) return dev.with_seed(*seed);
    if (const auto env = seed_from_env()) return dev.with_seed(*env);
    return dev;
  }

  cal::CharacterizeOptions characterize_options() const {
    cal::CharacterizeOptions o;
    o.method = method;
    o.repeats = repeats;
    o.spectroscopy = spectroscopy;
    o.mzlc = mzlc;
    o.ramsey = ramsey;
    o.jobs = jobs;
    o.keep_scans = write_scans;
    return o;
  }
};

inline const char* to_string(cal::MethodSelection m) {
  switch (m) {
    case cal::MethodSelection::kMzlc: return "mzlc";
    case cal::MethodSelection::kRamsey: return "ramsey";
    case cal::MethodSelection::kBoth: return "both";
  }
  return "?";
}

inline json to_json(const ScenarioConfig& c) {
  const auto& s = c.spectroscopy;
  const auto& m = c.mzlc;
  const auto& r = c.ramsey;
  json j = {
      {"device", c.device},
      {"method", to_string(c.method)},
      {"repeats", c.repeats},
      {"output_dir", c.output_dir},
      {"jobs", c.jobs},
      {"write_scans", c.write_scans},
      {"grids",
       {{"spectroscopy",
         {{"bias_points", s.bias_points},
          {"below_max_MHz", s.below_max_mhz},
          {"above_max_MHz", s.above_max_mhz},
          {"step_MHz", s.step_mhz}}},
        {"mzlc",
         {{"operating_flux", m.operating_flux},
          {"source_half_range_V", m.source_half_range_v},
          {"source_points", m.source_points},
          {"probe_half_range_V", m.probe_half_range_v},
          {"probe_step_linewidths", m.probe_step_linewidths},
          {"max_probe_points", m.max_probe_points}}},
        {"ramsey",
         {{"detuning_MHz", r.detuning_mhz},
          {"t_max_ns", r.t_max_ns},
          {"dt_ns", r.dt_ns},
          {"source_half_range_V", r.source_half_range_v},
          {"max_expected_crosstalk", r.max_expected_crosstalk},
          {"max_sweep_MHz", r.max_sweep_mhz},
          {"source_points", r.source_points}}},
        {"cz",
         {{"flux_points", c.cz.flux_points},
          {"flux_max", c.cz.flux_max},
          {"t_max_ns", c.cz.t_max_ns},
          {"dt_ns", c.cz.dt_ns},
          {"max_abs_flux_fit", c.cz.max_abs_flux_fit},
          {"fit_delta21", c.cz.fit_delta21},
          {"g1c_over_g2c", c.cz.g1c_over_g2c}}}}}};
  if (c.seed) j["seed"] = *c.seed;
  return j;
}

// `device` may be an inline object or a path relative to base_dir.
inline json resolve_device(const json& device, const fs::path& base_dir) {
  if (device.is_string()) {
    fs::path p = device.get<std::string>();
    if (p.is_relative()) p = base_dir / p;
    return load_json_file(p);
  }
  return device;
}

inline ScenarioConfig scenario_from_json(const json& j, const fs::path& base_dir = ".") {
  using io::get_or;
  if (!j.is_object()) fail(ErrorKind::kConfig, "scenario config must be a JSON object");
  ScenarioConfig c;
  if (j.contains("device")) c.device = resolve_device(j.at("device"), base_dir);
  if (j.contains("method")) c.method = cal::method_selection_from_string(j.at("method").get<std::string>());
  c.repeats = get_or(j, "repeats", c.repeats);
  c.output_dir = get_or(j, "output_dir", c.output_dir);
  c.jobs = get_or(j, "jobs", c.jobs);
  c.write_scans = get_or(j, "write_scans", c.write_scans);
  if (j.contains("seed")) c.seed = io::get<std::uint64_t>(j, "seed");
  if (j.contains("grids")) {
    const auto& g = j.at("grids");
    if (g.contains("spectroscopy")) {
      const auto& s = g.at("spectroscopy");
      auto& p = c.spectroscopy;
      p.bias_points = get_or(s, "bias_points", p.bias_points);
      p.below_max_mhz = get_or(s, "below_max_MHz", p.below_max_mhz);
      p.above_max_mhz = get_or(s, "above_max_MHz", p.above_max_mhz);
      p.step_mhz = get_or(s, "step_MHz", p.step_mhz);
    }
    if (g.contains("mzlc")) {
      const auto& s = g.at("mzlc");
      auto& p = c.mzlc;
      p.operating_flux = get_or(s, "operating_flux", p.operating_flux);
      p.source_half_range_v = get_or(s, "source_half_range_V", p.source_half_range_v);
      p.source_points = get_or(s, "source_points", p.source_points);
      p.probe_half_range_v = get_or(s, "probe_half_range_V", p.probe_half_range_v);
      p.probe_step_linewidths = get_or(s, "probe_step_linewidths", p.probe_step_linewidths);
      p.max_probe_points = get_or(s, "max_probe_points", p.max_probe_points);
    }
    if (g.contains("ramsey")) {
      const auto& s = g.at("ramsey");
      auto& p = c.ramsey;
      p.detuning_mhz = get_or(s, "detuning_MHz", p.detuning_mhz);
      p.t_max_ns = get_or(s, "t_max_ns", p.t_max_ns);
      p.dt_ns = get_or(s, "dt_ns", p.dt_ns);
      p.source_half_range_v = get_or(s, "source_half_range_V", p.source_half_range_v);
      p.max_expected_crosstalk = get_or(s, "max_expected_crosstalk", p.max_expected_crosstalk);
      p.max_sweep_mhz = get_or(s, "max_sweep_MHz", p.max_sweep_mhz);
      p.source_points = get_or(s, "source_points", p.source_points);
    }
    if (g.contains("cz")) {
      const auto& s = g.at("cz");
      auto& p = c.cz;
      p.flux_points = get_or(s, "flux_points", p.flux_points);
      p.flux_max = get_or(s, "flux_max", p.flux_max);
      p.t_max_ns = get_or(s, "t_max_ns", p.t_max_ns);
      p.dt_ns = get_or(s, "dt_ns", p.dt_ns);
      p.max_abs_flux_fit = get_or(s, "max_abs_flux_fit", p.max_abs_flux_fit);
      p.fit_delta21 = get_or(s, "fit_delta21", p.fit_delta21);
      p.g1c_over_g2c = get_or(s, "g1c_over_g2c", p.g1c_over_g2c);
    }
  }
  return c;
}

inline ScenarioConfig load_scenario(const fs::path& path) {
  return scenario_from_json(load_json_file(path), path.parent_path());
}

// ---------------------------------------------------------------------------
// Reports

inline std::string metrics_table(const cal::CrosstalkMetrics& before,
                                 const std::optional<cal::CrosstalkMetrics>& after = std::nullopt) {
  const auto row = [&](const char* name, double b, std::optional<double> a) {
    std::ostringstream os;
    os << std::left << std::setw(20) << name << std::right << std::fixed << std::setprecision(2)
       << std::setw(12) << b * 1e3;
    if (a) os << std::setw(12) << *a * 1e3;
    os << '\n';
    return os.str();
  };
  const auto pick = [&](double cal::CrosstalkMetrics::*field) -> std::optional<double> {
    if (!after) return std::nullopt;
    return (*after).*field;
  };
  std::ostringstream os;
  os << std::left << std::setw(20) << "Metric (permil)" << std::right << std::setw(12)
     << (after ? "Before" : "Value");
  if (after) os << std::setw(12) << "After";
  os << '\n';
  os << row("Largest Negative", before.largest_negative, pick(&cal::CrosstalkMetrics::largest_negative));
  os << row("Largest Positive", before.largest_positive, pick(&cal::CrosstalkMetrics::largest_positive));
  os << row("Average", before.average_abs, pick(&cal::CrosstalkMetrics::average_abs));
  os << row("Total", before.total_abs, pick(&cal::CrosstalkMetrics::total_abs));
  os << row("Matrix Asymmetry", before.matrix_asymmetry, pick(&cal::CrosstalkMetrics::matrix_asymmetry));
  return os.str();
}

inline std::string matrix_csv(const std::vector<std::string>& labels, const DenseMatrix& m) {
  std::ostringstream os;
  os << "detector\\source";
  for (const auto& l : labels) os << ',' << l;
  os << '\n';
  for (std::size_t i = 0; i < labels.size(); ++i) {
    os << labels[i];
    for (std::size_t k = 0; k < labels.size(); ++k) os << ',' << format_double(m(i, k));
    os << '\n';
  }
  return os.str();
}

struct PlotEntry {
  std::string file;
  std::string title;
  std::string x;
  std::string y;
  std::string z;
};

inline json to_json(const std::vector<PlotEntry>& plots) {
  json arr = json::array();
  for (const auto& p : plots) {
    arr.push_back({{"file", p.file}, {"title", p.title}, {"x", p.x}, {"y", p.y}, {"z", p.z}});
  }
  return {{"plots", arr}};
}

inline std::string axis_label(const Axis& a) { return a.name + " [" + a.unit + "]"; }

inline PlotEntry plot_entry(const ScanMap& s, const std::string& file) {
  std::string title = std::string(to_string(s.kind)) + " " + s.meta.probe_label;
  if (s.meta.source_label) title += " <- " + *s.meta.source_label;
  const bool population = s.kind == ScanKind::kRamsey || s.kind == ScanKind::kCzSwap;
  return {file, title, axis_label(s.x_axis), axis_label(s.y_axis),
          population ? "population" : "signal [a.u.]"};
}

inline void write_scan(const fs::path& dir, const ScanMap& s, std::vector<PlotEntry>& plots,
                       const std::string& stem_suffix = "") {
  const std::string stem = s.file_stem() + stem_suffix;
  write_text_file(dir / "scans" / (stem + ".csv"), scan_csv(s));
  write_json_file(dir / "scans" / (stem + ".json"), io::to_json(s));
  plots.push_back(plot_entry(s, "scans/" + stem + ".csv"));
}

// Only file in an output directory that is allowed to vary between runs.
inline void write_run_manifest(const fs::path& dir, const std::string& command,
                               const std::string& inputs, std::uint64_t seed) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream ts;
  ts << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  write_json_file(dir / "run_manifest.json",
                  {{"command", command},
                   {"inputs_fnv1a64", hex64(fnv1a64(inputs))},
                   {"seed", seed},
                   {"version", kVersion},
                   {"compiler", __VERSION__},
                   {"timestamp", ts.str()}});
}

// ---------------------------------------------------------------------------
// Workflows

inline void emit_matrix(const fs::path& dir, const std::string& stem, const cal::MatrixResult& r,
                        std::vector<PlotEntry>& plots) {
  const auto m = cal::metrics(r.matrix);
  write_json_file(dir / (stem + ".json"), io::to_json(r));
  json est = json::array();
  for (const auto& e : r.estimates) est.push_back(io::to_json(e));
  write_json_file(dir / (stem + "_estimates.json"), est);
  write_json_file(dir / (stem + "_metrics.json"), io::to_json(m));
  write_text_file(dir / (stem + "_metrics.txt"), metrics_table(m));
  write_text_file(dir / (stem + "_db_map.csv"), matrix_csv(r.matrix.labels(), m.db_map));
  plots.push_back({stem + "_db_map.csv", std::string(cal::to_string(r.method)) + " crosstalk (dB)",
                   "source", "detector", "20 log10 |X|"});
}

// characterize: writes crosstalk_matrix.json + metrics for the primary method,
// crosstalk_matrix_ramsey.json when both ran, spectra, scans and agreement.
inline cal::Characterization run_characterize(const ScenarioConfig& cfg, const fs::path& dir,
                                              std::ostream* table_out = nullptr) {
  cfg.validate();
  prepare_output_dir(dir);
  const auto dev = cfg.build_device();
  const auto result = cal::characterize(dev, cfg.characterize_options());

  std::vector<PlotEntry> plots;
  const auto& primary = result.primary();
  emit_matrix(dir, "crosstalk_matrix", primary, plots);
  // Canonical names for the primary result.
  const auto metrics = cal::metrics(primary.matrix);
  write_json_file(dir / "metrics.json", io::to_json(metrics));
  write_text_file(dir / "metrics.txt", metrics_table(metrics));
  if (result.mzlc && result.ramsey) {
    emit_matrix(dir, "crosstalk_matrix_ramsey", *result.ramsey, plots);
    json agree = json::array();
    for (const auto& a : result.agreement) agree.push_back(io::to_json(a));
    write_json_file(dir / "method_agreement.json", agree);
  }
  json spectra = json::array();
  for (std::size_t i = 0; i < result.spectra.size(); ++i) {
    spectra.push_back(io::to_json(result.spectra[i], result.labels[i]));
  }
  write_json_file(dir / "spectra.json", spectra);
  for (const auto& s : result.scans) write_scan(dir, s, plots);
  write_json_file(dir / "plot_manifest.json", to_json(plots));
  write_run_manifest(dir, "characterize", to_json(cfg).dump(), dev.seed());
  if (table_out != nullptr) *table_out << metrics_table(metrics);
  return result;
}

struct VerifyResult {
  model::CrosstalkMatrix applied;
  model::CrosstalkMatrix residual;
  cal::CrosstalkMetrics before;
  cal::CrosstalkMetrics after;
  double contraction = 0.0;  // before.average / after.average
};

inline VerifyResult run_compensate_verify(const ScenarioConfig& cfg, const fs::path& matrix_path,
                                          const fs::path& dir, std::ostream* table_out = nullptr) {
  cfg.validate();
  const auto applied = io::matrix_result_from_json(load_json_file(matrix_path));
  prepare_output_dir(dir);
  const auto dev = cfg.build_device();
  auto opt = cfg.characterize_options();
  opt.keep_scans = false;
  const auto residual = cal::verify_compensation(dev, applied.matrix, opt);

  VerifyResult r{applied.matrix, residual, cal::metrics(applied.matrix), cal::metrics(residual), 0.0};
  r.contraction = r.after.average_abs > 0.0 ? r.before.average_abs / r.after.average_abs
                                            : std::numeric_limits<double>::infinity();
  write_json_file(dir / "residual_matrix.json",
                  {{"labels", residual.labels()},
                   {"rows", io::matrix_rows(residual.entries())},
                   {"method", "mzlc"},
                   {"repeats", cfg.repeats}});
  json cmp = {{"before", io::to_json(r.before)},
              {"after", io::to_json(r.after)},
              {"contraction", std::isfinite(r.contraction) ? json(r.contraction) : json(nullptr)}};
  write_json_file(dir / "compensation_report.json", cmp);
  const auto table = metrics_table(r.before, r.after);
  write_text_file(dir / "compensation_report.txt", table);
  write_text_file(dir / "residual_db_map.csv", matrix_csv(residual.labels(), r.after.db_map));
  write_json_file(dir / "plot_manifest.json",
                  to_json(std::vector<PlotEntry>{{"residual_db_map.csv", "crosstalk after compensation (dB)",
                                                  "source", "detector", "20 log10 |X|"}}));
  std::string inputs = to_json(cfg).dump();
  std::ifstream mf(matrix_path, std::ios::binary);
  inputs += std::string(std::istreambuf_iterator<char>(mf), {});
  write_run_manifest(dir, "compensate-verify", inputs, dev.seed());
  if (table_out != nullptr) *table_out << table;
  return r;
}

struct CzMapResult {
  ScanMap map;
  std::vector<cz::GeffPoint> curve;
  std::optional<cz::GeffCurveFit> fit;
  std::string fit_error;
  double d_factor = 0.0;
  double symmetry_compensated = 0.0;
  double symmetry_uncompensated = 0.0;
};

inline std::vector<double> symmetric_grid(double max, std::size_t points) {
  if (points % 2 == 0) ++points;  // keep 0 on the grid
  return linspace(-max, max, points);
}

// Chevron for the requested mode, its |g_eff| curve and fit, plus the
// symmetry residual of both compensated and uncompensated maps.
inline CzMapResult cz_map(const sim::DeviceConfig& dev, const CzGrid& grid, bool compensated) {
  const auto flux = symmetric_grid(grid.flux_max, grid.flux_points);
  const auto t = cal::detail::grid(0.0, grid.t_max_ns, grid.dt_ns);
  const auto& cz = dev.cz();
  CzMapResult r;
  r.d_factor = cz::pulse_reduction(cz.params.pulse);
  const auto comp = sim::cz_swap_scan(dev, flux, t, true);
  const auto uncomp = sim::cz_swap_scan(dev, flux, t, false);
  r.symmetry_compensated = sim::symmetry_residual(comp);
  r.symmetry_uncompensated = sim::symmetry_residual(uncomp);
  r.map = compensated ? comp : uncomp;
  r.curve = cz::extract_geff_curve(r.map, cz.params.delta21_mhz, r.d_factor);
  cz::GeffFitOptions fo;
  fo.max_abs_flux = grid.max_abs_flux_fit;
  fo.fit_delta21 = grid.fit_delta21;
  fo.delta21_mhz = cz.params.delta21_mhz;
  fo.g1c_over_g2c = grid.g1c_over_g2c;
  try {
    r.fit = cz::fit_geff_curve(r.curve, dev.element(cz.coupler), cz.f_q1_mhz, cz.f_q2_mhz(),
                               cz.params.ec2_over_h_mhz, fo);
  } catch (const Error& e) {
    r.fit_error = e.what();
  }
  return r;
}

inline std::string geff_curve_csv(std::span<const cz::GeffPoint> curve) {
  std::ostringstream os;
  os << "normalized_flux,g_eff_MHz,sigma_MHz,below_floor_flag\n";
  for (const auto& p : curve) {
    os << format_double(p.flux) << ',' << format_double(p.g_mhz) << ','
       << format_double(p.sigma_mhz) << ',' << (p.below_floor ? 1 : 0) << '\n';
  }
  return os.str();
}

// Writes everything, then rethrows a fit failure so the caller can exit
// with the characterization error code.
inline CzMapResult run_cz_map(const ScenarioConfig& cfg, bool compensated, const fs::path& dir,
                              std::ostream* summary_out = nullptr) {
  cfg.validate();
  prepare_output_dir(dir);
  const auto dev = cfg.build_device();
  auto r = cz_map(dev, cfg.cz, compensated);

  std::vector<PlotEntry> plots;
  write_scan(dir, r.map, plots);
  write_text_file(dir / "geff_curve.csv", geff_curve_csv(r.curve));
  plots.push_back({"geff_curve.csv", "|g_eff| versus coupler flux", "normalized_flux [rad]",
                   "g_eff_MHz", ""});
  json report = r.fit ? io::to_json(*r.fit) : json::object();
  if (!r.fit) report["fit_error"] = r.fit_error;
  report["compensated"] = compensated;
  report["D"] = r.d_factor;
  report["symmetry_residual_compensated"] = r.symmetry_compensated;
  report["symmetry_residual_uncompensated"] = r.symmetry_uncompensated;
  write_json_file(dir / "cz_fit.json", report);
  write_json_file(dir / "plot_manifest.json", to_json(plots));
  write_run_manifest(dir, compensated ? "cz-map --compensated" : "cz-map", to_json(cfg).dump(),
                     dev.seed());
  if (summary_out != nullptr) {
    auto& os = *summary_out;
    os << std::fixed << std::setprecision(4);
    os << "D = " << r.d_factor << '\n';
    os << "symmetry residual: compensated " << r.symmetry_compensated << ", uncompensated "
       << r.symmetry_uncompensated << '\n';
    if (r.fit) {
      os << "g12 = " << r.fit->g12_mhz << " +- " << r.fit->sigma(0) << " MHz\n";
      os << "g1c*g2c = " << r.fit->g1c_g2c_mhz2 << " +- " << r.fit->sigma(1) << " MHz^2\n";
      os << "offset = " << r.fit->offset_mhz << " +- " << r.fit->sigma(2) << " MHz\n";
      os << "nulling flux = " << r.fit->nulling_flux << '\n';
    }
  }
  if (!r.fit) fail(ErrorKind::kFit, r.fit_error);
  return r;
}

}  // namespace fluxtalk::app
