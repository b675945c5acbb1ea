// fluxtalk: synthetic flux-crosstalk characterization and CZ calibration.
//
//   fluxtalk device init --template reference|random [--seed N] [--output DIR]
//   fluxtalk characterize --config cfg.json [--device dev.json] [--method m] ...
//   fluxtalk compensate-verify --config cfg.json --matrix crosstalk_matrix.json
//   fluxtalk cz-map --config cfg.json [--compensated]
//   fluxtalk report --matrix a.json [--after b.json]
//
// Exit codes: 0 ok, 2 configuration, 3 fit/characterization, 4 IO.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fluxtalk/fluxtalk.hpp"

namespace {

using namespace fluxtalk;
namespace fs = std::filesystem;

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::kIo:
      return 4;
    case ErrorKind::kConfig:
    case ErrorKind::kUnknownLabel:
    case ErrorKind::kDimension:
    case ErrorKind::kDomain:
      return 2;
    default:
      return 3;
  }
}

struct CommonFlags {
  std::string config;
  std::string device;
  std::optional<std::uint64_t> seed;
  std::string method;
  std::optional<int> repeats;
  std::string output;
  std::optional<unsigned> jobs;
  bool no_scans = false;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_method) {
  cmd->add_option("--config", f.config, "scenario JSON");
  cmd->add_option("--device", f.device, "device JSON (overrides the config's device)");
  cmd->add_option("--seed", f.seed, "RNG seed (default: config, then $FLUXTALK_SEED)");
  if (with_method) {
    cmd->add_option("--method", f.method, "mzlc | ramsey | both")
        ->check(CLI::IsMember({"mzlc", "ramsey", "both"}));
  }
  cmd->add_option("--repeats", f.repeats, "repetitions per pair (default 100)");
  cmd->add_option("--output", f.output, "output directory");
  cmd->add_option("--jobs", f.jobs, "worker threads");
  cmd->add_flag("--no-scans", f.no_scans, "do not write raw scan maps");
}

// defaults < config file < flags
app::ScenarioConfig scenario(const CommonFlags& f) {
  app::ScenarioConfig c;
  if (!f.config.empty()) c = app::load_scenario(f.config);
  if (!f.device.empty()) c.device = app::load_json_file(f.device);
  if (f.seed) c.seed = *f.seed;
  if (!f.method.empty()) c.method = cal::method_selection_from_string(f.method);
  if (f.repeats) c.repeats = *f.repeats;
  if (!f.output.empty()) c.output_dir = f.output;
  if (f.jobs) c.jobs = *f.jobs;
  if (f.no_scans) c.write_scans = false;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Flux-crosstalk characterization and CZ calibration on a virtual device"};
  cli.require_subcommand(1);
  cli.set_version_flag("--version", std::string(app::kVersion));

  auto* device = cli.add_subcommand("device", "device descriptions");
  device->require_subcommand(1);
  auto* init = device->add_subcommand("init", "write a device template");
  std::string tmpl = "reference";
  std::optional<std::uint64_t> init_seed;
  std::string init_out = ".";
  init->add_option("--template", tmpl, "reference | random")->check(CLI::IsMember({"reference", "random"}));
  init->add_option("--seed", init_seed, "seed stored in the device (and used by random)");
  init->add_option("--output", init_out, "output directory (writes device.json)");

  CommonFlags ch, cv, czf;
  auto* characterize = cli.add_subcommand("characterize", "measure the crosstalk matrix");
  add_common(characterize, ch, true);

  auto* verify = cli.add_subcommand("compensate-verify", "apply X^-1 and re-measure");
  add_common(verify, cv, false);
  std::string matrix_path;
  verify->add_option("--matrix", matrix_path, "crosstalk matrix JSON to invert")->required();

  auto* czmap = cli.add_subcommand("cz-map", "CZ-SWAP chevron, |g_eff| curve and fit");
  add_common(czmap, czf, false);
  bool compensated = false;
  czmap->add_flag("--compensated", compensated, "remove flux crosstalk from the pulses");

  auto* report = cli.add_subcommand("report", "crosstalk metrics of matrix files");
  std::string report_matrix, report_after;
  report->add_option("--matrix", report_matrix, "crosstalk matrix JSON")->required();
  report->add_option("--after", report_after, "second matrix for a before/after table");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = cli.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (init->parsed()) {
      std::uint64_t seed = 0;
      if (init_seed) {
        seed = *init_seed;
      } else if (const auto env = app::seed_from_env()) {
        seed = *env;
      }
      const auto dev = tmpl == "reference" ? sim::reference_device(seed) : sim::random_device(seed);
      app::prepare_output_dir(init_out);
      app::write_json_file(fs::path(init_out) / "device.json", io::to_json(dev));
      for (const auto& w : dev.warnings()) std::cerr << "warning: " << w << '\n';
      std::cout << (fs::path(init_out) / "device.json").string() << '\n';
    } else if (characterize->parsed()) {
      const auto cfg = scenario(ch);
      const auto r = app::run_characterize(cfg, cfg.output_dir, &std::cout);
      if (!r.agreement.empty()) {
        std::size_t ok = 0;
        for (const auto& a : r.agreement) ok += a.within_2sigma ? 1 : 0;
        std::cout << "method agreement (2 sigma): " << ok << "/" << r.agreement.size() << '\n';
      }
    } else if (verify->parsed()) {
      const auto cfg = scenario(cv);
      const auto r = app::run_compensate_verify(cfg, matrix_path, cfg.output_dir, &std::cout);
      std::cout << "contraction: " << r.contraction << '\n';
    } else if (czmap->parsed()) {
      const auto cfg = scenario(czf);
      app::run_cz_map(cfg, compensated, cfg.output_dir, &std::cout);
    } else if (report->parsed()) {
      const auto before = io::matrix_result_from_json(app::load_json_file(report_matrix));
      std::optional<cal::CrosstalkMetrics> after;
      if (!report_after.empty()) {
        after = cal::metrics(io::matrix_result_from_json(app::load_json_file(report_after)).matrix);
      }
      std::cout << app::metrics_table(cal::metrics(before.matrix), after);
    }
  } catch (const Error& e) {
    std::cerr << "fluxtalk: " << to_string(e.kind()) << ": " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "fluxtalk: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
