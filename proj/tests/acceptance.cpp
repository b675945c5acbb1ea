// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <Eigen/Eigenvalues>

#include "fluxtalk/fluxtalk.hpp"

using namespace fluxtalk;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double max_offdiag_error(const model::CrosstalkMatrix& a, const model::CrosstalkMatrix& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a.size(); ++k)
      if (i != k) worst = std::max(worst, std::abs(a(i, k) - b(i, k)));
  return worst;
}

double max_offdiag(const model::CrosstalkMatrix& a) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a.size(); ++k)
      if (i != k) worst = std::max(worst, std::abs(a(i, k)));
  return worst;
}

// 1 -------------------------------------------------------------------------
Outcome pulse_reduction_factor() {
  const double d = cz::pulse_reduction(100.0, 278.0, -1.0);
  return {std::abs(d - 0.160) <= 0.001, fmt("D = %.5f", d)};
}

// 2 -------------------------------------------------------------------------
Outcome metric_identities() {
  const auto m = cal::metrics(sim::reference_device().x_true());
  const double rel = std::abs(m.total_abs - 12.0 * m.average_abs) / m.total_abs;
  const double avg_before = 26.5, total_before = 318.4;
  const double avg_after = 0.20, total_after = 2.42;
  const double e1 = std::abs(12.0 * avg_before - total_before) / total_before;
  const double e2 = std::abs(12.0 * avg_after - total_after) / total_after;
  return {rel <= 1e-15 && e1 <= 0.005 && e2 <= 0.01,
          fmt("total vs 12*avg rel %.1e; 12*26.5 vs 318.4: %.3f%%; 12*0.20 vs 2.42: %.3f%%", rel,
              100 * e1, 100 * e2)};
}

// 3 -------------------------------------------------------------------------
Outcome end_to_end_compensation() {
  const auto t0 = Clock::now();
  double worst_est = 0.0, worst_resid = 0.0, contraction_sum = 0.0;
  const int seeds = 20;
  for (int s = 1; s <= seeds; ++s) {
    const auto dev = sim::reference_device(static_cast<std::uint64_t>(s));
    const auto res = cal::characterize(dev);
    worst_est = std::max(worst_est, max_offdiag_error(res.mzlc->matrix, dev.x_true()));
    const auto resid = cal::verify_compensation(dev, res.mzlc->matrix);
    worst_resid = std::max(worst_resid, max_offdiag(resid));
    contraction_sum += cal::metrics(dev.x_true()).average_abs / cal::metrics(resid).average_abs;
  }
  const double contraction = contraction_sum / seeds;
  const double dt = seconds_since(t0);
  return {worst_est <= 5e-4 && worst_resid < 5e-4 && contraction >= 50.0 && dt < 60.0,
          fmt("%d seeds: worst |X_est - X| %.3f permil, worst residual %.3f permil, "
              "mean contraction %.0f, %.1f s",
              seeds, 1e3 * worst_est, 1e3 * worst_resid, contraction, dt)};
}

// 4 -------------------------------------------------------------------------
Outcome spectrum_fit_recovery() {
  const auto t0 = Clock::now();
  const auto p = sim::reference_device().element("Q1");
  std::mt19937_64 rng(404);
  std::normal_distribution<double> noise(0.0, 0.5);
  const double half = 0.5 * p.period_v();
  const auto bias = linspace(p.v_ofs_v - 0.9 * half, p.v_ofs_v + 0.9 * half, 61);
  int good = 0;
  const int trials = 100;
  for (int t = 0; t < trials; ++t) {
    cal::PeakSeries s;
    for (double v : bias) {
      s.bias.push_back(v);
      s.peak_freq.push_back(model::f01_of_voltage(p, v) + noise(rng));
      s.peak_sigma.push_back(0.5);
    }
    const auto f = cal::fit_spectrum(s, p.d, p.ec_over_h_mhz);
    const bool ok = std::abs(f.f01_max_mhz - p.f01_max_mhz) <= 0.5 &&
                    std::abs(f.ac_rad_per_v - p.ac_rad_per_v) <= 0.01 * p.ac_rad_per_v &&
                    std::abs(f.v_ofs_v - p.v_ofs_v) <= 1e-3;
    good += ok ? 1 : 0;
  }
  const double dt = seconds_since(t0);
  return {good >= 95 && dt < 10.0, fmt("%d/%d trials within tolerance, %.2f s", good, trials, dt)};
}

// 5 -------------------------------------------------------------------------
Outcome method_cross_validation() {
  const auto t0 = Clock::now();
  std::size_t agree = 0, total = 0;
  std::vector<std::size_t> per_entry(16, 0);
  const int runs = 50;
  for (int r = 0; r < runs; ++r) {
    const auto dev = sim::reference_device(1000 + static_cast<std::uint64_t>(r));
    cal::CharacterizeOptions opt;
    opt.method = cal::MethodSelection::kBoth;
    const auto res = cal::characterize(dev, opt);
    for (const auto& a : res.agreement) {
      ++total;
      if (!a.within_2sigma) continue;
      ++agree;
      ++per_entry[dev.index_of(a.probe) * 4 + dev.index_of(a.source)];
    }
  }
  std::size_t worst = runs;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 4; ++k)
      if (i != k) worst = std::min(worst, per_entry[i * 4 + k]);
  const double frac = static_cast<double>(agree) / static_cast<double>(total);
  // Every entry must agree in at least 90% of the runs; the pooled rate is reported too.
  return {10 * worst >= 9 * static_cast<std::size_t>(runs) && frac >= 0.90, fmt("%zu/%zu entry-runs within 2 sigma (%.1f%%), worst entry %zu/%d, %.1f s",
                            agree, total, 100 * frac, worst, runs, seconds_since(t0))};
}

// 6 -------------------------------------------------------------------------
Outcome analytic_roundtrips() {
  std::mt19937_64 rng(6);
  const auto dev = sim::reference_device();
  double worst_idle = 0.0;
  for (const auto& p : dev.transmons()) {
    std::uniform_real_distribution<double> f(std::max(model::f01_min(p), 1.0), p.f01_max_mhz);
    for (int i = 0; i < 100; ++i) {
      const double target = f(rng);
      const double v = model::idle_voltage(p, target);
      worst_idle = std::max(worst_idle, std::abs(model::f01_of_voltage(p, v) - target) / target);
    }
  }
  double worst_comp = 0.0;
  std::uniform_real_distribution<double> uv(-1.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> v(4);
    for (auto& e : v) e = uv(rng);
    const auto back = model::compensate(dev.x_true(), model::effective_voltage(dev.x_true(), v));
    for (std::size_t k = 0; k < 4; ++k) worst_comp = std::max(worst_comp, std::abs(back[k] - v[k]));
  }
  const auto& s = dev.cz();
  const auto coupler = dev.element(s.coupler);
  double worst_cz = 0.0;
  std::uniform_real_distribution<double> ug(-20.0, -2.0);
  for (int i = 0; i < 50; ++i) {
    const double g = ug(rng);
    const double v = cz::coupler_idle_voltage(s.params, coupler, g, s.f_q1_mhz, model::Branch::kPlus);
    const double back = cz::g_eff_approx(s.params, model::f01_of_voltage(coupler, v), s.f_q1_mhz);
    worst_cz = std::max(worst_cz, std::abs(back - g) / std::abs(g));
  }
  return {worst_idle <= 1e-9 && worst_comp <= 1e-12 && worst_cz <= 1e-9,
          fmt("idle voltage %.1e, compensate %.1e, coupler bias %.1e", worst_idle, worst_comp,
              worst_cz)};
}

// 7 -------------------------------------------------------------------------
Outcome cz_digital_twin() {
  const auto t0 = Clock::now();
  // Oscillation frequency of the |11>,|02> pair from the eigenvalue splitting
  // of H = [[0, g], [g, delta]]; P(|11>) oscillates at lambda_+ - lambda_-.
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ud(-20.0, 20.0), ug(0.2, 15.0), ut(0.0, 2000.0);
  double worst_freq = 0.0, worst_pop = 0.0;
  for (int k = 0; k < 10; ++k) {
    const double d = ud(rng), g = ug(rng);
    Eigen::Matrix2d h;
    h << 0.0, g, g, d;
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(h);
    const double split = es.eigenvalues()(1) - es.eigenvalues()(0);
    worst_freq = std::max(worst_freq, std::abs(cz::rabi_frequency(d, g) - split) / split);
    const double env = 4 * g * g / (split * split);
    for (int j = 0; j < 20; ++j) {
      const double t = ut(rng);
      std::complex<double> u00 = 0.0;
      for (int m = 0; m < 2; ++m) {
        const double ph = -constants::kTwoPi * es.eigenvalues()(m) * t * constants::kMHzNs;
        u00 += es.eigenvectors()(0, m) * es.eigenvectors()(0, m) * std::polar(1.0, ph);
      }
      worst_pop = std::max(worst_pop, std::abs(cz::p11(d, g, t, 1.0) - (std::norm(u00) - 1.0 + env)));
    }
  }
  bool fits = true, symmetric = true;
  double worst_z = 0.0, worst_ratio = 0.0;
  const int seeds = 5;
  for (int s = 1; s <= seeds; ++s) {
    const auto dev = sim::reference_device(static_cast<std::uint64_t>(s));
    const auto r = app::cz_map(dev, app::CzGrid{}, true);
    symmetric = symmetric && r.symmetry_compensated < r.symmetry_uncompensated;
    worst_ratio = std::max(worst_ratio, r.symmetry_compensated / r.symmetry_uncompensated);
    if (!r.fit) {
      fits = false;
      continue;
    }
    const auto& p = dev.cz().params;
    const double truth[3] = {p.g12_mhz, p.g1c_mhz * p.g2c_mhz, p.residual_offset_mhz};
    const double est[3] = {r.fit->g12_mhz, r.fit->g1c_g2c_mhz2, r.fit->offset_mhz};
    for (int i = 0; i < 3; ++i) {
      const double z = std::abs(est[i] - truth[i]) / r.fit->sigma(i);
      worst_z = std::max(worst_z, z);
      fits = fits && z <= 2.0;
    }
  }
  return {worst_freq <= 1e-6 && worst_pop <= 1e-6 && fits && symmetric,
          fmt("Omega rel %.1e, population %.1e; %d seeds: worst |fit - planted| %.2f sigma, "
              "symmetry comp/uncomp <= %.3f; %.1f s",
              worst_freq, worst_pop, seeds, worst_z, worst_ratio, seconds_since(t0))};
}

// 8 -------------------------------------------------------------------------
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
  const auto root = fs::temp_directory_path() / "fluxtalk_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  app::write_json_file(root / "config.json",
                       {{"device", io::to_json(sim::reference_device())},
                        {"method", "both"},
                        {"repeats", 2},
                        {"seed", 8}});
  for (const char* run : {"a", "b"}) {
    const std::string cmd = std::string("\"") + FLUXTALK_CLI_PATH + "\" characterize --config \"" +
                            (root / "config.json").string() + "\" --output \"" +
                            (root / run).string() + "\" > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    if (!WIFEXITED(rc) || WEXITSTATUS(rc) != 0) return {false, fmt("CLI run %s failed", run)};
  }
  std::size_t files = 0, differing = 0;
  bool matrix_seen = false, metrics_seen = false;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file() || e.path().filename() == "run_manifest.json") continue;
    const auto rel = fs::relative(e.path(), root / "a");
    ++files;
    if (slurp(e.path()) != slurp(root / "b" / rel)) ++differing;
    matrix_seen = matrix_seen || rel == "crosstalk_matrix.json";
    metrics_seen = metrics_seen || rel == "metrics.json";
  }
  return {matrix_seen && metrics_seen && differing == 0,
          fmt("%zu output files compared (run manifest excluded), %zu differ", files, differing)};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const Criterion criteria[] = {
      {"pulse-reduction factor", pulse_reduction_factor},
      {"metric identities", metric_identities},
      {"end-to-end compensation", end_to_end_compensation},
      {"spectrum-fit recovery", spectrum_fit_recovery},
      {"method cross-validation", method_cross_validation},
      {"analytic roundtrips", analytic_roundtrips},
      {"CZ digital twin", cz_digital_twin},
      {"determinism", determinism},
  };
  int failed = 0, index = 0;
  for (const auto& c : criteria) {
    ++index;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("[%s] %d. %s: %s\n", o.pass ? "PASS" : "FAIL", index, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", index - failed, index);
  return failed == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
