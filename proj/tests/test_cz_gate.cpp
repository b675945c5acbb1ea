#include <algorithm>
#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "fluxtalk/cz_gate.hpp"
#include "fluxtalk/scenario.hpp"
#include "fluxtalk/virtual_device.hpp"

using namespace fluxtalk;
using fluxtalk::constants::kTwoPi;

namespace {

constexpr double kF1 = 4700.0;

double f2_for(const cz::CZParams& p) {
  return cz::q2_frequency_for_cz(kF1, p.ec2_over_h_mhz, p.delta21_mhz);
}

template <class F>
double bisect(F f, double lo, double hi) {
  double flo = f(lo);
  for (int i = 0; i < 200; ++i) {
    const double m = 0.5 * (lo + hi);
    const double fm = f(m);
    if ((fm > 0) == (flo > 0)) {
      lo = m;
      flo = fm;
    } else {
      hi = m;
    }
  }
  return 0.5 * (lo + hi);
}

// Two-level |11>,|02> propagator exp(-i 2pi H t), H = [[0, g], [g, delta]] in
// MHz, t in us. Returns the probability of staying in |11>.
double stay_probability(double delta, double g, double t_ns) {
  Eigen::Matrix2d h;
  h << 0.0, g, g, delta;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(h);
  const auto& v = es.eigenvectors();
  std::complex<double> u00 = 0.0;
  for (int k = 0; k < 2; ++k) {
    const double ph = -kTwoPi * es.eigenvalues()(k) * t_ns * 1e-3;
    u00 += v(0, k) * v(0, k) * std::polar(1.0, ph);
  }
  return std::norm(u00);
}

sim::DeviceConfig with_cz(const sim::DeviceConfig& dev, const cz::CZParams& p) {
  auto setup = dev.cz();
  setup.params = p;
  return sim::DeviceConfig(dev.transmons(), dev.x_true(), setup, dev.noise(), dev.seed());
}

sim::DeviceConfig quiet(const sim::DeviceConfig& dev) {
  return dev.with_noise(dev.noise().noiseless());
}

std::vector<double> time_grid(double t_max = 2000.0, double dt = 10.0) {
  return linspace(0.0, t_max, static_cast<std::size_t>(t_max / dt) + 1);
}

}  // namespace

// --- B02 ------------------------------------------------------------------

TEST(B02, VanishesFarAboveTheQubits) {
  const double near = cz::b02(6000, 4931, 4789, 206);
  const double far = cz::b02(1e6, 4931, 4789, 206);
  EXPECT_LT(std::abs(far), 1e-5);
  EXPECT_NEAR(far, 4.0 / 1e6, 1e-8);  // four terms, each ~ 1/f_c
  EXPECT_LT(std::abs(far), std::abs(near));
}

TEST(B02, FirstTwoTermsCoincideWhenQ1SitsAboveQ2ByEc) {
  // 1/(f_c - f_q1) == 1/(f_c - f_q2 - Ec2) iff f_q1 = f_q2 + Ec2.
  const double fq2 = 4789, ec = 206, fc = 5800;
  const double fq1 = fq2 + ec;
  EXPECT_DOUBLE_EQ(1.0 / (fc - fq1), 1.0 / (fc - fq2 - ec));
  // Swapping one sign of Ec breaks the coincidence.
  EXPECT_GT(std::abs(1.0 / (fc - (fq2 - ec)) - 1.0 / (fc - fq2 - ec)), 1e-4);
  // Then B02 is twice the first term plus the two sum terms.
  EXPECT_NEAR(cz::b02(fc, fq1, fq2, ec),
              2.0 / (fc - fq1) + 1.0 / (fc + fq1) + 1.0 / (fc + fq2 + ec), 1e-15);
}

TEST(B02, IdleConfigurationMatchesLongDoubleTerms) {
  const long double fc = 5379, f1 = 4931, f2 = 4789, ec = 206;
  const long double ref = 1 / (fc - f1) + 1 / (fc - f2 - ec) + 1 / (fc + f1) + 1 / (fc + f2 + ec);
  EXPECT_NEAR(cz::b02(5379, 4931, 4789, 206), static_cast<double>(ref), 1e-15);
}

TEST(B02, PolesAreReported) {
  EXPECT_THROW(
      {
        try {
          (void)cz::b02(4931, 4931, 4789, 206);
        } catch (const Error& e) {
          EXPECT_EQ(e.kind(), ErrorKind::kPole);
          throw;
        }
      },
      Error);
  EXPECT_THROW((void)cz::b02(4995, 4931, 4789, 206), Error);
  EXPECT_THROW((void)cz::b02(-4931, 4931, 4789, 206), Error);
  EXPECT_THROW((void)cz::b02(-4995, 4931, 4789, 206), Error);
}

// --- g_eff ----------------------------------------------------------------

TEST(GEff, NoMediatedPathLeavesDirectCoupling) {
  cz::CZParams p;
  p.g1c_mhz = 0.0;  // not a valid config, but the formula must reduce
  EXPECT_DOUBLE_EQ(cz::g_eff(p, 6000, kF1, f2_for(p)), std::sqrt(2.0) * p.g12_mhz);
  EXPECT_DOUBLE_EQ(cz::g_eff_approx(p, 6000, kF1), std::sqrt(2.0) * p.g12_mhz);
  p.g1c_mhz = 100.0;
  p.g2c_mhz = 0.0;
  EXPECT_DOUBLE_EQ(cz::g_eff(p, 6000, kF1, f2_for(p)), std::sqrt(2.0) * p.g12_mhz);
  EXPECT_THROW(p.validate(), Error);
}

TEST(GEff, ApproxZeroAtClosedFormRoot) {
  const cz::CZParams p;
  const double fc = cz::approx_nulling_frequency(p, kF1);
  EXPECT_DOUBLE_EQ(fc, kF1 + 2.0 * 100.0 * 100.0 / 5.0);
  EXPECT_NEAR(cz::g_eff_approx(p, fc, kF1), 0.0, 1e-12);
  EXPECT_TRUE(cz::approx_regime_valid(fc, kF1));
  EXPECT_FALSE(cz::approx_regime_valid(kF1 - 1, kF1));
  EXPECT_THROW((void)cz::g_eff_approx(p, kF1, kF1), Error);
}

TEST(GEff, FullRootLiesBelowApproxRoot) {
  // The full expression keeps both difference terms, which differ by about
  // 2 Ec2 here, so its zero sits well below the dispersive one.
  const cz::CZParams p;
  const double f2 = f2_for(p);
  const auto g = [&](double fc) { return cz::g_eff(p, fc, kF1, f2); };
  const double root = bisect(g, f2 + p.ec2_over_h_mhz + 1.0, 1e6);
  EXPECT_NEAR(g(root), 0.0, 1e-9);
  EXPECT_NEAR(root, 7321.95, 0.01);
  const double approx = cz::approx_nulling_frequency(p, kF1);
  EXPECT_LT(root, approx);
  EXPECT_GT(root - kF1, 0.5 * (approx - kF1));
}

TEST(GEff, MonotoneBetweenPoleAndZero) {
  const cz::CZParams p;
  const double f2 = f2_for(p);
  const double pole = f2 + p.ec2_over_h_mhz;
  const auto g = [&](double fc) { return cz::g_eff(p, fc, kF1, f2); };
  const double root = bisect(g, pole + 1.0, 1e6);
  double prev = g(pole + 0.5);
  EXPECT_LT(prev, 0.0);
  for (double fc = pole + 1.0; fc <= root; fc += 1.0) {
    const double cur = g(fc);
    EXPECT_GT(cur, prev) << fc;
    prev = cur;
  }
}

TEST(GEff, FullAndApproxConvergeAsCouplerMovesAway) {
  const cz::CZParams p;
  const double f2 = f2_for(p);
  double prev = 1e300;
  for (double fc : {6000.0, 6500.0, 7000.0, 7500.0, 7900.0, 10000.0, 20000.0, 1e5}) {
    const double d = std::abs(cz::g_eff(p, fc, kF1, f2) - cz::g_eff_approx(p, fc, kF1));
    EXPECT_LT(d, prev) << fc;
    prev = d;
  }
  EXPECT_LT(prev, 0.05);
}

// --- pulse reduction ------------------------------------------------------

TEST(PulseReduction, OperatingPulse) {
  EXPECT_NEAR(cz::pulse_reduction(100, 278, -1), 0.160, 0.001);
  EXPECT_NEAR(cz::pulse_reduction(cz::PulseParams{}), cz::pulse_reduction(100, 278, -1), 0.0);
}

TEST(PulseReduction, NoTransientIsIdeal) {
  for (double t : {1.0, 100.0, 5000.0}) EXPECT_DOUBLE_EQ(cz::pulse_reduction(t, 278, 0.0), 1.0);
}

TEST(PulseReduction, MonotoneInDurationAndEdge) {
  double prev = -1e300;
  for (double t = 10; t <= 5000; t *= 1.5) {
    const double d = cz::pulse_reduction(t, 278, -1);
    EXPECT_GT(d, prev);
    prev = d;
  }
  prev = 1e300;
  for (double te = 10; te <= 5000; te *= 1.5) {
    const double d = cz::pulse_reduction(100, te, -1);
    EXPECT_LT(d, prev);
    prev = d;
  }
}

TEST(PulseReduction, Domain) {
  EXPECT_THROW((void)cz::pulse_reduction(0, 278, -1), Error);
  EXPECT_THROW((void)cz::pulse_reduction(100, -1, -1), Error);
}

// --- p11 ------------------------------------------------------------------

TEST(P11, ResonantFullSwap) {
  const double g = 5.0;
  const double omega = cz::rabi_frequency(0.0, g);
  EXPECT_DOUBLE_EQ(omega, 10.0);
  EXPECT_NEAR(cz::p11(0.0, g, 0.0, 1.0), 1.0, 1e-15);
  const double half = 0.5 / (omega * 1e-3);  // ns
  EXPECT_NEAR(cz::p11(0.0, g, half, 1.0), 0.0, 1e-12);
}

TEST(P11, EnvelopeAndSymmetry) {
  const double g = 5.0, delta = 9.33;
  const double env = 4 * g * g / (4 * g * g + delta * delta);
  double mx = 0.0;
  for (double t = 0; t <= 2000; t += 0.5) {
    const double v = cz::p11(delta, g, t, 1.0);
    mx = std::max(mx, v);
    EXPECT_LE(v, env + 1e-15);
    EXPECT_DOUBLE_EQ(v, cz::p11(-delta, g, t, 1.0));
  }
  EXPECT_NEAR(mx, env, 1e-12);
}

TEST(P11, MatchesTwoLevelPropagator) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ud(-20, 20), ug(0.5, 15), ut(0, 2000);
  for (int k = 0; k < 10; ++k) {
    const double d = ud(rng), g = ug(rng);
    const double env = 4 * g * g / cz::rabi_frequency(d, g) / cz::rabi_frequency(d, g);
    for (int j = 0; j < 5; ++j) {
      const double t = ut(rng);
      // stay = 1 - env sin^2, while p11 = env cos^2 of the same half-angle.
      EXPECT_NEAR(cz::p11(d, g, t, 1.0), stay_probability(d, g, t) - 1.0 + env, 1e-6);
    }
  }
}

TEST(P11, DegenerateWithoutCouplingOrDetuning) {
  EXPECT_THROW((void)cz::p11(0.0, 0.0, 10.0, 1.0), Error);
  EXPECT_NO_THROW((void)cz::p11(1.0, 0.0, 10.0, 1.0));
}

// --- fit_omega ------------------------------------------------------------

TEST(FitOmega, NoiselessRecovery) {
  const auto t = time_grid();
  const double d = cz::pulse_reduction(cz::PulseParams{});
  for (double omega : {12.0, 30.0, 75.0, 140.0}) {
    std::vector<double> y(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      y[i] = 0.3 + 0.2 * std::cos(kTwoPi * d * omega * t[i] * 1e-3);
    }
    const auto f = cz::fit_omega(y, t, d);
    EXPECT_NEAR(f.omega_mhz, omega, 1e-4 * omega);
    EXPECT_NEAR(f.offset, 0.3, 1e-6);
    EXPECT_NEAR(std::abs(f.amplitude), 0.2, 1e-6);
  }
}

TEST(FitOmega, TwoPercentNoise) {
  const auto t = time_grid();
  const double d = 0.16;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> uo(10.0, 120.0);
  int good = 0;
  const int trials = 200;
  for (int k = 0; k < trials; ++k) {
    const double omega = uo(rng);
    std::vector<double> y(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      y[i] = 0.25 + 0.25 * std::cos(kTwoPi * d * omega * t[i] * 1e-3) + 0.02 * nd(rng);
    }
    const auto f = cz::fit_omega(y, t, d);
    if (std::abs(f.omega_mhz - omega) < 0.01 * omega) ++good;
  }
  EXPECT_GE(good, 190);
}

TEST(FitOmega, FlatAndMalformedInput) {
  const auto t = time_grid();
  std::vector<double> flat(t.size(), 0.4);
  try {
    (void)cz::fit_omega(flat, t, 0.16);
    FAIL() << "flat trace accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNoSignal);
  }
  std::vector<double> short_t(t.begin(), t.begin() + 5), short_y(5, 0.1);
  EXPECT_THROW((void)cz::fit_omega(short_y, short_t, 0.16), Error);
  auto bent = t;
  bent[3] += 1.0;
  std::vector<double> y(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) y[i] = std::cos(0.01 * t[i]);
  EXPECT_THROW((void)cz::fit_omega(y, bent, 0.16), Error);
  EXPECT_THROW((void)cz::fit_omega(y, t, 0.0), Error);
}

// --- chevron curve and fit --------------------------------------------------

namespace {

struct Chevron {
  sim::DeviceConfig dev;
  std::vector<double> flux;
  ScanMap map;
  std::vector<cz::GeffPoint> curve;
};

Chevron chevron(const sim::DeviceConfig& dev, bool compensated, std::size_t points = 81) {
  Chevron c{dev, app::symmetric_grid(1.0, points), {}, {}};
  const auto t = time_grid();
  c.map = sim::cz_swap_scan(dev, c.flux, t, compensated);
  const auto& p = dev.cz().params;
  c.curve = cz::extract_geff_curve(c.map, p.delta21_mhz, cz::pulse_reduction(p.pulse));
  return c;
}

double forward_g(const sim::DeviceConfig& dev, double phi, bool compensated) {
  const auto op = sim::cz_operating_point(dev, phi, compensated);
  return std::abs(cz::g_eff(dev.cz().params, op.f_c, op.f_q1, op.f_q2));
}

cz::GeffCurveFit fit(const Chevron& c, cz::GeffFitOptions opt = {}) {
  const auto& s = c.dev.cz();
  return cz::fit_geff_curve(c.curve, c.dev.element(s.coupler), s.f_q1_mhz, s.f_q2_mhz(),
                            s.params.ec2_over_h_mhz, opt);
}

}  // namespace

TEST(GeffCurve, NoiselessCurveFollowsForwardModel) {
  auto p = cz::CZParams{};
  p.residual_offset_mhz = 0.0;
  const auto c = chevron(quiet(with_cz(sim::reference_device(), p)), true);
  std::size_t checked = 0, flagged = 0;
  for (const auto& pt : c.curve) {
    const double g = forward_g(c.dev, pt.flux, true);
    if (pt.below_floor) {
      ++flagged;
      EXPECT_LT(g, 1.0) << pt.flux;  // only columns near the null drop out
      continue;
    }
    if (g < 0.5) continue;
    EXPECT_NEAR(pt.g_mhz, g, 1e-3) << pt.flux;
    ++checked;
  }
  EXPECT_LE(flagged, 4u);
  EXPECT_GT(checked, 60u);
}

TEST(GeffCurve, ResidualOffsetSetsTheFloor) {
  const auto c = chevron(quiet(sim::reference_device()), true);
  double lowest = 1e300;
  for (const auto& pt : c.curve) {
    if (!pt.below_floor) lowest = std::min(lowest, pt.g_mhz);
  }
  EXPECT_GT(lowest, 0.435 - 1e-3);
  EXPECT_LT(lowest, 0.435 + 1.0);
}

TEST(GeffCurve, RejectsWrongScanKind) {
  ScanMap m;
  m.kind = ScanKind::kSpectroscopy;
  EXPECT_THROW((void)cz::extract_geff_curve(m, 9.33, 0.16), Error);
}

TEST(GeffFit, RecoversPlantedParametersNoiseless) {
  const auto dev = quiet(sim::reference_device());
  const auto c = chevron(dev, true);
  const auto r = fit(c);
  const auto& p = dev.cz().params;
  EXPECT_NEAR(r.g12_mhz, p.g12_mhz, 1e-3 * p.g12_mhz);
  EXPECT_NEAR(r.g1c_g2c_mhz2, p.g1c_mhz * p.g2c_mhz, 1e-3 * p.g1c_mhz * p.g2c_mhz);
  EXPECT_NEAR(r.offset_mhz, p.residual_offset_mhz, 1e-3);
  EXPECT_NEAR(r.g1c_mhz, 100.0, 0.1);
  EXPECT_NEAR(r.g2c_mhz, 100.0, 0.1);
  EXPECT_FALSE(r.delta21_mhz.has_value());

  // Nulling flux within one grid step of the planted root.
  const auto& s = dev.cz();
  const auto root = cz::nulling_flux(p.g12_mhz, p.g1c_mhz * p.g2c_mhz, dev.element(s.coupler),
                                     s.f_q1_mhz, s.f_q2_mhz(), p.ec2_over_h_mhz, 0.0, 1.0);
  ASSERT_TRUE(root.has_value());
  EXPECT_NEAR(r.nulling_flux, *root, c.flux[1] - c.flux[0]);
}

TEST(GeffFit, ZeroOffsetIsNotInvented) {
  auto p = cz::CZParams{};
  p.residual_offset_mhz = 0.0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto c = chevron(with_cz(sim::reference_device(seed), p), true);
    const auto r = fit(c);
    EXPECT_LT(std::abs(r.offset_mhz), 3.0 * r.sigma(2) + 1e-6) << seed;
  }
}

TEST(GeffFit, OneSidedDataIsNotIdentifiable) {
  const auto c = chevron(quiet(sim::reference_device()), true);
  const auto& s = c.dev.cz();
  const auto root = cz::nulling_flux(5, 1e4, c.dev.element(s.coupler), s.f_q1_mhz, s.f_q2_mhz(),
                                     s.params.ec2_over_h_mhz, 0.0, 1.0);
  ASSERT_TRUE(root.has_value());
  std::vector<cz::GeffPoint> inner;
  for (const auto& pt : c.curve) {
    if (std::abs(pt.flux) < *root - 0.05) inner.push_back(pt);
  }
  try {
    (void)cz::fit_geff_curve(inner, c.dev.element(s.coupler), s.f_q1_mhz, s.f_q2_mhz(),
                             s.params.ec2_over_h_mhz);
    FAIL() << "one-sided curve accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIdentifiability);
  }
}

TEST(GeffFit, OptionalJointDetuningFit) {
  const auto c = chevron(quiet(sim::reference_device()), true);
  cz::GeffFitOptions opt;
  opt.fit_delta21 = true;
  opt.delta21_mhz = 8.0;  // deliberately off
  const auto r = fit(c, opt);
  ASSERT_TRUE(r.delta21_mhz.has_value());
  EXPECT_NEAR(*r.delta21_mhz, 9.33, 0.05);
  EXPECT_NEAR(r.g12_mhz, 5.0, 0.05);
}

// --- inversion --------------------------------------------------------------

TEST(Inversion, ZeroTargetGivesNullingFrequency) {
  const cz::CZParams p;
  EXPECT_DOUBLE_EQ(cz::coupler_frequency_for_geff_approx(p, 0.0, kF1),
                   cz::approx_nulling_frequency(p, kF1));
}

TEST(Inversion, ApproxRoundtrip) {
  cz::CZParams p;
  p.g1c_mhz = p.g2c_mhz = 60.0;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> uf(5000.0, 7900.0);
  const auto coupler = sim::reference_device().element("C2");
  for (int k = 0; k < 50; ++k) {
    const double fc = uf(rng);
    const double g = cz::g_eff_approx(p, fc, kF1);
    const double back = cz::coupler_frequency_for_geff_approx(p, g, kF1);
    EXPECT_NEAR(back, fc, 1e-9 * fc);
    EXPECT_NEAR(cz::g_eff_approx(p, back, kF1), g, 1e-9 * (1.0 + std::abs(g)));
    const double v = cz::coupler_idle_voltage(p, coupler, g, kF1, model::Branch::kPlus);
    EXPECT_NEAR(model::f01_of_voltage(coupler, v), fc, 1e-6);
  }
}

TEST(Inversion, FullModeRoundtripAndDivergence) {
  cz::CZParams p;
  p.g1c_mhz = p.g2c_mhz = 60.0;
  const auto coupler = sim::reference_device().element("C2");
  const double f2 = f2_for(p);
  double prev = 1e300;
  // Targets whose coupler frequency lies between 6 GHz and the band top.
  for (double g : {-0.5, 0.5, 1.5, 2.5, 3.5}) {
    const double fa = cz::coupler_frequency_for_geff_approx(p, g, kF1);
    const double ff = cz::coupler_frequency_for_geff_full(p, g, kF1, f2, coupler.f01_max_mhz);
    EXPECT_NEAR(cz::g_eff(p, ff, kF1, f2), g, 1e-7);
    // The coupler moves up with the target and the two models draw closer.
    const double gap = std::abs(cz::g_eff(p, fa, kF1, f2) - g);
    EXPECT_LT(gap, prev) << g;
    prev = gap;
    const double v = cz::coupler_idle_voltage(p, coupler, g, kF1, model::Branch::kPlus,
                                              cz::InversionMode::kFull);
    EXPECT_NEAR(model::f01_of_voltage(coupler, v), ff, 1e-6);
  }
}

TEST(Inversion, UnreachableTargets) {
  const cz::CZParams p;
  try {
    (void)cz::coupler_frequency_for_geff_approx(p, std::sqrt(2.0) * p.g12_mhz, kF1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kPole);
  }
  const auto coupler = sim::reference_device().element("C2");
  try {
    // Beyond the top of the coupler band.
    (void)cz::coupler_idle_voltage(p, coupler, 0.0, kF1, model::Branch::kPlus);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kRange);
  }
  EXPECT_THROW((void)cz::coupler_frequency_for_geff_full(p, 0.0, kF1, f2_for(p), 5000.0), Error);
  EXPECT_THROW((void)cz::coupler_frequency_for_geff_full(p, 50.0, kF1, f2_for(p), 7909.3),
               Error);
}

// --- end to end -------------------------------------------------------------

TEST(CzMap, CompensationRestoresSymmetryAndFitAgrees) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto dev = sim::reference_device(seed);
    const auto r = app::cz_map(dev, app::CzGrid{}, true);
    EXPECT_LT(r.symmetry_compensated, r.symmetry_uncompensated) << seed;
    ASSERT_TRUE(r.fit.has_value()) << r.fit_error;
    const auto& p = dev.cz().params;
    EXPECT_NEAR(r.fit->g12_mhz, p.g12_mhz, 2.0 * r.fit->sigma(0)) << seed;
    EXPECT_NEAR(r.fit->g1c_g2c_mhz2, p.g1c_mhz * p.g2c_mhz, 2.0 * r.fit->sigma(1)) << seed;
    EXPECT_NEAR(r.fit->offset_mhz, p.residual_offset_mhz, 2.0 * r.fit->sigma(2)) << seed;
  }
}
