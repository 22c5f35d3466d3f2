#include <support/oracles.hpp>

#include <gtest/gtest.h>

using namespace bistatic;

namespace {

GridSpec coarse_grid(int count) {
  GridSpec g;
  g.theta_rad = GridSpec::centres(deg2rad(-60.0), deg2rad(60.0), count);
  g.phi_rad = g.theta_rad;
  return g;
}

// ||Y - sum_i g_i H_i S||^2 evaluated directly over all subcarriers
double brute_residual(const ScenarioConfig& cfg, std::span<const TargetPath> hyp, const ComplexTensor& rx,
                      const ComplexTensor& pilots) {
  double acc = 0.0;
  for (int n = 1; n <= cfg.n_subcarriers; ++n)
    acc += (rx_block(rx, n) - oracle::rx_mean(cfg, hyp, pilot_block(pilots, n), n)).squaredNorm();
  return acc;
}

}  // namespace

TEST(MleGridSearch, NoiselessOnGridSingleTarget) {
  ScenarioConfig cfg;
  const GridSpec base = GridSpec::one_degree();
  const std::vector<TargetPath> t{{base.theta_rad[107], base.phi_rad[52], 3.3 * cfg.bin_duration_s(), {0.6, -0.5}}};
  const ComplexTensor p = generate_pilots(cfg);
  const ComplexTensor rx = simulate_rx(cfg, t, p);
  GridSpec g = base;
  g.known_delays = std::vector<double>{t[0].delay_s};
  const MleResult r = mle_grid_search(rx, p, cfg, g, 1);
  EXPECT_EQ(r.estimates[0].aoa_rad, t[0].aoa_rad);
  EXPECT_EQ(r.estimates[0].aod_rad, t[0].aod_rad);
  EXPECT_NEAR(r.estimates[0].gain_mag, std::abs(t[0].gain), 1e-9);
  EXPECT_NEAR(r.residual, 0.0, 1e-9);
  EXPECT_EQ(r.linear_index, 107u * 180u + 52u);
}

TEST(MleGridSearch, NoiselessTwoTargetsAndDelayGrid) {
  ScenarioConfig cfg;
  cfg.n_subcarriers = 16;
  GridSpec g = coarse_grid(9);
  g.tau_s = {0.0, 2.0 * cfg.bin_duration_s(), 5.0 * cfg.bin_duration_s()};
  const std::vector<TargetPath> t{{g.theta_rad[2], g.phi_rad[7], g.tau_s[1], {0.9, 0.2}},
                                  {g.theta_rad[6], g.phi_rad[1], g.tau_s[2], {-0.3, 0.7}}};
  const ComplexTensor p = generate_pilots(cfg);
  const MleResult r = mle_grid_search(simulate_rx(cfg, t, p), p, cfg, g, 2);
  EXPECT_NEAR(r.residual, 0.0, 1e-9);
  // hypotheses are ordered tuples, so the lower linear index puts target 0 first
  EXPECT_EQ(r.estimates[0].aoa_rad, t[0].aoa_rad);
  EXPECT_EQ(r.estimates[1].aod_rad, t[1].aod_rad);
  EXPECT_EQ(r.delays_s[0], t[0].delay_s);
  EXPECT_EQ(r.delays_s[1], t[1].delay_s);
}

TEST(MleGridSearch, KnownGainsUseExpandedResidual) {
  ScenarioConfig cfg;
  cfg.n_subcarriers = 8;
  cfg.noise_var = 0.2;
  GridSpec g = coarse_grid(15);
  const std::vector<TargetPath> t{{g.theta_rad[4], g.phi_rad[11], 1.0 * cfg.bin_duration_s(), {0.7, 0.7}}};
  g.known_delays = std::vector<double>{t[0].delay_s};
  g.known_gains = std::vector<cd>{t[0].gain};
  const ComplexTensor p = generate_pilots(cfg);
  const ComplexTensor rx = simulate_rx(cfg, t, p);
  const MleResult r = mle_grid_search(rx, p, cfg, g, 1);
  std::vector<TargetPath> hyp{{r.estimates[0].aoa_rad, r.estimates[0].aod_rad, t[0].delay_s, t[0].gain}};
  EXPECT_NEAR(r.residual, brute_residual(cfg, hyp, rx, p), 1e-8 * r.residual);
  EXPECT_NEAR(r.estimates[0].gain_mag, std::abs(t[0].gain), 1e-15);
}

TEST(MleResidual, MatchesDirectEvaluation) {
  ScenarioConfig cfg;
  cfg.noise_var = 0.3;
  const std::vector<TargetPath> t{{0.2, -0.4, 2.5 * cfg.bin_duration_s(), {0.5, 0.1}},
                                  {-0.7, 0.3, 8.2 * cfg.bin_duration_s(), {0.1, -0.9}}};
  const ComplexTensor p = generate_pilots(cfg);
  const ComplexTensor rx = simulate_rx(cfg, t, p);
  const MleStatistics st = mle_statistics(rx, p, cfg);
  std::vector<TargetPath> hyp = t;
  hyp[0].aoa_rad += 0.05;
  hyp[1].gain *= 1.3;
  const double direct = brute_residual(cfg, hyp, rx, p);
  EXPECT_NEAR(mle_residual(st, cfg, hyp, true), direct, 1e-9 * direct);
  // free gains can only do better
  EXPECT_LE(mle_residual(st, cfg, hyp, false), direct * (1 + 1e-12));
}

TEST(MleResidual, TruthIsGlobalMinimumNoiseless) {
  ScenarioConfig cfg;
  cfg.n_subcarriers = 8;
  const GridSpec g = coarse_grid(11);
  const std::vector<TargetPath> t{{g.theta_rad[3], g.phi_rad[8], 0.0, {1.0, 0.0}}};
  const ComplexTensor p = generate_pilots(cfg);
  const MleStatistics st = mle_statistics(simulate_rx(cfg, t, p), p, cfg);
  const double at_truth = mle_residual(st, cfg, t, false);
  for (double th : g.theta_rad)
    for (double ph : g.phi_rad) {
      const std::vector<TargetPath> h{{th, ph, 0.0, {1.0, 0.0}}};
      if (th == t[0].aoa_rad && ph == t[0].aod_rad) continue;
      EXPECT_GT(mle_residual(st, cfg, h, false), at_truth);
    }
}

TEST(MleGridSearch, BudgetExceeded) {
  ScenarioConfig cfg;
  GridSpec g = GridSpec::one_degree();
  g.tau_s = std::vector<double>(10, 0.0);
  const ComplexTensor p = generate_pilots(cfg);
  const std::vector<TargetPath> t{{0.0, 0.0, 0.0, {1, 0}}};
  try {
    mle_grid_search(simulate_rx(cfg, t, p), p, cfg, g, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::grid_too_large);
    EXPECT_DOUBLE_EQ(e.value(), std::pow(180.0 * 180.0 * 10.0, 2));
  }
}

TEST(MleGridCost, BracketAndExponentStructure) {
  ScenarioConfig cfg;
  GridSpec unit;
  unit.theta_rad = {0.0};
  unit.phi_rad = {0.0};
  unit.tau_s = {0.0};
  // N_r N_P q^2 N_P^3 N_t + N_r N_P^2 N_P K_P at the default sizes, q = 1
  const BigInt bracket1 = BigInt(10) * 64 * 1 * 64 * 64 * 64 * 8 + BigInt(10) * 64 * 64 * 64 * 10;
  EXPECT_EQ(mle_grid_cost(unit, cfg, 1), bracket1);

  const GridSpec g = GridSpec::one_degree();
  GridSpec known = g;
  known.known_delays = std::vector<double>{0.0};
  known.known_gains = std::vector<cd>{1.0};
  EXPECT_EQ(mle_grid_cost(known, cfg, 1), BigInt(180 * 180) * bracket1);
  const BigInt bracket2 = BigInt(10) * 64 * 4 * 64 * 64 * 64 * 8 + BigInt(10) * 64 * 64 * 64 * 10;
  known.known_delays = std::vector<double>{0.0, 0.0};
  known.known_gains = std::vector<cd>{1.0, 1.0};
  EXPECT_EQ(mle_grid_cost(known, cfg, 2), BigInt(180 * 180) * BigInt(180 * 180) * bracket2);

  GridSpec alpha = unit;
  alpha.alpha_levels = 3;
  EXPECT_EQ(mle_grid_cost(alpha, cfg, 1), 9 * bracket1);
}
