#include <support/oracles.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

using namespace bistatic;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

ExperimentPlan small_plan() {
  ExperimentPlan p;
  p.scenario.n_subcarriers = 16;
  p.snr_list_db = {10, 30};
  p.trials = 12;
  p.seed = 7;
  p.threads = 1;
  return p;
}

}  // namespace

TEST(Welford, MatchesTwoPass) {
  Rng rng(3);
  std::normal_distribution<double> nd(1e6, 2.0);
  std::vector<double> x(1000);
  Welford w;
  for (auto& v : x) {
    v = nd(rng);
    w.add(v);
  }
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  EXPECT_NEAR(w.mean(), mean, 1e-9);
  EXPECT_NEAR(w.variance(), ss / (x.size() - 1), 1e-9 * ss / x.size());
  EXPECT_NEAR(w.stderr_of_mean(), std::sqrt(ss / (x.size() - 1) / x.size()), 1e-9);
  EXPECT_EQ(w.count(), 1000u);
}

TEST(ResultTable, CsvRoundTripIsExact) {
  ResultTable t;
  t.config_hash = "abc123";
  t.variable_name = "beta_t";
  t.add(0.1, "crb_theta", 1.0 / 3.0, 2.718281828459045e-17, 500);
  t.add(5.6, "crb_theta", 6.02214076e23, 0.0, 1);
  t.add(-10.0, "mse_aoa", std::nextafter(1.0, 2.0), 1e-300, 42);
  std::stringstream ss;
  t.write_csv(ss);
  const ResultTable back = ResultTable::read_csv(ss);
  EXPECT_EQ(back.config_hash, "abc123");
  EXPECT_EQ(back.variable_name, "beta_t");
  EXPECT_EQ(back.rows, t.rows);
}

TEST(ResultTable, ReadRejectsMalformedRows) {
  std::stringstream bad("variable,metric,value,stderr,trials\n1,mse,abc,0,1\n");
  try {
    ResultTable::read_csv(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::io_error);
  }
}

TEST(ResultTable, PlotDataHasOneBlockPerMetric) {
  ResultTable t;
  t.config_hash = "h";
  t.add(0, "a", 1.0, 0.1, 2);
  t.add(10, "a", 0.5, 0.1, 2);
  t.add(0, "b", 2.0, 0.0, 2);
  const auto dir = std::filesystem::temp_directory_path() / "bistatic_plot_test";
  std::filesystem::remove_all(dir);
  emit_plot_data(t, dir / "curve");
  const std::string dat = slurp(dir / "curve.dat");
  EXPECT_NE(dat.find("# index 0: a"), std::string::npos);
  EXPECT_NE(dat.find("# index 1: b"), std::string::npos);
  EXPECT_NE(dat.find("10 0.5 0.1"), std::string::npos);
  std::ifstream csv(dir / "curve.csv");
  EXPECT_EQ(ResultTable::read_csv(csv).rows, t.rows);
  std::filesystem::remove_all(dir);
}

TEST(ParallelFor, ResultsIndependentOfThreadCount) {
  std::vector<double> a(200), b(200);
  auto body = [](std::vector<double>& out) {
    return [&out](std::size_t i) {
      Rng rng = make_rng(11, i, "pf");
      out[i] = std::normal_distribution<double>()(rng);
    };
  };
  parallel_for(a.size(), 1, body(a));
  parallel_for(b.size(), 4, body(b));
  EXPECT_EQ(a, b);
}

TEST(ParallelFor, PropagatesExceptions) {
  EXPECT_THROW(parallel_for(50, 3,
                            [](std::size_t i) {
                              if (i == 17) throw Error(Errc::divergence, "boom");
                            }),
               Error);
}

TEST(DrawTargets, RespectsLimitsAndBinGaps) {
  ScenarioConfig cfg;
  DrawSpec spec;
  spec.q = 3;
  spec.min_separation_rad = 0.1;
  spec.gain_mag_lo = 0.5;
  spec.gain_mag_hi = 1.0;
  Rng rng(9);
  const double bin = cfg.bin_duration_s();
  for (auto mode : {DelayMode::on_bin, DelayMode::off_grid}) {
    spec.delay_mode = mode;
    for (int k = 0; k < 50; ++k) {
      const auto t = draw_targets(cfg, spec, rng);
      ASSERT_EQ(t.size(), 3u);
      for (std::size_t i = 0; i < t.size(); ++i) {
        EXPECT_LE(std::abs(t[i].aoa_rad), spec.angle_limit_rad);
        EXPECT_LE(std::abs(t[i].aod_rad), spec.angle_limit_rad);
        EXPECT_GE(std::abs(t[i].gain), 0.5 - 1e-15);
        EXPECT_LE(std::abs(t[i].gain), 1.0 + 1e-15);
        EXPECT_GE(t[i].delay_s, 0.0);
        EXPECT_LT(t[i].delay_s, cfg.max_delay_s());
        if (mode == DelayMode::on_bin) {
          EXPECT_NEAR(t[i].delay_s / bin, std::round(t[i].delay_s / bin), 1e-9);
        }
        for (std::size_t j = 0; j < i; ++j) {
          EXPECT_GE(std::abs(t[i].aoa_rad - t[j].aoa_rad), 0.1);
          EXPECT_GE(std::abs(t[i].aod_rad - t[j].aod_rad), 0.1);
          const int bi = static_cast<int>(std::lround(t[i].delay_s / bin)) % cfg.n_subcarriers;
          const int bj = static_cast<int>(std::lround(t[j].delay_s / bin)) % cfg.n_subcarriers;
          const int gap = std::abs(bi - bj);
          EXPECT_GE(std::min(gap, cfg.n_subcarriers - gap), spec.min_bin_gap);
        }
      }
    }
  }
}

TEST(DrawTargets, SameBinSharesOneBin) {
  ScenarioConfig cfg;
  DrawSpec spec;
  spec.q = 4;
  spec.delay_mode = DelayMode::same_bin;
  spec.same_bin_jitter = 0.2;
  Rng rng(10);
  for (int k = 0; k < 30; ++k) {
    const auto t = draw_targets(cfg, spec, rng);
    const long b = std::lround(t[0].delay_s / cfg.bin_duration_s());
    for (const auto& x : t) EXPECT_EQ(std::lround(x.delay_s / cfg.bin_duration_s()), b);
  }
}

TEST(MatchedErrors, SortsBeforeComparing) {
  const std::vector<TargetPath> truth{{0.5, 0.1, 0, {1, 0}}, {-0.2, 0.3, 0, {1, 0}}};
  const std::vector<TargetEstimate> est{{-0.1, 0.3, 0, 0}, {0.5, 0.2, 0, 0}};
  const auto e = matched_errors(truth, est);
  EXPECT_NEAR(e.aoa, 0.01 / 2, 1e-15);
  EXPECT_NEAR(e.aod, 0.01 / 2, 1e-15);
}

TEST(CrossingSnr, InterpolatesInLogDomain) {
  const std::vector<double> snr{0, 10, 20};
  const std::vector<double> v{1e-3, 1e-5, 1e-7};
  EXPECT_NEAR(crossing_snr(snr, v, 1e-6), 15.0, 1e-12);
  EXPECT_DOUBLE_EQ(crossing_snr(snr, v, 1e-2), 0.0);
  EXPECT_TRUE(std::isnan(crossing_snr(snr, v, 1e-9)));
}

TEST(PlanFromJson, ErrorsMapToConfigError) {
  auto expect_config_error = [](const nlohmann::json& j) {
    try {
      plan_from_json(j).validate();
      ADD_FAILURE() << j.dump();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::config_error) << j.dump();
    }
  };
  expect_config_error({{"trials", "many"}});
  expect_config_error({{"estimator", "svd"}});
  expect_config_error({{"draw", {{"delay_mode", "sideways"}}}});
  expect_config_error({{"trials", 0}});
  expect_config_error({{"estimator", "nn"}});
  const ExperimentPlan ok = plan_from_json({{"trials", 3}, {"snr_list_db", {1, 2}}, {"draw", {{"q", 2}}}});
  EXPECT_EQ(ok.trials, 3);
  EXPECT_EQ(ok.draw.q, 2);
  EXPECT_EQ(ok.snr_list_db.size(), 2u);
}

TEST(MseSweep, DeterministicCsv) {
  const ExperimentPlan p = small_plan();
  std::stringstream a, b;
  run_mse_sweep(p).write_csv(a);
  run_mse_sweep(p).write_csv(b);
  EXPECT_EQ(a.str(), b.str());
  ExperimentPlan p2 = p;
  p2.threads = 3;
  std::stringstream c;
  run_mse_sweep(p2).write_csv(c);
  EXPECT_EQ(a.str(), c.str());
}

TEST(MseSweep, VanishesAtHighSnrOnBin) {
  ExperimentPlan p = small_plan();
  p.snr_list_db = {200};
  p.draw.delay_mode = DelayMode::on_bin;
  const ResultTable t = run_mse_sweep(p);
  EXPECT_LT(t.value(200, "mse_aoa"), 1e-10);
  EXPECT_LT(t.value(200, "mse_aod"), 1e-10);
  EXPECT_GT(t.value(200, "crb_theta"), 0.0);
  EXPECT_EQ(t.config_hash, config_hash(p.scenario));
}

TEST(CrbSweep, TenDbPerDecade) {
  ExperimentPlan p;
  p.kind = ExperimentKind::crb_sweep;
  p.snr_list_db = {0, 10, 20};
  p.targets = {{0.2, -0.1, 3.0 * p.scenario.bin_duration_s(), {0.8, 0.2}}};
  const auto rows = run_crb_sweep(p);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_NEAR(rows[1].crb_theta / rows[0].crb_theta, 0.1, 1e-9);
  EXPECT_NEAR(rows[2].crb_phi / rows[1].crb_phi, 0.1, 1e-9);
}

TEST(BetaSweep, WideBeamApproachesIsotropicAndScales) {
  ScenarioConfig cfg;
  BetaSweepSpec spec;
  spec.betas = {0.5, 5.6, 1e4};
  const auto rows = run_beta_sweep(cfg, spec, 1);
  ASSERT_EQ(rows.size(), 9u);
  ExperimentPlan iso;
  iso.snr_list_db = {0};
  iso.targets = {{spec.aoa_rad, spec.aod_rad, 0.0, {1.0, 0.0}}};
  iso.scenario = cfg;
  iso.kind = ExperimentKind::crb_sweep;
  const double ref = run_crb_sweep(iso).front().crb_theta;
  EXPECT_NEAR(rows[2].crb_theta / ref, 1.0, 1e-6);
  for (std::size_t b = 0; b < 3; ++b) EXPECT_NEAR(rows[3 + b].crb_theta / rows[b].crb_theta, 0.1, 1e-9);
  EXPECT_GE(rows[0].crb_theta, rows[1].crb_theta);
  EXPECT_DOUBLE_EQ(beta_threshold(rows, 0.0, rows[1].crb_theta), 5.6);
  EXPECT_TRUE(std::isnan(beta_threshold(rows, 0.0, 0.0)));
}

TEST(Dataset, BalancedAcrossSnrs) {
  DatasetPlan p = DatasetPlan::regression_defaults(ScenarioConfig{});
  p.samples = 700;
  const auto side = dataset_sidecar(p);
  for (int c : side.at("samples_per_snr").get<std::vector<int>>()) EXPECT_EQ(c, 100);
  DatasetPlan c = DatasetPlan::classifier_defaults(ScenarioConfig{});
  c.samples = 4 * NetworkSpec::kClasses * 25;
  const auto cs = dataset_sidecar(c);
  for (int n : cs.at("samples_per_class").get<std::vector<int>>()) EXPECT_EQ(n, 100);
  for (int n : cs.at("samples_per_snr").get<std::vector<int>>()) EXPECT_EQ(n, 25 * NetworkSpec::kClasses);
}

TEST(Dataset, SamplesReplayFromIndex) {
  DatasetPlan p = DatasetPlan::regression_defaults(ScenarioConfig{});
  p.samples = 14;
  p.threads = 2;
  const Dataset d = generate_dataset(p);
  const auto power = dataset_power(p);
  for (int i = 0; i < 10; ++i) {
    const DatasetSample s = dataset_sample(p, power, i);
    EXPECT_EQ(CVector(d.inputs.col(i)), vec(s.snapshot)) << i;
    EXPECT_EQ(d.labels(0, i), s.targets[0].aoa_rad);
    EXPECT_EQ(d.labels(1, i), s.targets[0].aod_rad);
    EXPECT_EQ(d.snr_db[static_cast<std::size_t>(i)], p.snr_of(i));
  }
}

TEST(Dataset, HighSnrSnapshotIsSteeringOuterProduct) {
  DatasetPlan p = DatasetPlan::regression_defaults(ScenarioConfig{});
  p.snr_list_db = {250};
  p.draw.delay_mode = DelayMode::on_bin;
  const auto power = dataset_power(p);
  const ScenarioConfig& cfg = p.scenario;
  for (int i = 0; i < 5; ++i) {
    const DatasetSample s = dataset_sample(p, power, i);
    const auto& t = s.targets[0];
    const CMatrix outer = oracle::steering(t.aoa_rad, cfg.n_rx, cfg.element_spacing_rx) *
                          oracle::steering(t.aod_rad, cfg.n_tx, cfg.element_spacing_tx).transpose();
    // equal up to one complex scale
    const cd k = s.snapshot(0, 0) / outer(0, 0);
    EXPECT_LT((s.snapshot - k * outer).norm(), 1e-8 * s.snapshot.norm()) << i;
  }
}

TEST(Dataset, SidecarHashTracksScenario) {
  DatasetPlan p = DatasetPlan::regression_defaults(ScenarioConfig{});
  const std::string h0 = dataset_sidecar(p).at("config_hash");
  p.scenario.n_rx += 1;
  EXPECT_NE(dataset_sidecar(p).at("config_hash").get<std::string>(), h0);
  p.scenario.n_rx -= 1;
  EXPECT_EQ(dataset_sidecar(p).at("config_hash").get<std::string>(), h0);
}

TEST(Dataset, ValidationSplitTakesEveryKth) {
  DatasetPlan p = DatasetPlan::regression_defaults(ScenarioConfig{});
  p.samples = 20;
  const Dataset d = generate_dataset(p);
  const auto [tr, va] = split_validation(d, 5);
  EXPECT_EQ(tr.size(), 16);
  EXPECT_EQ(va.size(), 4);
  EXPECT_EQ(va.inputs.col(0), d.inputs.col(4));
  EXPECT_EQ(tr.inputs.col(4), d.inputs.col(5));
}
