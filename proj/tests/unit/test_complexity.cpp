#include <support/oracles.hpp>

#include <gtest/gtest.h>

#include <sstream>

using namespace bistatic;
using oracle::Tuple;
using oracle::config_of;
using oracle::pencil_of;

namespace {

std::vector<Tuple> tuples() { return oracle::random_tuples(5, 2024); }

}  // namespace

TEST(Count2d, EveryRowMatchesIndependentArithmetic) {
  for (const Tuple& t : tuples())
    for (auto variant : {ChannelEstimateAdds::prose, ChannelEstimateAdds::table_literal}) {
      const auto expect = oracle::table_cells(t, variant == ChannelEstimateAdds::table_literal);
      const OpCount c = count_2d(config_of(t), pencil_of(t), static_cast<int>(t.q), true, variant);
      ASSERT_EQ(c.rows.size(), expect.size());
      for (const auto& r : c.rows) {
        const auto& e = expect.at(r.block);
        EXPECT_EQ(r.mults, e.first) << r.block;
        EXPECT_EQ(r.adds, e.second) << r.block;
      }
    }
}

TEST(Count2d, SensingTotalsMatchClosedForms) {
  for (const Tuple& t : tuples()) {
    const long long kt = t.nt - t.mt + 1, kr = t.nr - t.mr + 1;
    const long long mm = t.mr * t.mt, kk = kr * (kt - 1), q = t.q;
    const long long svd = 4 * mm * mm * kk + 8 * mm * kk * kk + 9 * kk * kk * kk;
    const long long t_add = svd + mm * (kk - 1) * q + (mm - 1) * q * q + 6 * q * q * (q - 1) +
                            4 * q * (q - 1) * t.nc + 4 * t.nc * q + q * q * (t.nt - 1) + q * q * q - 2 * q * q + q +
                            t.nt * (q - 1) * q + t.nr * (t.nt - 1) * q + q * (2 * t.nr - 1);
    const long long t_mul = svd + mm * kk * q + mm * q * q + q * q + q * q * (q - 1) + 2 * q * (q - 1) + 3 * q +
                            q * q * t.nt + q * q * q + q * q * t.nt + q * t.nr * t.nt + q * (t.nr + 2);
    const OpCount c = count_2d(config_of(t), pencil_of(t), static_cast<int>(t.q), false);
    EXPECT_EQ(c.adds(), t_add);
    EXPECT_EQ(c.mults(), t_mul);
    BigInt sum = 0;
    for (const auto& r : c.rows) sum += r.mults + r.adds;
    EXPECT_EQ(c.total(), sum);
  }
}

TEST(Count2d, ZeroTargetsLeavesOnlySvd) {
  const ScenarioConfig cfg;
  const OpCount c = count_2d(cfg, PencilConfig{4, 5, 1}, 0, false);
  for (const auto& r : c.rows) {
    if (r.block == rows::svd) {
      EXPECT_GT(r.mults, 0);
    } else {
      EXPECT_EQ(r.mults, 0) << r.block;
      EXPECT_EQ(r.adds, 0) << r.block;
    }
  }
}

TEST(Count2d, NondecreasingInEachDimension) {
  const Tuple base{8, 10, 64, 10, 4, 5, 2, 16};
  const BigInt ref = count_2d(config_of(base), pencil_of(base), 2, true).total();
  for (int dim = 0; dim < 5; ++dim) {
    Tuple t = base;
    switch (dim) {
      case 0: t.nt += 1; break;
      case 1: t.nr += 1; break;
      case 2: t.np += 1; break;
      case 3: t.kp += 1; break;
      default: t.q += 1; break;
    }
    const OpCount c = count_2d(config_of(t), pencil_of(t), static_cast<int>(t.q), true);
    EXPECT_GE(c.total(), ref) << dim;
    const OpCount b = count_2d(config_of(base), pencil_of(base), 2, true);
    for (std::size_t i = 0; i < c.rows.size(); ++i) {
      EXPECT_GE(c.rows[i].mults, b.rows[i].mults) << c.rows[i].block;
      EXPECT_GE(c.rows[i].adds, b.rows[i].adds) << c.rows[i].block;
    }
  }
}

TEST(CountMlp, ScalesWithTargets) {
  ScenarioConfig cfg;
  const MlpOps one = mlp_op_counts(NetworkSpec::regression(cfg.n_rx, cfg.n_tx, 1));
  EXPECT_EQ(count_mlp(cfg, 1).mults(), one.mults);
  EXPECT_EQ(count_mlp(cfg, 1).adds(), one.adds);
  EXPECT_EQ(count_mlp(cfg, 2).total(), 2 * count_mlp(cfg, 1).total());
}

TEST(MultRatio, IncreasingInReceiveCount) {
  ScenarioConfig cfg;
  double prev = 0.0;
  for (int nr = 4; nr <= 24; nr += 2) {
    cfg.n_rx = nr;
    const double r = mult_ratio(cfg, half_pencil(cfg.n_tx, nr, 2), 2);
    EXPECT_GT(r, prev) << nr;
    prev = r;
  }
}

TEST(Speedup, TinyGridBelowFloor) {
  ScenarioConfig cfg;
  cfg.n_tx = 2;
  cfg.n_rx = 2;
  cfg.n_subcarriers = 1;
  cfg.n_symbols = 2;
  const GridSpec g = cost_grid(1, 1, 1);
  const Speedup s = speedup_vs_mle(g, cfg, PencilConfig{1, 1, 1}, 1);
  EXPECT_LT(s.log10, 3.0);
  EXPECT_NEAR(s.log10, std::log10(s.numerator.convert_to<double>() / s.denominator.convert_to<double>()), 1e-12);
}

TEST(Ledger, MarkdownAndCsvListEveryRow) {
  const OpCount c = count_2d(ScenarioConfig{}, PencilConfig{4, 5, 2}, 2, true);
  std::ostringstream md, csv;
  write_ledger_markdown(md, c, "Multiplications and additions");
  write_ledger_csv(csv, c, "2d");
  for (const auto& r : c.rows) {
    EXPECT_NE(md.str().find(r.block), std::string::npos);
    EXPECT_NE(csv.str().find(r.block), std::string::npos);
  }
  EXPECT_NE(csv.str().find("2d,total," + c.mults().str() + "," + c.adds().str()), std::string::npos);
}
