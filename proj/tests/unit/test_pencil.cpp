#include <bistatic/pencil.hpp>

#include <gtest/gtest.h>

#include <algorithm>

using namespace bistatic;

namespace {

CMatrix snapshot_of(const ScenarioConfig& cfg, std::span<const TargetPath> targets) {
  // the snapshot of on-bin targets is the subcarrier-0 channel with all delays dropped
  std::vector<TargetPath> flat(targets.begin(), targets.end());
  for (auto& t : flat) t.delay_s = 0.0;
  return channel_matrix(cfg, flat, cfg.n_subcarriers);
}

std::vector<TargetPath> random_targets(Rng& rng, int q, double min_sep = 0.15) {
  std::uniform_real_distribution<double> ang(-1.0, 1.0);
  std::uniform_real_distribution<double> mag(0.5, 1.0);
  std::uniform_real_distribution<double> ph(-kPi, kPi);
  std::vector<TargetPath> out;
  while (static_cast<int>(out.size()) < q) {
    TargetPath t{ang(rng), ang(rng), 0.0, std::polar(mag(rng), ph(rng))};
    bool ok = true;
    for (const auto& o : out)
      ok = ok && std::abs(std::sin(o.aod_rad) - std::sin(t.aod_rad)) > min_sep &&
           std::abs(std::sin(o.aoa_rad) - std::sin(t.aoa_rad)) > min_sep;
    if (ok) out.push_back(t);
  }
  return out;
}

// index of the truth with the nearest AoD for each estimate
std::vector<int> match_by_aod(const EstimateSet& est, std::span<const TargetPath> truth) {
  std::vector<int> idx;
  for (const auto& e : est.targets) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(truth.size()); ++i)
      if (std::abs(truth[static_cast<std::size_t>(i)].aod_rad - e.aod_rad) <
          std::abs(truth[static_cast<std::size_t>(best)].aod_rad - e.aod_rad))
        best = i;
    idx.push_back(best);
  }
  return idx;
}

}  // namespace

TEST(PencilConfig, DefaultRule) {
  const PencilConfig pc = default_pencil(8, 10, 2);
  EXPECT_EQ(pc.m_tx, 5);
  EXPECT_EQ(pc.m_rx, 6);
  EXPECT_EQ(pc.k_tx(8), 4);
  EXPECT_EQ(pc.k_rx(10), 5);
  // two transmit elements would give k_tx = 1 under the plain ceiling rule
  EXPECT_EQ(default_pencil(2, 4, 1).m_tx, 1);
  EXPECT_NO_THROW(default_pencil(2, 4, 1).validate(2, 4));
}

TEST(PencilConfig, FullApertureRejected) {
  PencilConfig pc{8, 10, 1};
  try {
    pc.validate(8, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::invalid_pencil_config);
  }
  EXPECT_THROW((PencilConfig{1, 1, 3}.validate(2, 2)), Error);
}

TEST(BlockHankel, EntryIndexOracle) {
  Rng rng(2);
  CMatrix s(6, 5);
  for (auto& v : s.reshaped()) v = complex_gaussian(rng, 1.0);
  const PencilConfig pc{3, 4, 1};
  const CMatrix h = build_block_hankel(s, pc);
  const int kt = 5 - 3 + 1, kr = 6 - 4 + 1;
  ASSERT_EQ(h.rows(), 4 * 3);
  ASSERT_EQ(h.cols(), kr * kt);
  for (int row = 0; row < h.rows(); ++row)
    for (int col = 0; col < h.cols(); ++col) {
      const int j = row / 4, m = row % 4, l = col / kr, n = col % kr;
      EXPECT_EQ(h(row, col), s(m + n, j + l));
    }
}

TEST(BlockHankel, NoiselessRankEqualsTargetCount) {
  ScenarioConfig cfg;
  Rng rng(5);
  for (int q = 1; q <= 3; ++q) {
    const auto t = random_targets(rng, q);
    const PencilConfig pc = default_pencil(cfg.n_tx, cfg.n_rx, q);
    Eigen::BDCSVD<CMatrix> svd(build_block_hankel(snapshot_of(cfg, t), pc));
    const RVector sv = svd.singularValues();
    EXPECT_GT(sv(q - 1) / sv(q), 1e8);
  }
}

TEST(SplitOverlap, TwoTransmitBlocks) {
  CMatrix h(4, 6);
  for (int c = 0; c < 6; ++c) h.col(c).setConstant(cd(c, 0));
  const auto halves = split_overlap(h, 3);
  EXPECT_EQ(halves.h1, h.leftCols(3));
  EXPECT_EQ(halves.h2, h.rightCols(3));
}

TEST(PencilMatrix, ScalarCase) {
  ScenarioConfig cfg;
  const std::vector<TargetPath> t{{0.2, -0.35, 0.0, {0.7, 0.4}}};
  const PencilConfig pc = default_pencil(cfg.n_tx, cfg.n_rx, 1);
  const auto halves = split_overlap(build_block_hankel(snapshot_of(cfg, t), pc), pc.k_rx(cfg.n_rx));
  const CMatrix tm = pencil_matrix(halves.h1, halves.h2, 1);
  ASSERT_EQ(tm.rows(), 1);
  EXPECT_NEAR(std::abs(tm(0, 0) - std::polar(1.0, -kPi * std::sin(-0.35))), 0.0, 1e-12);
}

TEST(PencilMatrix, EigenvaluesAreTransmitPhaseSteps) {
  ScenarioConfig cfg;
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const auto t = random_targets(rng, 2);
    const PencilConfig pc = default_pencil(cfg.n_tx, cfg.n_rx, 2);
    const auto halves = split_overlap(build_block_hankel(snapshot_of(cfg, t), pc), pc.k_rx(cfg.n_rx));
    const CVector eig = pencil_eigenvalues(pencil_matrix(halves.h1, halves.h2, 2));
    for (const auto& p : t) {
      const cd expect = steering_vector(p.aod_rad, 2, cfg.element_spacing_tx)(1);
      double best = 1e9;
      for (Eigen::Index i = 0; i < eig.size(); ++i) best = std::min(best, std::abs(eig(i) - expect));
      EXPECT_LT(best, 1e-9);
    }
    for (Eigen::Index i = 0; i < eig.size(); ++i) EXPECT_NEAR(std::abs(eig(i)), 1.0, 1e-9);
  }
}

TEST(PencilMatrix, TooFewTargetsIsRankDeficient) {
  ScenarioConfig cfg;
  const std::vector<TargetPath> t{{0.2, -0.35, 0.0, {0.7, 0.4}}};
  const PencilConfig pc = default_pencil(cfg.n_tx, cfg.n_rx, 2);
  const auto halves = split_overlap(build_block_hankel(snapshot_of(cfg, t), pc), pc.k_rx(cfg.n_rx));
  try {
    pencil_matrix(halves.h1, halves.h2, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::rank_deficient);
    EXPECT_LT(e.value(), kRankFloor);
  }
}

TEST(AodFromEigenvalues, RoundTrip) {
  CVector e(2);
  e << cd(1.0, 0.0), std::polar(1.0, -kPi * std::sin(0.4));
  const AngleResult r = aod_from_eigenvalues(e, 0.5);
  EXPECT_NEAR(r.angles[0], 0.0, 1e-15);
  EXPECT_NEAR(r.angles[1], 0.4, 1e-14);
  EXPECT_FALSE(r.clamped);
}

TEST(AodFromEigenvalues, OutOfDomainClamps) {
  // spacing 0.25 maps a phase of 3 rad to 1.9, outside asin's domain
  CVector e(1);
  e << std::polar(1.0, 3.0);
  const AngleResult r = aod_from_eigenvalues(e, 0.25);
  EXPECT_TRUE(r.clamped);
  EXPECT_NEAR(r.angles[0], -kPi / 2, 1e-15);
}

TEST(LsFit, SingleTargetProjection) {
  ScenarioConfig cfg;
  const cd g{0.3, -0.8};
  const std::vector<TargetPath> t{{-0.6, 0.25, 0.0, g}};
  const std::vector<double> aod{0.25};
  const CMatrix x = ls_fit_aoa_manifold(snapshot_of(cfg, t), aod, cfg.element_spacing_tx);
  EXPECT_LT((x.col(0) - g * steering_vector(-0.6, cfg.n_rx, cfg.element_spacing_rx)).norm(), 1e-9);
}

TEST(LsFit, ResidualIsStationary) {
  Rng rng(41);
  CMatrix h(10, 8);
  for (auto& v : h.reshaped()) v = complex_gaussian(rng, 1.0);
  const std::vector<double> aod{0.1, -0.7};
  const CMatrix x = ls_fit_aoa_manifold(h, aod, 0.5);
  const CMatrix at = steering_matrix(aod, 8, 0.5);
  const double base = (h - x * at.transpose()).squaredNorm();
  for (int k = 0; k < 20; ++k) {
    CMatrix dx(10, 2);
    for (auto& v : dx.reshaped()) v = complex_gaussian(rng, 1e-3);
    EXPECT_GE((h - (x + dx) * at.transpose()).squaredNorm(), base - 1e-12);
  }
}

TEST(LsFit, CoincidentAodsRejected) {
  CMatrix h = CMatrix::Ones(10, 8);
  const std::vector<double> aod{0.3, 0.3};
  try {
    ls_fit_aoa_manifold(h, aod, 0.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::degenerate_aod);
  }
}

TEST(NormalizeColumns, MagnitudeAndDirection) {
  const CVector a = steering_vector(0.3, 10, 0.5);
  CMatrix x(10, 1);
  x.col(0) = 2.0 * a;
  const auto n = normalize_columns(x);
  EXPECT_NEAR(n.magnitudes(0), 2.0, 1e-14);
  EXPECT_LT((n.unit.col(0) - a / std::sqrt(10.0)).norm(), 1e-14);
  EXPECT_THROW(normalize_columns(CMatrix::Zero(4, 1)), Error);
}

TEST(PhaseRegression, BroadsideGivesZero) {
  const PhaseFit f = aoa_phase_regression(CVector::Ones(10) / std::sqrt(10.0), 0.5);
  EXPECT_NEAR(f.aoa_rad, 0.0, 1e-15);
}

TEST(PhaseRegression, UnwrapsLongSteepArray) {
  // 40 elements at 70 degrees cross +-pi many times
  const double theta = deg2rad(70.0);
  const CVector a = steering_vector(theta, 40, 0.5) * std::polar(1.0, 2.9);
  const RVector ph = unwrap_phase(a);
  const double step = -kPi * std::sin(theta);
  for (int i = 0; i < 40; ++i) EXPECT_NEAR(ph(i), 2.9 + step * i, 1e-9);
  const PhaseFit f = aoa_phase_regression(a, 0.5);
  EXPECT_NEAR(f.aoa_rad, theta, 1e-12);
  EXPECT_NEAR(f.slope, step, 1e-12);
  EXPECT_NEAR(f.intercept + f.slope, 2.9, 1e-9);
}

TEST(Estimate2d, BroadsideSingleTarget) {
  ScenarioConfig cfg;
  const std::vector<TargetPath> t{{0.0, 0.0, 0.0, {1.0, 0.0}}};
  const EstimateSet e = estimate_2d(snapshot_of(cfg, t), default_pencil(cfg.n_tx, cfg.n_rx, 1), cfg);
  ASSERT_EQ(e.size(), 1u);
  EXPECT_NEAR(e[0].aoa_rad, 0.0, 1e-12);
  EXPECT_NEAR(e[0].aod_rad, 0.0, 1e-12);
  EXPECT_NEAR(e[0].gain_mag, 1.0, 1e-12);
}

TEST(Estimate2d, NoiselessExactForUpToThreeTargets) {
  ScenarioConfig cfg;
  Rng rng(77);
  for (int q = 1; q <= 3; ++q)
    for (int trial = 0; trial < 20; ++trial) {
      const auto t = random_targets(rng, q);
      const EstimateSet e = estimate_2d(snapshot_of(cfg, t), default_pencil(cfg.n_tx, cfg.n_rx, q), cfg);
      const auto idx = match_by_aod(e, t);
      for (int i = 0; i < q; ++i) {
        const auto& truth = t[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
        EXPECT_LT(std::abs(e[static_cast<std::size_t>(i)].aod_rad - truth.aod_rad), 1e-6);
        EXPECT_LT(std::abs(e[static_cast<std::size_t>(i)].aoa_rad - truth.aoa_rad), 1e-6);
        EXPECT_NEAR(e[static_cast<std::size_t>(i)].gain_mag, std::abs(truth.gain), 1e-6);
      }
      std::vector<int> sorted = idx;
      std::sort(sorted.begin(), sorted.end());
      EXPECT_EQ(std::unique(sorted.begin(), sorted.end()), sorted.end());
    }
}

TEST(Estimate2d, InvariantToCommonGainAndGlobalPhase) {
  ScenarioConfig cfg;
  Rng rng(13);
  const auto t = random_targets(rng, 2);
  const PencilConfig pc = default_pencil(cfg.n_tx, cfg.n_rx, 2);
  const CMatrix s = snapshot_of(cfg, t);
  const EstimateSet base = estimate_2d(s, pc, cfg);
  const double psi = 1.1;
  const EstimateSet rotated = estimate_2d(s * std::polar(1.0, psi), pc, cfg);
  const EstimateSet scaled = estimate_2d(s * cd(-0.3, 2.0), pc, cfg);
  for (std::size_t i = 0; i < 2; ++i) {
    // eigenvalue order may differ, so compare against the nearest AoD
    for (const EstimateSet* other : {&rotated, &scaled}) {
      const auto it = std::min_element(other->targets.begin(), other->targets.end(), [&](const auto& a, const auto& b) {
        return std::abs(a.aod_rad - base[i].aod_rad) < std::abs(b.aod_rad - base[i].aod_rad);
      });
      EXPECT_NEAR(it->aod_rad, base[i].aod_rad, 1e-9);
      EXPECT_NEAR(it->aoa_rad, base[i].aoa_rad, 1e-9);
      if (other == &rotated) {
        EXPECT_NEAR(std::remainder(it->phase_intercept - base[i].phase_intercept - psi, kTwoPi), 0.0, 1e-9);
      }
    }
  }
}

TEST(Estimate2d, PermutingTargetsPermutesEstimates) {
  ScenarioConfig cfg;
  Rng rng(19);
  auto t = random_targets(rng, 3);
  const PencilConfig pc = default_pencil(cfg.n_tx, cfg.n_rx, 3);
  const EstimateSet a = estimate_2d(snapshot_of(cfg, t), pc, cfg);
  std::swap(t[0], t[2]);
  const EstimateSet b = estimate_2d(snapshot_of(cfg, t), pc, cfg);
  const auto ia = match_by_aod(a, t);
  const auto ib = match_by_aod(b, t);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& ta = t[static_cast<std::size_t>(ia[i])];
    const auto& tb = t[static_cast<std::size_t>(ib[i])];
    EXPECT_NEAR(a[i].aoa_rad, ta.aoa_rad, 1e-6);
    EXPECT_NEAR(b[i].aoa_rad, tb.aoa_rad, 1e-6);
  }
}

TEST(Sense, EndToEndDistinctBins) {
  ScenarioConfig cfg;
  const std::vector<TargetPath> t{{0.4, -0.3, 4.0 * cfg.bin_duration_s(), {1.0, 0.0}},
                                  {-0.6, 0.5, 20.0 * cfg.bin_duration_s(), {0.0, 0.9}}};
  const ComplexTensor p = generate_pilots(cfg);
  const SensingResult r = sense(simulate_rx(cfg, t, p), p, cfg, 2);
  ASSERT_EQ(r.peaks.size(), 2u);
  EXPECT_EQ(r.peaks[0].peak.bin_index, 4);
  EXPECT_EQ(r.peaks[1].peak.bin_index, 20);
  const auto all = r.all_targets();
  EXPECT_NEAR(all[0].aoa_rad, 0.4, 1e-9);
  EXPECT_NEAR(all[0].aod_rad, -0.3, 1e-9);
  EXPECT_NEAR(all[1].aoa_rad, -0.6, 1e-9);
  EXPECT_NEAR(all[1].aod_rad, 0.5, 1e-9);
}
