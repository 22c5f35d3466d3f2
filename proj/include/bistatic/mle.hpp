#pragma once

// Exhaustive grid search over the deterministic least-squares criterion
//   min || y - sum_i g_i c_n(tau_i) a_r(theta_i) a_t(phi_i)^T s ||^2
// over all (n, k). Gains are either fixed or solved in closed form per hypothesis.

#include <bistatic/core.hpp>
#include <bistatic/model.hpp>
#include <bistatic/pencil.hpp>

#include <boost/multiprecision/cpp_int.hpp>

#include <optional>

namespace bistatic {

using BigInt = boost::multiprecision::cpp_int;

inline constexpr double kMleGridBudget = 1e7;

struct GridSpec {
  std::vector<double> theta_rad;
  std::vector<double> phi_rad;
  std::vector<double> tau_s;  // searched unless known_delays is set
  std::optional<std::vector<double>> known_delays;
  std::optional<std::vector<cd>> known_gains;
  int alpha_levels = 1;  // gain grid size per real dimension; only enters the cost formula

  /// Uniform grid of `count` cell centres spanning (lo, hi).
  static std::vector<double> centres(double lo, double hi, int count) {
    std::vector<double> g(static_cast<std::size_t>(count));
    const double step = (hi - lo) / count;
    for (int i = 0; i < count; ++i) g[static_cast<std::size_t>(i)] = lo + (i + 0.5) * step;
    return g;
  }

  /// 180 points at 1 degree steps, -89.5 .. 89.5 degrees, on both angles.
  static GridSpec one_degree() {
    GridSpec g;
    g.theta_rad = centres(deg2rad(-90.0), deg2rad(90.0), 180);
    g.phi_rad = g.theta_rad;
    return g;
  }

  std::size_t g_theta() const { return theta_rad.size(); }
  std::size_t g_phi() const { return phi_rad.size(); }
  std::size_t g_tau() const { return known_delays ? 1 : tau_s.size(); }
  std::size_t g_alpha() const { return known_gains ? 1 : static_cast<std::size_t>(alpha_levels); }

  void validate(int q) const {
    require(g_theta() >= 1 && g_phi() >= 1 && g_tau() >= 1 && alpha_levels >= 1, Errc::invalid_argument,
            "grid sizes must be >= 1");
    if (known_delays)
      require(static_cast<int>(known_delays->size()) == q, Errc::invalid_argument, "need one known delay per target");
    if (known_gains)
      require(static_cast<int>(known_gains->size()) == q, Errc::invalid_argument, "need one known gain per target");
  }
};

/// Sufficient statistics of the observations: Z_n = Y_n S_n^H, R_n = S_n S_n^H and ||y||^2.
struct MleStatistics {
  std::vector<CMatrix> z;
  std::vector<CMatrix> r;
  double energy = 0.0;
  double subcarrier_spacing_hz = 0.0;
};

inline MleStatistics mle_statistics(const ComplexTensor& rx, const ComplexTensor& pilots, const ScenarioConfig& cfg) {
  check_pilot_dims(cfg, pilots);
  MleStatistics st;
  st.subcarrier_spacing_hz = cfg.subcarrier_spacing_hz;
  for (int n = 1; n <= cfg.n_subcarriers; ++n) {
    const CMatrix s = pilot_block(pilots, n);
    const CMatrix y = rx_block(rx, n);
    st.z.push_back(y * s.adjoint());
    st.r.push_back(s * s.adjoint());
    st.energy += y.squaredNorm();
  }
  return st;
}

namespace detail {

inline CVector phasors(double tau, int n_sub, double df) {
  CVector c(n_sub);
  for (int n = 1; n <= n_sub; ++n) c(n - 1) = delay_phasor(n, df, tau);
  return c;
}

inline CMatrix delay_matched(const MleStatistics& st, const CVector& c) {
  CMatrix out = CMatrix::Zero(st.z.front().rows(), st.z.front().cols());
  for (std::size_t n = 0; n < st.z.size(); ++n) out += std::conj(c(static_cast<Eigen::Index>(n))) * st.z[n];
  return out;
}

inline CMatrix delay_cross(const MleStatistics& st, const CVector& ci, const CVector& cj) {
  CMatrix out = CMatrix::Zero(st.r.front().rows(), st.r.front().cols());
  for (std::size_t n = 0; n < st.r.size(); ++n) {
    const auto k = static_cast<Eigen::Index>(n);
    out += std::conj(ci(k)) * cj(k) * st.r[n];
  }
  return out;
}

/// Residual given the correlation vector `rhs` and Gram matrix of one hypothesis.
inline double residual_from(double energy, const CVector& rhs, const CMatrix& gram, const std::vector<cd>* gains) {
  if (gains) {
    const Eigen::Map<const CVector> g(gains->data(), static_cast<Eigen::Index>(gains->size()));
    return energy - 2.0 * g.dot(rhs).real() + g.dot(gram * g).real();
  }
  if (rhs.size() == 1) {
    const double d = gram(0, 0).real();
    return d > 0.0 ? energy - std::norm(rhs(0)) / d : std::numeric_limits<double>::infinity();
  }
  Eigen::LDLT<CMatrix> ldlt(gram);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || hermitian_condition(gram) > 1e12)
    return std::numeric_limits<double>::infinity();
  return energy - rhs.dot(ldlt.solve(rhs)).real();
}

}  // namespace detail

/// Criterion value for one explicit hypothesis (gains of `hyp` used only when `fixed_gains`).
inline double mle_residual(const MleStatistics& st, const ScenarioConfig& cfg, std::span<const TargetPath> hyp,
                           bool fixed_gains) {
  const auto q = static_cast<Eigen::Index>(hyp.size());
  std::vector<CVector> c, ar, at;
  for (const auto& t : hyp) {
    c.push_back(detail::phasors(t.delay_s, cfg.n_subcarriers, cfg.subcarrier_spacing_hz));
    ar.push_back(steering_vector(t.aoa_rad, cfg.n_rx, cfg.element_spacing_rx));
    at.push_back(steering_vector(t.aod_rad, cfg.n_tx, cfg.element_spacing_tx));
  }
  CVector rhs(q);
  CMatrix gram(q, q);
  for (Eigen::Index i = 0; i < q; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    rhs(i) = ar[ui].dot(detail::delay_matched(st, c[ui]) * at[ui].conjugate());
    for (Eigen::Index j = 0; j < q; ++j) {
      const auto uj = static_cast<std::size_t>(j);
      gram(i, j) = ar[ui].dot(ar[uj]) * (at[uj].transpose() * detail::delay_cross(st, c[ui], c[uj]) * at[ui].conjugate())(0);
    }
  }
  std::vector<cd> g;
  for (const auto& t : hyp) g.push_back(t.gain);
  return detail::residual_from(st.energy, rhs, gram, fixed_gains ? &g : nullptr);
}

struct MleResult {
  EstimateSet estimates;
  double residual = 0.0;
  std::uint64_t linear_index = 0;
  std::vector<double> delays_s;
};

/// Total hypotheses (G_theta G_phi G_tau)^q, checked against the 1e7 budget.
inline double mle_grid_points(const GridSpec& grid, int q) {
  return std::pow(static_cast<double>(grid.g_theta() * grid.g_phi() * grid.g_tau()), q);
}

/// Exhaustive search. Hypotheses are ordered tuples; the lowest linear index wins ties.
inline MleResult mle_grid_search(const ComplexTensor& rx, const ComplexTensor& pilots, const ScenarioConfig& cfg,
                                 const GridSpec& grid, int q) {
  require(q >= 1, Errc::invalid_argument, "need at least one target");
  grid.validate(q);
  const double points = mle_grid_points(grid, q);
  require(points <= kMleGridBudget, Errc::grid_too_large,
          "grid has " + std::to_string(points) + " hypotheses, budget is 1e7", points);

  const MleStatistics st = mle_statistics(rx, pilots, cfg);
  const auto gt = static_cast<Eigen::Index>(grid.g_theta());
  const auto gp = static_cast<Eigen::Index>(grid.g_phi());
  const auto gd = static_cast<Eigen::Index>(grid.g_tau());
  const CMatrix ar = steering_matrix(grid.theta_rad, cfg.n_rx, cfg.element_spacing_rx);
  const CMatrix at = steering_matrix(grid.phi_rad, cfg.n_tx, cfg.element_spacing_tx);
  const CMatrix ar_gram = ar.adjoint() * ar;

  // Per delay hypothesis: correlations for every (theta, phi) cell.
  auto delay_of = [&](int target, Eigen::Index d) {
    return grid.known_delays ? (*grid.known_delays)[static_cast<std::size_t>(target)]
                             : grid.tau_s[static_cast<std::size_t>(d)];
  };
  // With known delays the delay "index" is the target index, otherwise the tau grid index.
  const int delay_slots = grid.known_delays ? q : static_cast<int>(gd);
  std::vector<CVector> ph(static_cast<std::size_t>(delay_slots));
  std::vector<CMatrix> corr(static_cast<std::size_t>(delay_slots));
  for (int d = 0; d < delay_slots; ++d) {
    ph[static_cast<std::size_t>(d)] =
        detail::phasors(grid.known_delays ? delay_of(d, 0) : delay_of(0, d), cfg.n_subcarriers, cfg.subcarrier_spacing_hz);
    corr[static_cast<std::size_t>(d)] = ar.adjoint() * detail::delay_matched(st, ph[static_cast<std::size_t>(d)]) * at.conjugate();
  }
  // Transmit-side Gram blocks per delay pair: entry (phi_j, phi_i) = a_t(phi_j)^T R_ij conj(a_t(phi_i)).
  std::vector<CMatrix> tx_gram(static_cast<std::size_t>(delay_slots * delay_slots));
  for (int di = 0; di < delay_slots; ++di)
    for (int dj = 0; dj < delay_slots; ++dj) {
      const CMatrix rc = detail::delay_cross(st, ph[static_cast<std::size_t>(di)], ph[static_cast<std::size_t>(dj)]);
      if (q == 1) {
        CMatrix diag(gp, 1);
        for (Eigen::Index f = 0; f < gp; ++f) diag(f, 0) = (at.col(f).transpose() * rc * at.col(f).conjugate())(0);
        tx_gram[static_cast<std::size_t>(di * delay_slots + dj)] = diag;
      } else {
        tx_gram[static_cast<std::size_t>(di * delay_slots + dj)] = at.transpose() * rc * at.conjugate();
      }
    }

  const std::vector<cd>* gains = grid.known_gains ? &*grid.known_gains : nullptr;
  const auto per_target = static_cast<std::uint64_t>(gt * gp * gd);
  const auto total = static_cast<std::uint64_t>(points);

  double best = std::numeric_limits<double>::infinity();
  std::uint64_t best_idx = 0;
  CVector best_gain;
  std::vector<Eigen::Index> th(static_cast<std::size_t>(q)), fi(static_cast<std::size_t>(q)), dl(static_cast<std::size_t>(q));
  CVector rhs(q);
  CMatrix gram(q, q);
  for (std::uint64_t lin = 0; lin < total; ++lin) {
    std::uint64_t rem = lin;
    for (int i = q - 1; i >= 0; --i) {
      const std::uint64_t cell = rem % per_target;
      rem /= per_target;
      const auto ui = static_cast<std::size_t>(i);
      th[ui] = static_cast<Eigen::Index>(cell / static_cast<std::uint64_t>(gp * gd));
      fi[ui] = static_cast<Eigen::Index>((cell / static_cast<std::uint64_t>(gd)) % static_cast<std::uint64_t>(gp));
      dl[ui] = grid.known_delays ? i : static_cast<Eigen::Index>(cell % static_cast<std::uint64_t>(gd));
    }
    for (int i = 0; i < q; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      rhs(i) = corr[static_cast<std::size_t>(dl[ui])](th[ui], fi[ui]);
      for (int j = 0; j < q; ++j) {
        const auto uj = static_cast<std::size_t>(j);
        const auto& tg = tx_gram[static_cast<std::size_t>(dl[ui] * delay_slots + dl[uj])];
        const cd txp = q == 1 ? tg(fi[ui], 0) : tg(fi[uj], fi[ui]);
        gram(i, j) = ar_gram(th[ui], th[uj]) * txp;
      }
    }
    const double res = detail::residual_from(st.energy, rhs, gram, gains);
    if (res < best) {
      best = res;
      best_idx = lin;
      if (gains) {
        best_gain = Eigen::Map<const CVector>(gains->data(), q);
      } else {
        best_gain = gram.ldlt().solve(rhs);
      }
    }
  }
  require(std::isfinite(best), Errc::unidentifiable_scenario, "no grid hypothesis has a well-posed gain fit");

  MleResult out;
  out.residual = best;
  out.linear_index = best_idx;
  std::uint64_t rem = best_idx;
  std::vector<TargetEstimate> est(static_cast<std::size_t>(q));
  out.delays_s.assign(static_cast<std::size_t>(q), 0.0);
  for (int i = q - 1; i >= 0; --i) {
    const std::uint64_t cell = rem % per_target;
    rem /= per_target;
    const auto ui = static_cast<std::size_t>(i);
    const auto t = static_cast<std::size_t>(cell / static_cast<std::uint64_t>(gp * gd));
    const auto f = static_cast<std::size_t>((cell / static_cast<std::uint64_t>(gd)) % static_cast<std::uint64_t>(gp));
    const auto d = static_cast<Eigen::Index>(cell % static_cast<std::uint64_t>(gd));
    est[ui].aoa_rad = grid.theta_rad[t];
    est[ui].aod_rad = grid.phi_rad[f];
    est[ui].gain_mag = std::abs(best_gain(i));
    est[ui].phase_intercept = std::arg(best_gain(i));
    out.delays_s[ui] = delay_of(i, d);
  }
  out.estimates.targets = std::move(est);
  return out;
}

/// G_tau^q G_theta^q G_phi^q G_alpha^{2q} (N_r N_P q^2 N_P^3 N_t + N_r N_P^2 N_P K_P), exactly.
inline BigInt mle_grid_cost(const GridSpec& grid, const ScenarioConfig& cfg, int q) {
  require(q >= 0, Errc::invalid_argument, "target count must be >= 0");
  const BigInt nr = cfg.n_rx, nt = cfg.n_tx, np = cfg.n_subcarriers, kp = cfg.n_symbols, qq = q;
  const BigInt bracket = nr * np * qq * qq * np * np * np * nt + nr * np * np * np * kp;
  const BigInt per_target = BigInt(grid.g_tau()) * grid.g_theta() * grid.g_phi() * grid.g_alpha() * grid.g_alpha();
  return boost::multiprecision::pow(per_target, static_cast<unsigned>(q)) * bracket;
}

}  // namespace bistatic
