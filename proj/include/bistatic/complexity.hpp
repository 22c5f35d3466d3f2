#pragma once

// Closed-form operation counts for the pencil estimator, the MLP and the grid-search MLE,
// all in exact integer arithmetic.

#include <bistatic/cnn.hpp>
#include <bistatic/mle.hpp>
#include <bistatic/model.hpp>
#include <bistatic/pencil.hpp>

#include <ostream>

namespace bistatic {

struct OpRow {
  std::string block;
  BigInt mults;
  BigInt adds;
};

struct OpCount {
  std::vector<OpRow> rows;

  BigInt mults() const {
    BigInt s = 0;
    for (const auto& r : rows) s += r.mults;
    return s;
  }
  BigInt adds() const {
    BigInt s = 0;
    for (const auto& r : rows) s += r.adds;
    return s;
  }
  BigInt total() const { return mults() + adds(); }

  const OpRow& row(std::string_view block) const {
    for (const auto& r : rows)
      if (r.block == block) return r;
    throw Error(Errc::invalid_argument, "no ledger row named '" + std::string(block) + "'");
  }
};

/// The additions cell for channel estimation exists in two slightly different printed forms.
enum class ChannelEstimateAdds {
  prose,          // N_t (N_P K_P - 1) N_t + N_t^3 - 2 N_t^2 + N_t + N_P K_P (N_t - 1) N_t + N_r (N_P K_P - 1) N_t
  table_literal,  // N_t^3 - 2 N_t^2 + N_t N_P K_P (N_t - 1) N_t + N_t (N_P K_P - 1) N_t + N_r (N_P K_P - 1) N_t
};

namespace rows {
inline constexpr const char* channel_estimation = "Channel estimation";
inline constexpr const char* coarse_timing = "Coarse timing estimation";
inline constexpr const char* arrange = "Steps 0-2 (sub-matrix arrangement)";
inline constexpr const char* svd = "SVD (step 3)";
inline constexpr const char* pencil = "T computation (step 4)";
inline constexpr const char* evd = "EVD square roots (step 5)";
inline constexpr const char* evd_qz = "EVD QZ arithmetic (step 5)";
inline constexpr const char* aod = "AoD estimation (step 6)";
inline constexpr const char* ls_fit = "LS fit (step 7)";
inline constexpr const char* normalize = "Step 8";
inline constexpr const char* aoa = "AoA estimation (step 9)";
}  // namespace rows

/// Per-block counts. The sensing rows sum to the printed T_add / T_mul totals; the QZ row
/// carries the q^2(q-1) mults and 6q^2(q-1) adds that the totals include beyond the
/// square-root row of the tables.
inline OpCount count_2d(const ScenarioConfig& cfg, const PencilConfig& pc, int q, bool include_frontend,
                        ChannelEstimateAdds variant = ChannelEstimateAdds::prose) {
  require(q >= 0, Errc::invalid_argument, "target count must be >= 0");
  const BigInt nt = cfg.n_tx, nr = cfg.n_rx, np = cfg.n_subcarriers, kp = cfg.n_symbols;
  const BigInt mt = pc.m_tx, mr = pc.m_rx;
  const BigInt kt = pc.k_tx(cfg.n_tx), kr = pc.k_rx(cfg.n_rx);
  const BigInt nc = pc.cordic_iters;
  const BigInt Q = q;
  const BigInt mm = mr * mt;
  const BigInt kk = kr * (kt - 1);
  const BigInt npkp = np * kp;

  OpCount c;
  if (include_frontend) {
    BigInt ce_adds;
    if (variant == ChannelEstimateAdds::prose) {
      ce_adds = nt * (npkp - 1) * nt + nt * nt * nt - 2 * nt * nt + nt + npkp * (nt - 1) * nt + nr * (npkp - 1) * nt;
    } else {
      ce_adds = nt * nt * nt - 2 * nt * nt + nt * npkp * (nt - 1) * nt + nt * (npkp - 1) * nt + nr * (npkp - 1) * nt;
    }
    c.rows.push_back({rows::channel_estimation, nt * nt * nt + 2 * npkp * nt * nt + nr * npkp * nt, ce_adds});
    c.rows.push_back({rows::coarse_timing, np * np * nt * nr, np * (np - 1) * nt * nr});
  }
  const BigInt svd = 4 * mm * mm * kk + 8 * mm * kk * kk + 9 * kk * kk * kk;
  c.rows.push_back({rows::arrange, 0, 0});
  c.rows.push_back({rows::svd, svd, svd});
  c.rows.push_back({rows::pencil, mm * kk * Q + mm * Q * Q + Q * Q, mm * (kk - 1) * Q + (mm - 1) * Q * Q});
  c.rows.push_back({rows::evd, 2 * Q * (Q - 1), 4 * Q * (Q - 1) * nc});
  c.rows.push_back({rows::evd_qz, Q * Q * (Q - 1), 6 * Q * Q * (Q - 1)});
  c.rows.push_back({rows::aod, 3 * Q, 4 * nc * Q});
  c.rows.push_back({rows::ls_fit, Q * Q * nt + Q * Q * Q + Q * Q * nt + Q * nr * nt,
                    Q * Q * (nt - 1) + Q * Q * Q - 2 * Q * Q + Q + nt * (Q - 1) * Q + nr * (nt - 1) * Q});
  c.rows.push_back({rows::normalize, 0, 0});
  c.rows.push_back({rows::aoa, Q * (nr + 2), Q * (2 * nr - 1)});
  return c;
}

/// q times the MLP counts of the S = N_t N_r, two-output regression network.
inline OpCount count_mlp(const ScenarioConfig& cfg, int q) {
  const MlpOps one = mlp_op_counts(NetworkSpec::regression(cfg.n_rx, cfg.n_tx, 1));
  OpCount c;
  c.rows.push_back({"Complex MLP (per peak) x q", one.mults * q, one.adds * q});
  return c;
}

struct Speedup {
  BigInt numerator;
  BigInt denominator;
  double log10 = 0.0;
};

inline double big_log10(const BigInt& v) {
  require(v > 0, Errc::invalid_argument, "log of a non-positive count");
  return static_cast<double>(std::log10(v.convert_to<long double>()));
}

/// Grid-search cost over T_add + T_mul of the sensing chain.
inline Speedup speedup_vs_mle(const GridSpec& grid, const ScenarioConfig& cfg, const PencilConfig& pc, int q) {
  Speedup s;
  s.numerator = mle_grid_cost(grid, cfg, q);
  s.denominator = count_2d(cfg, pc, q, false).total();
  require(s.denominator > 0, Errc::invalid_argument, "zero operation count in the denominator");
  s.log10 = big_log10(s.numerator) - big_log10(s.denominator);
  return s;
}

/// Grid with the given per-angle sizes and known delays and gains (G_tau = G_alpha = 1).
inline GridSpec cost_grid(int g_theta, int g_phi, int q) {
  GridSpec g;
  g.theta_rad = GridSpec::centres(deg2rad(-90.0), deg2rad(90.0), g_theta);
  g.phi_rad = GridSpec::centres(deg2rad(-90.0), deg2rad(90.0), g_phi);
  g.known_delays = std::vector<double>(static_cast<std::size_t>(q), 0.0);
  g.known_gains = std::vector<cd>(static_cast<std::size_t>(q), cd{1.0, 0.0});
  return g;
}

/// count_2d mults (sensing only) over count_mlp mults.
inline double mult_ratio(const ScenarioConfig& cfg, const PencilConfig& pc, int q) {
  const BigInt a = count_2d(cfg, pc, q, false).mults();
  const BigInt b = count_mlp(cfg, q).mults();
  return static_cast<double>(a.convert_to<long double>() / b.convert_to<long double>());
}

inline void write_ledger_markdown(std::ostream& os, const OpCount& c, const std::string& title) {
  os << "### " << title << "\n\n| Block | Multiplications | Additions |\n|---|---:|---:|\n";
  for (const auto& r : c.rows) os << "| " << r.block << " | " << r.mults << " | " << r.adds << " |\n";
  os << "| **Total** | " << c.mults() << " | " << c.adds() << " |\n\n";
}

inline void write_ledger_csv(std::ostream& os, const OpCount& c, const std::string& table) {
  for (const auto& r : c.rows) os << table << ",\"" << r.block << "\"," << r.mults << ',' << r.adds << '\n';
  os << table << ",total," << c.mults() << ',' << c.adds() << '\n';
}

}  // namespace bistatic
