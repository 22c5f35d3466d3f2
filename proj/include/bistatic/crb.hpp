#pragma once

// Fisher information for the deterministic Gaussian observation model and the angle CRBs.
//
// Parameter vector: [sigma^2, theta_1..q, phi_1..q, tau_1..q, Re g_1..q, Im g_1..q], where g
// is the composite per-path gain (attenuation times both pattern gains). Pattern slopes are
// not differentiated, so the angles only enter through the steering vectors.

#include <bistatic/core.hpp>
#include <bistatic/model.hpp>

#include <array>

namespace bistatic {

/// d a(angle) / d angle for the shared steering convention.
inline CVector steering_derivative(double angle_rad, int n_elems, double spacing_wavelengths) {
  CVector a = steering_vector(angle_rad, n_elems, spacing_wavelengths);
  const double k = -kTwoPi * spacing_wavelengths * std::cos(angle_rad);
  for (int n = 0; n < n_elems; ++n) a(n) *= cd(0.0, k * n);
  return a;
}

enum class FimBlock { sigma, theta, phi, tau, gain_re, gain_im };

inline const char* fim_block_name(FimBlock b) {
  switch (b) {
    case FimBlock::sigma: return "sigma";
    case FimBlock::theta: return "theta";
    case FimBlock::phi: return "phi";
    case FimBlock::tau: return "tau";
    case FimBlock::gain_re: return "gain_re";
    case FimBlock::gain_im: return "gain_im";
  }
  return "?";
}

struct FisherMatrix {
  RMatrix values;
  int num_targets = 0;

  static constexpr std::array<FimBlock, 5> kSensingBlocks{FimBlock::theta, FimBlock::phi, FimBlock::tau,
                                                          FimBlock::gain_re, FimBlock::gain_im};

  int offset(FimBlock b) const {
    if (b == FimBlock::sigma) return 0;
    return 1 + (static_cast<int>(b) - 1) * num_targets;
  }
  int width(FimBlock b) const { return b == FimBlock::sigma ? 1 : num_targets; }

  auto block(FimBlock r, FimBlock c) const { return values.block(offset(r), offset(c), width(r), width(c)); }

  /// Label "row,col" of the block holding entry (i, j).
  std::string label(Eigen::Index i, Eigen::Index j) const {
    auto which = [&](Eigen::Index k) {
      if (k == 0) return FimBlock::sigma;
      return static_cast<FimBlock>(1 + (k - 1) / num_targets);
    };
    return std::string(fim_block_name(which(i))) + "," + fim_block_name(which(j));
  }
};

namespace detail {

/// Rank-one factors of dH_n/dxi = u w^T for every sensing parameter, in FIM order.
struct RankOneDerivative {
  CVector u;  // receive side, N_r
  CVector w;  // transmit side, N_t
};

inline std::vector<RankOneDerivative> channel_derivatives(const ScenarioConfig& cfg,
                                                          std::span<const TargetPath> targets, int n) {
  const int q = static_cast<int>(targets.size());
  std::vector<RankOneDerivative> d(static_cast<std::size_t>(5 * q));
  for (int i = 0; i < q; ++i) {
    const auto& t = targets[static_cast<std::size_t>(i)];
    const cd c = delay_phasor(n, cfg.subcarrier_spacing_hz, t.delay_s);
    const cd g = composite_gain(cfg, t);
    const CVector ar = steering_vector(t.aoa_rad, cfg.n_rx, cfg.element_spacing_rx);
    const CVector at = steering_vector(t.aod_rad, cfg.n_tx, cfg.element_spacing_tx);
    const cd dc = cd(0.0, -kTwoPi * n * cfg.subcarrier_spacing_hz) * c;
    const auto idx = [&](int block) { return static_cast<std::size_t>(block * q + i); };
    d[idx(0)] = {g * c * steering_derivative(t.aoa_rad, cfg.n_rx, cfg.element_spacing_rx), at};
    d[idx(1)] = {g * c * ar, steering_derivative(t.aod_rad, cfg.n_tx, cfg.element_spacing_tx)};
    d[idx(2)] = {g * dc * ar, at};
    d[idx(3)] = {c * ar, at};
    d[idx(4)] = {kJ * c * ar, at};
  }
  return d;
}

}  // namespace detail

/// Gamma_{ab} = (2 / sigma^2) sum_{n,k} Re[(dmu/da)^H (dmu/db)], Gamma_{sigma,sigma} = N_r N_P K_P / sigma^4.
inline FisherMatrix fim_assemble(const ScenarioConfig& cfg, std::span<const TargetPath> targets,
                                 const ComplexTensor& pilots) {
  require(cfg.noise_var > 0.0, Errc::invalid_argument, "Fisher information needs noise_var > 0");
  require(!targets.empty(), Errc::invalid_argument, "Fisher information needs at least one target");
  check_pilot_dims(cfg, pilots);
  for (const auto& t : targets) validate_target(t, cfg);

  const int q = static_cast<int>(targets.size());
  const int p = 5 * q;
  RMatrix acc = RMatrix::Zero(p, p);
  for (int n = 1; n <= cfg.n_subcarriers; ++n) {
    const CMatrix s = pilot_block(pilots, n);
    const CMatrix r = s * s.adjoint();  // sum_k s s^H
    const auto d = detail::channel_derivatives(cfg, targets, n);
    // sum_k (u_a w_a^T s)^H (u_b w_b^T s) = (u_a^H u_b) (w_b^T R conj(w_a))
    std::vector<CVector> rw(d.size());
    for (std::size_t a = 0; a < d.size(); ++a) rw[a] = r * d[a].w.conjugate();
    for (int a = 0; a < p; ++a)
      for (int b = a; b < p; ++b) {
        const auto ua = static_cast<std::size_t>(a), ub = static_cast<std::size_t>(b);
        const cd v = d[ua].u.dot(d[ub].u) * (d[ub].w.transpose() * rw[ua])(0);
        acc(a, b) += v.real();
      }
  }
  const double sigma2 = cfg.noise_var;
  FisherMatrix f;
  f.num_targets = q;
  f.values = RMatrix::Zero(1 + p, 1 + p);
  f.values(0, 0) = static_cast<double>(cfg.n_rx) * cfg.n_subcarriers * cfg.n_symbols / (sigma2 * sigma2);
  for (int a = 0; a < p; ++a)
    for (int b = a; b < p; ++b) {
      const double v = 2.0 / sigma2 * acc(a, b);
      f.values(1 + a, 1 + b) = v;
      f.values(1 + b, 1 + a) = v;
    }
  return f;
}

inline constexpr double kFimConditionLimit = 1e12;

struct AngleCrb {
  RMatrix theta;  // q x q, rad^2
  RMatrix phi;    // q x q, rad^2
  double condition = 0.0;  // of the equilibrated sensing block
};

/// Angle blocks of Gamma^{-1}. The sensing block is inverted after symmetric diagonal
/// scaling, since delay entries sit many orders of magnitude above the angle entries.
inline AngleCrb crb_angles(const FisherMatrix& fisher) {
  const int q = fisher.num_targets;
  const int p = 5 * q;
  require(fisher.values.rows() == 1 + p && fisher.values.cols() == 1 + p, Errc::dimension_mismatch,
          "FIM size does not match its target count");
  const RMatrix g = fisher.values.bottomRightCorner(p, p);
  RVector scale(p);
  for (int i = 0; i < p; ++i) {
    require(g(i, i) > 0.0 && std::isfinite(g(i, i)), Errc::unidentifiable_scenario,
            "parameter carries no information", static_cast<double>(i));
    scale(i) = 1.0 / std::sqrt(g(i, i));
  }
  const RMatrix eq = scale.asDiagonal() * g * scale.asDiagonal();
  Eigen::SelfAdjointEigenSolver<RMatrix> es(eq, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  const double cond = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  require(cond < kFimConditionLimit, Errc::unidentifiable_scenario, "Fisher information is singular", cond);

  const Eigen::LDLT<RMatrix> ldlt(eq);
  const RMatrix inv = scale.asDiagonal() * ldlt.solve(RMatrix::Identity(p, p)) * scale.asDiagonal();
  AngleCrb out;
  out.theta = inv.block(0, 0, q, q);
  out.phi = inv.block(q, q, q, q);
  out.condition = cond;
  return out;
}

}  // namespace bistatic
