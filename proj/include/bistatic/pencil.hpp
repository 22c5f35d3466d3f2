#pragma once

// Joint AoA/AoD estimation from one coarse-timing snapshot with a block-Hankel matrix pencil.
// The AoD comes from the shift invariance across transmit sub-arrays. The AoA then follows
// from a least-squares fit of the receive manifold and a linear fit to its unwrapped phase.

#include <bistatic/core.hpp>
#include <bistatic/csi.hpp>
#include <bistatic/model.hpp>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

namespace bistatic {

struct PencilConfig {
  int m_tx = 1;
  int m_rx = 1;
  int num_targets = 1;
  int cordic_iters = 16;  // only read by the complexity ledger

  int k_tx(int n_tx) const { return n_tx - m_tx + 1; }
  int k_rx(int n_rx) const { return n_rx - m_rx + 1; }

  void validate(int n_tx, int n_rx) const {
    auto fail = [](const std::string& what) { throw Error(Errc::invalid_pencil_config, what); };
    if (num_targets < 1) fail("need at least one target");
    if (m_tx < 1 || m_tx > n_tx) fail("m_tx must lie in [1, n_tx]");
    if (m_rx < 1 || m_rx > n_rx) fail("m_rx must lie in [1, n_rx]");
    const int kt = k_tx(n_tx);
    const int kr = k_rx(n_rx);
    if (kt < 2) fail("need at least two transmit sub-arrays (k_tx >= 2)");
    if (std::min(m_rx * m_tx, kr * (kt - 1)) < num_targets)
      fail("sub-array sizes cannot resolve " + std::to_string(num_targets) + " targets");
  }
};

/// ceil((N + 1) / 2) on each side, pulled down where needed to keep two transmit sub-arrays.
inline PencilConfig default_pencil(int n_tx, int n_rx, int q) {
  PencilConfig pc;
  pc.m_tx = std::max(1, std::min((n_tx + 2) / 2, n_tx - 1));
  pc.m_rx = std::min((n_rx + 2) / 2, n_rx);
  pc.num_targets = q;
  return pc;
}

/// floor(N / 2) on each side; the rule reported by the complexity ratio study.
inline PencilConfig half_pencil(int n_tx, int n_rx, int q) {
  PencilConfig pc;
  pc.m_tx = std::max(1, n_tx / 2);
  pc.m_rx = std::max(1, n_rx / 2);
  pc.num_targets = q;
  return pc;
}

struct TargetEstimate {
  double aoa_rad = 0.0;
  double aod_rad = 0.0;
  double gain_mag = 0.0;
  double phase_intercept = 0.0;
};

struct EstimateSet {
  std::vector<TargetEstimate> targets;
  bool clamped = false;  // an asin argument left [-1, 1] and was clipped

  std::size_t size() const { return targets.size(); }
  const TargetEstimate& operator[](std::size_t i) const { return targets[i]; }
};

/// (M_r M_t) x (K_r K_t). Block (j, l) is the M_r x K_r Hankel matrix built from transmit
/// column j + l, entry (m, n) = snapshot(m + n, j + l), everything 0-based.
inline CMatrix build_block_hankel(const CMatrix& snapshot, const PencilConfig& pc) {
  const int n_rx = static_cast<int>(snapshot.rows());
  const int n_tx = static_cast<int>(snapshot.cols());
  pc.validate(n_tx, n_rx);
  const int kt = pc.k_tx(n_tx);
  const int kr = pc.k_rx(n_rx);
  CMatrix h(pc.m_rx * pc.m_tx, kr * kt);
  for (int j = 0; j < pc.m_tx; ++j)
    for (int l = 0; l < kt; ++l)
      for (int m = 0; m < pc.m_rx; ++m)
        for (int n = 0; n < kr; ++n) h(j * pc.m_rx + m, l * kr + n) = snapshot(m + n, j + l);
  return h;
}

struct OverlapPair {
  CMatrix h1;
  CMatrix h2;
};

/// Drops the last (h1) or first (h2) transmit block column of the Hankel matrix.
inline OverlapPair split_overlap(const CMatrix& hankel, int k_rx) {
  const auto width = hankel.cols() - k_rx;
  require(k_rx >= 1 && width >= 1, Errc::invalid_pencil_config, "need at least two transmit sub-arrays");
  return {hankel.leftCols(width), hankel.rightCols(width)};
}

inline constexpr double kRankFloor = 1e-12;

/// T = S^{-1} U^H H2 V from the rank-q truncated SVD of H1.
inline CMatrix pencil_matrix(const CMatrix& h1, const CMatrix& h2, int q) {
  require(h1.rows() == h2.rows() && h1.cols() == h2.cols(), Errc::dimension_mismatch, "pencil halves differ in shape");
  require(q >= 1 && q <= std::min(h1.rows(), h1.cols()), Errc::rank_deficient, "rank exceeds matrix size", q);
  Eigen::BDCSVD<CMatrix> svd(h1, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const RVector& sv = svd.singularValues();
  const double ratio = sv(0) > 0.0 ? sv(q - 1) / sv(0) : 0.0;
  require(ratio >= kRankFloor, Errc::rank_deficient, "fewer than q resolvable targets in the snapshot", ratio);
  const CMatrix u = svd.matrixU().leftCols(q);
  const CMatrix v = svd.matrixV().leftCols(q);
  CMatrix t = u.adjoint() * h2 * v;
  for (int i = 0; i < q; ++i) t.row(i) /= sv(i);
  return t;
}

inline CVector pencil_eigenvalues(const CMatrix& t) {
  Eigen::ComplexEigenSolver<CMatrix> es(t, false);
  require(es.info() == Eigen::Success, Errc::rank_deficient, "eigenvalue iteration did not converge");
  return es.eigenvalues();
}

struct AngleResult {
  std::vector<double> angles;
  bool clamped = false;
};

inline double clamped_asin(double x, bool& clamped) {
  if (x > 1.0 || x < -1.0) {
    clamped = true;
    x = std::clamp(x, -1.0, 1.0);
  }
  return std::asin(x);
}

/// Inverts the steering phase step: angle = -asin(arg(gamma) / (2 pi d)).
inline AngleResult aod_from_eigenvalues(const CVector& eigs, double spacing_wavelengths) {
  require(spacing_wavelengths > 0.0, Errc::invalid_argument, "element spacing must be > 0");
  AngleResult out;
  for (Eigen::Index i = 0; i < eigs.size(); ++i)
    out.angles.push_back(-clamped_asin(std::arg(eigs(i)) / (kTwoPi * spacing_wavelengths), out.clamped));
  return out;
}

inline CMatrix steering_matrix(std::span<const double> angles, int n_elems, double spacing) {
  CMatrix a(n_elems, static_cast<Eigen::Index>(angles.size()));
  for (std::size_t i = 0; i < angles.size(); ++i)
    a.col(static_cast<Eigen::Index>(i)) = steering_vector(angles[i], n_elems, spacing);
  return a;
}

/// X = H conj(A_t) (A_t^T conj(A_t))^{-1}, the unconstrained receive-side factor given the AoDs.
inline CMatrix ls_fit_aoa_manifold(const CMatrix& snapshot, std::span<const double> aods, double spacing_tx) {
  const int n_tx = static_cast<int>(snapshot.cols());
  require(!aods.empty() && static_cast<int>(aods.size()) <= n_tx, Errc::degenerate_aod,
          "number of AoDs must lie in [1, n_tx]");
  const CMatrix at = steering_matrix(aods, n_tx, spacing_tx);
  const CMatrix at_conj = at.conjugate();
  const CMatrix gram = at.transpose() * at_conj;
  const double cond = hermitian_condition(gram);
  require(cond <= 1e10, Errc::degenerate_aod, "AoD estimates too close for the LS fit", cond);
  return snapshot * at_conj * gram.ldlt().solve(CMatrix::Identity(gram.rows(), gram.cols()));
}

struct NormalizedColumns {
  CMatrix unit;        // N_r x q, unit-norm columns
  RVector magnitudes;  // ||X_i|| / sqrt(N_r)
};

inline NormalizedColumns normalize_columns(const CMatrix& x) {
  NormalizedColumns out{CMatrix(x.rows(), x.cols()), RVector(x.cols())};
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    const double nrm = x.col(i).norm();
    require(nrm > 0.0 && std::isfinite(nrm), Errc::zero_energy_target, "LS fit returned an all-zero column",
            static_cast<double>(i));
    out.unit.col(i) = x.col(i) / nrm;
    out.magnitudes(i) = nrm / std::sqrt(static_cast<double>(x.rows()));
  }
  return out;
}

/// Sequential unwrap: shift by 2 pi whenever consecutive samples jump by more than pi.
inline RVector unwrap_phase(const CVector& v) {
  RVector ph(v.size());
  double offset = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double raw = std::arg(v(i));
    if (i > 0) {
      const double prev = ph(i - 1) - offset;
      double step = raw - prev;
      while (step > kPi) {
        offset -= kTwoPi;
        step -= kTwoPi;
      }
      while (step < -kPi) {
        offset += kTwoPi;
        step += kTwoPi;
      }
    }
    ph(i) = raw + offset;
  }
  return ph;
}

struct PhaseFit {
  double aoa_rad = 0.0;
  double slope = 0.0;
  double intercept = 0.0;  // regressor rows are [i, 1] with i = 1..N_r, so phase at element 0 = intercept + slope
  bool clamped = false;
};

inline PhaseFit aoa_phase_regression(const CVector& unit_vector, double spacing_rx) {
  const auto n = unit_vector.size();
  require(n >= 2, Errc::invalid_argument, "phase regression needs at least two receive elements");
  const RVector ph = unwrap_phase(unit_vector);
  RMatrix design(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    design(i, 0) = static_cast<double>(i + 1);
    design(i, 1) = 1.0;
  }
  const Eigen::Vector2d coef = design.colPivHouseholderQr().solve(ph);
  PhaseFit fit;
  fit.slope = coef(0);
  fit.intercept = coef(1);
  fit.aoa_rad = -clamped_asin(fit.slope / (kTwoPi * spacing_rx), fit.clamped);
  return fit;
}

inline EstimateSet estimate_2d(const CMatrix& snapshot, const PencilConfig& pc, const ScenarioConfig& cfg) {
  require(snapshot.rows() == cfg.n_rx && snapshot.cols() == cfg.n_tx, Errc::dimension_mismatch,
          "snapshot does not match the array sizes");
  const CMatrix hankel = build_block_hankel(snapshot, pc);
  const auto halves = split_overlap(hankel, pc.k_rx(cfg.n_rx));
  const CVector eigs = pencil_eigenvalues(pencil_matrix(halves.h1, halves.h2, pc.num_targets));
  const AngleResult aod = aod_from_eigenvalues(eigs, cfg.element_spacing_tx);
  const CMatrix x = ls_fit_aoa_manifold(snapshot, aod.angles, cfg.element_spacing_tx);
  const NormalizedColumns cols = normalize_columns(x);

  EstimateSet out;
  out.clamped = aod.clamped;
  for (int i = 0; i < pc.num_targets; ++i) {
    const PhaseFit fit = aoa_phase_regression(cols.unit.col(i), cfg.element_spacing_rx);
    out.clamped = out.clamped || fit.clamped;
    out.targets.push_back({fit.aoa_rad, aod.angles[static_cast<std::size_t>(i)], cols.magnitudes(i), fit.intercept});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full sensing chain on raw observations
// ---------------------------------------------------------------------------

struct PeakEstimate {
  PeakSnapshot peak;
  EstimateSet estimates;
};

struct SensingResult {
  std::vector<PeakEstimate> peaks;
  bool degraded_detection = false;
  bool clamped = false;

  /// All targets from all peaks, flattened in peak order.
  std::vector<TargetEstimate> all_targets() const {
    std::vector<TargetEstimate> out;
    for (const auto& p : peaks) out.insert(out.end(), p.estimates.targets.begin(), p.estimates.targets.end());
    return out;
  }
};

/// LS estimation, coarse timing, then one pencil per detected peak. `targets_per_peak`
/// sets the pencil rank for every peak (1 when all delays fall in distinct bins).
template <class PencilRule = PencilConfig (*)(int, int, int)>
SensingResult sense(const ComplexTensor& rx, const ComplexTensor& pilots, const ScenarioConfig& cfg, int num_peaks,
                    int targets_per_peak = 1, PencilRule rule = &default_pencil) {
  const CsiStack stack = estimate_csi(rx, pilots);
  const CMatrix td = ifft_rows(stack);
  const PeakDetection det = detect_peaks(td, num_peaks);
  SensingResult res;
  res.degraded_detection = det.degraded;
  for (int bin : det.bins) {
    PeakEstimate pe;
    pe.peak = snapshot_at_peak(td, bin, cfg, targets_per_peak);
    pe.estimates = estimate_2d(pe.peak.snapshot, rule(cfg.n_tx, cfg.n_rx, targets_per_peak), cfg);
    res.clamped = res.clamped || pe.estimates.clamped;
    res.peaks.push_back(std::move(pe));
  }
  return res;
}

// ---------------------------------------------------------------------------
// CSV rows for estimate sets
// ---------------------------------------------------------------------------

inline constexpr const char* kEstimateCsvHeader = "trial,peak_bin,target_idx,aoa_deg,aod_deg,gain_mag,delta_rad";

inline void write_estimate_rows(std::ostream& os, int trial, int peak_bin, const EstimateSet& est) {
  for (std::size_t i = 0; i < est.size(); ++i) {
    const auto& t = est[i];
    os << trial << ',' << peak_bin << ',' << i << ',' << rad2deg(t.aoa_rad) << ',' << rad2deg(t.aod_rad) << ','
       << t.gain_mag << ',' << t.phase_intercept << '\n';
  }
}

}  // namespace bistatic
