#pragma once

// Channel-state front end: least-squares channel estimates, CSI stacking, coarse timing by
// IFFT over each antenna pair, and extraction of the per-peak N_r x N_t snapshot.

#include <bistatic/core.hpp>
#include <bistatic/model.hpp>

#include <unsupported/Eigen/FFT>

#include <array>
#include <cstring>
#include <fstream>

namespace bistatic {

inline constexpr double kGramConditionLimit = 1e10;

/// H_n = Y_n S^H (S S^H)^{-1} for 1-based subcarrier n.
inline CMatrix ls_channel_estimate(const ComplexTensor& rx, const ComplexTensor& pilots, int subcarrier_index) {
  require(rx.rank() == 3 && pilots.rank() == 3 && rx.extent(0) == pilots.extent(0) &&
              rx.extent(1) == pilots.extent(1),
          Errc::dimension_mismatch, "observation and pilot tensors disagree");
  require(subcarrier_index >= 1 && subcarrier_index <= static_cast<int>(rx.extent(0)), Errc::invalid_argument,
          "subcarrier index out of range");
  const CMatrix s = pilot_block(pilots, subcarrier_index);
  const CMatrix y = rx_block(rx, subcarrier_index);
  const CMatrix gram = s * s.adjoint();
  const double cond = hermitian_condition(gram);
  require(cond <= kGramConditionLimit, Errc::ill_conditioned_pilots,
          "pilot Gram matrix condition number " + std::to_string(cond), cond);
  // H (S S^H) = Y S^H  ->  (S S^H) H^H = S Y^H
  const CMatrix rhs = s * y.adjoint();
  return gram.llt().solve(rhs).adjoint();
}

/// Frequency responses of every (rx, tx) pair: row r = column-major index of H_n(a, t),
/// column n-1 = vec(H_n).
struct CsiStack {
  CMatrix matrix;
  int n_rx = 0;
  int n_tx = 0;

  Eigen::Index rows() const { return matrix.rows(); }
  Eigen::Index cols() const { return matrix.cols(); }
  static Eigen::Index row_of(int rx, int tx, int n_rx) { return static_cast<Eigen::Index>(tx) * n_rx + rx; }
};

inline CsiStack stack_csi(std::span<const CMatrix> per_subcarrier) {
  require(!per_subcarrier.empty(), Errc::dimension_mismatch, "no channel estimates to stack");
  const auto n_rx = per_subcarrier.front().rows();
  const auto n_tx = per_subcarrier.front().cols();
  CsiStack out{CMatrix(n_rx * n_tx, static_cast<Eigen::Index>(per_subcarrier.size())), static_cast<int>(n_rx),
               static_cast<int>(n_tx)};
  for (std::size_t n = 0; n < per_subcarrier.size(); ++n) {
    const auto& h = per_subcarrier[n];
    require(h.rows() == n_rx && h.cols() == n_tx, Errc::dimension_mismatch,
            "channel estimates have inconsistent dimensions");
    out.matrix.col(static_cast<Eigen::Index>(n)) = vec(h);
  }
  return out;
}

inline std::vector<CMatrix> unstack_csi(const CsiStack& stack) {
  std::vector<CMatrix> out;
  out.reserve(static_cast<std::size_t>(stack.cols()));
  for (Eigen::Index n = 0; n < stack.cols(); ++n) out.push_back(unvec(stack.matrix.col(n), stack.n_rx, stack.n_tx));
  return out;
}

/// LS estimates for all subcarriers, stacked.
inline CsiStack estimate_csi(const ComplexTensor& rx, const ComplexTensor& pilots) {
  std::vector<CMatrix> est;
  est.reserve(rx.extent(0));
  for (int n = 1; n <= static_cast<int>(rx.extent(0)); ++n) est.push_back(ls_channel_estimate(rx, pilots, n));
  return stack_csi(est);
}

/// Row-wise inverse DFT, h[k] = (1/N) sum_{n=1..N} H[n] exp(+j 2 pi n k / N), k = 0..N-1.
/// The subcarrier numbering starts at 1, matching delay_phasor, so a path with delay
/// k/(N df) lands on bin k with its complex gain intact.
inline CMatrix ifft_rows(const CMatrix& stack) {
  const auto n_p = stack.cols();
  CMatrix out(stack.rows(), n_p);
  Eigen::FFT<double> fft;  // inverse is scaled by 1/N
  std::vector<cd> in(static_cast<std::size_t>(n_p));
  std::vector<cd> res;
  CVector twiddle(n_p);
  for (Eigen::Index k = 0; k < n_p; ++k) twiddle(k) = std::polar(1.0, kTwoPi * static_cast<double>(k) / n_p);
  for (Eigen::Index r = 0; r < stack.rows(); ++r) {
    for (Eigen::Index n = 0; n < n_p; ++n) in[static_cast<std::size_t>(n)] = stack(r, n);
    fft.inv(res, in);
    for (Eigen::Index k = 0; k < n_p; ++k) out(r, k) = res[static_cast<std::size_t>(k)] * twiddle(k);
  }
  return out;
}

inline CMatrix ifft_rows(const CsiStack& stack) { return ifft_rows(stack.matrix); }

struct PeakDetection {
  std::vector<int> bins;  // ascending
  bool degraded = false;  // fewer than q local maxima were available
};

/// Aggregate energy E[k] = sum over antenna pairs of |h[k]|^2.
inline RVector aggregate_energy(const CMatrix& time_domain) {
  return time_domain.cwiseAbs2().colwise().sum().transpose();
}

/// The q bins with the largest aggregate energy among cyclic local maxima.
inline PeakDetection detect_peaks(const CMatrix& time_domain, int q) {
  const auto n_p = static_cast<int>(time_domain.cols());
  require(q >= 1 && q <= n_p, Errc::invalid_argument, "peak count must be in [1, N_P]");
  const RVector e = aggregate_energy(time_domain);

  auto by_energy = [&](int a, int b) { return e(a) > e(b) || (e(a) == e(b) && a < b); };
  std::vector<int> maxima;
  for (int k = 0; k < n_p; ++k) {
    const int prev = (k + n_p - 1) % n_p;
    const int next = (k + 1) % n_p;
    if (n_p == 1 || (e(k) >= e(prev) && e(k) >= e(next))) maxima.push_back(k);
  }
  std::sort(maxima.begin(), maxima.end(), by_energy);

  PeakDetection out;
  if (static_cast<int>(maxima.size()) >= q) {
    out.bins.assign(maxima.begin(), maxima.begin() + q);
  } else {
    out.degraded = true;
    std::vector<int> all(static_cast<std::size_t>(n_p));
    std::iota(all.begin(), all.end(), 0);
    std::sort(all.begin(), all.end(), by_energy);
    out.bins.assign(all.begin(), all.begin() + q);
  }
  std::sort(out.bins.begin(), out.bins.end());
  return out;
}

struct PeakSnapshot {
  int bin_index = 0;
  double coarse_toa_s = 0.0;
  CMatrix snapshot;  // N_r x N_t
  int est_num_targets = 1;
};

/// Snapshot from an already transformed (IFFT'd) stack.
inline PeakSnapshot snapshot_at_peak(const CMatrix& time_domain, int bin_index, const ScenarioConfig& cfg,
                                     int est_num_targets = 1) {
  require(bin_index >= 0 && bin_index < time_domain.cols(), Errc::invalid_argument, "peak bin out of range");
  require(time_domain.rows() == static_cast<Eigen::Index>(cfg.n_rx) * cfg.n_tx, Errc::dimension_mismatch,
          "time-domain stack does not match the array sizes");
  PeakSnapshot p;
  p.bin_index = bin_index;
  p.coarse_toa_s = bin_index * cfg.bin_duration_s();
  p.snapshot = unvec(time_domain.col(bin_index), cfg.n_rx, cfg.n_tx);
  p.est_num_targets = est_num_targets;
  return p;
}

/// Snapshot computed directly from the frequency-domain stack as one row of F^H applied
/// to the stack, without transforming the other bins.
inline PeakSnapshot snapshot_at_peak(const CsiStack& stack, int bin_index, const ScenarioConfig& cfg,
                                     int est_num_targets = 1) {
  const auto n_p = stack.cols();
  require(bin_index >= 0 && bin_index < n_p, Errc::invalid_argument, "peak bin out of range");
  CVector f_row(n_p);
  for (Eigen::Index n = 0; n < n_p; ++n)
    f_row(n) = std::polar(1.0 / static_cast<double>(n_p), kTwoPi * static_cast<double>((n + 1) * bin_index) / n_p);
  PeakSnapshot p;
  p.bin_index = bin_index;
  p.coarse_toa_s = bin_index * cfg.bin_duration_s();
  p.snapshot = unvec(stack.matrix * f_row, stack.n_rx, stack.n_tx);
  p.est_num_targets = est_num_targets;
  return p;
}

// ---------------------------------------------------------------------------
// CSIS binary export: "CSIS", u32 rows, u32 cols, then row-major interleaved re/im f64,
// all little-endian.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  std::array<unsigned char, 4> b{};
  for (int i = 0; i < 4; ++i) b[static_cast<std::size_t>(i)] = static_cast<unsigned char>((v >> (8 * i)) & 0xffu);
  os.write(reinterpret_cast<const char*>(b.data()), 4);
}

inline void put_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  std::array<unsigned char, 8> b{};
  for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<unsigned char>((bits >> (8 * i)) & 0xffu);
  os.write(reinterpret_cast<const char*>(b.data()), 8);
}

inline std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  is.read(reinterpret_cast<char*>(b.data()), 4);
  require(is.good(), Errc::io_error, "truncated binary file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& is) {
  std::array<unsigned char, 8> b{};
  is.read(reinterpret_cast<char*>(b.data()), 8);
  require(is.good(), Errc::io_error, "truncated binary file");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

inline void put_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
  char got[4] = {};
  is.read(got, 4);
  require(is.good() && std::memcmp(got, magic, 4) == 0, Errc::io_error,
          std::string("bad magic, expected '") + magic + "'");
}

}  // namespace detail

inline void write_csi_stack(std::ostream& os, const CsiStack& stack) {
  detail::put_magic(os, "CSIS");
  detail::put_u32(os, static_cast<std::uint32_t>(stack.rows()));
  detail::put_u32(os, static_cast<std::uint32_t>(stack.cols()));
  for (Eigen::Index r = 0; r < stack.rows(); ++r)
    for (Eigen::Index c = 0; c < stack.cols(); ++c) {
      detail::put_f64(os, stack.matrix(r, c).real());
      detail::put_f64(os, stack.matrix(r, c).imag());
    }
  require(os.good(), Errc::io_error, "failed writing CSI stack");
}

/// The file stores only rows x cols; the caller supplies the array split of the rows.
inline CsiStack read_csi_stack(std::istream& is, int n_rx, int n_tx) {
  detail::expect_magic(is, "CSIS");
  const auto rows = detail::get_u32(is);
  const auto cols = detail::get_u32(is);
  require(rows == static_cast<std::uint32_t>(n_rx * n_tx), Errc::dimension_mismatch,
          "CSI stack row count does not match n_rx * n_tx");
  CsiStack s{CMatrix(rows, cols), n_rx, n_tx};
  for (std::uint32_t r = 0; r < rows; ++r)
    for (std::uint32_t c = 0; c < cols; ++c) {
      const double re = detail::get_f64(is);
      const double im = detail::get_f64(is);
      s.matrix(r, c) = cd(re, im);
    }
  return s;
}

inline void save_csi_stack(const std::string& path, const CsiStack& stack) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), Errc::io_error, "cannot open '" + path + "' for writing");
  write_csi_stack(os, stack);
}

inline CsiStack load_csi_stack(const std::string& path, int n_rx, int n_tx) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), Errc::io_error, "cannot open '" + path + "'");
  return read_csi_stack(is, n_rx, n_tx);
}

}  // namespace bistatic
