#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace bistatic {

using cd = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr cd kJ{0.0, 1.0};

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

enum class Errc {
  invalid_argument,
  dimension_mismatch,
  ill_conditioned_pilots,
  invalid_pencil_config,
  rank_deficient,
  degenerate_aod,
  zero_energy_target,
  unidentifiable_scenario,
  grid_too_large,
  divergence,
  unsupported_shape,
  io_error,
  config_error,
  missing_model,
};

inline const char* errc_name(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::dimension_mismatch: return "dimension-mismatch";
    case Errc::ill_conditioned_pilots: return "ill-conditioned-pilots";
    case Errc::invalid_pencil_config: return "invalid-pencil-config";
    case Errc::rank_deficient: return "rank-deficient";
    case Errc::degenerate_aod: return "degenerate-aod";
    case Errc::zero_energy_target: return "zero-energy-target";
    case Errc::unidentifiable_scenario: return "unidentifiable-scenario";
    case Errc::grid_too_large: return "grid-too-large";
    case Errc::divergence: return "divergence";
    case Errc::unsupported_shape: return "unsupported-shape";
    case Errc::io_error: return "io-error";
    case Errc::config_error: return "config-error";
    case Errc::missing_model: return "missing-model";
  }
  return "unknown";
}

/// Numerical failures map to CLI exit code 3, everything else to 2.
inline bool is_numerical(Errc code) {
  switch (code) {
    case Errc::ill_conditioned_pilots:
    case Errc::rank_deficient:
    case Errc::degenerate_aod:
    case Errc::zero_energy_target:
    case Errc::unidentifiable_scenario:
    case Errc::divergence:
      return true;
    default:
      return false;
  }
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what, double value = 0.0)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code), value_(value) {}

  Errc code() const noexcept { return code_; }
  /// Auxiliary number carried by the error (condition number, epoch index, grid size...).
  double value() const noexcept { return value_; }

 private:
  Errc code_;
  double value_;
};

inline void require(bool cond, Errc code, const std::string& what, double value = 0.0) {
  if (!cond) throw Error(code, what, value);
}

// ---------------------------------------------------------------------------
// Reproducible random streams
// ---------------------------------------------------------------------------

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seed for the stream identified by (seed, index, purpose). Streams for different
/// trials or purposes are independent of scheduling order.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, std::string_view purpose) {
  return splitmix64(splitmix64(seed ^ fnv1a(purpose)) + splitmix64(index + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t index, std::string_view purpose) {
  return Rng(derive_seed(seed, index, purpose));
}

/// Circularly-symmetric complex Gaussian with total variance `var`.
inline cd complex_gaussian(Rng& rng, double var) {
  std::normal_distribution<double> n(0.0, std::sqrt(var / 2.0));
  const double re = n(rng);
  const double im = n(rng);
  return {re, im};
}

// ---------------------------------------------------------------------------
// ComplexTensor: dense complex array with named dimensions, last dimension fastest.
// ---------------------------------------------------------------------------

class ComplexTensor {
 public:
  struct Dim {
    std::string name;
    std::size_t extent = 0;
  };

  ComplexTensor() = default;

  explicit ComplexTensor(std::vector<Dim> dims) : dims_(std::move(dims)) {
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      for (std::size_t j = i + 1; j < dims_.size(); ++j) {
        require(dims_[i].name != dims_[j].name, Errc::invalid_argument,
                "duplicate tensor dimension '" + dims_[i].name + "'");
      }
    }
    data_.assign(element_count(dims_), cd{0.0, 0.0});
  }

  ComplexTensor(std::vector<Dim> dims, std::vector<cd> data) : ComplexTensor(std::move(dims)) {
    require(data.size() == data_.size(), Errc::dimension_mismatch, "tensor data length does not match extents");
    data_ = std::move(data);
  }

  const std::vector<Dim>& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t size() const { return data_.size(); }

  std::size_t extent(std::size_t axis) const { return dims_.at(axis).extent; }

  std::size_t extent(std::string_view name) const {
    for (const auto& d : dims_) {
      if (d.name == name) return d.extent;
    }
    throw Error(Errc::invalid_argument, "no tensor dimension named '" + std::string(name) + "'");
  }

  cd& operator()(std::size_t i, std::size_t j, std::size_t k) { return data_[offset3(i, j, k)]; }
  const cd& operator()(std::size_t i, std::size_t j, std::size_t k) const { return data_[offset3(i, j, k)]; }

  std::span<cd> data() { return data_; }
  std::span<const cd> data() const { return data_; }

  bool operator==(const ComplexTensor& other) const {
    if (dims_.size() != other.dims_.size()) return false;
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (dims_[i].name != other.dims_[i].name || dims_[i].extent != other.dims_[i].extent) return false;
    }
    return data_ == other.data_;
  }

 private:
  static std::size_t element_count(const std::vector<Dim>& dims) {
    if (dims.empty()) return 0;
    std::size_t n = 1;
    for (const auto& d : dims) n *= d.extent;
    return n;
  }

  std::size_t offset3(std::size_t i, std::size_t j, std::size_t k) const {
    return (i * dims_[1].extent + j) * dims_[2].extent + k;
  }

  std::vector<Dim> dims_;
  std::vector<cd> data_;
};

/// Column-major vectorization of a matrix (vec operator).
inline CVector vec(const CMatrix& m) {
  return Eigen::Map<const CVector>(m.data(), m.size());
}

/// Inverse of vec for an rows x cols matrix.
inline CMatrix unvec(const CVector& v, Eigen::Index rows, Eigen::Index cols) {
  require(v.size() == rows * cols, Errc::dimension_mismatch, "reshape size mismatch");
  return Eigen::Map<const CMatrix>(v.data(), rows, cols);
}

/// Condition number of a Hermitian positive (semi)definite matrix from its eigenvalues.
inline double hermitian_condition(const CMatrix& gram) {
  Eigen::SelfAdjointEigenSolver<CMatrix> es(gram, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  const double lo = ev.minCoeff();
  const double hi = ev.maxCoeff();
  if (lo <= 0.0) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

}  // namespace bistatic
