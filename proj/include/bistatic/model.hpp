#pragma once

// Scenario description and the frequency-domain bistatic MIMO-OFDM observation model.
//
// Sign convention shared by every module: element n of a ULA steering vector carries
// phase -2*pi*n*d*sin(angle), n = 0..N-1, with d the element spacing in wavelengths.

#include <bistatic/core.hpp>

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

namespace bistatic {

struct RadiationPattern {
  enum class Kind { isotropic, gaussian };

  Kind kind = Kind::isotropic;
  double gain = 1.0;           // peak amplitude
  double boresight_rad = 0.0;  // main beam direction
  double beamwidth = 1.0;      // gaussian width parameter

  static RadiationPattern isotropic() { return {}; }
  static RadiationPattern gaussian(double gain, double boresight_rad, double beamwidth) {
    return {Kind::gaussian, gain, boresight_rad, beamwidth};
  }

  void validate() const {
    require(gain > 0.0 && std::isfinite(gain), Errc::invalid_argument, "radiation pattern gain must be > 0");
    if (kind == Kind::gaussian) {
      require(beamwidth > 0.0 && std::isfinite(beamwidth), Errc::invalid_argument,
              "gaussian radiation pattern needs beamwidth > 0");
    }
  }
};

struct ScenarioConfig {
  int n_tx = 8;
  int n_rx = 10;
  int n_subcarriers = 64;
  int n_symbols = 10;
  double subcarrier_spacing_hz = 61.44e6 / 64.0;
  double element_spacing_tx = 0.5;
  double element_spacing_rx = 0.5;
  double noise_var = 0.0;
  RadiationPattern tx_pattern;
  RadiationPattern rx_pattern;
  std::uint64_t rng_seed = 1;

  /// Largest delay representable without wrapping (one OFDM symbol).
  double max_delay_s() const { return 1.0 / subcarrier_spacing_hz; }
  /// Coarse timing resolution, one IFFT bin.
  double bin_duration_s() const { return 1.0 / (n_subcarriers * subcarrier_spacing_hz); }

  void validate() const {
    require(n_tx >= 1 && n_rx >= 1, Errc::invalid_argument, "array sizes must be >= 1");
    require(n_subcarriers >= 1, Errc::invalid_argument, "need at least one subcarrier");
    require(n_symbols >= n_tx, Errc::invalid_argument,
            "n_symbols must be >= n_tx, otherwise the pilot Gram matrix is singular");
    require(subcarrier_spacing_hz > 0.0, Errc::invalid_argument, "subcarrier spacing must be > 0");
    require(element_spacing_tx > 0.0 && element_spacing_rx > 0.0, Errc::invalid_argument,
            "element spacing must be > 0");
    require(noise_var >= 0.0, Errc::invalid_argument, "noise variance must be >= 0");
    tx_pattern.validate();
    rx_pattern.validate();
  }
};

/// One propagation path. `gain` is the bare attenuation; radiation patterns are applied on top.
struct TargetPath {
  double aoa_rad = 0.0;
  double aod_rad = 0.0;
  double delay_s = 0.0;
  cd gain{1.0, 0.0};
};

inline void validate_target(const TargetPath& t, const ScenarioConfig& cfg) {
  require(std::isfinite(t.aoa_rad) && std::isfinite(t.aod_rad), Errc::invalid_argument, "non-finite target angle");
  require(std::abs(t.aoa_rad) < kPi / 2 && std::abs(t.aod_rad) < kPi / 2, Errc::invalid_argument,
          "target angles must lie in (-pi/2, pi/2)");
  require(t.delay_s >= 0.0 && t.delay_s < cfg.max_delay_s(), Errc::invalid_argument,
          "target delay must lie in [0, 1/subcarrier_spacing)", t.delay_s);
}

// ---------------------------------------------------------------------------
// Steering vectors and radiation patterns
// ---------------------------------------------------------------------------

inline CVector steering_vector(double angle_rad, int n_elems, double spacing_wavelengths) {
  require(std::isfinite(angle_rad), Errc::invalid_argument, "non-finite steering angle");
  require(n_elems >= 1, Errc::invalid_argument, "steering vector needs at least one element");
  require(spacing_wavelengths > 0.0, Errc::invalid_argument, "element spacing must be > 0");
  CVector a(n_elems);
  const double step = -kTwoPi * spacing_wavelengths * std::sin(angle_rad);
  for (int n = 0; n < n_elems; ++n) a(n) = std::polar(1.0, step * n);
  return a;
}

/// Wraps an angle difference into [-pi, pi).
inline double wrap_to_pi(double x) {
  double r = std::fmod(x + kPi, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  return r - kPi;
}

inline cd radiation_gain(const RadiationPattern& pattern, double angle_rad) {
  if (pattern.kind == RadiationPattern::Kind::isotropic) return {1.0, 0.0};
  const double off = wrap_to_pi(angle_rad - pattern.boresight_rad);
  return {pattern.gain * std::exp(-(off * off) / (pattern.beamwidth * pattern.beamwidth)), 0.0};
}

/// alpha * g_t(aod) * g_r(aoa): the per-path gain the observations actually carry.
inline cd composite_gain(const ScenarioConfig& cfg, const TargetPath& t) {
  return t.gain * radiation_gain(cfg.tx_pattern, t.aod_rad) * radiation_gain(cfg.rx_pattern, t.aoa_rad);
}

/// c_n(tau) = exp(-j 2 pi n df tau), n is the 1-based subcarrier index.
inline cd delay_phasor(int subcarrier_index, double subcarrier_spacing_hz, double delay_s) {
  return std::polar(1.0, -kTwoPi * subcarrier_index * subcarrier_spacing_hz * delay_s);
}

/// H_n = A_r G D_n A_t^T for 1-based subcarrier index n.
inline CMatrix channel_matrix(const ScenarioConfig& cfg, std::span<const TargetPath> targets, int subcarrier_index) {
  require(subcarrier_index >= 1 && subcarrier_index <= cfg.n_subcarriers, Errc::invalid_argument,
          "subcarrier index out of range");
  require(!targets.empty(), Errc::invalid_argument, "channel needs at least one target");
  CMatrix h = CMatrix::Zero(cfg.n_rx, cfg.n_tx);
  for (const auto& t : targets) {
    validate_target(t, cfg);
    const cd coef = composite_gain(cfg, t) * delay_phasor(subcarrier_index, cfg.subcarrier_spacing_hz, t.delay_s);
    h.noalias() += coef * steering_vector(t.aoa_rad, cfg.n_rx, cfg.element_spacing_rx) *
                   steering_vector(t.aod_rad, cfg.n_tx, cfg.element_spacing_tx).transpose();
  }
  return h;
}

// ---------------------------------------------------------------------------
// Pilots and received data
// ---------------------------------------------------------------------------

inline constexpr double kPilotConditionLimit = 1e6;

/// N_t x K_P pilot block S_{P,n} for 1-based subcarrier n.
inline CMatrix pilot_block(const ComplexTensor& pilots, int subcarrier_index) {
  const auto n = static_cast<std::size_t>(subcarrier_index - 1);
  const auto k_p = pilots.extent(1);
  const auto n_t = pilots.extent(2);
  CMatrix s(n_t, k_p);
  for (std::size_t k = 0; k < k_p; ++k)
    for (std::size_t t = 0; t < n_t; ++t) s(t, k) = pilots(n, k, t);
  return s;
}

/// N_r x K_P observation block Y_n for 1-based subcarrier n.
inline CMatrix rx_block(const ComplexTensor& rx, int subcarrier_index) {
  const auto n = static_cast<std::size_t>(subcarrier_index - 1);
  const auto k_p = rx.extent(1);
  const auto n_r = rx.extent(2);
  CMatrix y(n_r, k_p);
  for (std::size_t k = 0; k < k_p; ++k)
    for (std::size_t r = 0; r < n_r; ++r) y(r, k) = rx(n, k, r);
  return y;
}

/// Random unit-power QPSK pilots, N_P x K_P x N_t. Each subcarrier block is redrawn
/// until its Gram matrix S S^H has condition number <= 1e6.
inline ComplexTensor generate_pilots(const ScenarioConfig& cfg, Rng& rng) {
  require(cfg.n_symbols >= cfg.n_tx, Errc::invalid_argument,
          "n_symbols < n_tx makes the pilot Gram matrix singular");
  ComplexTensor pilots({{"subcarrier", static_cast<std::size_t>(cfg.n_subcarriers)},
                        {"symbol", static_cast<std::size_t>(cfg.n_symbols)},
                        {"tx", static_cast<std::size_t>(cfg.n_tx)}});
  const double a = 1.0 / std::sqrt(2.0);
  std::uniform_int_distribution<int> bit(0, 1);
  for (int n = 0; n < cfg.n_subcarriers; ++n) {
    CMatrix s(cfg.n_tx, cfg.n_symbols);
    do {
      for (int k = 0; k < cfg.n_symbols; ++k)
        for (int t = 0; t < cfg.n_tx; ++t) s(t, k) = cd(bit(rng) ? a : -a, bit(rng) ? a : -a);
    } while (hermitian_condition(s * s.adjoint()) > kPilotConditionLimit);
    for (int k = 0; k < cfg.n_symbols; ++k)
      for (int t = 0; t < cfg.n_tx; ++t) pilots(n, k, t) = s(t, k);
  }
  return pilots;
}

inline ComplexTensor generate_pilots(const ScenarioConfig& cfg) {
  Rng rng = make_rng(cfg.rng_seed, 0, "pilots");
  return generate_pilots(cfg, rng);
}

inline void check_pilot_dims(const ScenarioConfig& cfg, const ComplexTensor& pilots) {
  require(pilots.rank() == 3 && pilots.extent(0) == static_cast<std::size_t>(cfg.n_subcarriers) &&
              pilots.extent(1) == static_cast<std::size_t>(cfg.n_symbols) &&
              pilots.extent(2) == static_cast<std::size_t>(cfg.n_tx),
          Errc::dimension_mismatch, "pilot tensor does not match the scenario");
}

/// y_{n,k} = H_n s_{n,k} + w_{n,k}; output N_P x K_P x N_r. One H_n serves all symbols.
inline ComplexTensor simulate_rx(const ScenarioConfig& cfg, std::span<const TargetPath> targets,
                                 const ComplexTensor& pilots, Rng& rng) {
  check_pilot_dims(cfg, pilots);
  ComplexTensor rx({{"subcarrier", static_cast<std::size_t>(cfg.n_subcarriers)},
                    {"symbol", static_cast<std::size_t>(cfg.n_symbols)},
                    {"rx", static_cast<std::size_t>(cfg.n_rx)}});
  for (int n = 1; n <= cfg.n_subcarriers; ++n) {
    const CMatrix y = channel_matrix(cfg, targets, n) * pilot_block(pilots, n);
    for (int k = 0; k < cfg.n_symbols; ++k)
      for (int r = 0; r < cfg.n_rx; ++r) {
        cd v = y(r, k);
        if (cfg.noise_var > 0.0) v += complex_gaussian(rng, cfg.noise_var);
        rx(n - 1, k, r) = v;
      }
  }
  return rx;
}

inline ComplexTensor simulate_rx(const ScenarioConfig& cfg, std::span<const TargetPath> targets,
                                 const ComplexTensor& pilots) {
  Rng rng = make_rng(cfg.rng_seed, 0, "noise");
  return simulate_rx(cfg, targets, pilots, rng);
}

// ---------------------------------------------------------------------------
// SNR bookkeeping
// ---------------------------------------------------------------------------

/// Expected received signal power per receive antenna per subcarrier for unit-power pilots,
/// (1 / (N_P N_r)) sum_n ||H_n||_F^2, evaluated with isotropic patterns so that pattern
/// gains show up as an SNR loss rather than being normalized away.
inline double reference_signal_power(const ScenarioConfig& cfg, std::span<const TargetPath> targets) {
  ScenarioConfig iso = cfg;
  iso.tx_pattern = RadiationPattern::isotropic();
  iso.rx_pattern = RadiationPattern::isotropic();
  double acc = 0.0;
  for (int n = 1; n <= cfg.n_subcarriers; ++n) acc += channel_matrix(iso, targets, n).squaredNorm();
  return acc / (cfg.n_subcarriers * cfg.n_rx);
}

inline double snr_db_to_linear(double snr_db) { return std::pow(10.0, snr_db / 10.0); }

inline double noise_var_for_snr(double signal_power, double snr_db) {
  return signal_power / snr_db_to_linear(snr_db);
}

// ---------------------------------------------------------------------------
// JSON scenario files (angles in degrees)
// ---------------------------------------------------------------------------

inline RadiationPattern pattern_from_json(const nlohmann::json& j) {
  RadiationPattern p;
  const std::string kind = j.value("kind", std::string("isotropic"));
  if (kind == "isotropic") {
    p.kind = RadiationPattern::Kind::isotropic;
  } else if (kind == "gaussian") {
    p.kind = RadiationPattern::Kind::gaussian;
  } else {
    throw Error(Errc::config_error, "unknown radiation pattern kind '" + kind + "'");
  }
  p.gain = j.value("gain", 1.0);
  p.boresight_rad = deg2rad(j.value("boresight_deg", 0.0));
  p.beamwidth = j.value("beamwidth", 1.0);
  return p;
}

inline nlohmann::json pattern_to_json(const RadiationPattern& p) {
  return {{"kind", p.kind == RadiationPattern::Kind::isotropic ? "isotropic" : "gaussian"},
          {"gain", p.gain},
          {"boresight_deg", rad2deg(p.boresight_rad)},
          {"beamwidth", p.beamwidth}};
}

inline ScenarioConfig scenario_from_json(const nlohmann::json& j) {
  ScenarioConfig c;
  try {
    c.n_tx = j.value("n_tx", c.n_tx);
    c.n_rx = j.value("n_rx", c.n_rx);
    c.n_subcarriers = j.value("n_subcarriers", c.n_subcarriers);
    c.n_symbols = j.value("n_symbols", c.n_symbols);
    c.subcarrier_spacing_hz = j.value("subcarrier_spacing_hz", c.subcarrier_spacing_hz);
    c.element_spacing_tx = j.value("element_spacing_tx", c.element_spacing_tx);
    c.element_spacing_rx = j.value("element_spacing_rx", c.element_spacing_rx);
    c.noise_var = j.value("noise_var", c.noise_var);
    c.rng_seed = j.value("rng_seed", c.rng_seed);
    if (j.contains("tx_pattern")) c.tx_pattern = pattern_from_json(j.at("tx_pattern"));
    if (j.contains("rx_pattern")) c.rx_pattern = pattern_from_json(j.at("rx_pattern"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::config_error, e.what());
  }
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(Errc::config_error, e.what());
  }
  return c;
}

inline nlohmann::json scenario_to_json(const ScenarioConfig& c) {
  return {{"n_tx", c.n_tx},
          {"n_rx", c.n_rx},
          {"n_subcarriers", c.n_subcarriers},
          {"n_symbols", c.n_symbols},
          {"subcarrier_spacing_hz", c.subcarrier_spacing_hz},
          {"element_spacing_tx", c.element_spacing_tx},
          {"element_spacing_rx", c.element_spacing_rx},
          {"noise_var", c.noise_var},
          {"tx_pattern", pattern_to_json(c.tx_pattern)},
          {"rx_pattern", pattern_to_json(c.rx_pattern)},
          {"rng_seed", c.rng_seed}};
}

inline std::vector<TargetPath> targets_from_json(const nlohmann::json& arr) {
  std::vector<TargetPath> out;
  try {
    for (const auto& t : arr) {
      TargetPath p;
      p.aoa_rad = deg2rad(t.at("aoa_deg").get<double>());
      p.aod_rad = deg2rad(t.at("aod_deg").get<double>());
      p.delay_s = t.value("delay_s", 0.0);
      p.gain = cd(t.value("gain_re", 1.0), t.value("gain_im", 0.0));
      out.push_back(p);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::config_error, e.what());
  }
  return out;
}

inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), Errc::config_error, "cannot open config file '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::config_error, std::string("malformed JSON in '") + path + "': " + e.what());
  }
}

/// Stable hash of a scenario, used to tie emitted results back to their configuration.
inline std::string config_hash(const ScenarioConfig& c) {
  const std::uint64_t h = fnv1a(scenario_to_json(c).dump());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace bistatic
