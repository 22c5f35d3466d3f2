#pragma once

// Monte Carlo orchestration: target draws, SNR calibration, sweeps over SNR and beamwidth,
// dataset generation, classifier evaluation and result tables.

#include <bistatic/cnn.hpp>
#include <bistatic/complexity.hpp>
#include <bistatic/crb.hpp>
#include <bistatic/csi.hpp>
#include <bistatic/mle.hpp>
#include <bistatic/model.hpp>
#include <bistatic/pencil.hpp>

#include <atomic>
#include <charconv>
#include <exception>
#include <filesystem>
#include <mutex>
#include <sstream>
#include <thread>

namespace bistatic {

// ---------------------------------------------------------------------------
// Streaming statistics
// ---------------------------------------------------------------------------

class Welford {
 public:
  void add(double x) {
    ++n_;
    const double d = x - mean_;
    mean_ += d / static_cast<double>(n_);
    m2_ += d * (x - mean_);
  }

  std::size_t count() const { return n_; }
  double mean() const { return mean_; }
  double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
  double stderr_of_mean() const { return n_ > 1 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0; }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

// ---------------------------------------------------------------------------
// Result tables
// ---------------------------------------------------------------------------

struct ResultRow {
  double variable = 0.0;
  std::string metric;
  double value = 0.0;
  double stderr_value = 0.0;
  std::size_t trials = 0;

  bool operator==(const ResultRow&) const = default;
};

/// Shortest decimal that parses back to the same double.
inline std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_number(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  require(res.ec == std::errc() && res.ptr == s.data() + s.size(), Errc::io_error,
          "malformed number '" + std::string(s) + "'");
  return v;
}

struct ResultTable {
  std::string variable_name = "snr_db";
  std::string config_hash;
  std::vector<ResultRow> rows;

  static constexpr const char* kHeader = "variable,metric,value,stderr,trials";

  void add(double variable, std::string metric, const Welford& w) {
    rows.push_back({variable, std::move(metric), w.mean(), w.stderr_of_mean(), w.count()});
  }
  void add(double variable, std::string metric, double value, double se, std::size_t trials) {
    rows.push_back({variable, std::move(metric), value, se, trials});
  }

  std::vector<double> series(std::string_view metric) const {
    std::vector<double> v;
    for (const auto& r : rows)
      if (r.metric == metric) v.push_back(r.value);
    return v;
  }
  std::vector<double> variables(std::string_view metric) const {
    std::vector<double> v;
    for (const auto& r : rows)
      if (r.metric == metric) v.push_back(r.variable);
    return v;
  }
  double value(double variable, std::string_view metric) const {
    for (const auto& r : rows)
      if (r.metric == metric && r.variable == variable) return r.value;
    throw Error(Errc::invalid_argument, "no row for metric '" + std::string(metric) + "'");
  }

  void write_csv(std::ostream& os) const {
    os << "# config_hash: " << config_hash << '\n';
    os << "# variable: " << variable_name << '\n';
    os << kHeader << '\n';
    for (const auto& r : rows)
      os << format_number(r.variable) << ',' << r.metric << ',' << format_number(r.value) << ','
         << format_number(r.stderr_value) << ',' << r.trials << '\n';
  }

  static ResultTable read_csv(std::istream& is) {
    ResultTable t;
    std::string line;
    bool header = false;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      if (line.rfind("# config_hash: ", 0) == 0) {
        t.config_hash = line.substr(15);
        continue;
      }
      if (line.rfind("# variable: ", 0) == 0) {
        t.variable_name = line.substr(12);
        continue;
      }
      if (line[0] == '#') continue;
      if (!header) {
        require(line == kHeader, Errc::io_error, "unexpected CSV header '" + line + "'");
        header = true;
        continue;
      }
      std::vector<std::string> f;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) f.push_back(cell);
      require(f.size() == 5, Errc::io_error, "expected 5 CSV fields in '" + line + "'");
      t.rows.push_back({parse_number(f[0]), f[1], parse_number(f[2]), parse_number(f[3]),
                        static_cast<std::size_t>(std::stoull(f[4]))});
    }
    return t;
  }
};

/// Writes `<stem>.csv` and a gnuplot `.dat` with one indexed block per metric.
inline void emit_plot_data(const ResultTable& table, const std::filesystem::path& stem) {
  std::filesystem::create_directories(stem.parent_path().empty() ? "." : stem.parent_path());
  auto csv_path = stem;
  csv_path += ".csv";
  std::ofstream csv(csv_path);
  require(csv.good(), Errc::io_error, "cannot write '" + csv_path.string() + "'");
  table.write_csv(csv);

  auto dat_path = stem;
  dat_path += ".dat";
  std::ofstream dat(dat_path);
  require(dat.good(), Errc::io_error, "cannot write '" + dat_path.string() + "'");
  dat << "# config_hash: " << table.config_hash << '\n';
  dat << "# set logscale y\n";
  dat << "# columns: " << table.variable_name << " value stderr\n";
  std::vector<std::string> metrics;
  for (const auto& r : table.rows)
    if (std::find(metrics.begin(), metrics.end(), r.metric) == metrics.end()) metrics.push_back(r.metric);
  for (std::size_t m = 0; m < metrics.size(); ++m) {
    if (m > 0) dat << "\n\n";
    dat << "# index " << m << ": " << metrics[m] << '\n';
    for (const auto& r : table.rows)
      if (r.metric == metrics[m])
        dat << format_number(r.variable) << ' ' << format_number(r.value) << ' ' << format_number(r.stderr_value)
            << '\n';
  }
  require(csv.good() && dat.good(), Errc::io_error, "failed writing plot data");
}

// ---------------------------------------------------------------------------
// Worker pool
// ---------------------------------------------------------------------------

inline int default_threads() { return std::max(1, static_cast<int>(std::thread::hardware_concurrency())); }

/// Runs fn(i) for i in [0, n). Results must be written to per-index slots by the caller so
/// that reductions stay independent of scheduling.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next.store(n);
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Target draws
// ---------------------------------------------------------------------------

enum class DelayMode {
  on_bin,    // integer multiples of the bin width, distinct bins
  off_grid,  // continuous delays, targets in distinct and separated bins
  same_bin,  // every target in one common bin, optional jitter within it
};

struct DrawSpec {
  int q = 1;
  double angle_limit_rad = deg2rad(60.0);
  double min_separation_rad = 0.0;  // between AoAs and between AoDs when q > 1
  DelayMode delay_mode = DelayMode::off_grid;
  double same_bin_jitter = 0.0;  // fraction of a bin, uniform in [-j, j]
  int min_bin_gap = 4;
  double gain_mag_lo = 1.0;
  double gain_mag_hi = 1.0;
};

namespace detail {

inline bool separated(const std::vector<double>& v, double gap) {
  std::vector<double> s = v;
  std::sort(s.begin(), s.end());
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i] - s[i - 1] < gap) return false;
  return true;
}

}  // namespace detail

inline std::vector<TargetPath> draw_targets(const ScenarioConfig& cfg, const DrawSpec& spec, Rng& rng) {
  require(spec.q >= 1, Errc::invalid_argument, "need at least one target");
  std::uniform_real_distribution<double> ang(-spec.angle_limit_rad, spec.angle_limit_rad);
  std::uniform_real_distribution<double> mag(spec.gain_mag_lo, spec.gain_mag_hi);
  std::uniform_real_distribution<double> phase(-kPi, kPi);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto q = static_cast<std::size_t>(spec.q);
  const double bin = cfg.bin_duration_s();

  std::vector<double> aoa(q), aod(q);
  for (int attempt = 0;; ++attempt) {
    require(attempt < 10000, Errc::invalid_argument, "cannot satisfy the angle separation");
    for (std::size_t i = 0; i < q; ++i) {
      aoa[i] = ang(rng);
      aod[i] = ang(rng);
    }
    if (q == 1 || (detail::separated(aoa, spec.min_separation_rad) && detail::separated(aod, spec.min_separation_rad)))
      break;
  }

  std::vector<double> delay(q);
  if (spec.delay_mode == DelayMode::same_bin) {
    std::uniform_int_distribution<int> pick(1, cfg.n_subcarriers - 2);
    const int b = pick(rng);
    for (auto& d : delay) d = (b + spec.same_bin_jitter * (2.0 * unit(rng) - 1.0)) * bin;
  } else {
    std::uniform_int_distribution<int> pick(0, cfg.n_subcarriers - 1);
    std::vector<int> bins;
    for (int attempt = 0; bins.size() < q; ++attempt) {
      require(attempt < 100000, Errc::invalid_argument, "cannot place targets in separated delay bins");
      const int b = pick(rng);
      bool ok = true;
      for (int o : bins) {
        const int gap = std::abs(o - b);
        if (std::min(gap, cfg.n_subcarriers - gap) < spec.min_bin_gap) ok = false;
      }
      if (ok) bins.push_back(b);
    }
    for (std::size_t i = 0; i < q; ++i)
      delay[i] = spec.delay_mode == DelayMode::on_bin ? bins[i] * bin : (bins[i] + unit(rng) - 0.5) * bin;
    for (auto& d : delay)
      if (d < 0.0) d += cfg.max_delay_s();
  }

  std::vector<TargetPath> out(q);
  for (std::size_t i = 0; i < q; ++i) {
    out[i].aoa_rad = aoa[i];
    out[i].aod_rad = aod[i];
    out[i].delay_s = delay[i];
    out[i].gain = std::polar(mag(rng), phase(rng));
  }
  return out;
}

/// Mean reference signal power over scenario draws; exact when every draw has the same value.
inline double calibrate_signal_power(const ScenarioConfig& cfg, const DrawSpec& spec, std::uint64_t seed,
                                     int draws = 512) {
  Welford w;
  for (int i = 0; i < draws; ++i) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(i), "calibration");
    const auto targets = draw_targets(cfg, spec, rng);
    w.add(reference_signal_power(cfg, targets));
  }
  return w.mean();
}

/// Sorts (AoA, AoD) pairs by AoA, ties by AoD.
inline std::vector<std::pair<double, double>> sorted_pairs(std::vector<std::pair<double, double>> v) {
  std::sort(v.begin(), v.end());
  return v;
}

struct SquaredErrors {
  double aoa = 0.0;
  double aod = 0.0;
};

/// Mean squared error per target after sorting both sides by AoA.
inline SquaredErrors matched_errors(std::span<const TargetPath> truth, std::span<const TargetEstimate> est) {
  require(truth.size() == est.size() && !truth.empty(), Errc::dimension_mismatch,
          "estimate count differs from target count");
  std::vector<std::pair<double, double>> t, e;
  for (const auto& x : truth) t.emplace_back(x.aoa_rad, x.aod_rad);
  for (const auto& x : est) e.emplace_back(x.aoa_rad, x.aod_rad);
  t = sorted_pairs(std::move(t));
  e = sorted_pairs(std::move(e));
  SquaredErrors s;
  for (std::size_t i = 0; i < t.size(); ++i) {
    s.aoa += (t[i].first - e[i].first) * (t[i].first - e[i].first);
    s.aod += (t[i].second - e[i].second) * (t[i].second - e[i].second);
  }
  s.aoa /= static_cast<double>(t.size());
  s.aod /= static_cast<double>(t.size());
  return s;
}

/// Log-linear interpolation of the SNR where a decreasing curve first drops to `level`.
/// Returns NaN if it never does.
inline double crossing_snr(std::span<const double> snr_db, std::span<const double> values, double level) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] <= level) {
      if (i == 0) return snr_db[0];
      const double a = std::log10(values[i - 1]), b = std::log10(values[i]), l = std::log10(level);
      return snr_db[i - 1] + (snr_db[i] - snr_db[i - 1]) * (a - l) / (a - b);
    }
  }
  return std::numeric_limits<double>::quiet_NaN();
}

// ---------------------------------------------------------------------------
// Experiment plan
// ---------------------------------------------------------------------------

enum class ExperimentKind { mse_sweep, crb_sweep, beta_sweep, classify, complexity, train, mle_compare };

enum class EstimatorKind { two_d, nn };

struct ExperimentPlan {
  ExperimentKind kind = ExperimentKind::mse_sweep;
  ScenarioConfig scenario;
  std::vector<double> snr_list_db{0, 5, 10, 15, 20, 25, 30};
  int trials = 500;
  EstimatorKind estimator = EstimatorKind::two_d;
  std::string out_path = "out";
  std::string model_path;
  std::uint64_t seed = 1;
  int threads = default_threads();
  DrawSpec draw;
  std::vector<TargetPath> targets;  // fixed scenarios (crb sweep)

  void validate() const {
    require(trials >= 1, Errc::config_error, "trials must be >= 1");
    require(!snr_list_db.empty(), Errc::config_error, "SNR list must not be empty");
    require(threads >= 1, Errc::config_error, "threads must be >= 1");
    if (kind == ExperimentKind::mse_sweep && estimator == EstimatorKind::nn)
      require(!model_path.empty(), Errc::config_error, "the nn estimator needs a model path");
    if (kind == ExperimentKind::classify) require(!model_path.empty(), Errc::config_error, "classifier needs a model");
    if (kind == ExperimentKind::crb_sweep) require(!targets.empty(), Errc::config_error, "crb sweep needs targets");
  }
};

inline DelayMode delay_mode_from_string(const std::string& s) {
  if (s == "on_bin") return DelayMode::on_bin;
  if (s == "off_grid") return DelayMode::off_grid;
  if (s == "same_bin") return DelayMode::same_bin;
  throw Error(Errc::config_error, "unknown delay mode '" + s + "'");
}

/// Plan fields from a JSON object. The scenario lives under "scenario" (or at top level).
inline ExperimentPlan plan_from_json(const nlohmann::json& j, ExperimentPlan p = {}) {
  try {
    p.scenario = scenario_from_json(j.contains("scenario") ? j.at("scenario") : j);
    if (j.contains("snr_list_db")) p.snr_list_db = j.at("snr_list_db").get<std::vector<double>>();
    p.trials = j.value("trials", p.trials);
    if (j.contains("estimator")) {
      const auto e = j.at("estimator").get<std::string>();
      require(e == "2d" || e == "nn", Errc::config_error, "estimator must be '2d' or 'nn'");
      p.estimator = e == "nn" ? EstimatorKind::nn : EstimatorKind::two_d;
    }
    p.model_path = j.value("model", p.model_path);
    p.seed = j.value("seed", p.seed);
    if (j.contains("targets")) p.targets = targets_from_json(j.at("targets"));
    if (j.contains("draw")) {
      const auto& d = j.at("draw");
      p.draw.q = d.value("q", p.draw.q);
      p.draw.angle_limit_rad = deg2rad(d.value("angle_limit_deg", rad2deg(p.draw.angle_limit_rad)));
      p.draw.min_separation_rad = d.value("min_separation_rad", p.draw.min_separation_rad);
      if (d.contains("delay_mode")) p.draw.delay_mode = delay_mode_from_string(d.at("delay_mode").get<std::string>());
      p.draw.same_bin_jitter = d.value("same_bin_jitter", p.draw.same_bin_jitter);
      p.draw.gain_mag_lo = d.value("gain_mag_lo", p.draw.gain_mag_lo);
      p.draw.gain_mag_hi = d.value("gain_mag_hi", p.draw.gain_mag_hi);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::config_error, e.what());
  }
  return p;
}

// ---------------------------------------------------------------------------
// One simulated trial
// ---------------------------------------------------------------------------

struct Trial {
  std::vector<TargetPath> targets;
  ComplexTensor pilots;
  ComplexTensor rx;
  ScenarioConfig cfg;  // with the trial's noise variance
};

/// Targets and pilots depend on (seed, trial) only, so every SNR point sees the same scenes.
inline Trial simulate_trial(const ScenarioConfig& base, const DrawSpec& draw, double noise_var, std::uint64_t seed,
                            std::uint64_t trial, std::string_view noise_tag) {
  Trial t;
  t.cfg = base;
  t.cfg.noise_var = noise_var;
  Rng target_rng = make_rng(seed, trial, "targets");
  t.targets = draw_targets(base, draw, target_rng);
  Rng pilot_rng = make_rng(seed, trial, "pilots");
  t.pilots = generate_pilots(base, pilot_rng);
  Rng noise_rng = make_rng(seed, trial, noise_tag);
  t.rx = simulate_rx(t.cfg, t.targets, t.pilots, noise_rng);
  return t;
}

inline std::string snr_tag(std::string_view base, double snr_db) {
  return std::string(base) + "@" + format_number(snr_db);
}

// ---------------------------------------------------------------------------
// MSE vs SNR
// ---------------------------------------------------------------------------

/// Estimates for every target of a trial. The 2D path uses one peak per target; the network
/// path is single-target (q = 1) per peak.
inline std::vector<TargetEstimate> estimate_trial(const Trial& t, int q, EstimatorKind kind, const Network* net) {
  if (kind == EstimatorKind::two_d) {
    if (t.targets.size() > 1 && std::all_of(t.targets.begin(), t.targets.end(), [&](const TargetPath& x) {
          return std::lround(x.delay_s / t.cfg.bin_duration_s()) ==
                 std::lround(t.targets.front().delay_s / t.cfg.bin_duration_s());
        }))
      return sense(t.rx, t.pilots, t.cfg, 1, q).all_targets();
    return sense(t.rx, t.pilots, t.cfg, q, 1).all_targets();
  }
  require(net != nullptr, Errc::missing_model, "network estimator without a model");
  const CsiStack stack = estimate_csi(t.rx, t.pilots);
  const CMatrix td = ifft_rows(stack);
  const PeakDetection det = detect_peaks(td, q);
  std::vector<TargetEstimate> out;
  for (int bin : det.bins) {
    const RVector y = predict(*net, snapshot_at_peak(td, bin, t.cfg).snapshot);
    const int k = static_cast<int>(y.size() / 2);
    for (int i = 0; i < k; ++i) out.push_back({y(i), y(k + i), 0.0, 0.0});
  }
  return out;
}

inline double mean_crb_theta(const Trial& t) {
  const AngleCrb c = crb_angles(fim_assemble(t.cfg, t.targets, t.pilots));
  return c.theta.diagonal().mean();
}

inline AngleCrb trial_crb(const Trial& t) { return crb_angles(fim_assemble(t.cfg, t.targets, t.pilots)); }

/// Metrics per SNR: mse_aoa, mse_aod (rad^2), crb_theta, crb_phi (mean CRB diagonal).
inline ResultTable run_mse_sweep(const ExperimentPlan& plan, const Network* net = nullptr) {
  plan.validate();
  const double p_ref = calibrate_signal_power(plan.scenario, plan.draw, plan.seed);
  ResultTable table;
  table.config_hash = config_hash(plan.scenario);
  for (double snr : plan.snr_list_db) {
    const double nv = noise_var_for_snr(p_ref, snr);
    const auto n = static_cast<std::size_t>(plan.trials);
    std::vector<std::array<double, 4>> res(n);
    parallel_for(n, plan.threads, [&](std::size_t i) {
      const Trial t = simulate_trial(plan.scenario, plan.draw, nv, plan.seed, i, snr_tag("noise", snr));
      const auto est = estimate_trial(t, plan.draw.q, plan.estimator, net);
      const auto err = matched_errors(t.targets, est);
      const AngleCrb c = trial_crb(t);
      res[i] = {err.aoa, err.aod, c.theta.diagonal().mean(), c.phi.diagonal().mean()};
    });
    Welford aoa, aod, ct, cp;
    for (const auto& r : res) {
      aoa.add(r[0]);
      aod.add(r[1]);
      ct.add(r[2]);
      cp.add(r[3]);
    }
    table.add(snr, "mse_aoa", aoa);
    table.add(snr, "mse_aod", aod);
    table.add(snr, "crb_theta", ct);
    table.add(snr, "crb_phi", cp);
  }
  return table;
}

// ---------------------------------------------------------------------------
// CRB sweeps
// ---------------------------------------------------------------------------

struct CrbRow {
  double snr_db = 0.0;
  double beta_t = 0.0;
  int target_idx = 0;
  double crb_theta = 0.0;
  double crb_phi = 0.0;
};

inline void write_crb_csv(std::ostream& os, const std::string& hash, std::span<const CrbRow> rows) {
  os << "# config_hash: " << hash << '\n' << "snr_db,beta_t,target_idx,crb_theta_rad2,crb_phi_rad2\n";
  for (const auto& r : rows)
    os << format_number(r.snr_db) << ',' << format_number(r.beta_t) << ',' << r.target_idx << ','
       << format_number(r.crb_theta) << ',' << format_number(r.crb_phi) << '\n';
}

/// CRB of the plan's fixed targets at every SNR. The noise variance follows the isotropic
/// reference power of those targets. beta_t is reported as 0 for non-gaussian patterns.
inline std::vector<CrbRow> run_crb_sweep(const ExperimentPlan& plan) {
  plan.validate();
  Rng pilot_rng = make_rng(plan.seed, 0, "pilots");
  const ComplexTensor pilots = generate_pilots(plan.scenario, pilot_rng);
  const double p_ref = reference_signal_power(plan.scenario, plan.targets);
  const double beta =
      plan.scenario.tx_pattern.kind == RadiationPattern::Kind::gaussian ? plan.scenario.tx_pattern.beamwidth : 0.0;
  std::vector<CrbRow> rows;
  for (double snr : plan.snr_list_db) {
    ScenarioConfig cfg = plan.scenario;
    cfg.noise_var = noise_var_for_snr(p_ref, snr);
    const AngleCrb c = crb_angles(fim_assemble(cfg, plan.targets, pilots));
    for (int i = 0; i < static_cast<int>(plan.targets.size()); ++i) rows.push_back({snr, beta, i, c.theta(i, i), c.phi(i, i)});
  }
  return rows;
}

inline ResultTable crb_rows_to_table(std::span<const CrbRow> rows, const std::string& hash,
                                     const std::string& variable = "snr_db") {
  ResultTable t;
  t.variable_name = variable;
  t.config_hash = hash;
  for (const auto& r : rows) {
    const double v = variable == "beta_t" ? r.beta_t : r.snr_db;
    const std::string suffix = variable == "beta_t" ? "_snr" + format_number(r.snr_db) : "";
    t.add(v, "crb_theta_t" + std::to_string(r.target_idx) + suffix, r.crb_theta, 0.0, 1);
    t.add(v, "crb_phi_t" + std::to_string(r.target_idx) + suffix, r.crb_phi, 0.0, 1);
  }
  return t;
}

struct BetaSweepSpec {
  std::vector<double> betas;
  std::vector<double> snr_db{0.0, 10.0, 20.0};
  double aoa_rad = 0.0;
  double aod_rad = deg2rad(-15.0);
  double pattern_gain = 1.0;
  double boresight_rad = 0.0;

  static std::vector<double> default_betas() {
    std::vector<double> b;
    for (int i = 0; i <= 55; ++i) b.push_back(0.1 + 0.1 * i);
    return b;
  }
};

/// CRB(theta) over the tx beamwidth for a single target. The noise variance is set from the
/// isotropic reference power, so a narrow beam pointing away from the target costs SNR.
inline std::vector<CrbRow> run_beta_sweep(const ScenarioConfig& base, const BetaSweepSpec& spec, std::uint64_t seed) {
  Rng pilot_rng = make_rng(seed, 0, "pilots");
  const ComplexTensor pilots = generate_pilots(base, pilot_rng);
  const std::vector<TargetPath> targets{{spec.aoa_rad, spec.aod_rad, 0.0, {1.0, 0.0}}};
  const double p_ref = reference_signal_power(base, targets);
  std::vector<CrbRow> rows;
  for (double snr : spec.snr_db)
    for (double beta : spec.betas) {
      ScenarioConfig cfg = base;
      cfg.tx_pattern = RadiationPattern::gaussian(spec.pattern_gain, spec.boresight_rad, beta);
      cfg.noise_var = noise_var_for_snr(p_ref, snr);
      const AngleCrb c = crb_angles(fim_assemble(cfg, targets, pilots));
      rows.push_back({snr, beta, 0, c.theta(0, 0), c.phi(0, 0)});
    }
  return rows;
}

/// Smallest beamwidth in the sweep at which CRB(theta) reaches `level`, NaN if none.
inline double beta_threshold(std::span<const CrbRow> rows, double snr_db, double level) {
  for (const auto& r : rows)
    if (r.snr_db == snr_db && r.crb_theta <= level) return r.beta_t;
  return std::numeric_limits<double>::quiet_NaN();
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

enum class DatasetKind { regression, classifier };

struct DatasetPlan {
  DatasetKind kind = DatasetKind::regression;
  ScenarioConfig scenario;
  std::vector<double> snr_list_db{5, 10, 15, 20, 25, 30, 40};
  int samples = 3500;
  int q = 1;  // regression targets per sample
  DrawSpec draw;
  std::uint64_t seed = 1;
  std::string purpose = "train";
  int threads = default_threads();

  static DatasetPlan regression_defaults(const ScenarioConfig& cfg) {
    DatasetPlan p;
    p.scenario = cfg;
    p.draw.gain_mag_lo = 0.5;
    p.draw.gain_mag_hi = 1.0;
    p.draw.delay_mode = DelayMode::off_grid;
    return p;
  }

  static DatasetPlan classifier_defaults(const ScenarioConfig& cfg) {
    DatasetPlan p = regression_defaults(cfg);
    p.kind = DatasetKind::classifier;
    p.snr_list_db = {-10, -5, 5, 15};
    p.samples = 15000;
    p.draw.delay_mode = DelayMode::same_bin;
    p.draw.min_separation_rad = 0.2;
    return p;
  }

  int classes() const { return kind == DatasetKind::classifier ? NetworkSpec::kClasses : 1; }
  int n_out() const { return kind == DatasetKind::classifier ? 1 : 2 * q; }

  /// Sample i cycles SNRs fastest, then classes, so any prefix is balanced.
  double snr_of(int i) const { return snr_list_db[static_cast<std::size_t>(i) % snr_list_db.size()]; }
  int targets_of(int i) const {
    if (kind == DatasetKind::regression) return q;
    return static_cast<int>((static_cast<std::size_t>(i) / snr_list_db.size()) % NetworkSpec::kClasses) + 1;
  }
};

struct DatasetSample {
  CMatrix snapshot;  // N_r x N_t at the detected peak
  RVector label;
  std::vector<TargetPath> targets;
  double snr_db = 0.0;
};

/// Per-class reference powers for the dataset's draw distribution.
inline std::vector<double> dataset_power(const DatasetPlan& plan) {
  std::vector<double> p;
  for (int c = 1; c <= plan.classes(); ++c) {
    DrawSpec d = plan.draw;
    d.q = plan.kind == DatasetKind::classifier ? c : plan.q;
    p.push_back(calibrate_signal_power(plan.scenario, d, plan.seed));
  }
  return p;
}

/// Regenerates sample i from (plan, i) alone.
inline DatasetSample dataset_sample(const DatasetPlan& plan, std::span<const double> power, int i) {
  DatasetSample s;
  s.snr_db = plan.snr_of(i);
  const int q = plan.targets_of(i);
  DrawSpec d = plan.draw;
  d.q = q;
  const double p_ref = power[plan.kind == DatasetKind::classifier ? static_cast<std::size_t>(q - 1) : 0];
  const auto seed = derive_seed(plan.seed, 0, plan.purpose);
  const Trial t = simulate_trial(plan.scenario, d, noise_var_for_snr(p_ref, s.snr_db), seed,
                                 static_cast<std::uint64_t>(i), "noise");
  s.targets = t.targets;
  const CsiStack stack = estimate_csi(t.rx, t.pilots);
  const CMatrix td = ifft_rows(stack);
  const int peaks = plan.kind == DatasetKind::classifier ? 1 : q;
  const PeakDetection det = detect_peaks(td, peaks);
  s.snapshot = snapshot_at_peak(td, det.bins.front(), t.cfg).snapshot;
  if (plan.kind == DatasetKind::classifier) {
    s.label = RVector::Constant(1, q);
  } else {
    std::vector<std::pair<double, double>> pairs;
    for (const auto& x : t.targets) pairs.emplace_back(x.aoa_rad, x.aod_rad);
    pairs = sorted_pairs(std::move(pairs));
    s.label.resize(2 * q);
    for (int k = 0; k < q; ++k) {
      s.label(k) = pairs[static_cast<std::size_t>(k)].first;
      s.label(q + k) = pairs[static_cast<std::size_t>(k)].second;
    }
  }
  return s;
}

inline Dataset generate_dataset(const DatasetPlan& plan) {
  require(plan.samples >= 1 && !plan.snr_list_db.empty(), Errc::config_error, "dataset needs samples and SNRs");
  const auto power = dataset_power(plan);
  Dataset d{CMatrix(plan.scenario.n_rx * plan.scenario.n_tx, plan.samples), RMatrix(plan.n_out(), plan.samples), {}};
  d.snr_db.resize(static_cast<std::size_t>(plan.samples));
  parallel_for(static_cast<std::size_t>(plan.samples), plan.threads, [&](std::size_t i) {
    const DatasetSample s = dataset_sample(plan, power, static_cast<int>(i));
    d.inputs.col(static_cast<Eigen::Index>(i)) = vec(s.snapshot);
    d.labels.col(static_cast<Eigen::Index>(i)) = s.label;
    d.snr_db[i] = s.snr_db;
  });
  return d;
}

inline nlohmann::json dataset_sidecar(const DatasetPlan& plan) {
  std::vector<int> per_snr(plan.snr_list_db.size(), 0);
  std::vector<int> per_class(static_cast<std::size_t>(plan.classes()), 0);
  for (int i = 0; i < plan.samples; ++i) {
    ++per_snr[static_cast<std::size_t>(i) % plan.snr_list_db.size()];
    if (plan.kind == DatasetKind::classifier) ++per_class[static_cast<std::size_t>(plan.targets_of(i) - 1)];
  }
  return {{"config_hash", config_hash(plan.scenario)},
          {"seed", plan.seed},
          {"purpose", plan.purpose},
          {"kind", plan.kind == DatasetKind::classifier ? "classifier" : "regression"},
          {"samples", plan.samples},
          {"snr_list_db", plan.snr_list_db},
          {"samples_per_snr", per_snr},
          {"samples_per_class", per_class},
          {"scenario", scenario_to_json(plan.scenario)}};
}

inline void save_dataset_with_sidecar(const std::string& path, const Dataset& d, const DatasetPlan& plan) {
  save_dataset(path, d);
  std::ofstream os(path + ".json");
  require(os.good(), Errc::io_error, "cannot write dataset sidecar");
  os << dataset_sidecar(plan).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Network evaluation
// ---------------------------------------------------------------------------

/// Test-set AoA / AoD MSE of a regression network per SNR.
inline ResultTable run_nn_test(const Network& net, const DatasetPlan& test_plan, int samples_per_snr) {
  ResultTable table;
  table.config_hash = config_hash(test_plan.scenario);
  for (double snr : test_plan.snr_list_db) {
    DatasetPlan p = test_plan;
    p.snr_list_db = {snr};
    p.samples = samples_per_snr;
    p.purpose = test_plan.purpose + "@" + format_number(snr);
    const Dataset d = generate_dataset(p);
    const SortedMse m = sorted_mse_loss(forward(net, d.inputs), d.labels);
    table.add(snr, "mse_aoa", m.aoa, 0.0, static_cast<std::size_t>(samples_per_snr));
    table.add(snr, "mse_aod", m.aod, 0.0, static_cast<std::size_t>(samples_per_snr));
  }
  return table;
}

/// Accuracy per SNR with binomial standard error, `per_class` samples of each class.
inline ResultTable run_classifier_eval(const Network& net, const DatasetPlan& test_plan, int per_class) {
  require(net.spec.head == HeadKind::classifier, Errc::invalid_argument, "model has no classifier head");
  ResultTable table;
  table.config_hash = config_hash(test_plan.scenario);
  for (double snr : test_plan.snr_list_db) {
    DatasetPlan p = test_plan;
    p.kind = DatasetKind::classifier;
    p.snr_list_db = {snr};
    p.samples = per_class * NetworkSpec::kClasses;
    p.purpose = test_plan.purpose + "@" + format_number(snr);
    const Dataset d = generate_dataset(p);
    const RMatrix prob = forward(net, d.inputs);
    double hits = 0.0;
    for (Eigen::Index j = 0; j < d.size(); ++j)
      if (classify_from_probabilities(prob.col(j)) == std::lround(d.labels(0, j))) hits += 1.0;
    const double n = static_cast<double>(d.size());
    const double acc = hits / n;
    table.add(snr, "accuracy", acc, std::sqrt(acc * (1.0 - acc) / n), static_cast<std::size_t>(d.size()));
  }
  return table;
}

/// Holds out every `k`-th sample for validation.
inline std::pair<Dataset, Dataset> split_validation(const Dataset& d, int k) {
  std::vector<Eigen::Index> tr, va;
  for (Eigen::Index i = 0; i < d.size(); ++i) (i % k == k - 1 ? va : tr).push_back(i);
  return {d.subset(tr), d.subset(va)};
}

/// Desk-scale schedules: lr 1e-3 with halvings at 2/3 and 5/6 of the run.
inline TrainConfig desk_regression_schedule(int epochs = 100, std::uint64_t seed = 1) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.base_lr = 1e-3;
  tc.lr_drops = TrainConfig::proportional_drops(epochs);
  tc.batch_size = 32;
  tc.seed = seed;
  return tc;
}

inline TrainConfig desk_classifier_schedule(int epochs = 150, std::uint64_t seed = 1) {
  TrainConfig tc = desk_regression_schedule(epochs, seed);
  tc.batch_size = 64;
  tc.train_snrs_db = {-10, -5, 5, 15};
  return tc;
}

// ---------------------------------------------------------------------------
// 2D estimator vs grid MLE
// ---------------------------------------------------------------------------

struct MleComparison {
  double agree_fraction = 0.0;
  Welford mse_2d_aoa, mse_mle_aoa, mse_2d_aod, mse_mle_aod;
  int trials = 0;
};

/// Single target; MLE on the 1-degree grid with delay and gain fixed to truth.
inline MleComparison mle_compare(const ScenarioConfig& base, double snr_db, int trials, std::uint64_t seed,
                                 int threads, const GridSpec& grid_template = GridSpec::one_degree()) {
  DrawSpec draw;
  const double p_ref = calibrate_signal_power(base, draw, seed);
  const double nv = noise_var_for_snr(p_ref, snr_db);
  const double step = std::abs(grid_template.theta_rad.at(1) - grid_template.theta_rad.at(0));
  std::vector<std::array<double, 5>> res(static_cast<std::size_t>(trials));
  parallel_for(static_cast<std::size_t>(trials), threads, [&](std::size_t i) {
    const Trial t = simulate_trial(base, draw, nv, seed, i, snr_tag("noise", snr_db));
    const auto e2 = sense(t.rx, t.pilots, t.cfg, 1, 1).all_targets().front();
    GridSpec g = grid_template;
    g.known_delays = std::vector<double>{t.targets[0].delay_s};
    g.known_gains = std::vector<cd>{composite_gain(t.cfg, t.targets[0])};
    const auto em = mle_grid_search(t.rx, t.pilots, t.cfg, g, 1).estimates[0];
    const bool agree =
        std::abs(e2.aoa_rad - em.aoa_rad) <= step + 1e-12 && std::abs(e2.aod_rad - em.aod_rad) <= step + 1e-12;
    const auto& tr = t.targets[0];
    res[i] = {agree ? 1.0 : 0.0, std::pow(e2.aoa_rad - tr.aoa_rad, 2), std::pow(em.aoa_rad - tr.aoa_rad, 2),
              std::pow(e2.aod_rad - tr.aod_rad, 2), std::pow(em.aod_rad - tr.aod_rad, 2)};
  });
  MleComparison c;
  c.trials = trials;
  double agree = 0.0;
  for (const auto& r : res) {
    agree += r[0];
    c.mse_2d_aoa.add(r[1]);
    c.mse_mle_aoa.add(r[2]);
    c.mse_2d_aod.add(r[3]);
    c.mse_mle_aod.add(r[4]);
  }
  c.agree_fraction = agree / trials;
  return c;
}

}  // namespace bistatic
