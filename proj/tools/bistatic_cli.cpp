// Command-line front end for simulations, training, evaluations and complexity reports.
// Exit codes: 0 ok, 2 configuration / IO error, 3 numerical failure.

#include <bistatic/bistatic.hpp>

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace bistatic;

namespace {

struct GlobalOptions {
  std::string config;
  std::uint64_t seed = 1;
  std::string out = "out";
  int trials = 0;  // 0 keeps the per-command default
  int threads = default_threads();
};

nlohmann::json load_config(const GlobalOptions& g) {
  if (g.config.empty()) return nlohmann::json::object();
  return load_json_file(g.config);
}

ExperimentPlan make_plan(const GlobalOptions& g, ExperimentKind kind) {
  ExperimentPlan p;
  p.kind = kind;
  p = plan_from_json(load_config(g), p);
  p.seed = g.seed;
  p.threads = g.threads;
  p.out_path = g.out;
  if (g.trials > 0) p.trials = g.trials;
  return p;
}

fs::path out_file(const GlobalOptions& g, const std::string& name) {
  fs::create_directories(g.out);
  return fs::path(g.out) / name;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  require(os.good(), Errc::io_error, "cannot write '" + path.string() + "'");
  os << text;
}

int cmd_simulate(const GlobalOptions& g, int peaks, int per_peak) {
  const auto j = load_config(g);
  ScenarioConfig cfg = scenario_from_json(j.contains("scenario") ? j.at("scenario") : j);
  require(j.contains("targets"), Errc::config_error, "simulate needs a 'targets' array in the config");
  const auto targets = targets_from_json(j.at("targets"));
  cfg.rng_seed = g.seed;
  const ComplexTensor pilots = generate_pilots(cfg);
  const ComplexTensor rx = simulate_rx(cfg, targets, pilots);
  const CsiStack stack = estimate_csi(rx, pilots);
  save_csi_stack(out_file(g, "csi.bin").string(), stack);

  if (peaks <= 0) peaks = static_cast<int>(targets.size());
  const SensingResult res = sense(rx, pilots, cfg, peaks, per_peak);
  std::ostringstream csv;
  csv << "# config_hash: " << config_hash(cfg) << '\n' << kEstimateCsvHeader << '\n';
  for (const auto& p : res.peaks) write_estimate_rows(csv, 0, p.peak.bin_index, p.estimates);
  write_text(out_file(g, "estimates.csv"), csv.str());
  std::cout << csv.str();
  if (res.degraded_detection) std::cerr << "warning: fewer local maxima than requested peaks\n";
  return 0;
}

int cmd_dataset(const GlobalOptions& g, const std::string& kind, int samples, const std::string& purpose) {
  const auto j = load_config(g);
  const ScenarioConfig cfg = scenario_from_json(j.contains("scenario") ? j.at("scenario") : j);
  DatasetPlan p = kind == "classifier" ? DatasetPlan::classifier_defaults(cfg) : DatasetPlan::regression_defaults(cfg);
  require(kind == "classifier" || kind == "regression", Errc::config_error, "kind must be regression or classifier");
  if (j.contains("snr_list_db")) p.snr_list_db = j.at("snr_list_db").get<std::vector<double>>();
  if (samples > 0) p.samples = samples;
  p.seed = g.seed;
  p.threads = g.threads;
  p.purpose = purpose;
  const Dataset d = generate_dataset(p);
  const auto path = out_file(g, kind + "_" + purpose + ".dset");
  save_dataset_with_sidecar(path.string(), d, p);
  std::cout << "wrote " << d.size() << " samples to " << path.string() << '\n';
  return 0;
}

int cmd_train(const GlobalOptions& g, const std::string& dataset_path, const std::string& kind, int epochs, double lr,
              int batch, const std::string& transform) {
  const auto j = load_config(g);
  const ScenarioConfig cfg = scenario_from_json(j.contains("scenario") ? j.at("scenario") : j);
  const Dataset d = load_dataset(dataset_path);
  require(d.inputs.rows() == cfg.n_rx * cfg.n_tx, Errc::config_error, "dataset does not match the scenario arrays");
  InputTransform t = kind == "classifier" ? InputTransform::spectrum : InputTransform::phase_norm;
  if (transform == "none") t = InputTransform::none;
  if (transform == "phase_norm") t = InputTransform::phase_norm;
  if (transform == "gram") t = InputTransform::gram;
  if (transform == "spectrum") t = InputTransform::spectrum;
  const NetworkSpec spec = kind == "classifier"
                               ? NetworkSpec::classifier(cfg.n_rx, cfg.n_tx, t)
                               : NetworkSpec::regression(cfg.n_rx, cfg.n_tx, static_cast<int>(d.labels.rows() / 2), t);
  TrainConfig tc = kind == "classifier" ? desk_classifier_schedule(epochs, g.seed) : desk_regression_schedule(epochs, g.seed);
  if (lr > 0.0) tc.base_lr = lr;
  if (batch > 0) tc.batch_size = batch;
  Network net = make_network(spec, g.seed);
  const auto [tr, va] = split_validation(d, 10);
  const TrainHistory h = train(net, tr, &va, tc);

  save_network(out_file(g, kind + ".cnn1").string(), net);
  ResultTable t_hist;
  t_hist.variable_name = "epoch";
  t_hist.config_hash = config_hash(cfg);
  for (std::size_t e = 0; e < h.train_loss.size(); ++e) {
    t_hist.add(static_cast<double>(e), "train_loss", h.train_loss[e], 0.0, static_cast<std::size_t>(tr.size()));
    t_hist.add(static_cast<double>(e), "val_loss", h.val_loss[e], 0.0, static_cast<std::size_t>(va.size()));
  }
  emit_plot_data(t_hist, out_file(g, kind + "_loss"));
  std::cout << "final train " << h.train_loss.back() << " val " << h.val_loss.back() << '\n';
  return 0;
}

int cmd_eval_mse(const GlobalOptions& g, const std::string& estimator, const std::string& model) {
  ExperimentPlan p = make_plan(g, ExperimentKind::mse_sweep);
  if (!estimator.empty()) p.estimator = estimator == "nn" ? EstimatorKind::nn : EstimatorKind::two_d;
  if (!model.empty()) p.model_path = model;
  std::optional<Network> net;
  if (p.estimator == EstimatorKind::nn) net = load_network(p.model_path);
  const ResultTable t = run_mse_sweep(p, net ? &*net : nullptr);
  emit_plot_data(t, out_file(g, "mse"));
  t.write_csv(std::cout);
  return 0;
}

int cmd_eval_classify(const GlobalOptions& g, const std::string& model, int per_class) {
  const auto j = load_config(g);
  const ScenarioConfig cfg = scenario_from_json(j.contains("scenario") ? j.at("scenario") : j);
  const Network net = load_network(model);
  DatasetPlan p = DatasetPlan::classifier_defaults(cfg);
  p.snr_list_db = j.contains("snr_list_db") ? j.at("snr_list_db").get<std::vector<double>>()
                                            : std::vector<double>{-5, 0, 5, 10, 15, 20};
  p.seed = g.seed;
  p.threads = g.threads;
  p.purpose = "test";
  if (g.trials > 0) per_class = g.trials;
  const ResultTable t = run_classifier_eval(net, p, per_class);
  emit_plot_data(t, out_file(g, "classify"));
  t.write_csv(std::cout);
  return 0;
}

int cmd_crb(const GlobalOptions& g) {
  const ExperimentPlan p = make_plan(g, ExperimentKind::crb_sweep);
  const auto rows = run_crb_sweep(p);
  std::ostringstream os;
  write_crb_csv(os, config_hash(p.scenario), rows);
  write_text(out_file(g, "crb.csv"), os.str());
  emit_plot_data(crb_rows_to_table(rows, config_hash(p.scenario)), out_file(g, "crb_plot"));
  std::cout << os.str();
  return 0;
}

int cmd_beta_sweep(const GlobalOptions& g, double step) {
  const auto j = load_config(g);
  const ScenarioConfig cfg = scenario_from_json(j.contains("scenario") ? j.at("scenario") : j);
  BetaSweepSpec spec;
  for (double b = 0.1; b <= 5.6 + 1e-9; b += step) spec.betas.push_back(b);
  if (j.contains("snr_list_db")) spec.snr_db = j.at("snr_list_db").get<std::vector<double>>();
  const auto rows = run_beta_sweep(cfg, spec, g.seed);
  std::ostringstream os;
  write_crb_csv(os, config_hash(cfg), rows);
  write_text(out_file(g, "beta_sweep.csv"), os.str());
  emit_plot_data(crb_rows_to_table(rows, config_hash(cfg), "beta_t"), out_file(g, "beta_sweep_plot"));
  for (double s : spec.snr_db)
    std::cout << "SNR " << s << " dB: CRB(theta) <= 1e-5 rad^2 from beta_t = " << beta_threshold(rows, s, 1e-5) << '\n';
  return 0;
}

int cmd_complexity(const GlobalOptions& g, int q, int m_tx, int m_rx, bool table_literal) {
  const auto j = load_config(g);
  const ScenarioConfig cfg = scenario_from_json(j.contains("scenario") ? j.at("scenario") : j);
  PencilConfig pc = default_pencil(cfg.n_tx, cfg.n_rx, q);
  if (m_tx > 0) pc.m_tx = m_tx;
  if (m_rx > 0) pc.m_rx = m_rx;
  const auto variant = table_literal ? ChannelEstimateAdds::table_literal : ChannelEstimateAdds::prose;
  const OpCount c = count_2d(cfg, pc, q, true, variant);
  const OpCount sensing = count_2d(cfg, pc, q, false);
  const OpCount mlp = count_mlp(cfg, q);

  std::ostringstream md, csv;
  write_ledger_markdown(md, c, "Pencil estimator incl. front end (M_t=" + std::to_string(pc.m_tx) +
                                   ", M_r=" + std::to_string(pc.m_rx) + ", q=" + std::to_string(q) + ")");
  write_ledger_markdown(md, mlp, "Complex MLP");
  csv << "table,block,mults,adds\n";
  write_ledger_csv(csv, c, "pencil");
  write_ledger_csv(csv, mlp, "mlp");
  md << "Sensing-only totals: T_mul = " << sensing.mults() << ", T_add = " << sensing.adds() << "\n\n";
  md << "| N_t | q | log10 S |\n|---:|---:|---:|\n";
  for (int nt : {2, 4, 8, 16, 32})
    for (int qq : {1, 2}) {
      ScenarioConfig k = cfg;
      k.n_tx = nt;
      k.n_symbols = std::max(k.n_symbols, nt);
      md << "| " << nt << " | " << qq << " | "
         << speedup_vs_mle(cost_grid(180, 180, qq), k, default_pencil(nt, k.n_rx, qq), qq).log10 << " |\n";
    }
  md << "\n| N_r | rule | M_t | M_r | mult ratio (2D / MLP), N_t=8, q=2 |\n|---:|---|---:|---:|---:|\n";
  for (int nr : {8, 16}) {
    ScenarioConfig k = cfg;
    k.n_tx = 8;
    k.n_rx = nr;
    k.n_symbols = std::max(k.n_symbols, 8);
    for (const auto& [name, rule] : {std::pair{"floor(N/2)", &half_pencil}, std::pair{"ceil((N+1)/2)", &default_pencil}}) {
      const PencilConfig r = rule(8, nr, 2);
      md << "| " << nr << " | " << name << " | " << r.m_tx << " | " << r.m_rx << " | " << mult_ratio(k, r, 2) << " |\n";
    }
  }
  write_text(out_file(g, "complexity.md"), md.str());
  write_text(out_file(g, "complexity.csv"), csv.str());
  std::cout << md.str();
  return 0;
}

int cmd_mle_compare(const GlobalOptions& g, double snr) {
  const auto j = load_config(g);
  const ScenarioConfig cfg = scenario_from_json(j.contains("scenario") ? j.at("scenario") : j);
  const int trials = g.trials > 0 ? g.trials : 200;
  const MleComparison c = mle_compare(cfg, snr, trials, g.seed, g.threads);
  ResultTable t;
  t.config_hash = config_hash(cfg);
  t.add(snr, "agree_fraction", c.agree_fraction, std::sqrt(c.agree_fraction * (1 - c.agree_fraction) / trials),
        static_cast<std::size_t>(trials));
  t.add(snr, "mse_aoa_2d", c.mse_2d_aoa);
  t.add(snr, "mse_aoa_mle", c.mse_mle_aoa);
  t.add(snr, "mse_aod_2d", c.mse_2d_aod);
  t.add(snr, "mse_aod_mle", c.mse_mle_aod);
  emit_plot_data(t, out_file(g, "mle_compare"));
  t.write_csv(std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bistatic AoA/AoD estimation toolkit"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config, "Scenario / plan JSON file");
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--trials", g.trials, "Monte Carlo trials per point");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);

  int peaks = 0, per_peak = 1;
  auto* sim = app.add_subcommand("simulate", "Simulate one scene, export CSI and 2D estimates");
  sim->add_option("--peaks", peaks, "Delay peaks to process (default: number of targets)");
  sim->add_option("--targets-per-peak", per_peak, "Pencil rank per peak");

  std::string ds_kind = "regression", ds_purpose = "train";
  int ds_samples = 0;
  auto* ds = app.add_subcommand("dataset", "Generate a training dataset");
  ds->add_option("--kind", ds_kind, "regression | classifier");
  ds->add_option("--samples", ds_samples, "Number of samples");
  ds->add_option("--purpose", ds_purpose, "Stream tag, e.g. train or test");

  std::string tr_data, tr_kind = "regression", tr_transform;
  int tr_epochs = 100, tr_batch = 0;
  double tr_lr = 0.0;
  auto* trn = app.add_subcommand("train", "Train a complex-valued network");
  trn->add_option("--dataset", tr_data, "Dataset file")->required();
  trn->add_option("--kind", tr_kind, "regression | classifier");
  trn->add_option("--epochs", tr_epochs, "Epochs");
  trn->add_option("--lr", tr_lr, "Base learning rate");
  trn->add_option("--batch", tr_batch, "Batch size");
  trn->add_option("--transform", tr_transform, "none | phase_norm | gram | spectrum");

  std::string em_estimator, em_model;
  auto* em = app.add_subcommand("eval-mse", "AoA/AoD MSE vs SNR with CRB reference");
  em->add_option("--estimator", em_estimator, "2d | nn");
  em->add_option("--model", em_model, "Model file for the nn estimator");

  std::string ec_model;
  int ec_per_class = 200;
  auto* ec = app.add_subcommand("eval-classify", "Target-count accuracy vs SNR");
  ec->add_option("--model", ec_model, "Classifier model file")->required();
  ec->add_option("--per-class", ec_per_class, "Test samples per class and SNR");

  app.add_subcommand("crb", "CRB of the configured targets vs SNR");

  double bs_step = 0.05;
  auto* bs = app.add_subcommand("beta-sweep", "CRB(theta) vs tx beamwidth");
  bs->add_option("--step", bs_step, "Beamwidth step");

  int cx_q = 1, cx_mt = 0, cx_mr = 0;
  bool cx_table = false;
  auto* cx = app.add_subcommand("complexity", "Operation-count ledger and MLE speedup");
  cx->add_option("--q", cx_q, "Number of targets");
  cx->add_option("--m-tx", cx_mt, "Transmit sub-array size");
  cx->add_option("--m-rx", cx_mr, "Receive sub-array size");
  cx->add_flag("--table-literal", cx_table, "Use the table form of the channel-estimation additions");

  double mc_snr = 20.0;
  auto* mc = app.add_subcommand("mle-compare", "2D estimator vs grid MLE agreement");
  mc->add_option("--snr", mc_snr, "SNR in dB");

  app.fallthrough();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*sim) return cmd_simulate(g, peaks, per_peak);
    if (*ds) return cmd_dataset(g, ds_kind, ds_samples, ds_purpose);
    if (*trn) return cmd_train(g, tr_data, tr_kind, tr_epochs, tr_lr, tr_batch, tr_transform);
    if (*em) return cmd_eval_mse(g, em_estimator, em_model);
    if (*ec) return cmd_eval_classify(g, ec_model, ec_per_class);
    if (app.got_subcommand("crb")) return cmd_crb(g);
    if (*bs) return cmd_beta_sweep(g, bs_step);
    if (*cx) return cmd_complexity(g, cx_q, cx_mt, cx_mr, cx_table);
    if (*mc) return cmd_mle_compare(g, mc_snr);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return is_numerical(e.code()) ? 3 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
