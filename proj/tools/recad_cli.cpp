#include <cmath>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "recad/baselines.hpp"
#include "recad/detector.hpp"
#include "recad/errors.hpp"
#include "recad/experiment.hpp"
#include "recad/gvar.hpp"
#include "recad/metrics.hpp"
#include "recad/recourse.hpp"
#include "recad/series.hpp"
#include "recad/synthgen.hpp"

namespace fs = std::filesystem;
using namespace recad;

namespace {

nlohmann::json episodes_to_json(const std::vector<Episode>& episodes) {
  nlohmann::json j{{"schema", 1}, {"kind", "episodes"}, {"episodes", nlohmann::json::array()}};
  for (const auto& e : episodes) {
    nlohmann::json item{{"start", e.start}, {"end", e.end}};
    item["event"] = e.event ? nlohmann::json(*e.event) : nlohmann::json(nullptr);
    j["episodes"].push_back(item);
  }
  return j;
}

std::vector<Episode> episodes_from_json(const nlohmann::json& j) {
  if (j.value("schema", 0) != 1 || j.value("kind", "") != "episodes") throw FormatError("not an episode index");
  std::vector<Episode> out;
  for (const auto& item : j.at("episodes")) {
    Episode e{item.at("start").get<std::size_t>(), item.at("end").get<std::size_t>(), std::nullopt};
    if (!item.at("event").is_null()) e.event = item.at("event").get<std::size_t>();
    out.push_back(e);
  }
  return out;
}

std::vector<Episode> leading_share(const std::vector<Episode>& eps, double fraction, bool leading) {
  const auto n = static_cast<std::ptrdiff_t>(fraction * static_cast<double>(eps.size()));
  return leading ? std::vector<Episode>(eps.begin(), eps.begin() + n) : std::vector<Episode>(eps.begin() + n, eps.end());
}

std::vector<std::string> exogenous_header(const MultivariateSeries& s) {
  std::vector<std::string> h;
  for (const auto& n : s.dim_names()) h.push_back("u_" + n);
  return h;
}

struct GenerateArgs {
  std::string dataset = "linear";
  std::string anomaly = "external_point";
  std::uint64_t seed = 1;
  std::size_t train_steps = 20000;
  std::size_t test_steps = 50000;
  double rate = 0.02;
  double magnitude_min = 3.0;
  double magnitude_max = 5.0;
  std::size_t seq_len_min = 3;
  std::size_t seq_len_max = 5;
  double noise_std = 0.4;
  LotkaVolterraParams lv = LotkaVolterraParams::with_default_adjacency(10);
  std::string out = "data";
};

void run_generate(const GenerateArgs& a) {
  const std::size_t total = a.train_steps + a.test_steps;
  GeneratedDataset full = [&] {
    if (dataset_kind_from_string(a.dataset) == DatasetKind::Linear) {
      auto p = LinearSystemParams::sample(a.seed);
      p.noise_std = a.noise_std;
      return gen_linear(p, total);
    }
    auto p = LotkaVolterraParams::with_default_adjacency(a.lv.p);
    p.alpha = a.lv.alpha;
    p.beta = a.lv.beta;
    p.eta = a.lv.eta;
    p.delta = a.lv.delta;
    p.rho = a.lv.rho;
    p.dt = a.lv.dt;
    p.subsample = a.lv.subsample;
    p.obs_noise_std = a.lv.obs_noise_std;
    p.seed = a.seed;
    return gen_lotka_volterra(p, total);
  }();
  auto [train, test] = split_dataset(full, a.train_steps);
  AnomalySpec spec;
  spec.kind = anomaly_kind_from_string(a.anomaly);
  spec.rate = a.rate;
  spec.magnitude_min = a.magnitude_min;
  spec.magnitude_max = a.magnitude_max;
  spec.seq_len_min = a.seq_len_min;
  spec.seq_len_max = a.seq_len_max;
  spec.reference_std = fit_standardizer(train.series).std;
  spec.seed = derive_seed(a.seed, 11);
  const GeneratedDataset injected = inject_anomalies(test, spec);
  const fs::path out(a.out);
  fs::create_directories(out);
  write_series_csv(out / "train.csv", train.series.with_labels(std::vector<bool>(train.series.steps(), false)));
  write_matrix_csv(out / "train_exogenous.csv", train.exogenous, exogenous_header(train.series));
  write_series_csv(out / "test.csv", injected.series);
  write_matrix_csv(out / "test_exogenous.csv", injected.exogenous, exogenous_header(injected.series));
  write_json_file(out / "events.json", events_to_json(injected));
  std::cout << "wrote " << train.series.steps() << " train and " << injected.series.steps() << " test steps ("
            << injected.injected.size() << " events) to " << out << "\n";
}

struct GvarArgs {
  std::string train;
  std::string out = "gvar.json";
  std::string stats = "stats.json";
  std::string loss_csv = "gvar_loss.csv";
  GvarTrainConfig cfg;
  std::size_t window = 5;
  double holdout = 0.1;
};

Matrix fit_rows(const Matrix& z, double holdout) {
  const auto n = static_cast<Eigen::Index>(std::llround(holdout * static_cast<double>(z.rows())));
  return z.topRows(z.rows() - n);
}

Matrix holdout_rows(const Matrix& z, double holdout) {
  return z.bottomRows(static_cast<Eigen::Index>(std::llround(holdout * static_cast<double>(z.rows()))));
}

void run_train_gvar(GvarArgs a) {
  const MultivariateSeries train = read_series_csv(a.train);
  const StandardizationStats stats = fit_standardizer(train);
  const Matrix z = apply_standardizer(train.values(), stats);
  a.cfg.order = a.window - 1;
  GvarTrainReport report;
  const GvarModel model = train_gvar(MultivariateSeries(fit_rows(z, a.holdout)), a.cfg, &report);
  write_json_file(a.out, to_json(model));
  write_json_file(a.stats, to_json(stats));
  Matrix curve(static_cast<Eigen::Index>(report.epochs.size()), 4);
  for (std::size_t e = 0; e < report.epochs.size(); ++e) {
    const auto& t = report.epochs[e];
    curve.row(static_cast<Eigen::Index>(e)) << t.total, t.prediction, t.sparsity, t.smoothness;
  }
  write_matrix_csv(a.loss_csv, curve, {"total", "prediction", "sparsity", "smoothness"});
  std::cout << "final loss " << (report.epochs.empty() ? 0.0 : report.epochs.back().total) << "\n";
}

struct DetectorArgs {
  std::string train;
  std::string gvar;
  std::string scorer = "residual";
  std::size_t window = 5;
  double quantile = 0.99;
  double holdout = 0.1;
  AutoencoderConfig ae;
  std::string out = "detector.json";
  std::string manifest = "detector_manifest.json";
};

void run_train_detector(const DetectorArgs& a) {
  const MultivariateSeries train = read_series_csv(a.train);
  const StandardizationStats stats = fit_standardizer(train);
  const Matrix z = apply_standardizer(train.values(), stats);
  AnomalyDetector det;
  if (scorer_kind_from_string(a.scorer) == ScorerKind::Residual) {
    if (a.gvar.empty()) throw InvalidArgument("the residual scorer needs --gvar");
    det = AnomalyDetector::residual(std::make_shared<const GvarModel>(gvar_from_json(read_json_file(a.gvar))), stats,
                                    a.window);
  } else {
    det = AnomalyDetector::autoencoder(fit_rows(z, a.holdout), stats, a.window, a.ae);
  }
  det.calibrate(holdout_rows(z, a.holdout), a.quantile);
  write_json_file(a.out, to_json(det));
  write_json_file(a.manifest, {{"schema", 1},
                               {"scorer", to_string(det.kind())},
                               {"window", det.window()},
                               {"threshold", det.threshold()},
                               {"quantile", det.quantile()},
                               {"calibration_fraction", a.holdout}});
  std::cout << "threshold " << det.threshold() << " at q=" << det.quantile() << "\n";
}

struct DetectArgs {
  std::string detector;
  std::string series;
  std::string out = "detections.csv";
  std::string episodes = "episodes.json";
  std::string events;
  bool best_f1 = false;
};

void run_detect(const DetectArgs& a) {
  const AnomalyDetector det = detector_from_json(read_json_file(a.detector));
  const MultivariateSeries series = read_series_csv(a.series);
  const Detection d = det.detect(series);
  write_detection_csv(a.out, d);
  auto episodes = find_episodes(d.flagged);
  if (!a.events.empty()) {
    std::vector<InjectedEvent> events;
    for (const auto& e : read_json_file(a.events).at("events")) {
      InjectedEvent ev;
      ev.start = e.at("start").get<std::size_t>();
      ev.length = e.at("length").get<std::size_t>();
      events.push_back(ev);
    }
    attach_events(episodes, events);
  }
  write_json_file(a.episodes, episodes_to_json(episodes));
  std::cout << episodes.size() << " episodes\n";
  if (series.has_labels()) {
    const DetectionReport r = eval_detection(d, series.labels());
    std::cout << "precision " << r.precision << " recall " << r.recall << " f1 " << r.f1 << " auc_pr " << r.auc_pr
              << " auc_roc " << r.auc_roc << "\n";
    if (a.best_f1) {
      // Oracle threshold chosen on the labels; reported only, never written back.
      Detection oracle = d;
      const double tau = best_f1_threshold(d, series.labels());
      for (std::size_t t = 0; t < oracle.flagged.size(); ++t) oracle.flagged[t] = oracle.scored[t] && oracle.scores[t] > tau;
      std::cout << "best_f1_threshold " << tau << " f1 " << eval_detection(oracle, series.labels()).f1 << "\n";
    }
  } else if (a.best_f1) {
    throw InvalidArgument("--best-f1 needs a labeled series");
  }
}

struct RecourseArgs {
  std::string gvar;
  std::string detector;
  std::string series;
  std::string episodes;
  std::string normal;
  std::string model = "recad";
  std::string variant = "full";
  RecourseTrainConfig cfg;
  PredictorTrainConfig baseline;
  double train_fraction = 0.5;
  double holdout = 0.1;
  std::string out = "recourse.json";
};

struct Frozen {
  std::shared_ptr<const GvarModel> gvar;
  AnomalyDetector detector;
  Matrix z;
  std::vector<std::string> names;
  std::vector<Episode> episodes;
};

Frozen load_frozen(const std::string& gvar, const std::string& detector, const std::string& series,
                   const std::string& episodes) {
  Frozen f;
  f.detector = detector_from_json(read_json_file(detector));
  f.gvar = gvar.empty() ? f.detector.shared_gvar()
                        : std::make_shared<const GvarModel>(gvar_from_json(read_json_file(gvar)));
  if (!f.gvar) throw InvalidArgument("a GVAR checkpoint is required (--gvar)");
  const MultivariateSeries raw = read_series_csv(series);
  f.z = apply_standardizer(raw.values(), f.detector.stats());
  f.names = raw.dim_names();
  f.episodes = episodes_from_json(read_json_file(episodes));
  return f;
}

void run_train_recourse(RecourseArgs a) {
  const Frozen f = load_frozen(a.gvar, a.detector, a.series, a.episodes);
  if (a.model == "recad") {
    a.cfg.variant = recourse_variant_from_string(a.variant);
    const auto train_eps = leading_share(f.episodes, a.train_fraction, true);
    RecourseTrainReport report;
    const RecourseFunction h = train_recourse(*f.gvar, f.detector, f.z, train_eps, a.cfg, &report);
    write_json_file(a.out, to_json(h));
    std::cout << "trained on " << train_eps.size() << " episodes, final loss "
              << (report.epoch_loss.empty() ? 0.0 : report.epoch_loss.back()) << "\n";
    return;
  }
  const PredictorKind kind = predictor_kind_from_string(a.model);
  Matrix z_normal;
  if (kind != PredictorKind::Gvar) {
    if (a.normal.empty()) throw InvalidArgument("baselines need normal training data (--normal)");
    z_normal = fit_rows(apply_standardizer(read_series_csv(a.normal).values(), f.detector.stats()), a.holdout);
  } else {
    z_normal = f.z;
  }
  a.baseline.window = f.detector.window();
  const NormalValuePredictor p = train_predictor(kind, z_normal, a.baseline, f.gvar);
  write_json_file(a.out, to_json(p));
  std::cout << "trained " << a.model << " baseline\n";
}

struct ExplainArgs {
  std::string gvar;
  std::string detector;
  std::string series;
  std::string episodes;
  std::string model;
  std::vector<double> cost;
  double eval_fraction_start = 0.0;
  WalkConfig walk;
  std::string out_dir = "explanations";
};

void run_explain(const ExplainArgs& a) {
  const Frozen f = load_frozen(a.gvar, a.detector, a.series, a.episodes);
  const nlohmann::json ckpt = read_json_file(a.model);
  std::unique_ptr<RecourseFunction> h;
  std::unique_ptr<NormalValuePredictor> pred;
  ActionPolicy policy;
  if (ckpt.value("kind", "") == "recourse") {
    h = std::make_unique<RecourseFunction>(recourse_from_json(ckpt));
    policy = recad_policy(*h);
  } else {
    pred = std::make_unique<NormalValuePredictor>(predictor_from_json(ckpt));
    policy = baseline_policy(*pred);
  }
  const std::string tag = ckpt.value("model", "recad");
  Vector cost = a.cost.empty() ? Vector() : Eigen::Map<const Vector>(a.cost.data(), static_cast<Eigen::Index>(a.cost.size()));
  const auto eps = leading_share(f.episodes, a.eval_fraction_start, false);
  const fs::path out(a.out_dir);
  fs::create_directories(out);
  std::vector<RecourseReport> reports;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    RecourseReport r = explain(*f.gvar, f.detector, policy, f.z, eps[i], a.walk, cost);
    const std::string stem = "episode_" + std::to_string(i);
    write_matrix_csv(out / (stem + "_counterfactual.csv"), r.counterfactual, f.names);
    nlohmann::json j = to_json(r);
    j["model"] = tag;
    j["counterfactual_csv_path"] = (out / (stem + "_counterfactual.csv")).string();
    write_json_file(out / (stem + ".json"), j);
    reports.push_back(std::move(r));
  }
  if (!reports.empty()) {
    std::cout << eps.size() << " episodes: flipping_ratio " << flipping_ratio(reports) << " action_cost "
              << action_cost(reports) << " action_step " << action_step(reports) << "\n";
  }
}

void run_evaluate(const std::string& config, const std::string& out, std::size_t workers) {
  ExperimentConfig cfg = read_experiment_config(config);
  if (workers > 0) cfg.workers = workers;
  const ExperimentResult result = run_experiment(cfg);
  write_experiment(result, out);
  for (const auto& s : result.seeds)
    if (!s.ok) std::cerr << "seed " << s.seed << " failed: " << s.failure << "\n";
  for (const auto& row : summarize_models(result)) {
    std::cout << row.name << ": flipping_ratio " << row.stats.at("flipping_ratio").first << " action_cost "
              << row.stats.at("action_cost").first << " action_step " << row.stats.at("action_step").first << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual recourse for multivariate time-series anomalies"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Simulate a normal train split and an injected test split");
  g->add_option("--dataset", gen.dataset, "linear or lotka_volterra");
  g->add_option("--anomaly", gen.anomaly, "external_point, external_seq or structural_seq");
  g->add_option("--seed", gen.seed);
  g->add_option("--train-steps", gen.train_steps);
  g->add_option("--test-steps", gen.test_steps);
  g->add_option("--rate", gen.rate, "fraction of abnormal test steps");
  g->add_option("--magnitude-min", gen.magnitude_min, "in training-split std units");
  g->add_option("--magnitude-max", gen.magnitude_max);
  g->add_option("--seq-len-min", gen.seq_len_min);
  g->add_option("--seq-len-max", gen.seq_len_max);
  g->add_option("--noise-std", gen.noise_std, "Linear process noise");
  g->add_option("--species", gen.lv.p, "Lotka-Volterra species per role");
  g->add_option("--alpha", gen.lv.alpha);
  g->add_option("--beta", gen.lv.beta);
  g->add_option("--eta", gen.lv.eta);
  g->add_option("--delta", gen.lv.delta);
  g->add_option("--rho", gen.lv.rho);
  g->add_option("--dt", gen.lv.dt);
  g->add_option("--subsample", gen.lv.subsample);
  g->add_option("--obs-noise-std", gen.lv.obs_noise_std);
  g->add_option("--out", gen.out, "output directory");

  GvarArgs gv;
  auto* tg = app.add_subcommand("train-gvar", "Fit GVAR on a normal series");
  tg->add_option("--train", gv.train)->required();
  tg->add_option("--out", gv.out);
  tg->add_option("--stats", gv.stats, "standardization sidecar");
  tg->add_option("--loss-csv", gv.loss_csv);
  tg->add_option("--window", gv.window);
  tg->add_option("--holdout", gv.holdout, "trailing share kept for calibration");
  tg->add_option("--epochs", gv.cfg.epochs);
  tg->add_option("--lambda", gv.cfg.lambda_sparsity);
  tg->add_option("--gamma", gv.cfg.gamma_smooth);
  tg->add_option("--hidden", gv.cfg.hidden);
  tg->add_option("--lr", gv.cfg.learning_rate);
  tg->add_option("--seed", gv.cfg.seed);

  DetectorArgs da;
  auto* td = app.add_subcommand("train-detector", "Build and calibrate a detector");
  td->add_option("--train", da.train)->required();
  td->add_option("--gvar", da.gvar);
  td->add_option("--scorer", da.scorer, "residual or autoencoder");
  td->add_option("--window", da.window);
  td->add_option("--quantile", da.quantile);
  td->add_option("--holdout", da.holdout);
  td->add_option("--epochs", da.ae.epochs, "autoencoder epochs");
  td->add_option("--seed", da.ae.seed);
  td->add_option("--out", da.out);
  td->add_option("--manifest", da.manifest);

  DetectArgs de;
  auto* dt = app.add_subcommand("detect", "Score a series and write detections and episodes");
  dt->add_option("--detector", de.detector)->required();
  dt->add_option("--series", de.series)->required();
  dt->add_option("--events", de.events, "injected-events JSON for episode attribution");
  dt->add_option("--out", de.out);
  dt->add_option("--episodes", de.episodes);
  dt->add_flag("--best-f1", de.best_f1, "also report the label-optimal threshold");

  RecourseArgs ra;
  auto* tr = app.add_subcommand("train-recourse", "Train RecAD or a baseline");
  tr->add_option("--gvar", ra.gvar);
  tr->add_option("--detector", ra.detector)->required();
  tr->add_option("--series", ra.series)->required();
  tr->add_option("--episodes", ra.episodes)->required();
  tr->add_option("--normal", ra.normal, "normal series for baselines");
  tr->add_option("--model", ra.model, "recad, var, mlp, lstm or gvar");
  tr->add_option("--variant", ra.variant, "full, deviation_only or sequence_only");
  tr->add_option("--lambda", ra.cfg.lambda);
  tr->add_option("--lookahead", ra.cfg.lookahead);
  tr->add_option("--max-actions", ra.cfg.max_actions);
  tr->add_option("--epochs", ra.cfg.epochs);
  tr->add_option("--baseline-epochs", ra.baseline.epochs);
  tr->add_option("--lr", ra.cfg.learning_rate);
  tr->add_option("--train-fraction", ra.train_fraction, "leading share of episodes used for training");
  tr->add_option("--holdout", ra.holdout);
  tr->add_option("--seed", ra.cfg.seed);
  tr->add_option("--out", ra.out);

  ExplainArgs ea;
  auto* ex = app.add_subcommand("explain", "Write a recourse report per episode");
  ex->add_option("--gvar", ea.gvar);
  ex->add_option("--detector", ea.detector)->required();
  ex->add_option("--series", ea.series)->required();
  ex->add_option("--episodes", ea.episodes)->required();
  ex->add_option("--model", ea.model, "recourse or baseline checkpoint")->required();
  ex->add_option("--cost", ea.cost, "per-dimension cost vector")->delimiter(',');
  ex->add_option("--skip-fraction", ea.eval_fraction_start, "leading share of episodes to skip");
  ex->add_option("--lookahead", ea.walk.lookahead);
  ex->add_option("--max-actions", ea.walk.max_actions);
  ex->add_option("--lambda", ea.walk.lambda);
  ex->add_option("--out-dir", ea.out_dir);

  std::string config;
  std::string out_dir = "results";
  std::size_t workers = 0;
  auto* ev = app.add_subcommand("evaluate", "Run a multi-seed experiment from a config file");
  ev->add_option("--config", config)->required();
  ev->add_option("--out", out_dir);
  ev->add_option("--workers", workers, "parallel seeds (overrides the config)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*g) run_generate(gen);
    if (*tg) run_train_gvar(gv);
    if (*td) run_train_detector(da);
    if (*dt) run_detect(de);
    if (*tr) run_train_recourse(ra);
    if (*ex) run_explain(ea);
    if (*ev) run_evaluate(config, out_dir, workers);
  } catch (const Error& e) {
    std::cerr << "error [" << e.kind() << "]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
