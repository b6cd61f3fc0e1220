#include "recad/experiment.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <future>
#include <limits>
#include <memory>
#include <sstream>

#include "recad/baselines.hpp"
#include "recad/errors.hpp"
#include "recad/gvar.hpp"
#include "recad/metrics.hpp"
#include "recad/recourse.hpp"

namespace recad {

std::string to_string(DatasetKind kind) {
  return kind == DatasetKind::Linear ? "linear" : "lotka_volterra";
}

DatasetKind dataset_kind_from_string(const std::string& s) {
  if (s == "linear") return DatasetKind::Linear;
  if (s == "lotka_volterra" || s == "lv") return DatasetKind::LotkaVolterra;
  throw InvalidArgument("unknown dataset '" + s + "'");
}

namespace {

const std::vector<std::string> kKnownModels{"recad", "var", "mlp", "lstm", "gvar", "null"};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw FormatError("config key '" + key + "' expects a number, got '" + v + "'");
  }
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw FormatError("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
  return std::stoull(v);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw FormatError("config key '" + key + "' expects true or false, got '" + v + "'");
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string fmt_table(double x) {
  if (std::isnan(x)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

template <typename T>
std::string join(const std::vector<T>& v, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + f(v[i]);
  return out;
}

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define RECAD_DOUBLE(name)                                                  \
  Field{#name, [](const ExperimentConfig& c) { return fmt(c.name); },       \
        [](ExperimentConfig& c, const std::string& v) { c.name = parse_double(#name, v); }}
#define RECAD_SIZE(name)                                                              \
  Field{#name, [](const ExperimentConfig& c) { return std::to_string(c.name); },      \
        [](ExperimentConfig& c, const std::string& v) { c.name = parse_uint(#name, v); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      Field{"dataset", [](const ExperimentConfig& c) { return to_string(c.dataset); },
            [](ExperimentConfig& c, const std::string& v) { c.dataset = dataset_kind_from_string(v); }},
      Field{"anomaly", [](const ExperimentConfig& c) { return to_string(c.anomaly); },
            [](ExperimentConfig& c, const std::string& v) { c.anomaly = anomaly_kind_from_string(v); }},
      Field{"seeds",
            [](const ExperimentConfig& c) {
              return join<std::uint64_t>(c.seeds, [](const std::uint64_t& s) { return std::to_string(s); });
            },
            [](ExperimentConfig& c, const std::string& v) {
              c.seeds.clear();
              for (const auto& s : split_list(v)) c.seeds.push_back(parse_uint("seeds", s));
            }},
      RECAD_SIZE(train_steps),
      RECAD_SIZE(test_steps),
      RECAD_SIZE(window),
      RECAD_DOUBLE(linear_noise_std),
      RECAD_SIZE(lv_species),
      RECAD_DOUBLE(lv_alpha),
      RECAD_DOUBLE(lv_beta),
      RECAD_DOUBLE(lv_eta),
      RECAD_DOUBLE(lv_delta),
      RECAD_DOUBLE(lv_rho),
      RECAD_DOUBLE(lv_dt),
      RECAD_SIZE(lv_subsample),
      RECAD_DOUBLE(lv_obs_noise_std),
      RECAD_DOUBLE(anomaly_rate),
      RECAD_DOUBLE(magnitude_min),
      RECAD_DOUBLE(magnitude_max),
      RECAD_SIZE(seq_len_min),
      RECAD_SIZE(seq_len_max),
      RECAD_DOUBLE(gvar_lambda),
      RECAD_DOUBLE(gvar_gamma),
      RECAD_SIZE(gvar_epochs),
      RECAD_SIZE(hidden),
      Field{"scorer", [](const ExperimentConfig& c) { return to_string(c.scorer); },
            [](ExperimentConfig& c, const std::string& v) { c.scorer = scorer_kind_from_string(v); }},
      RECAD_SIZE(autoencoder_epochs),
      RECAD_DOUBLE(calibration_fraction),
      RECAD_DOUBLE(quantile),
      RECAD_DOUBLE(recourse_lambda),
      RECAD_SIZE(lookahead),
      RECAD_SIZE(max_actions),
      RECAD_SIZE(recourse_epochs),
      RECAD_SIZE(baseline_epochs),
      RECAD_DOUBLE(learning_rate),
      RECAD_DOUBLE(episode_train_fraction),
      Field{"models",
            [](const ExperimentConfig& c) { return join<std::string>(c.models, [](const std::string& s) { return s; }); },
            [](ExperimentConfig& c, const std::string& v) { c.models = split_list(v); }},
      Field{"ablations", [](const ExperimentConfig& c) { return std::string(c.ablations ? "true" : "false"); },
            [](ExperimentConfig& c, const std::string& v) { c.ablations = parse_bool("ablations", v); }},
      Field{"lambda_grid",
            [](const ExperimentConfig& c) { return join<double>(c.lambda_grid, [](const double& x) { return fmt(x); }); },
            [](ExperimentConfig& c, const std::string& v) {
              c.lambda_grid.clear();
              for (const auto& s : split_list(v)) c.lambda_grid.push_back(parse_double("lambda_grid", s));
            }},
      RECAD_SIZE(workers),
  };
  return table;
}

#undef RECAD_DOUBLE
#undef RECAD_SIZE

}  // namespace

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw InvalidArgument("at least one seed is required");
  if (window < 2) throw InvalidArgument("window length must be at least 2");
  if (train_steps < 100 || test_steps < 100) throw InvalidArgument("train and test splits need at least 100 steps");
  if (!(calibration_fraction > 0.0 && calibration_fraction < 1.0))
    throw InvalidArgument("calibration_fraction must lie in (0, 1)");
  if (!(episode_train_fraction > 0.0 && episode_train_fraction < 1.0))
    throw InvalidArgument("episode_train_fraction must lie in (0, 1)");
  if (!(quantile > 0.0 && quantile < 1.0)) throw InvalidArgument("quantile must lie in (0, 1)");
  if (!(recourse_lambda >= 0.0)) throw InvalidArgument("recourse_lambda must be non-negative");
  for (double l : lambda_grid)
    if (!(l >= 0.0)) throw InvalidArgument("lambda_grid values must be non-negative");
  for (const auto& m : models)
    if (std::find(kKnownModels.begin(), kKnownModels.end(), m) == kKnownModels.end())
      throw InvalidArgument("unknown model '" + m + "'");
  if (workers == 0) throw InvalidArgument("workers must be at least 1");
}

ExperimentConfig parse_experiment_config(const std::string& text) {
  ExperimentConfig cfg;
  bool schema_seen = false;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw FormatError("line " + std::to_string(lineno) + ": expected 'key: value'");
    const std::string key = trim(line.substr(0, colon));
    const std::string value = trim(line.substr(colon + 1));
    if (key == "schema") {
      if (value != "1") throw FormatError("unsupported config schema '" + value + "'");
      schema_seen = true;
      continue;
    }
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
    if (it == table.end()) throw FormatError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->set(cfg, value);
  }
  if (!schema_seen) throw FormatError("config is missing 'schema: 1'");
  cfg.validate();
  return cfg;
}

ExperimentConfig read_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_experiment_config(buf.str());
}

std::string format_experiment_config(const ExperimentConfig& cfg) {
  std::string out = "schema: 1\n";
  for (const auto& f : fields()) out += f.key + ": " + f.get(cfg) + "\n";
  return out;
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  for (const auto& f : fields()) j[f.key] = f.get(cfg);
  return j;
}

namespace {

std::pair<GeneratedDataset, GeneratedDataset> generate_splits(const ExperimentConfig& cfg, std::uint64_t seed) {
  const std::size_t total = cfg.train_steps + cfg.test_steps;
  if (cfg.dataset == DatasetKind::Linear) {
    auto params = LinearSystemParams::sample(seed);
    params.noise_std = cfg.linear_noise_std;
    return split_dataset(gen_linear(params, total), cfg.train_steps);
  }
  auto params = LotkaVolterraParams::with_default_adjacency(cfg.lv_species);
  params.alpha = cfg.lv_alpha;
  params.beta = cfg.lv_beta;
  params.eta = cfg.lv_eta;
  params.delta = cfg.lv_delta;
  params.rho = cfg.lv_rho;
  params.dt = cfg.lv_dt;
  params.subsample = cfg.lv_subsample;
  params.obs_noise_std = cfg.lv_obs_noise_std;
  params.seed = seed;
  return split_dataset(gen_lotka_volterra(params, total), cfg.train_steps);
}

ModelMetrics evaluate_policy(const std::string& name, const GvarModel& gvar, const AnomalyDetector& detector,
                             const ActionPolicy& policy, const Matrix& z, const std::vector<Episode>& episodes,
                             const WalkConfig& walk) {
  std::vector<RecourseReport> reports;
  reports.reserve(episodes.size());
  for (const auto& ep : episodes) reports.push_back(explain(gvar, detector, policy, z, ep, walk));
  ModelMetrics m;
  m.model = name;
  m.flipping_ratio = flipping_ratio(reports);
  m.action_cost = action_cost(reports);
  m.action_step = action_step(reports);
  m.episodes = reports.size();
  for (const auto& r : reports) {
    m.detected_steps += r.detected_steps;
    m.flipped_steps += r.flipped_steps;
  }
  return m;
}

ActionPolicy null_policy() {
  return [](ad::Tape& tape, std::span<const ad::Var>, ad::Var current, ad::Var) {
    return tape.constant(Matrix::Zero(current.rows(), current.cols()));
  };
}

}  // namespace

SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  SeedResult out;
  out.seed = seed;
  std::string stage = "generate";
  try {
    cfg.validate();
    auto [train, test] = generate_splits(cfg, seed);

    stage = "train-gvar";
    const StandardizationStats stats = fit_standardizer(train.series);
    const Matrix z = apply_standardizer(train.series.values(), stats);
    const auto n_cal = static_cast<Eigen::Index>(std::llround(cfg.calibration_fraction * static_cast<double>(z.rows())));
    const Matrix z_fit = z.topRows(z.rows() - n_cal);
    const Matrix z_cal = z.bottomRows(n_cal);
    GvarTrainConfig gcfg;
    gcfg.lambda_sparsity = cfg.gvar_lambda;
    gcfg.gamma_smooth = cfg.gvar_gamma;
    gcfg.order = cfg.window - 1;
    gcfg.hidden = cfg.hidden;
    gcfg.epochs = cfg.gvar_epochs;
    gcfg.learning_rate = cfg.learning_rate;
    gcfg.seed = seed;
    auto gvar = std::make_shared<const GvarModel>(train_gvar(MultivariateSeries(z_fit), gcfg));

    stage = "calibrate-detector";
    AnomalyDetector detector;
    if (cfg.scorer == ScorerKind::Residual) {
      detector = AnomalyDetector::residual(gvar, stats, cfg.window);
    } else {
      AutoencoderConfig acfg;
      acfg.epochs = cfg.autoencoder_epochs;
      acfg.learning_rate = cfg.learning_rate;
      acfg.seed = seed;
      detector = AnomalyDetector::autoencoder(z_fit, stats, cfg.window, acfg);
    }
    detector.calibrate(z_cal, cfg.quantile);

    stage = "inject";
    AnomalySpec spec;
    spec.kind = cfg.anomaly;
    spec.rate = cfg.anomaly_rate;
    spec.magnitude_min = cfg.magnitude_min;
    spec.magnitude_max = cfg.magnitude_max;
    spec.seq_len_min = cfg.seq_len_min;
    spec.seq_len_max = cfg.seq_len_max;
    spec.reference_std = stats.std;
    spec.seed = derive_seed(seed, 11);
    const GeneratedDataset injected = inject_anomalies(test, spec);

    stage = "detect";
    const Matrix zt = apply_standardizer(injected.series.values(), stats);
    const Detection detection = detector.detect_standardized(zt);
    out.detection = eval_detection(detection, injected.series.labels());
    auto episodes = find_episodes(detection.flagged);
    attach_events(episodes, injected.injected);
    const auto n_train = static_cast<std::size_t>(cfg.episode_train_fraction * static_cast<double>(episodes.size()));
    if (n_train == 0 || n_train >= episodes.size())
      throw InsufficientHistory("too few detected episodes to split (" + std::to_string(episodes.size()) + ")");
    const std::vector<Episode> train_eps(episodes.begin(), episodes.begin() + static_cast<std::ptrdiff_t>(n_train));
    const std::vector<Episode> eval_eps(episodes.begin() + static_cast<std::ptrdiff_t>(n_train), episodes.end());
    out.train_episodes = train_eps.size();
    out.eval_episodes = eval_eps.size();

    RecourseTrainConfig rcfg;
    rcfg.lambda = cfg.recourse_lambda;
    rcfg.lookahead = cfg.lookahead;
    rcfg.max_actions = cfg.max_actions;
    rcfg.epochs = cfg.recourse_epochs;
    rcfg.learning_rate = cfg.learning_rate;
    rcfg.seed = seed;
    rcfg.hidden = cfg.hidden;
    const WalkConfig walk = rcfg.walk();

    auto run_recad = [&](RecourseVariant variant, double lambda, const std::string& name) {
      stage = "recourse-" + name;
      RecourseTrainConfig c = rcfg;
      c.variant = variant;
      c.lambda = lambda;
      const RecourseFunction h = train_recourse(*gvar, detector, zt, train_eps, c);
      return evaluate_policy(name, *gvar, detector, recad_policy(h), zt, eval_eps, c.walk());
    };

    PredictorTrainConfig pcfg;
    pcfg.window = cfg.window;
    pcfg.hidden = cfg.hidden;
    pcfg.epochs = cfg.baseline_epochs;
    pcfg.learning_rate = cfg.learning_rate;
    pcfg.seed = seed;
    for (const auto& model : cfg.models) {
      if (model == "recad") {
        out.models.push_back(run_recad(RecourseVariant::Full, cfg.recourse_lambda, "recad"));
      } else if (model == "null") {
        stage = "baseline-null";
        out.models.push_back(evaluate_policy("null", *gvar, detector, null_policy(), zt, eval_eps, walk));
      } else {
        stage = "baseline-" + model;
        const auto kind = predictor_kind_from_string(model);
        const NormalValuePredictor pred = train_predictor(kind, z_fit, pcfg, kind == PredictorKind::Gvar ? gvar : nullptr);
        out.models.push_back(evaluate_policy(model, *gvar, detector, baseline_policy(pred), zt, eval_eps, walk));
      }
    }
    if (cfg.ablations) {
      for (auto v : {RecourseVariant::DeviationOnly, RecourseVariant::SequenceOnly})
        out.models.push_back(run_recad(v, cfg.recourse_lambda, "recad_" + to_string(v)));
    }
    for (double lambda : cfg.lambda_grid) {
      SweepPoint p;
      p.lambda = lambda;
      p.metrics = run_recad(RecourseVariant::Full, lambda, "recad@" + fmt(lambda));
      out.sweep.push_back(p);
    }
    out.ok = true;
  } catch (const Error& e) {
    out.failure = stage + ": " + e.kind() + ": " + e.what();
  } catch (const std::exception& e) {
    out.failure = stage + ": " + e.what();
  }
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult result;
  result.config = cfg;
  result.seeds.resize(cfg.seeds.size());
  if (cfg.workers <= 1) {
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) result.seeds[i] = run_seed(cfg, cfg.seeds[i]);
    return result;
  }
  // Each seed is an independent pipeline; results land in seed order.
  for (std::size_t begin = 0; begin < cfg.seeds.size(); begin += cfg.workers) {
    const std::size_t end = std::min(cfg.seeds.size(), begin + cfg.workers);
    std::vector<std::future<SeedResult>> jobs;
    for (std::size_t i = begin; i < end; ++i)
      jobs.push_back(std::async(std::launch::async, [&cfg, seed = cfg.seeds[i]] { return run_seed(cfg, seed); }));
    for (std::size_t i = begin; i < end; ++i) result.seeds[i] = jobs[i - begin].get();
  }
  return result;
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  return {mean(v), v.size() >= 2 ? sample_std(v) : std::numeric_limits<double>::quiet_NaN()};
}

const std::vector<std::string> kRecourseMetrics{"flipping_ratio", "action_cost", "action_step"};
const std::vector<std::string> kDetectionMetrics{"precision", "recall", "f1", "auc_pr", "auc_roc"};

double metric_value(const ModelMetrics& m, const std::string& key) {
  if (key == "flipping_ratio") return m.flipping_ratio;
  if (key == "action_cost") return m.action_cost;
  return m.action_step;
}

double metric_value(const DetectionReport& d, const std::string& key) {
  if (key == "precision") return d.precision;
  if (key == "recall") return d.recall;
  if (key == "f1") return d.f1;
  if (key == "auc_pr") return d.auc_pr;
  return d.auc_roc;
}

SummaryRow summarize(const std::string& name, const std::vector<const ModelMetrics*>& runs) {
  SummaryRow row;
  row.name = name;
  row.runs = runs.size();
  for (const auto& key : kRecourseMetrics) {
    std::vector<double> v;
    for (const auto* m : runs) v.push_back(metric_value(*m, key));
    row.stats[key] = mean_std(v);
  }
  return row;
}

}  // namespace

std::vector<SummaryRow> summarize_models(const ExperimentResult& result) {
  std::vector<std::string> names;
  for (const auto& s : result.seeds)
    for (const auto& m : s.models)
      if (std::find(names.begin(), names.end(), m.model) == names.end()) names.push_back(m.model);
  std::vector<SummaryRow> rows;
  for (const auto& name : names) {
    std::vector<const ModelMetrics*> runs;
    for (const auto& s : result.seeds) {
      if (!s.ok) continue;
      for (const auto& m : s.models)
        if (m.model == name) runs.push_back(&m);
    }
    rows.push_back(summarize(name, runs));
  }
  return rows;
}

SummaryRow summarize_detection(const ExperimentResult& result) {
  SummaryRow row;
  row.name = "detector";
  std::vector<const DetectionReport*> runs;
  for (const auto& s : result.seeds)
    if (s.detection) runs.push_back(&*s.detection);
  row.runs = runs.size();
  for (const auto& key : kDetectionMetrics) {
    std::vector<double> v;
    for (const auto* d : runs) v.push_back(metric_value(*d, key));
    row.stats[key] = mean_std(v);
  }
  return row;
}

SweepCurve sweep_curve(const ExperimentResult& result) {
  SweepCurve curve;
  curve.lambdas = result.config.lambda_grid;
  for (std::size_t i = 0; i < curve.lambdas.size(); ++i) {
    std::vector<double> flips;
    std::vector<double> costs;
    for (const auto& s : result.seeds) {
      if (!s.ok || i >= s.sweep.size()) continue;
      flips.push_back(s.sweep[i].metrics.flipping_ratio);
      costs.push_back(s.sweep[i].metrics.action_cost);
    }
    curve.flipping_ratio.push_back(mean_std(flips).first);
    curve.action_cost.push_back(mean_std(costs).first);
  }
  auto rho = [&](const std::vector<double>& y) {
    try {
      return spearman(curve.lambdas, y);
    } catch (const UndefinedMetric&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };
  curve.spearman_flipping_ratio = rho(curve.flipping_ratio);
  curve.spearman_action_cost = rho(curve.action_cost);
  return curve;
}

SweepCurve lambda_sweep(ExperimentConfig cfg, const std::vector<double>& grid, ExperimentResult* result) {
  std::vector<double> sorted = grid;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw InvalidArgument("lambda grid values must be distinct");
  if (grid.size() < 4) throw InvalidArgument("a lambda sweep needs at least 4 grid points");
  cfg.models.clear();
  cfg.ablations = false;
  cfg.lambda_grid = grid;
  ExperimentResult r = run_experiment(cfg);
  SweepCurve curve = sweep_curve(r);
  if (result) *result = std::move(r);
  return curve;
}

std::string content_hash(const std::string& bytes) {
  const std::string blob = "blob " + std::to_string(bytes.size()) + std::string(1, '\0') + bytes;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(blob.data(), blob.size(), digest, &len, EVP_sha1(), nullptr) != 1)
    throw FormatError("SHA-1 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

std::string summary_csv(const std::vector<SummaryRow>& rows, const std::string& first,
                        const std::vector<std::string>& metrics) {
  std::string out = first + ",runs";
  for (const auto& m : metrics) out += "," + m + "_mean," + m + "_std";
  out += "\n";
  for (const auto& row : rows) {
    out += row.name + "," + std::to_string(row.runs);
    for (const auto& m : metrics) {
      const auto& [mu, sd] = row.stats.at(m);
      out += "," + fmt_table(mu) + "," + fmt_table(sd);
    }
    out += "\n";
  }
  return out;
}

nlohmann::json to_json(const ModelMetrics& m) {
  return {{"model", m.model},
          {"flipping_ratio", m.flipping_ratio},
          {"action_cost", m.action_cost},
          {"action_step", m.action_step},
          {"episodes", m.episodes},
          {"detected_steps", m.detected_steps},
          {"flipped_steps", m.flipped_steps}};
}

nlohmann::json to_json(const SeedResult& s) {
  nlohmann::json j{{"schema", 1}, {"seed", s.seed}, {"ok", s.ok}};
  if (!s.ok) j["failure"] = s.failure;
  if (s.detection) {
    const auto& d = *s.detection;
    j["detection"] = {{"precision", d.precision}, {"recall", d.recall},   {"f1", d.f1},
                      {"auc_pr", d.auc_pr},       {"auc_roc", d.auc_roc}, {"evaluated", d.evaluated}};
  }
  j["train_episodes"] = s.train_episodes;
  j["eval_episodes"] = s.eval_episodes;
  j["models"] = nlohmann::json::array();
  for (const auto& m : s.models) j["models"].push_back(to_json(m));
  j["sweep"] = nlohmann::json::array();
  for (const auto& p : s.sweep) {
    auto e = to_json(p.metrics);
    e["lambda"] = p.lambda;
    j["sweep"].push_back(e);
  }
  return j;
}

}  // namespace

std::vector<std::filesystem::path> write_experiment(const ExperimentResult& result,
                                                    const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "tables");
  fs::create_directories(out_dir / "reports");
  std::vector<fs::path> tables;
  std::vector<std::pair<std::string, std::string>> emitted;

  auto emit = [&](const fs::path& rel, const std::string& text) {
    write_text(out_dir / rel, text);
    emitted.emplace_back(rel.generic_string(), content_hash(text));
  };

  emit("tables/recourse.csv", summary_csv(summarize_models(result), "model", kRecourseMetrics));
  tables.push_back(out_dir / "tables/recourse.csv");
  emit("tables/detection.csv", summary_csv({summarize_detection(result)}, "detector", kDetectionMetrics));
  tables.push_back(out_dir / "tables/detection.csv");

  std::string per_seed = "seed,status,model,flipping_ratio,action_cost,action_step,episodes,detected_steps,flipped_steps\n";
  for (const auto& s : result.seeds) {
    if (!s.ok) {
      per_seed += std::to_string(s.seed) + ",failed,,,,,,,\n";
      continue;
    }
    for (const auto& m : s.models)
      per_seed += std::to_string(s.seed) + ",ok," + m.model + "," + fmt_table(m.flipping_ratio) + "," +
                  fmt_table(m.action_cost) + "," + fmt_table(m.action_step) + "," + std::to_string(m.episodes) + "," +
                  std::to_string(m.detected_steps) + "," + std::to_string(m.flipped_steps) + "\n";
  }
  emit("tables/per_seed.csv", per_seed);
  tables.push_back(out_dir / "tables/per_seed.csv");

  nlohmann::json sweep_json = nullptr;
  if (!result.config.lambda_grid.empty()) {
    std::vector<SummaryRow> rows;
    for (std::size_t i = 0; i < result.config.lambda_grid.size(); ++i) {
      std::vector<const ModelMetrics*> runs;
      for (const auto& s : result.seeds)
        if (s.ok && i < s.sweep.size()) runs.push_back(&s.sweep[i].metrics);
      rows.push_back(summarize(fmt(result.config.lambda_grid[i]), runs));
    }
    emit("tables/lambda_sweep.csv", summary_csv(rows, "lambda", {"flipping_ratio", "action_cost"}));
    tables.push_back(out_dir / "tables/lambda_sweep.csv");
    const SweepCurve curve = sweep_curve(result);
    auto num = [](double x) { return std::isnan(x) ? nlohmann::json(nullptr) : nlohmann::json(x); };
    sweep_json = {{"spearman_lambda_flipping_ratio", num(curve.spearman_flipping_ratio)},
                  {"spearman_lambda_action_cost", num(curve.spearman_action_cost)}};
  }

  for (const auto& s : result.seeds)
    emit("reports/seed_" + std::to_string(s.seed) + ".json", to_json(s).dump(2) + "\n");

  const std::string config_text = format_experiment_config(result.config);
  nlohmann::json manifest{
      {"schema", 1},
      {"config", to_json(result.config)},
      {"config_hash", content_hash(config_text)},
      {"fixed",
       {{"gvar_order", result.config.window - 1},
        {"gvar_penalty", "l2"},
        {"gvar_zero_output_init", true},
        {"batch_size", 256},
        {"autoencoder_hidden", {100, 20, 100}},
        {"calibration_min_scores", 1000},
        {"quantile_rule", "type-7 linear interpolation"},
        {"standardization", "fit on the normal training split"}}},
      {"interpretation",
       {{"metric_denominator", "maximal contiguous run of detected-abnormal steps (episode)"},
        {"unflipped_episodes", "pessimistic: attempted steps and costs count toward averages"},
        {"episode_split", "chronological, leading share trains the recourse model"}}},
      {"seeds_failed", nlohmann::json::array()},
      {"outputs", nlohmann::json::object()}};
  for (const auto& s : result.seeds)
    if (!s.ok) manifest["seeds_failed"].push_back({{"seed", s.seed}, {"reason", s.failure}});
  for (const auto& [path, hash] : emitted) manifest["outputs"][path] = hash;
  if (!sweep_json.is_null()) manifest["lambda_sweep"] = sweep_json;
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return tables;
}

}  // namespace recad
