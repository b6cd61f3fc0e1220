#pragma once

// Multi-seed experiment orchestration: generate, train GVAR, calibrate the
// detector, split detected episodes, train recourse models and baselines,
// evaluate, and emit tables, per-seed reports and a manifest.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "recad/detector.hpp"
#include "recad/synthgen.hpp"

namespace recad {

enum class DatasetKind { Linear, LotkaVolterra };

std::string to_string(DatasetKind kind);
DatasetKind dataset_kind_from_string(const std::string& s);

struct ExperimentConfig {
  DatasetKind dataset = DatasetKind::Linear;
  AnomalyKind anomaly = AnomalyKind::ExternalPoint;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::size_t train_steps = 20000;
  std::size_t test_steps = 50000;
  std::size_t window = 5;

  // Generators. Lotka-Volterra fields map onto LotkaVolterraParams.
  double linear_noise_std = 0.4;
  std::size_t lv_species = 10;
  double lv_alpha = 1.1;
  double lv_beta = 0.4;
  double lv_eta = 2.75e-5;
  double lv_delta = 0.1;
  double lv_rho = 0.4;
  double lv_dt = 0.01;
  std::size_t lv_subsample = 10;
  double lv_obs_noise_std = 0.05;

  // Injection.
  double anomaly_rate = 0.02;
  double magnitude_min = 3.0;
  double magnitude_max = 5.0;
  std::size_t seq_len_min = 3;
  std::size_t seq_len_max = 5;

  // GVAR and detector.
  double gvar_lambda = 0.1;
  double gvar_gamma = 0.1;
  std::size_t gvar_epochs = 20;
  std::size_t hidden = 100;
  ScorerKind scorer = ScorerKind::Residual;
  std::size_t autoencoder_epochs = 30;
  // Tail of the training split held out for calibration.
  double calibration_fraction = 0.1;
  double quantile = 0.99;

  // Recourse and baselines.
  double recourse_lambda = 0.01;
  std::size_t lookahead = 1;
  std::size_t max_actions = 10;
  std::size_t recourse_epochs = 30;
  std::size_t baseline_epochs = 20;
  double learning_rate = 1e-3;
  // Leading share of detected episodes (chronological) used to train h.
  double episode_train_fraction = 0.5;
  // Any of recad, var, mlp, lstm, gvar, null.
  std::vector<std::string> models{"recad", "var", "mlp", "lstm", "gvar"};
  // Adds the deviation_only and sequence_only RecAD variants.
  bool ablations = false;
  // Extra full RecAD runs, one per lambda.
  std::vector<double> lambda_grid;

  std::size_t workers = 1;

  void validate() const;
};

// Plain-text `key: value` lines, `#` comments, lists comma separated.
// `schema: 1` is mandatory.
ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig read_experiment_config(const std::filesystem::path& path);
// Canonical text form; parsing it yields the same config.
std::string format_experiment_config(const ExperimentConfig& cfg);
nlohmann::json to_json(const ExperimentConfig& cfg);

struct ModelMetrics {
  std::string model;
  double flipping_ratio = 0.0;
  double action_cost = 0.0;
  double action_step = 0.0;
  std::size_t episodes = 0;
  std::size_t detected_steps = 0;
  std::size_t flipped_steps = 0;
};

struct SweepPoint {
  double lambda = 0.0;
  ModelMetrics metrics;
};

struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string failure;
  std::optional<DetectionReport> detection;
  std::size_t train_episodes = 0;
  std::size_t eval_episodes = 0;
  std::vector<ModelMetrics> models;
  std::vector<SweepPoint> sweep;
};

// Runs every stage for one seed. Failures are caught and recorded.
SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed);

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<SeedResult> seeds;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg);

struct SummaryRow {
  std::string name;
  std::size_t runs = 0;
  // Per metric: mean and sample std (NaN with fewer than two runs).
  std::map<std::string, std::pair<double, double>> stats;
};

// One row per model, averaged over successful seeds.
std::vector<SummaryRow> summarize_models(const ExperimentResult& result);
SummaryRow summarize_detection(const ExperimentResult& result);

struct SweepCurve {
  std::vector<double> lambdas;
  std::vector<double> flipping_ratio;
  std::vector<double> action_cost;
  double spearman_flipping_ratio = 0.0;
  double spearman_action_cost = 0.0;
};

SweepCurve sweep_curve(const ExperimentResult& result);
// Runs full RecAD once per lambda (plus nothing else) over the config's seeds.
SweepCurve lambda_sweep(ExperimentConfig cfg, const std::vector<double>& grid,
                        ExperimentResult* result = nullptr);

// Writes tables/*.csv, reports/seed_<s>.json and manifest.json. Returns the
// table paths in a fixed order.
std::vector<std::filesystem::path> write_experiment(const ExperimentResult& result,
                                                    const std::filesystem::path& out_dir);

// Git-style blob hash: SHA-1 of "blob <size>\0" followed by the bytes.
std::string content_hash(const std::string& bytes);

}  // namespace recad
