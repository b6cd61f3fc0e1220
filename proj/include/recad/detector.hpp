#pragma once

// Window-based anomaly scoring with quantile-calibrated thresholds.
// All scores live in standardized space; the detector carries the
// standardization fitted on its normal training data so raw series can be
// passed in directly.

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "recad/gvar.hpp"
#include "recad/nn.hpp"
#include "recad/series.hpp"

namespace recad {

enum class ScorerKind { Residual, Autoencoder };

std::string to_string(ScorerKind kind);
ScorerKind scorer_kind_from_string(const std::string& s);

struct AutoencoderConfig {
  std::vector<Eigen::Index> hidden{100, 20, 100};
  std::size_t epochs = 30;
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

// Type-7 (linear interpolation) empirical quantile of `scores`.
double empirical_quantile(std::vector<double> scores, double q);

// tau = empirical q-quantile of scores from normal validation data.
double calibrate_threshold(std::span<const double> scores, double q, std::size_t min_scores = 1000);

struct Detection {
  // One entry per step; unscored steps (t < K-1) hold NaN and are never
  // reported as normal.
  std::vector<double> scores;
  std::vector<bool> scored;
  std::vector<bool> flagged;

  std::size_t first_scored() const;
};

class AnomalyDetector {
 public:
  AnomalyDetector() = default;

  // Residual scorer: ||x_t - x_hat_t|| with the forecast taken from the
  // window's first K-1 rows. Needs gvar->order() == window - 1.
  static AnomalyDetector residual(std::shared_ptr<const GvarModel> gvar, StandardizationStats stats,
                                  std::size_t window);
  // Flattened-window autoencoder trained on standardized normal data `z`.
  static AnomalyDetector autoencoder(const Matrix& z, StandardizationStats stats, std::size_t window,
                                     const AutoencoderConfig& cfg);

  ScorerKind kind() const { return kind_; }
  std::size_t window() const { return window_; }
  double threshold() const { return tau_; }
  double quantile() const { return quantile_; }
  const StandardizationStats& stats() const { return stats_; }
  const GvarModel* gvar() const { return gvar_.get(); }
  std::shared_ptr<const GvarModel> shared_gvar() const { return gvar_; }
  const nn::Mlp& autoencoder_net() const { return ae_; }

  void set_threshold(double tau, double q);
  // Calibrates tau on standardized normal validation data.
  void calibrate(const Matrix& z_validation, double q, std::size_t min_scores = 1000);

  // Score of one standardized K x d window.
  double score(const Matrix& window) const;
  // Scores of every complete window of standardized `z`; entry i belongs to
  // the window ending at step K-1+i.
  Vector score_series(const Matrix& z) const;
  // Differentiable batched score: rows[i] is the B x d batch of window row i,
  // oldest first. Returns B x 1.
  ad::Var score(ad::Tape& tape, std::span<const ad::Var> rows) const;

  // Standardizes the raw series, then flags steps with score > tau.
  Detection detect(const MultivariateSeries& raw) const;
  Detection detect_standardized(const Matrix& z) const;

 private:
  friend AnomalyDetector detector_from_json(const nlohmann::json& j);

  ScorerKind kind_ = ScorerKind::Residual;
  std::size_t window_ = 0;
  double tau_ = std::numeric_limits<double>::infinity();
  double quantile_ = 0.99;
  StandardizationStats stats_;
  std::shared_ptr<const GvarModel> gvar_;
  nn::Mlp ae_;
};

struct DetectionReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auc_pr = 0.0;
  double auc_roc = 0.0;
  std::size_t evaluated = 0;
};

// Metrics over the entries with `scored` set. AUCs come from the raw scores:
// AUC-ROC by ranks (ties averaged), AUC-PR as average precision.
DetectionReport eval_detection(const std::vector<bool>& predicted, const std::vector<bool>& truth,
                               const std::vector<double>& scores, const std::vector<bool>& scored);
DetectionReport eval_detection(const Detection& detection, const std::vector<bool>& truth);

double auc_roc(std::span<const double> scores, const std::vector<bool>& truth);
double average_precision(std::span<const double> scores, const std::vector<bool>& truth);

// Threshold maximizing F1 over the scored steps (for comparison only).
double best_f1_threshold(const Detection& detection, const std::vector<bool>& truth);

void write_detection_csv(const std::filesystem::path& path, const Detection& detection);

nlohmann::json to_json(const AnomalyDetector& detector);
AnomalyDetector detector_from_json(const nlohmann::json& j);

}  // namespace recad
