#pragma once

// Forecast-then-subtract recourse baselines: a one-step predictor of the
// normal value x~_t from W_{t-1}, and the action theta_t = x~_t - x_t.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "recad/gvar.hpp"
#include "recad/nn.hpp"
#include "recad/recourse.hpp"

namespace recad {

enum class PredictorKind { Mlp, Lstm, Var, Gvar };

std::string to_string(PredictorKind kind);
PredictorKind predictor_kind_from_string(const std::string& s);

struct PredictorTrainConfig {
  // History length K-1 comes from the window.
  std::size_t window = 5;
  std::size_t hidden = 100;
  std::size_t epochs = 20;
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

class NormalValuePredictor {
 public:
  NormalValuePredictor() = default;

  PredictorKind kind() const { return kind_; }
  std::size_t dims() const { return dims_; }
  std::size_t window() const { return window_; }

  // history: (K-1) x d, oldest first.
  Vector predict(const Matrix& history) const;
  // Differentiable form over K-1 batches (B x d), oldest first.
  ad::Var predict(ad::Tape& tape, std::span<const ad::Var> history) const;

  // VAR only: lag-k coefficient matrix (x_t = c + sum_k B_k x_{t-k}) and c.
  Matrix var_coefficients(std::size_t k) const;
  Vector var_intercept() const;

 private:
  friend NormalValuePredictor train_predictor(PredictorKind, const Matrix&, const PredictorTrainConfig&,
                                              std::shared_ptr<const GvarModel>);
  friend NormalValuePredictor predictor_from_json(const nlohmann::json& j);
  friend nlohmann::json to_json(const NormalValuePredictor& p);

  PredictorKind kind_ = PredictorKind::Var;
  std::size_t dims_ = 0;
  std::size_t window_ = 0;
  nn::Mlp mlp_;
  nn::Lstm lstm_;
  nn::Dense lstm_head_;
  // ((K-1) d + 1) x d: row 0 is the intercept, then lag-1 rows, lag-2 rows...
  Matrix var_;
  std::shared_ptr<const GvarModel> gvar_;
};

// Trains on normal data `z` (one row per step). The GVAR kind wraps `gvar`
// (order K-1) instead of training anything.
NormalValuePredictor train_predictor(PredictorKind kind, const Matrix& z, const PredictorTrainConfig& cfg,
                                     std::shared_ptr<const GvarModel> gvar = nullptr);

// theta_t = x~_t - x*_t, with x~_t predicted from the counterfactual history.
ActionPolicy baseline_policy(const NormalValuePredictor& predictor);
Vector baseline_action(const NormalValuePredictor& predictor, const Matrix& window);

nlohmann::json to_json(const NormalValuePredictor& p);
NormalValuePredictor predictor_from_json(const nlohmann::json& j);

}  // namespace recad
