#pragma once

// Recourse prediction: the action network h, abduction-action-prediction
// rollouts on a frozen GVAR, the hinge-plus-cost objective and the greedy
// act-and-roll-forward episode walk shared by training and explanation.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "recad/autodiff.hpp"
#include "recad/detector.hpp"
#include "recad/gvar.hpp"
#include "recad/metrics.hpp"
#include "recad/nn.hpp"

namespace recad {

enum class RecourseVariant { Full, DeviationOnly, SequenceOnly };

std::string to_string(RecourseVariant v);
RecourseVariant recourse_variant_from_string(const std::string& s);

// theta_t = head(z_seq ++ z_dev), with z_seq the final LSTM state over the
// K-1 rows of W_{t-1} and z_dev = relu(dev(Delta_t)). Ablations replace the
// disabled branch with zeros.
class RecourseFunction {
 public:
  RecourseFunction() = default;
  RecourseFunction(std::size_t dims, std::size_t window, std::uint64_t seed,
                   RecourseVariant variant = RecourseVariant::Full, std::size_t hidden = 100, bool zero_head = true);

  std::size_t dims() const { return dims_; }
  std::size_t window() const { return window_; }
  std::size_t hidden() const { return hidden_; }
  RecourseVariant variant() const { return variant_; }

  // history: K-1 batches (B x d), oldest first; deviation: B x d.
  ad::Var predict(ad::Tape& tape, std::span<const ad::Var> history, ad::Var deviation) const;
  // history: (K-1) x d.
  Vector predict(const Matrix& history, const Vector& deviation) const;

  void collect(std::vector<ad::Parameter*>& out);
  void collect(std::vector<const ad::Parameter*>& out) const;

  nn::Lstm seq_encoder;
  nn::Dense dev_encoder;
  nn::Dense head;

 private:
  std::size_t dims_ = 0;
  std::size_t window_ = 0;
  std::size_t hidden_ = 100;
  RecourseVariant variant_ = RecourseVariant::Full;
};

// Delta_t = x_t - sum_{k=1}^{K-1} g_k(x_{t-k}) x_{t-k} for a K x d window.
Vector compute_deviation(const GvarModel& gvar, const Matrix& window);

struct CounterfactualRollout {
  // Step of the first row of `values`.
  std::size_t start = 0;
  // x*_start .. x*_{start+L}.
  Matrix values;
  // Detector scores and flags per row, when a detector was supplied.
  std::vector<double> scores;
  std::vector<bool> flipped;
};

// Abduction-action-prediction on standardized `z`: residuals are abducted
// from factual data, actions add theta at their step, and later steps are
// re-predicted from counterfactual lags. Rows span the first action step
// through L steps past it.
CounterfactualRollout counterfactual_rollout(const GvarModel& gvar, const Matrix& z,
                                             const std::vector<RecourseAction>& actions, std::size_t horizon,
                                             const AnomalyDetector* detector = nullptr);

// sum max(s - tau, 0) + lambda * sum ||theta||_2.
ad::Var recourse_loss(ad::Tape& tape, std::span<const ad::Var> scores, std::span<const ad::Var> thetas, double tau,
                      double lambda);

// Produces theta (B x d) from the counterfactual history W*_{t-1}, the
// current counterfactual value x*_t and the deviation Delta*_t.
using ActionPolicy =
    std::function<ad::Var(ad::Tape& tape, std::span<const ad::Var> history, ad::Var current, ad::Var deviation)>;

ActionPolicy recad_policy(const RecourseFunction& h);

struct WalkConfig {
  std::size_t lookahead = 1;
  std::size_t max_actions = 10;
  double lambda = 0.01;
};

struct EpisodeWalk {
  ad::Var loss;
  std::vector<std::size_t> action_steps;
  std::vector<ad::Var> thetas;
  std::size_t first_step = 0;
  std::vector<ad::Var> values;
  std::vector<double> scores;
};

// Starting at the episode's first step, walks forward through
// max(episode end, last action + L): every step is re-predicted through the
// rollout, and whenever its counterfactual window scores above tau (and the
// budget allows) the policy acts on it.
EpisodeWalk walk_episode(ad::Tape& tape, const GvarModel& gvar, const AnomalyDetector& detector, const Matrix& z,
                         const Episode& episode, const ActionPolicy& policy, const WalkConfig& cfg);

// Runs the walk without gradients and reports in raw units. `cost_vector`
// defaults to all ones.
RecourseReport explain(const GvarModel& gvar, const AnomalyDetector& detector, const ActionPolicy& policy,
                       const Matrix& z, const Episode& episode, const WalkConfig& cfg,
                       const Vector& cost_vector = Vector());

struct RecourseTrainConfig {
  double lambda = 0.01;
  std::size_t lookahead = 1;
  std::size_t max_actions = 10;
  std::size_t epochs = 30;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  RecourseVariant variant = RecourseVariant::Full;
  std::size_t hidden = 100;

  WalkConfig walk() const { return {lookahead, max_actions, lambda}; }
  void validate() const;
};

struct RecourseTrainReport {
  // Mean episode loss per epoch.
  std::vector<double> epoch_loss;
};

// Online training: one gradient step per episode, episodes shuffled every
// epoch. GVAR and detector stay frozen.
RecourseFunction train_recourse(const GvarModel& gvar, const AnomalyDetector& detector, const Matrix& z,
                                const std::vector<Episode>& episodes, const RecourseTrainConfig& cfg,
                                RecourseTrainReport* report = nullptr);

// Largest relative error between analytic and central-difference gradients
// of the episode loss with respect to h's parameters.
double recourse_gradient_check(const RecourseFunction& h, const GvarModel& gvar, const AnomalyDetector& detector,
                               const Matrix& z, const Episode& episode, const WalkConfig& cfg, double step = 1e-5);

nlohmann::json to_json(const RecourseFunction& h);
RecourseFunction recourse_from_json(const nlohmann::json& j);

nlohmann::json to_json(const RecourseReport& report);

}  // namespace recad
