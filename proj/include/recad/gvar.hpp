#pragma once

// Generalized vector autoregression: one small network per lag maps the
// lagged observation to a d x d coefficient matrix, and the forecast is the
// sum of coefficient-matrix / lag products.

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"

#include "recad/autodiff.hpp"
#include "recad/nn.hpp"
#include "recad/series.hpp"

namespace recad {

enum class PenaltyKind { L1, L2 };

class GvarModel {
 public:
  GvarModel() = default;
  // `order` lag networks, each d -> hidden (tanh) -> d*d, Glorot-initialized.
  // With `zero_output` the last layer starts at zero, so every g_k starts as
  // the constant zero matrix and stays nearly flat away from the data.
  GvarModel(std::size_t dims, std::size_t order, std::uint64_t seed, std::size_t hidden = 100,
            bool zero_output = false);
  // Every network outputs the zero matrix for any input.
  static GvarModel zeros(std::size_t dims, std::size_t order, std::size_t hidden = 100);
  // Input-independent networks returning matrices[k-1] for lag k.
  static GvarModel constant(const std::vector<Matrix>& matrices, std::size_t hidden = 100);

  std::size_t dims() const { return dims_; }
  std::size_t order() const { return nets_.size(); }
  std::size_t hidden() const { return hidden_; }

  // `lags` holds exactly order() rows, oldest first. Returns x_hat_t.
  Vector forecast(const Matrix& lags) const;
  // Same with 1..order() rows; row n-k is lag k and only g_1..g_n are used.
  Vector forecast_truncated(const Matrix& lags) const;
  // One-step forecasts for every t in [order(), T), as (T - order()) x d.
  Matrix forecast_series(const Matrix& values) const;
  // u_t = x_t - x_hat_t; needs t >= order().
  Vector abduct(const MultivariateSeries& series, std::size_t t) const;
  Matrix abduct_series(const Matrix& values) const;

  // order() matrices evaluated at the last order() rows of `window`.
  // Element (i, j) of matrix k is the influence of x^(j)_{t-k} on x^(i)_t,
  // where t is one past the window's last row.
  std::vector<Matrix> coefficient_stack(const Matrix& window) const;

  // Differentiable batched forecast. lags[k-1] is the B x d batch of
  // x_{t-k}; 1 <= lags.size() <= order().
  ad::Var forecast(ad::Tape& tape, std::span<const ad::Var> lags) const;
  // B x d*d row-major coefficients of g_k applied to lag.
  ad::Var coefficients(ad::Tape& tape, std::size_t k, ad::Var lag) const;

  std::vector<nn::Mlp>& nets() { return nets_; }
  const std::vector<nn::Mlp>& nets() const { return nets_; }
  void collect(std::vector<ad::Parameter*>& out);
  void collect(std::vector<const ad::Parameter*>& out) const;
  bool all_finite() const;

 private:
  std::size_t dims_ = 0;
  std::size_t hidden_ = 100;
  std::vector<nn::Mlp> nets_;
};

struct GvarTrainConfig {
  double lambda_sparsity = 0.1;
  double gamma_smooth = 0.1;
  PenaltyKind penalty = PenaltyKind::L2;
  // Mean of squared residual norms instead of plain norms.
  bool squared_error = false;
  std::size_t order = 4;
  std::size_t hidden = 100;
  bool zero_output_init = true;
  std::size_t epochs = 20;
  // Contiguous blocks of this many forecast targets form one batch.
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  bool shuffle = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GvarLossTerms {
  double total = 0.0;
  double prediction = 0.0;
  double sparsity = 0.0;
  double smoothness = 0.0;
};

struct GvarTrainReport {
  // Mean of the per-batch terms of every epoch.
  std::vector<GvarLossTerms> epochs;
};

// Loss over a contiguous block: targets are rows [order(), rows()) of
// `block`. Smoothness pairs consecutive targets.
ad::Var gvar_loss(ad::Tape& tape, const GvarModel& model, const Matrix& block, const GvarTrainConfig& cfg,
                  GvarLossTerms* terms = nullptr);
GvarLossTerms gvar_loss_terms(const GvarModel& model, const Matrix& block, const GvarTrainConfig& cfg);

GvarModel train_gvar(const MultivariateSeries& data, const GvarTrainConfig& cfg,
                     GvarTrainReport* report = nullptr);

// Largest relative error, over parameter tensors, between analytic and
// central-difference gradients of gvar_loss on `block`.
double gvar_gradient_check(const GvarModel& model, const Matrix& block, const GvarTrainConfig& cfg,
                           double h = 1e-5);

nlohmann::json to_json(const GvarModel& model);
GvarModel gvar_from_json(const nlohmann::json& j);

}  // namespace recad
