#pragma once

// Small neural-network building blocks on top of the autodiff tape, plus the
// Adam optimizer and JSON parameter dumps shared by every checkpoint format.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "recad/autodiff.hpp"

namespace recad::nn {

using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Var;
using Rng = std::mt19937_64;

enum class Activation { Identity, Tanh, Relu };

Var activate(Var x, Activation act);

// Glorot-uniform weights, zero bias.
Matrix glorot(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng);

// y = x W + b with x laid out as B x in.
struct Dense {
  Parameter weight;
  Parameter bias;

  Dense() = default;
  Dense(Eigen::Index in, Eigen::Index out, Rng& rng);
  static Dense zeros(Eigen::Index in, Eigen::Index out);

  Eigen::Index in() const { return weight.value.rows(); }
  Eigen::Index out() const { return weight.value.cols(); }
  Var forward(Tape& tape, Var x) const;
};

// Feedforward stack; `hidden` activation after every layer but the last.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::span<const Eigen::Index> widths, Activation hidden, Rng& rng);

  Var forward(Tape& tape, Var x) const;
  // Tape-free forward pass for inference.
  Matrix evaluate(const Matrix& x) const;
  Eigen::Index in() const { return layers_.front().in(); }
  Eigen::Index out() const { return layers_.back().out(); }
  Activation hidden_activation() const { return hidden_; }

  std::vector<Dense>& layers() { return layers_; }
  const std::vector<Dense>& layers() const { return layers_; }
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

 private:
  std::vector<Dense> layers_;
  Activation hidden_ = Activation::Tanh;
};

// Single-layer LSTM. Gate layout along columns: input, forget, cell, output.
class Lstm {
 public:
  Lstm() = default;
  Lstm(Eigen::Index input, Eigen::Index hidden, Rng& rng);

  // `steps` holds one B x input matrix per time step, oldest first. Returns
  // the final hidden state, B x hidden.
  Var forward(Tape& tape, std::span<const Var> steps) const;
  Eigen::Index input_size() const { return w_input.value.rows(); }
  Eigen::Index hidden_size() const { return w_hidden.value.rows(); }

  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<const Parameter*>& out) const;

  Parameter w_input;
  Parameter w_hidden;
  Parameter bias;
};

class Adam {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    // Rescale the joint gradient when its norm exceeds this; <= 0 disables.
    double clip_norm = 0.0;
  };

  Adam() = default;
  explicit Adam(Options options) : options_(options) {}

  // Parameters without an entry in `grads` are left untouched.
  void step(std::span<Parameter* const> params, const ad::Gradients& grads);
  long steps_taken() const { return step_; }

 private:
  struct Moments {
    Matrix m;
    Matrix v;
  };
  Options options_;
  long step_ = 0;
  std::unordered_map<const Parameter*, Moments> moments_;
};

double gradient_norm(const ad::Gradients& grads);

// Relative error ||a - n|| / max(||a||, ||n||); 0 when both norms are below
// `floor`.
double relative_error(const Matrix& analytic, const Matrix& numeric, double floor = 1e-10);

// Largest per-tensor relative error between `analytic` and central
// differences of `loss` with step h. Parameters are restored afterwards.
double max_gradient_error(std::span<Parameter* const> params, const ad::Gradients& analytic,
                          const std::function<double()>& loss, double h = 1e-5);

nlohmann::json to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Mlp& mlp);
Mlp mlp_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Lstm& lstm);
Lstm lstm_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Dense& dense);
Dense dense_from_json(const nlohmann::json& j);

}  // namespace recad::nn
