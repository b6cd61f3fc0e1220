#include "recad/nn.hpp"

#include <algorithm>
#include <cmath>

#include "recad/errors.hpp"

namespace recad::nn {

Var activate(Var x, Activation act) {
  switch (act) {
    case Activation::Tanh:
      return ad::tanh(x);
    case Activation::Relu:
      return ad::relu(x);
    case Activation::Identity:
      break;
  }
  return x;
}

Matrix glorot(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix w(fan_in, fan_out);
  // Fill row by row so the draw order does not depend on storage order.
  for (Eigen::Index r = 0; r < fan_in; ++r)
    for (Eigen::Index c = 0; c < fan_out; ++c) w(r, c) = dist(rng);
  return w;
}

Dense::Dense(Eigen::Index in, Eigen::Index out, Rng& rng)
    : weight{glorot(in, out, rng)}, bias{Matrix::Zero(1, out)} {}

Dense Dense::zeros(Eigen::Index in, Eigen::Index out) {
  Dense d;
  d.weight.value = Matrix::Zero(in, out);
  d.bias.value = Matrix::Zero(1, out);
  return d;
}

Var Dense::forward(Tape& tape, Var x) const {
  if (x.cols() != in()) {
    throw DimensionMismatch("dense layer expects " + std::to_string(in()) + " inputs, got " +
                            std::to_string(x.cols()));
  }
  return ad::add_row(ad::matmul(x, tape.param(weight)), tape.param(bias));
}

Mlp::Mlp(std::span<const Eigen::Index> widths, Activation hidden, Rng& rng) : hidden_(hidden) {
  if (widths.size() < 2) throw InvalidArgument("an MLP needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) layers_.emplace_back(widths[i], widths[i + 1], rng);
}

Var Mlp::forward(Tape& tape, Var x) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i].forward(tape, x);
    if (i + 1 < layers_.size()) x = activate(x, hidden_);
  }
  return x;
}

Matrix Mlp::evaluate(const Matrix& x) const {
  if (x.cols() != in()) throw DimensionMismatch("MLP input width mismatch");
  Matrix h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Matrix z = h * layers_[i].weight.value;
    z.rowwise() += layers_[i].bias.value.row(0);
    if (i + 1 < layers_.size()) {
      if (hidden_ == Activation::Tanh) z = z.array().tanh().matrix();
      if (hidden_ == Activation::Relu) z = z.cwiseMax(0.0);
    }
    h = std::move(z);
  }
  return h;
}

void Mlp::collect(std::vector<Parameter*>& out) {
  for (auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
}

void Mlp::collect(std::vector<const Parameter*>& out) const {
  for (const auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
}

Lstm::Lstm(Eigen::Index input, Eigen::Index hidden, Rng& rng)
    : w_input{glorot(input, 4 * hidden, rng)},
      w_hidden{glorot(hidden, 4 * hidden, rng)},
      bias{Matrix::Zero(1, 4 * hidden)} {
  // Forget gate starts open.
  bias.value.middleCols(hidden, hidden).setOnes();
}

Var Lstm::forward(Tape& tape, std::span<const Var> steps) const {
  if (steps.empty()) throw EmptyInput("LSTM needs at least one step");
  const Eigen::Index h = hidden_size();
  const Eigen::Index batch = steps.front().rows();
  Var wi = tape.param(w_input);
  Var wh = tape.param(w_hidden);
  Var b = tape.param(bias);
  Var hidden = tape.constant(Matrix::Zero(batch, h));
  Var cell = tape.constant(Matrix::Zero(batch, h));
  for (const Var& x : steps) {
    if (x.cols() != input_size()) throw DimensionMismatch("LSTM input width mismatch");
    Var gates = ad::add_row(ad::matmul(x, wi) + ad::matmul(hidden, wh), b);
    Var i = ad::sigmoid(ad::slice_cols(gates, 0, h));
    Var f = ad::sigmoid(ad::slice_cols(gates, h, h));
    Var g = ad::tanh(ad::slice_cols(gates, 2 * h, h));
    Var o = ad::sigmoid(ad::slice_cols(gates, 3 * h, h));
    cell = ad::hadamard(f, cell) + ad::hadamard(i, g);
    hidden = ad::hadamard(o, ad::tanh(cell));
  }
  return hidden;
}

void Lstm::collect(std::vector<Parameter*>& out) {
  out.push_back(&w_input);
  out.push_back(&w_hidden);
  out.push_back(&bias);
}

void Lstm::collect(std::vector<const Parameter*>& out) const {
  out.push_back(&w_input);
  out.push_back(&w_hidden);
  out.push_back(&bias);
}

double gradient_norm(const ad::Gradients& grads) {
  double sq = 0.0;
  for (const auto& [p, g] : grads) sq += g.squaredNorm();
  return std::sqrt(sq);
}

double relative_error(const Matrix& analytic, const Matrix& numeric, double floor) {
  const double scale = std::max(analytic.norm(), numeric.norm());
  if (scale < floor) return 0.0;
  return (analytic - numeric).norm() / scale;
}

double max_gradient_error(std::span<Parameter* const> params, const ad::Gradients& analytic,
                          const std::function<double()>& loss, double h) {
  double worst = 0.0;
  for (Parameter* p : params) {
    Matrix numeric(p->value.rows(), p->value.cols());
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& v = p->value.data()[i];
      const double saved = v;
      v = saved + h;
      const double up = loss();
      v = saved - h;
      const double down = loss();
      v = saved;
      numeric.data()[i] = (up - down) / (2.0 * h);
    }
    auto it = analytic.find(p);
    const Matrix a = it == analytic.end() ? Matrix::Zero(numeric.rows(), numeric.cols()) : it->second;
    worst = std::max(worst, relative_error(a, numeric));
  }
  return worst;
}

void Adam::step(std::span<Parameter* const> params, const ad::Gradients& grads) {
  ++step_;
  double factor = 1.0;
  if (options_.clip_norm > 0.0) {
    // Iterate over `params` rather than the map so the sum order is fixed.
    double sq = 0.0;
    for (Parameter* p : params)
      if (auto it = grads.find(p); it != grads.end()) sq += it->second.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > options_.clip_norm) factor = options_.clip_norm / norm;
  }
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
  for (Parameter* p : params) {
    auto it = grads.find(p);
    if (it == grads.end()) continue;
    const Matrix g = it->second * factor;
    auto [slot, inserted] = moments_.try_emplace(p);
    if (inserted) {
      slot->second.m = Matrix::Zero(g.rows(), g.cols());
      slot->second.v = Matrix::Zero(g.rows(), g.cols());
    }
    Moments& mom = slot->second;
    mom.m = options_.beta1 * mom.m + (1.0 - options_.beta1) * g;
    mom.v = options_.beta2 * mom.v + (1.0 - options_.beta2) * g.cwiseAbs2();
    p->value.array() -= options_.learning_rate * (mom.m.array() / bc1) /
                        ((mom.v.array() / bc2).sqrt() + options_.epsilon);
  }
}

nlohmann::json to_json(const Matrix& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (!data.is_array() || static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw FormatError("matrix payload does not match its shape");
  Matrix m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[k++].get<double>();
  return m;
}

namespace {

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Tanh:
      return "tanh";
    case Activation::Relu:
      return "relu";
    case Activation::Identity:
      break;
  }
  return "identity";
}

Activation activation_from_name(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  if (s == "identity") return Activation::Identity;
  throw FormatError("unknown activation '" + s + "'");
}

}  // namespace

nlohmann::json to_json(const Dense& dense) {
  return {{"weight", to_json(dense.weight.value)}, {"bias", to_json(dense.bias.value)}};
}

Dense dense_from_json(const nlohmann::json& j) {
  Dense d;
  d.weight.value = matrix_from_json(j.at("weight"));
  d.bias.value = matrix_from_json(j.at("bias"));
  if (d.bias.value.rows() != 1 || d.bias.value.cols() != d.weight.value.cols())
    throw FormatError("dense bias shape does not match weight");
  return d;
}

nlohmann::json to_json(const Mlp& mlp) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : mlp.layers()) layers.push_back(to_json(l));
  return {{"activation", activation_name(mlp.hidden_activation())}, {"layers", layers}};
}

Mlp mlp_from_json(const nlohmann::json& j) {
  std::vector<Eigen::Index> widths;
  std::vector<Dense> layers;
  for (const auto& l : j.at("layers")) layers.push_back(dense_from_json(l));
  if (layers.empty()) throw FormatError("MLP without layers");
  widths.push_back(layers.front().in());
  for (const auto& l : layers) widths.push_back(l.out());
  Rng rng(0);
  Mlp mlp(widths, activation_from_name(j.at("activation").get<std::string>()), rng);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i > 0 && layers[i].in() != layers[i - 1].out()) throw FormatError("MLP layer widths do not chain");
    mlp.layers()[i] = std::move(layers[i]);
  }
  return mlp;
}

nlohmann::json to_json(const Lstm& lstm) {
  return {{"w_input", to_json(lstm.w_input.value)},
          {"w_hidden", to_json(lstm.w_hidden.value)},
          {"bias", to_json(lstm.bias.value)}};
}

Lstm lstm_from_json(const nlohmann::json& j) {
  Lstm l;
  l.w_input.value = matrix_from_json(j.at("w_input"));
  l.w_hidden.value = matrix_from_json(j.at("w_hidden"));
  l.bias.value = matrix_from_json(j.at("bias"));
  const auto h = l.w_hidden.value.rows();
  if (l.w_hidden.value.cols() != 4 * h || l.w_input.value.cols() != 4 * h || l.bias.value.cols() != 4 * h)
    throw FormatError("LSTM gate shapes are inconsistent");
  return l;
}

}  // namespace recad::nn
