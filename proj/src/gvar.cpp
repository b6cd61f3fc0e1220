#include "recad/gvar.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "recad/errors.hpp"
#include "recad/synthgen.hpp"

namespace recad {

namespace {

std::vector<Eigen::Index> net_widths(std::size_t dims, std::size_t hidden) {
  const auto d = static_cast<Eigen::Index>(dims);
  return {d, static_cast<Eigen::Index>(hidden), d * d};
}

// Packs a d x d matrix row-major into a 1 x d*d row.
Matrix row_major(const Matrix& m) {
  Matrix out(1, m.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out(0, i * m.cols() + j) = m(i, j);
  return out;
}

}  // namespace

GvarModel::GvarModel(std::size_t dims, std::size_t order, std::uint64_t seed, std::size_t hidden,
                     bool zero_output)
    : dims_(dims), hidden_(hidden) {
  if (dims == 0 || order == 0 || hidden == 0) throw InvalidArgument("GVAR needs d, order and hidden >= 1");
  nn::Rng rng(derive_seed(seed, 101));
  const auto widths = net_widths(dims, hidden);
  for (std::size_t k = 0; k < order; ++k) nets_.emplace_back(widths, nn::Activation::Tanh, rng);
  if (zero_output)
    for (auto& net : nets_) net.layers().back().weight.value.setZero();
}

GvarModel GvarModel::zeros(std::size_t dims, std::size_t order, std::size_t hidden) {
  GvarModel m(dims, order, 0, hidden);
  for (auto& net : m.nets_)
    for (auto& layer : net.layers()) {
      layer.weight.value.setZero();
      layer.bias.value.setZero();
    }
  return m;
}

GvarModel GvarModel::constant(const std::vector<Matrix>& matrices, std::size_t hidden) {
  if (matrices.empty()) throw InvalidArgument("need at least one coefficient matrix");
  const auto d = static_cast<std::size_t>(matrices.front().rows());
  GvarModel m = zeros(d, matrices.size(), hidden);
  for (std::size_t k = 0; k < matrices.size(); ++k) {
    if (matrices[k].rows() != matrices[k].cols() || static_cast<std::size_t>(matrices[k].rows()) != d)
      throw DimensionMismatch("coefficient matrices must all be d x d");
    m.nets_[k].layers().back().bias.value = row_major(matrices[k]);
  }
  return m;
}

namespace {

// Rows of `x` times the row-major coefficient rows of `c`.
Matrix batched_apply(const Matrix& c, const Matrix& x) {
  const Eigen::Index d = x.cols();
  Matrix out(x.rows(), d);
  for (Eigen::Index b = 0; b < x.rows(); ++b)
    for (Eigen::Index i = 0; i < d; ++i) out(b, i) = c.row(b).segment(i * d, d).dot(x.row(b));
  return out;
}

}  // namespace

Vector GvarModel::forecast(const Matrix& lags) const {
  if (static_cast<std::size_t>(lags.rows()) != order()) {
    throw DimensionMismatch("forecast needs " + std::to_string(order()) + " lag rows, got " +
                            std::to_string(lags.rows()));
  }
  return forecast_truncated(lags);
}

Vector GvarModel::forecast_truncated(const Matrix& lags) const {
  const auto n = static_cast<std::size_t>(lags.rows());
  if (n == 0 || n > order()) throw DimensionMismatch("forecast needs between 1 and order() lag rows");
  if (static_cast<std::size_t>(lags.cols()) != dims_) throw DimensionMismatch("lag width differs from d");
  Vector out = Vector::Zero(static_cast<Eigen::Index>(dims_));
  for (std::size_t k = 1; k <= n; ++k) {
    const Matrix lag = lags.row(static_cast<Eigen::Index>(n - k));
    out += batched_apply(nets_[k - 1].evaluate(lag), lag).row(0).transpose();
  }
  return out;
}

Matrix GvarModel::forecast_series(const Matrix& values) const {
  const auto T = static_cast<std::size_t>(values.rows());
  if (static_cast<std::size_t>(values.cols()) != dims_) throw DimensionMismatch("series width differs from d");
  if (T <= order()) throw InsufficientHistory("series is not longer than the model order");
  const auto n = static_cast<Eigen::Index>(T - order());
  const auto p = static_cast<Eigen::Index>(order());
  Matrix out = Matrix::Zero(n, values.cols());
  for (Eigen::Index k = 1; k <= p; ++k) {
    const Matrix lag = values.middleRows(p - k, n);
    out += batched_apply(nets_[k - 1].evaluate(lag), lag);
  }
  return out;
}

Vector GvarModel::abduct(const MultivariateSeries& series, std::size_t t) const {
  if (t < order()) {
    throw InsufficientHistory("abduction at t = " + std::to_string(t) + " needs t >= " + std::to_string(order()));
  }
  if (t >= series.steps()) throw InvalidArgument("t is past the end of the series");
  const Matrix lags = series.values().middleRows(static_cast<Eigen::Index>(t - order()),
                                                 static_cast<Eigen::Index>(order()));
  return series.values().row(static_cast<Eigen::Index>(t)).transpose() - forecast(lags);
}

Matrix GvarModel::abduct_series(const Matrix& values) const {
  return values.bottomRows(values.rows() - static_cast<Eigen::Index>(order())) - forecast_series(values);
}

std::vector<Matrix> GvarModel::coefficient_stack(const Matrix& window) const {
  if (static_cast<std::size_t>(window.rows()) < order())
    throw DimensionMismatch("window shorter than the model order");
  if (static_cast<std::size_t>(window.cols()) != dims_) throw DimensionMismatch("window width differs from d");
  const auto d = static_cast<Eigen::Index>(dims_);
  std::vector<Matrix> stack;
  for (std::size_t k = 1; k <= order(); ++k) {
    const Matrix lag = window.row(window.rows() - static_cast<Eigen::Index>(k));
    const Matrix c = nets_[k - 1].evaluate(lag);
    Matrix m(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) m(i, j) = c(0, i * d + j);
    stack.push_back(std::move(m));
  }
  return stack;
}

ad::Var GvarModel::coefficients(ad::Tape& tape, std::size_t k, ad::Var lag) const {
  if (k == 0 || k > order()) throw InvalidArgument("lag index out of range");
  return nets_[k - 1].forward(tape, lag);
}

ad::Var GvarModel::forecast(ad::Tape& tape, std::span<const ad::Var> lags) const {
  if (lags.empty() || lags.size() > order()) throw DimensionMismatch("forecast needs between 1 and order() lags");
  ad::Var out;
  for (std::size_t k = 1; k <= lags.size(); ++k) {
    ad::Var term = ad::batched_matvec(coefficients(tape, k, lags[k - 1]), lags[k - 1]);
    out = out.valid() ? out + term : term;
  }
  return out;
}

void GvarModel::collect(std::vector<ad::Parameter*>& out) {
  for (auto& net : nets_) net.collect(out);
}

void GvarModel::collect(std::vector<const ad::Parameter*>& out) const {
  for (const auto& net : nets_) net.collect(out);
}

bool GvarModel::all_finite() const {
  std::vector<const ad::Parameter*> params;
  collect(params);
  return std::all_of(params.begin(), params.end(), [](const ad::Parameter* p) { return p->value.allFinite(); });
}

void GvarTrainConfig::validate() const {
  if (!(lambda_sparsity >= 0.0) || !(gamma_smooth >= 0.0))
    throw ParameterError("lambda_sparsity and gamma_smooth must be >= 0");
  if (order == 0 || hidden == 0 || batch_size == 0) throw ParameterError("order, hidden and batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ParameterError("learning_rate must be positive");
}

ad::Var gvar_loss(ad::Tape& tape, const GvarModel& model, const Matrix& block, const GvarTrainConfig& cfg,
                  GvarLossTerms* terms) {
  const auto p = static_cast<Eigen::Index>(model.order());
  const Eigen::Index n = block.rows() - p;
  if (n < 1) throw EmptyInput("block holds no forecast target");
  std::vector<ad::Var> lags;
  std::vector<ad::Var> coeffs;
  ad::Var forecast;
  for (Eigen::Index k = 1; k <= p; ++k) {
    ad::Var lag = tape.constant(block.middleRows(p - k, n));
    ad::Var c = model.coefficients(tape, static_cast<std::size_t>(k), lag);
    ad::Var term = ad::batched_matvec(c, lag);
    forecast = forecast.valid() ? forecast + term : term;
    coeffs.push_back(c);
  }
  ad::Var residual = tape.constant(block.bottomRows(n)) - forecast;
  ad::Var prediction =
      cfg.squared_error
          ? ad::scale(ad::sum(ad::hadamard(residual, residual)), 1.0 / static_cast<double>(n))
          : ad::mean(ad::row_norms(residual));
  ad::Var stack = ad::concat_cols(coeffs);
  ad::Var sparsity =
      ad::mean(cfg.penalty == PenaltyKind::L2 ? ad::row_norms(stack) : ad::row_abs_sums(stack));
  ad::Var loss = prediction + cfg.lambda_sparsity * sparsity;
  double smooth_value = 0.0;
  if (n >= 2) {
    ad::Var diff = ad::slice_rows(stack, 1, n - 1) - ad::slice_rows(stack, 0, n - 1);
    ad::Var smoothness = ad::mean(ad::row_norms(diff));
    smooth_value = smoothness.scalar();
    loss = loss + cfg.gamma_smooth * smoothness;
  }
  if (terms) {
    terms->prediction = prediction.scalar();
    terms->sparsity = sparsity.scalar();
    terms->smoothness = smooth_value;
    terms->total = loss.scalar();
  }
  return loss;
}

GvarLossTerms gvar_loss_terms(const GvarModel& model, const Matrix& block, const GvarTrainConfig& cfg) {
  ad::Tape tape(ad::Tape::Mode::Inference);
  GvarLossTerms terms;
  gvar_loss(tape, model, block, cfg, &terms);
  return terms;
}

GvarModel train_gvar(const MultivariateSeries& data, const GvarTrainConfig& cfg, GvarTrainReport* report) {
  cfg.validate();
  if (data.has_labels()) {
    const auto& labels = data.labels();
    if (std::any_of(labels.begin(), labels.end(), [](bool b) { return b; }))
      throw InvalidArgument("GVAR trains on normal data only, but the series has labeled anomalies");
  }
  if (data.steps() <= 10 * (cfg.order + 1)) {
    throw InsufficientHistory("training needs more than " + std::to_string(10 * (cfg.order + 1)) + " steps");
  }
  GvarModel model(data.dims(), cfg.order, cfg.seed, cfg.hidden, cfg.zero_output_init);
  std::vector<ad::Parameter*> params;
  model.collect(params);
  nn::Adam adam({.learning_rate = cfg.learning_rate});

  const Matrix& x = data.values();
  const std::size_t p = cfg.order;
  const std::size_t targets = data.steps() - p;
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s < targets; s += cfg.batch_size) starts.push_back(s);
  nn::Rng rng(derive_seed(cfg.seed, 102));
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) std::shuffle(starts.begin(), starts.end(), rng);
    GvarLossTerms acc;
    for (std::size_t s : starts) {
      const std::size_t n = std::min(cfg.batch_size, targets - s);
      const Matrix block = x.middleRows(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(n + p));
      ad::Tape tape;
      GvarLossTerms terms;
      ad::Var loss = gvar_loss(tape, model, block, cfg, &terms);
      if (!std::isfinite(terms.total)) throw DivergenceError(step, "GVAR loss became non-finite");
      adam.step(params, tape.backward(loss));
      acc.total += terms.total;
      acc.prediction += terms.prediction;
      acc.sparsity += terms.sparsity;
      acc.smoothness += terms.smoothness;
      ++step;
    }
    const double nb = static_cast<double>(starts.size());
    if (report) report->epochs.push_back({acc.total / nb, acc.prediction / nb, acc.sparsity / nb, acc.smoothness / nb});
  }
  if (!model.all_finite()) throw DivergenceError(step, "GVAR parameters became non-finite");
  return model;
}

double gvar_gradient_check(const GvarModel& model, const Matrix& block, const GvarTrainConfig& cfg, double h) {
  GvarModel work = model;
  std::vector<ad::Parameter*> params;
  work.collect(params);
  ad::Tape tape;
  ad::Var loss = gvar_loss(tape, work, block, cfg);
  const ad::Gradients analytic = tape.backward(loss);
  return nn::max_gradient_error(params, analytic, [&] { return gvar_loss_terms(work, block, cfg).total; }, h);
}

nlohmann::json to_json(const GvarModel& model) {
  nlohmann::json nets = nlohmann::json::array();
  for (const auto& net : model.nets()) nets.push_back(nn::to_json(net));
  return {{"schema", 1}, {"kind", "gvar"}, {"dims", model.dims()}, {"order", model.order()},
          {"hidden", model.hidden()}, {"nets", nets}};
}

GvarModel gvar_from_json(const nlohmann::json& j) {
  if (j.value("schema", 0) != 1 || j.value("kind", "") != "gvar") throw FormatError("not a GVAR checkpoint");
  const auto dims = j.at("dims").get<std::size_t>();
  const auto order = j.at("order").get<std::size_t>();
  const auto hidden = j.at("hidden").get<std::size_t>();
  GvarModel model = GvarModel::zeros(dims, order, hidden);
  const auto& nets = j.at("nets");
  if (nets.size() != order) throw FormatError("checkpoint lists the wrong number of lag networks");
  for (std::size_t k = 0; k < order; ++k) {
    nn::Mlp net = nn::mlp_from_json(nets[k]);
    if (static_cast<std::size_t>(net.in()) != dims || static_cast<std::size_t>(net.out()) != dims * dims)
      throw FormatError("lag network shape does not match d");
    model.nets()[k] = std::move(net);
  }
  if (!model.all_finite()) throw FormatError("checkpoint holds non-finite parameters");
  return model;
}

}  // namespace recad
