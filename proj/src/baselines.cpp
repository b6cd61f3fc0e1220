#include "recad/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "recad/errors.hpp"
#include "recad/synthgen.hpp"

namespace recad {

std::string to_string(PredictorKind kind) {
  switch (kind) {
    case PredictorKind::Mlp:
      return "mlp";
    case PredictorKind::Lstm:
      return "lstm";
    case PredictorKind::Var:
      return "var";
    case PredictorKind::Gvar:
      return "gvar";
  }
  return "unknown";
}

PredictorKind predictor_kind_from_string(const std::string& s) {
  if (s == "mlp") return PredictorKind::Mlp;
  if (s == "lstm") return PredictorKind::Lstm;
  if (s == "var") return PredictorKind::Var;
  if (s == "gvar") return PredictorKind::Gvar;
  throw InvalidArgument("unknown baseline '" + s + "'");
}

namespace {

// Row i holds the K-1 rows before target i+K-1 laid out oldest first.
Matrix flatten_history(const Matrix& z, std::size_t lags) {
  const auto p = static_cast<Eigen::Index>(lags);
  const Eigen::Index n = z.rows() - p;
  const Eigen::Index d = z.cols();
  Matrix out(n, p * d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index r = 0; r < p; ++r) out.block(i, r * d, 1, d) = z.row(i + r);
  return out;
}

}  // namespace

Vector NormalValuePredictor::predict(const Matrix& history) const {
  if (static_cast<std::size_t>(history.rows()) != window_ - 1 || static_cast<std::size_t>(history.cols()) != dims_)
    throw DimensionMismatch("predictor needs a (K-1) x d history");
  ad::Tape tape(ad::Tape::Mode::Inference);
  std::vector<ad::Var> rows;
  for (Eigen::Index r = 0; r < history.rows(); ++r) rows.push_back(tape.constant(history.row(r)));
  return predict(tape, rows).value().row(0).transpose();
}

ad::Var NormalValuePredictor::predict(ad::Tape& tape, std::span<const ad::Var> history) const {
  if (history.size() != window_ - 1) throw DimensionMismatch("predictor needs K-1 history rows");
  switch (kind_) {
    case PredictorKind::Mlp:
      return mlp_.forward(tape, ad::concat_cols(history));
    case PredictorKind::Lstm:
      return lstm_head_.forward(tape, lstm_.forward(tape, history));
    case PredictorKind::Var: {
      const auto d = static_cast<Eigen::Index>(dims_);
      ad::Var flat = ad::concat_cols(history);
      // Flattened history is oldest first; var_ stores lag 1 first.
      Matrix w(flat.cols(), d);
      const auto p = static_cast<Eigen::Index>(window_ - 1);
      for (Eigen::Index k = 1; k <= p; ++k) w.middleRows((p - k) * d, d) = var_.middleRows(1 + (k - 1) * d, d);
      return ad::add_row(ad::matmul(flat, tape.constant(w)), tape.constant(var_.topRows(1)));
    }
    case PredictorKind::Gvar: {
      std::vector<ad::Var> lags(history.rbegin(), history.rend());
      return gvar_->forecast(tape, lags);
    }
  }
  throw InvalidArgument("unknown predictor kind");
}

Matrix NormalValuePredictor::var_coefficients(std::size_t k) const {
  if (kind_ != PredictorKind::Var) throw InvalidArgument("not a VAR predictor");
  if (k == 0 || k >= window_) throw InvalidArgument("lag out of range");
  const auto d = static_cast<Eigen::Index>(dims_);
  // Stored as x_t^T = x_{t-k}^T B_k^T.
  return var_.middleRows(1 + static_cast<Eigen::Index>(k - 1) * d, d).transpose();
}

Vector NormalValuePredictor::var_intercept() const {
  if (kind_ != PredictorKind::Var) throw InvalidArgument("not a VAR predictor");
  return var_.row(0).transpose();
}

namespace {

template <typename Forward>
void fit_regression(const Matrix& z, std::size_t lags, const PredictorTrainConfig& cfg,
                    std::vector<ad::Parameter*>& params, Forward forward) {
  const auto p = static_cast<Eigen::Index>(lags);
  const Matrix inputs = flatten_history(z, lags);
  const Matrix targets = z.bottomRows(z.rows() - p);
  nn::Adam adam({.learning_rate = cfg.learning_rate});
  nn::Rng rng(derive_seed(cfg.seed, 401));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(inputs.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - s);
      Matrix xb(static_cast<Eigen::Index>(n), inputs.cols());
      Matrix yb(static_cast<Eigen::Index>(n), targets.cols());
      for (std::size_t i = 0; i < n; ++i) {
        xb.row(static_cast<Eigen::Index>(i)) = inputs.row(order[s + i]);
        yb.row(static_cast<Eigen::Index>(i)) = targets.row(order[s + i]);
      }
      ad::Tape tape;
      ad::Var r = tape.constant(yb) - forward(tape, xb);
      ad::Var loss = ad::scale(ad::sum(ad::hadamard(r, r)), 1.0 / static_cast<double>(n));
      if (!std::isfinite(loss.scalar())) throw DivergenceError(step, "baseline loss became non-finite");
      adam.step(params, tape.backward(loss));
      ++step;
    }
  }
}

}  // namespace

NormalValuePredictor train_predictor(PredictorKind kind, const Matrix& z, const PredictorTrainConfig& cfg,
                                     std::shared_ptr<const GvarModel> gvar) {
  if (cfg.window < 2) throw InvalidArgument("window length must be at least 2");
  const std::size_t lags = cfg.window - 1;
  if (static_cast<std::size_t>(z.rows()) <= 10 * cfg.window) throw InsufficientHistory("too few training steps");
  NormalValuePredictor pred;
  pred.kind_ = kind;
  pred.dims_ = static_cast<std::size_t>(z.cols());
  pred.window_ = cfg.window;
  const auto d = static_cast<Eigen::Index>(pred.dims_);
  const auto h = static_cast<Eigen::Index>(cfg.hidden);
  nn::Rng rng(derive_seed(cfg.seed, 402));

  switch (kind) {
    case PredictorKind::Var: {
      const Matrix x = flatten_history(z, lags);
      Matrix design(x.rows(), x.cols() + 1);
      design.col(0).setOnes();
      design.rightCols(x.cols()) = x;
      const Matrix y = z.bottomRows(x.rows());
      Eigen::ColPivHouseholderQR<Matrix> qr(design);
      if (qr.rank() < design.cols()) throw SingularDesign("VAR design matrix is rank deficient");
      const Matrix sol = qr.solve(y);
      // Reorder from oldest-first blocks to lag-1-first.
      pred.var_.resize(sol.rows(), d);
      pred.var_.row(0) = sol.row(0);
      const auto p = static_cast<Eigen::Index>(lags);
      for (Eigen::Index k = 1; k <= p; ++k) pred.var_.middleRows(1 + (k - 1) * d, d) = sol.middleRows(1 + (p - k) * d, d);
      break;
    }
    case PredictorKind::Mlp: {
      const std::vector<Eigen::Index> widths{static_cast<Eigen::Index>(lags) * d, h, h, h, d};
      pred.mlp_ = nn::Mlp(widths, nn::Activation::Relu, rng);
      std::vector<ad::Parameter*> params;
      pred.mlp_.collect(params);
      fit_regression(z, lags, cfg, params,
                     [&](ad::Tape& tape, const Matrix& xb) { return pred.mlp_.forward(tape, tape.constant(xb)); });
      break;
    }
    case PredictorKind::Lstm: {
      pred.lstm_ = nn::Lstm(d, h, rng);
      pred.lstm_head_ = nn::Dense(h, d, rng);
      std::vector<ad::Parameter*> params;
      pred.lstm_.collect(params);
      params.push_back(&pred.lstm_head_.weight);
      params.push_back(&pred.lstm_head_.bias);
      fit_regression(z, lags, cfg, params, [&](ad::Tape& tape, const Matrix& xb) {
        std::vector<ad::Var> steps;
        for (std::size_t r = 0; r < lags; ++r)
          steps.push_back(tape.constant(xb.middleCols(static_cast<Eigen::Index>(r) * d, d)));
        return pred.lstm_head_.forward(tape, pred.lstm_.forward(tape, steps));
      });
      break;
    }
    case PredictorKind::Gvar:
      if (!gvar) throw InvalidArgument("the GVAR baseline needs a trained GVAR");
      if (gvar->order() != lags || gvar->dims() != pred.dims_)
        throw InvalidArgument("the GVAR baseline needs order K-1 and matching d");
      pred.gvar_ = std::move(gvar);
      break;
  }
  return pred;
}

ActionPolicy baseline_policy(const NormalValuePredictor& predictor) {
  return [&predictor](ad::Tape& tape, std::span<const ad::Var> history, ad::Var current, ad::Var) {
    // Actions are plain values: nothing upstream is trained through them.
    ad::Tape scratch(ad::Tape::Mode::Inference);
    std::vector<ad::Var> rows;
    for (const auto& h : history) rows.push_back(scratch.constant(h.value()));
    const Matrix predicted = predictor.predict(scratch, rows).value();
    return tape.constant(predicted - current.value());
  };
}

Vector baseline_action(const NormalValuePredictor& predictor, const Matrix& window) {
  if (static_cast<std::size_t>(window.rows()) != predictor.window()) throw DimensionMismatch("baseline needs a K x d window");
  const Matrix history = window.topRows(window.rows() - 1);
  return predictor.predict(history) - window.row(window.rows() - 1).transpose();
}

nlohmann::json to_json(const NormalValuePredictor& p) {
  nlohmann::json j{{"schema", 1}, {"kind", "baseline"}, {"model", to_string(p.kind_)}, {"dims", p.dims_},
                   {"window", p.window_}};
  switch (p.kind_) {
    case PredictorKind::Mlp:
      j["mlp"] = nn::to_json(p.mlp_);
      break;
    case PredictorKind::Lstm:
      j["lstm"] = nn::to_json(p.lstm_);
      j["head"] = nn::to_json(p.lstm_head_);
      break;
    case PredictorKind::Var:
      j["coefficients"] = nn::to_json(p.var_);
      break;
    case PredictorKind::Gvar:
      j["gvar"] = to_json(*p.gvar_);
      break;
  }
  return j;
}

NormalValuePredictor predictor_from_json(const nlohmann::json& j) {
  if (j.value("schema", 0) != 1 || j.value("kind", "") != "baseline") throw FormatError("not a baseline checkpoint");
  NormalValuePredictor p;
  p.kind_ = predictor_kind_from_string(j.at("model").get<std::string>());
  p.dims_ = j.at("dims").get<std::size_t>();
  p.window_ = j.at("window").get<std::size_t>();
  switch (p.kind_) {
    case PredictorKind::Mlp:
      p.mlp_ = nn::mlp_from_json(j.at("mlp"));
      break;
    case PredictorKind::Lstm:
      p.lstm_ = nn::lstm_from_json(j.at("lstm"));
      p.lstm_head_ = nn::dense_from_json(j.at("head"));
      break;
    case PredictorKind::Var:
      p.var_ = nn::matrix_from_json(j.at("coefficients"));
      break;
    case PredictorKind::Gvar:
      p.gvar_ = std::make_shared<const GvarModel>(gvar_from_json(j.at("gvar")));
      break;
  }
  return p;
}

}  // namespace recad
