#include <cmath>
#include <random>

#include "doctest.h"

#include "recad/errors.hpp"
#include "recad/gvar.hpp"
#include "recad/synthgen.hpp"

using namespace recad;

namespace {

std::vector<Matrix> random_stack(std::size_t order, Eigen::Index d, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  std::vector<Matrix> out;
  for (std::size_t k = 0; k < order; ++k) {
    Matrix m(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) m(i, j) = u(rng);
    out.push_back(m);
  }
  return out;
}

// Linear generator as a GVAR: A at lag 1, zero matrices at the other lags.
GvarModel true_linear(const LinearSystemParams& p, std::size_t order = 4) {
  std::vector<Matrix> stack(order, Matrix::Zero(4, 4));
  stack[0] = p.transition();
  return GvarModel::constant(stack, 8);
}

}  // namespace

TEST_CASE("constant coefficient model forecasts the VAR sum") {
  const auto stack = random_stack(3, 4, 1);
  const auto model = GvarModel::constant(stack, 6);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix lags(3, 4);
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) lags(i, j) = n(rng);
  // Oldest first: row 2 is lag 1.
  Vector expected = Vector::Zero(4);
  for (std::size_t k = 1; k <= 3; ++k) expected += stack[k - 1] * lags.row(3 - static_cast<Eigen::Index>(k)).transpose();
  CHECK((model.forecast(lags) - expected).cwiseAbs().maxCoeff() < 1e-12);

  Vector partial = stack[0] * lags.row(2).transpose() + stack[1] * lags.row(1).transpose();
  CHECK((model.forecast_truncated(lags.bottomRows(2)) - partial).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(model.forecast(lags.bottomRows(2)), DimensionMismatch);

  const auto got = model.coefficient_stack(lags);
  REQUIRE(got.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) CHECK((got[k] - stack[k]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zeros model forecasts zero") {
  const auto model = GvarModel::zeros(3, 2, 5);
  CHECK(model.forecast(Matrix::Ones(2, 3)).isZero());
  CHECK(model.order() == 2);
  CHECK(model.dims() == 3);
}

TEST_CASE("abduction with the true generator recovers the exogenous trace") {
  const auto p = LinearSystemParams::sample(3);
  const auto ds = gen_linear(p, 2000);
  const auto model = true_linear(p);
  const Matrix u = model.abduct_series(ds.series.values());
  REQUIRE(u.rows() == 2000 - 4);
  CHECK((u - ds.exogenous.bottomRows(2000 - 4)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((model.abduct(ds.series, 10) - ds.exogenous.row(10).transpose()).cwiseAbs().maxCoeff() < 1e-10);
  CHECK_THROWS_AS(model.abduct(ds.series, 3), InsufficientHistory);
  const Matrix f = model.forecast_series(ds.series.values());
  CHECK((f + u - ds.series.values().bottomRows(2000 - 4)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("loss terms of constant models") {
  const auto stack = random_stack(2, 3, 4);
  const auto model = GvarModel::constant(stack, 5);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix block(12, 3);
  for (Eigen::Index i = 0; i < 12; ++i)
    for (Eigen::Index j = 0; j < 3; ++j) block(i, j) = n(rng);
  GvarTrainConfig cfg;
  cfg.order = 2;
  cfg.lambda_sparsity = 0.3;
  cfg.gamma_smooth = 0.7;
  const auto terms = gvar_loss_terms(model, block, cfg);
  double pred = 0.0;
  for (Eigen::Index t = 2; t < 12; ++t) {
    const Vector r = block.row(t).transpose() - stack[0] * block.row(t - 1).transpose() -
                     stack[1] * block.row(t - 2).transpose();
    pred += r.norm();
  }
  pred /= 10.0;
  const double frob = std::sqrt(stack[0].squaredNorm() + stack[1].squaredNorm());
  CHECK(terms.prediction == doctest::Approx(pred).epsilon(1e-12));
  CHECK(terms.sparsity == doctest::Approx(frob).epsilon(1e-12));
  CHECK(std::abs(terms.smoothness) < 1e-12);
  CHECK(terms.total == doctest::Approx(pred + 0.3 * frob).epsilon(1e-12));

  cfg.penalty = PenaltyKind::L1;
  double abs_sum = stack[0].cwiseAbs().sum() + stack[1].cwiseAbs().sum();
  CHECK(gvar_loss_terms(model, block, cfg).sparsity == doctest::Approx(abs_sum).epsilon(1e-12));

  cfg.squared_error = true;
  const auto zero_terms = gvar_loss_terms(GvarModel::zeros(3, 2, 5), block, cfg);
  CHECK(zero_terms.prediction == doctest::Approx(block.bottomRows(10).squaredNorm() / 10.0).epsilon(1e-12));
}

TEST_CASE("GVAR loss gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    GvarModel model(4, 4, seed, 8);
    const auto ds = gen_linear(LinearSystemParams::sample(seed + 1), 200);
    const Matrix block = ds.series.values().middleRows(20, 24);
    GvarTrainConfig cfg;
    CHECK(gvar_gradient_check(model, block, cfg) < 1e-4);
    cfg.penalty = PenaltyKind::L1;
    cfg.squared_error = true;
    CHECK(gvar_gradient_check(model, block, cfg) < 1e-4);
  }
}

TEST_CASE("training recovers the Granger structure of the linear system") {
  const auto p = LinearSystemParams::sample(7);
  const auto ds = gen_linear(p, 6000);
  const auto st = fit_standardizer(ds.series);
  const Matrix z = apply_standardizer(ds.series.values(), st);
  GvarTrainConfig cfg;
  cfg.epochs = 8;
  cfg.hidden = 32;
  cfg.seed = 7;
  GvarTrainReport report;
  const auto model = train_gvar(MultivariateSeries(z), cfg, &report);
  REQUIRE(report.epochs.size() == 8);
  CHECK(report.epochs.back().total < report.epochs.front().total);

  // Average |coefficient| over the series: true lag-1 edges dominate the rest.
  Matrix strength = Matrix::Zero(4, 4);
  for (Eigen::Index t = 4; t < 2000; ++t) strength += model.coefficient_stack(z.middleRows(t - 4, 4))[0].cwiseAbs();
  const Matrix A = p.transition();
  double edge = 1e9, non_edge = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      if (A(i, j) != 0.0) edge = std::min(edge, strength(i, j));
      else non_edge = std::max(non_edge, strength(i, j));
    }
  CHECK(edge > non_edge);
}

TEST_CASE("training preconditions") {
  const auto ds = gen_linear(LinearSystemParams::sample(8), 200);
  GvarTrainConfig cfg;
  cfg.epochs = 1;
  std::vector<bool> labels(200, false);
  labels[50] = true;
  CHECK_THROWS_AS(train_gvar(ds.series.with_labels(labels), cfg), InvalidArgument);
  CHECK_THROWS_AS(train_gvar(ds.series.slice(0, 50), cfg), InsufficientHistory);
}

TEST_CASE("training is deterministic and checkpoints round trip") {
  const auto ds = gen_linear(LinearSystemParams::sample(9), 800);
  GvarTrainConfig cfg;
  cfg.epochs = 2;
  cfg.hidden = 16;
  cfg.seed = 3;
  const auto a = train_gvar(ds.series, cfg);
  const auto b = train_gvar(ds.series, cfg);
  const Matrix lags = ds.series.values().middleRows(100, 4);
  CHECK(a.forecast(lags) == b.forecast(lags));
  const auto back = gvar_from_json(to_json(a));
  CHECK(back.forecast(lags) == a.forecast(lags));
  CHECK(back.order() == a.order());
  nlohmann::json broken = to_json(a);
  broken["schema"] = 2;
  CHECK_THROWS_AS(gvar_from_json(broken), FormatError);
}

TEST_CASE("held-out one-step error approaches the noise floor") {
  const auto p = LinearSystemParams::sample(11);
  const auto ds = gen_linear(p, 25000);
  const auto [train, held] = split_dataset(ds, 20000);
  const auto st = fit_standardizer(train.series);
  GvarTrainConfig cfg;
  cfg.epochs = 10;
  cfg.seed = 11;
  const auto model = train_gvar(apply_standardizer(train.series, st), cfg);
  const Matrix z = apply_standardizer(held.series.values(), st);
  const Matrix residual = (z.bottomRows(z.rows() - 4) - model.forecast_series(z)) * st.std.asDiagonal();
  const double mse = residual.squaredNorm() / static_cast<double>(residual.size());
  CHECK(mse <= 1.2 * 0.16);
}

TEST_CASE("penalty-free training loss is non-increasing on a fixed batch order") {
  const auto ds = gen_linear(LinearSystemParams::sample(12), 4000);
  const auto st = fit_standardizer(ds.series);
  GvarTrainConfig cfg;
  cfg.lambda_sparsity = 0.0;
  cfg.gamma_smooth = 0.0;
  cfg.shuffle = false;
  cfg.epochs = 10;
  cfg.hidden = 32;
  GvarTrainReport report;
  train_gvar(apply_standardizer(ds.series, st), cfg, &report);
  REQUIRE(report.epochs.size() == 10);
  for (std::size_t e = 1; e < 10; ++e) {
    CHECK(report.epochs[e].total <= report.epochs[e - 1].total);
    CHECK(report.epochs[e].total == report.epochs[e].prediction);
  }
}

TEST_CASE("zero model abduction returns the observations") {
  const auto ds = gen_linear(LinearSystemParams::sample(13), 300);
  const auto model = GvarModel::zeros(4, 4, 8);
  const Matrix& x = ds.series.values();
  CHECK(model.abduct_series(x) == x.bottomRows(300 - 4));
  for (const auto& m : model.coefficient_stack(x.topRows(4))) CHECK(m.isZero());
}

TEST_CASE("linear generator lag-1 rows follow its dependency structure") {
  const auto p = LinearSystemParams::sample(14);
  const auto stack = true_linear(p).coefficient_stack(gen_linear(p, 100).series.values().topRows(4));
  REQUIRE(stack.size() == 4);
  // x2 depends on x1 and itself.
  const Matrix& lag1 = stack[0];
  CHECK(lag1(1, 0) != 0.0);
  CHECK(lag1(1, 1) != 0.0);
  CHECK(lag1(1, 2) == 0.0);
  CHECK(lag1(1, 3) == 0.0);
}

TEST_CASE("penalty gradient vanishes at the all-zero model") {
  GvarModel model(4, 4, 1, 8, true);
  std::vector<ad::Parameter*> params;
  model.collect(params);
  for (auto* p : params) p->value.setZero();
  GvarTrainConfig cfg;
  cfg.lambda_sparsity = 1.0;
  cfg.gamma_smooth = 1.0;
  ad::Tape tape;
  const Matrix block = Matrix::Zero(16, 4);
  const ad::Var loss = gvar_loss(tape, model, block, cfg);
  CHECK(loss.scalar() == 0.0);
  const auto grads = tape.backward(loss);
  for (const auto& [param, g] : grads) CHECK(g.isZero());
}
