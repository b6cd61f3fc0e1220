#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"

#include "recad/autodiff.hpp"
#include "recad/nn.hpp"

using namespace recad;
using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Var;

namespace {

Matrix random(Eigen::Index r, Eigen::Index c, nn::Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

// Builds a scalar from parameters on a fresh tape; returns the analytic and
// finite-difference mismatch.
double check(std::vector<Parameter*> params, const std::function<Var(Tape&)>& build) {
  Tape tape;
  const Var loss = build(tape);
  const auto grads = tape.backward(loss);
  auto value = [&] {
    Tape t(Tape::Mode::Inference);
    return build(t).scalar();
  };
  return nn::max_gradient_error(params, grads, value);
}

}  // namespace

TEST_CASE("elementwise and structural ops match finite differences") {
  nn::Rng rng(1);
  Parameter a{random(3, 4, rng)};
  Parameter b{random(4, 2, rng)};
  Parameter row{random(1, 2, rng)};
  Parameter c{random(3, 2, rng)};
  const double err = check({&a, &b, &row, &c}, [&](Tape& t) {
    Var pa = t.param(a), pb = t.param(b), pr = t.param(row), pc = t.param(c);
    Var h = ad::add_row(ad::matmul(pa, pb), pr);
    Var mixed = ad::hadamard(ad::tanh(h), ad::sigmoid(pc)) - 0.3 * pc;
    const Var cols[] = {mixed, ad::slice_cols(pa, 1, 2)};
    Var wide = ad::concat_cols(cols);
    const Var rows[] = {wide, ad::slice_rows(wide, 0, 1)};
    Var tall = ad::concat_rows(rows);
    return ad::sum(ad::row_norms(tall)) + ad::mean(ad::hadamard(tall, tall)) + ad::sum(ad::row_abs_sums(mixed));
  });
  CHECK(err < 1e-6);
}

TEST_CASE("hinge, relu and batched matvec gradients") {
  nn::Rng rng(2);
  Parameter coeffs{random(5, 9, rng)};
  Parameter x{random(5, 3, rng)};
  const double err = check({&coeffs, &x}, [&](Tape& t) {
    Var y = ad::batched_matvec(t.param(coeffs), t.param(x));
    return ad::sum(ad::hinge(y)) + ad::sum(ad::relu(ad::scale(y, -0.5)));
  });
  CHECK(err < 1e-6);
}

TEST_CASE("batched matvec forward matches explicit products") {
  nn::Rng rng(3);
  const Matrix coeffs = random(2, 4, rng);
  const Matrix x = random(2, 2, rng);
  Tape t;
  const Matrix y = ad::batched_matvec(t.constant(coeffs), t.constant(x)).value();
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < 2; ++i)
      CHECK(y(b, i) == doctest::Approx(coeffs(b, 2 * i) * x(b, 0) + coeffs(b, 2 * i + 1) * x(b, 1)));
}

TEST_CASE("zero rows have zero norm gradient") {
  Parameter z{Matrix::Zero(2, 3)};
  Tape t;
  const auto g = t.backward(ad::sum(ad::row_norms(t.param(z))));
  CHECK(g.at(&z).isZero());
}

TEST_CASE("track_only freezes the rest") {
  nn::Rng rng(4);
  Parameter a{random(2, 2, rng)};
  Parameter b{random(2, 2, rng)};
  Tape t;
  const Parameter* tracked[] = {&a};
  t.track_only(tracked);
  const auto g = t.backward(ad::sum(ad::hadamard(t.param(a), t.param(b))));
  CHECK(g.count(&a) == 1);
  CHECK(g.count(&b) == 0);
  CHECK((g.at(&a) - b.value).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("mlp and lstm gradients") {
  nn::Rng rng(5);
  const std::vector<Eigen::Index> widths{6, 8, 8, 3};
  nn::Mlp mlp(widths, nn::Activation::Tanh, rng);
  nn::Lstm lstm(3, 5, rng);
  nn::Dense head(5, 2, rng);
  std::vector<Parameter*> params;
  mlp.collect(params);
  lstm.collect(params);
  params.push_back(&head.weight);
  params.push_back(&head.bias);
  const Matrix x = random(4, 6, rng);
  const double err = check(params, [&](Tape& t) {
    Var h = mlp.forward(t, t.constant(x));
    std::vector<Var> steps{ad::slice_cols(h, 0, 3), ad::tanh(ad::slice_cols(h, 0, 3)), h};
    return ad::sum(ad::hadamard(head.forward(t, lstm.forward(t, steps)), head.forward(t, lstm.forward(t, steps))));
  });
  CHECK(err < 1e-5);
}

TEST_CASE("mlp evaluate agrees with the tape") {
  nn::Rng rng(6);
  const std::vector<Eigen::Index> widths{4, 7, 2};
  nn::Mlp mlp(widths, nn::Activation::Relu, rng);
  const Matrix x = random(5, 4, rng);
  Tape t(Tape::Mode::Inference);
  CHECK((mlp.forward(t, t.constant(x)).value() - mlp.evaluate(x)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("relative error floor") {
  CHECK(nn::relative_error(Matrix::Zero(2, 2), Matrix::Constant(2, 2, 1e-12)) == 0.0);
  Matrix a(1, 2), n(1, 2);
  a << 3.0, 4.0;
  n << 3.0, 4.5;
  CHECK(nn::relative_error(a, n) == doctest::Approx(0.5 / std::sqrt(9.0 + 20.25)));
}

TEST_CASE("adam minimizes a quadratic") {
  nn::Rng rng(7);
  Parameter p{random(3, 3, rng)};
  const Matrix target = random(3, 3, rng);
  nn::Adam adam({.learning_rate = 0.05});
  std::vector<Parameter*> params{&p};
  for (int i = 0; i < 2000; ++i) {
    Tape t;
    Var r = t.param(p) - t.constant(target);
    adam.step(params, t.backward(ad::sum(ad::hadamard(r, r))));
  }
  CHECK((p.value - target).cwiseAbs().maxCoeff() < 1e-3);
  CHECK(adam.steps_taken() == 2000);
}

TEST_CASE("json parameter dumps round trip exactly") {
  nn::Rng rng(8);
  const std::vector<Eigen::Index> widths{3, 4, 2};
  nn::Mlp mlp(widths, nn::Activation::Tanh, rng);
  const nn::Mlp back = nn::mlp_from_json(nn::to_json(mlp));
  const Matrix x = random(2, 3, rng);
  CHECK(back.evaluate(x) == mlp.evaluate(x));
  nn::Lstm lstm(2, 3, rng);
  const nn::Lstm lback = nn::lstm_from_json(nn::to_json(lstm));
  CHECK(lback.w_input.value == lstm.w_input.value);
  CHECK(lback.bias.value == lstm.bias.value);
}
