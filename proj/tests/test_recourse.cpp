#include <cmath>
#include <random>

#include "doctest.h"

#include "recad/errors.hpp"
#include "recad/recourse.hpp"
#include "recad/synthgen.hpp"

using namespace recad;

namespace {

StandardizationStats identity_stats(Eigen::Index d) {
  return {Eigen::RowVectorXd::Zero(d), Eigen::RowVectorXd::Ones(d)};
}

std::shared_ptr<const GvarModel> true_linear(const LinearSystemParams& p) {
  std::vector<Matrix> stack(4, Matrix::Zero(4, 4));
  stack[0] = p.transition();
  return std::make_shared<const GvarModel>(GvarModel::constant(stack, 4));
}

Vector random_vector(Eigen::Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v(i) = n(rng);
  return v;
}

ActionPolicy constant_policy(Vector theta) {
  return [theta](ad::Tape& tape, std::span<const ad::Var>, ad::Var, ad::Var) {
    return tape.constant(theta.transpose());
  };
}

ActionPolicy null_policy(Eigen::Index d) { return constant_policy(Vector::Zero(d)); }

}  // namespace

TEST_CASE("deviation is the forecast residual of the last row") {
  const auto p = LinearSystemParams::sample(1);
  const auto ds = gen_linear(p, 100);
  const Matrix w = ds.series.values().middleRows(30, 5);
  const Vector expected = w.row(4).transpose() - p.transition() * w.row(3).transpose();
  CHECK((compute_deviation(*true_linear(p), w) - expected).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((compute_deviation(*true_linear(p), w) - ds.exogenous.row(34).transpose()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("rollout matches brute-force resimulation") {
  const auto p = LinearSystemParams::sample(2);
  const auto ds = gen_linear(p, 400);
  const auto gvar = true_linear(p);
  const Matrix& x = ds.series.values();
  const Matrix A = p.transition();
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> when(10, 350);
  for (std::size_t L = 1; L <= 5; ++L) {
    for (int trial = 0; trial < 4; ++trial) {
      const std::size_t t0 = when(rng);
      std::vector<RecourseAction> actions{{t0, random_vector(4, rng), {}, 0.0}};
      if (trial % 2 == 1 && L > 1) actions.push_back({t0 + 1, random_vector(4, rng), {}, 0.0});
      const auto roll = counterfactual_rollout(*gvar, x, actions, L);
      REQUIRE(roll.values.rows() == static_cast<Eigen::Index>(L + 1));
      CHECK(roll.start == t0);
      Vector prev;
      for (std::size_t t = t0; t <= t0 + L; ++t) {
        const auto ti = static_cast<Eigen::Index>(t);
        Vector cur = t == t0 ? Vector(x.row(ti).transpose()) : Vector(A * prev + ds.exogenous.row(ti).transpose());
        for (const auto& a : actions)
          if (a.t == t) cur += a.theta;
        CHECK((roll.values.row(ti - static_cast<Eigen::Index>(t0)).transpose() - cur).cwiseAbs().maxCoeff() < 1e-10);
        prev = cur;
      }
    }
  }
}

TEST_CASE("zero action rollout reproduces the factual series") {
  const auto p = LinearSystemParams::sample(3);
  const auto ds = gen_linear(p, 200);
  const std::vector<RecourseAction> actions{{50, Vector::Zero(4), {}, 0.0}};
  const auto roll = counterfactual_rollout(*true_linear(p), ds.series.values(), actions, 5);
  CHECK((roll.values - ds.series.values().middleRows(50, 6)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK_THROWS_AS(counterfactual_rollout(*true_linear(p), ds.series.values(), {{2, Vector::Zero(4), {}, 0.0}}, 1),
                  InsufficientHistory);
  CHECK_THROWS_AS(counterfactual_rollout(*true_linear(p), ds.series.values(), {}, 1), InvalidArgument);
}

TEST_CASE("recourse loss combines hinge and action norms") {
  ad::Tape tape;
  const ad::Var scores[] = {tape.constant(Matrix::Constant(1, 1, 2.0)), tape.constant(Matrix::Constant(1, 1, 0.5))};
  Matrix th(1, 2);
  th << 3.0, 4.0;
  const ad::Var thetas[] = {tape.constant(th)};
  CHECK(recourse_loss(tape, scores, thetas, 1.0, 0.1).scalar() == doctest::Approx(1.0 + 0.5));
  CHECK(recourse_loss(tape, scores, thetas, 1.0, 0.0).scalar() == doctest::Approx(1.0));
  const ad::Var normal[] = {tape.constant(Matrix::Constant(1, 1, 0.3))};
  const ad::Var zero[] = {tape.constant(Matrix::Zero(1, 2))};
  CHECK(recourse_loss(tape, normal, zero, 1.0, 0.1).scalar() == 0.0);
}

TEST_CASE("deviation of a point anomaly is u plus epsilon") {
  const auto p = LinearSystemParams::sample(5);
  AnomalySpec spec;
  spec.seed = 2;
  const auto ds = inject_anomalies(gen_linear(p, 2000), spec);
  const auto gvar = true_linear(p);
  REQUIRE_FALSE(ds.injected.empty());
  for (const auto& e : ds.injected) {
    const auto t = static_cast<Eigen::Index>(e.start);
    const Vector dev = compute_deviation(*gvar, ds.series.values().middleRows(t - 4, 5));
    Vector eps = Vector::Zero(4);
    for (std::size_t k = 0; k < e.dims.size(); ++k) eps(static_cast<Eigen::Index>(e.dims[k])) = e.epsilon(0, static_cast<Eigen::Index>(k));
    CHECK((dev - ds.exogenous.row(t).transpose() - eps).cwiseAbs().maxCoeff() < 1e-10);
  }
  Matrix on(5, 4);
  on.setRandom();
  on.row(4) = (p.transition() * on.row(3).transpose()).transpose();
  CHECK(compute_deviation(*gvar, on).isZero());
}

struct WalkFixture {
  LinearSystemParams p = LinearSystemParams::sample(4);
  GeneratedDataset ds = make_data(p);
  std::shared_ptr<const GvarModel> gvar;
  AnomalyDetector det;
  Detection detection;
  std::vector<Episode> episodes;

  static GeneratedDataset make_data(const LinearSystemParams& p) {
    AnomalySpec spec;
    spec.seed = 5;
    spec.rate = 0.03;
    spec.kind = AnomalyKind::ExternalSeq;
    return inject_anomalies(gen_linear(p, 4000), spec);
  }

  WalkFixture() {
    gvar = true_linear(p);
    det = AnomalyDetector::residual(gvar, identity_stats(4), 5);
    det.calibrate(gen_linear(p, 4000).series.values(), 0.99);
    detection = det.detect(ds.series);
    episodes = find_episodes(detection.flagged);
  }
};

TEST_CASE("episode walks") {
  WalkFixture f;
  REQUIRE(f.episodes.size() > 5);
  const Matrix& z = f.ds.series.values();
  const Episode ep = f.episodes[1];

  SUBCASE("a null policy leaves the factual scores") {
    const auto r = explain(*f.gvar, f.det, null_policy(4), z, ep, {});
    CHECK(r.flipped_steps == 0);
    CHECK_FALSE(r.flipped);
    CHECK(r.detected_steps == ep.length());
    for (std::size_t t = ep.start; t <= ep.end; ++t)
      CHECK(r.scores[t - r.first_step] == doctest::Approx(f.detection.scores[t]).epsilon(1e-10));
  }

  SUBCASE("zero-head function starts at theta = 0") {
    RecourseFunction h(4, 5, 7);
    const auto r = explain(*f.gvar, f.det, recad_policy(h), z, ep, {});
    REQUIRE_FALSE(r.actions.empty());
    for (const auto& a : r.actions) CHECK(a.theta.isZero());
    CHECK(r.total_cost() == 0.0);
  }

  SUBCASE("action budget caps acted steps") {
    WalkConfig cfg;
    cfg.max_actions = 1;
    const auto r = explain(*f.gvar, f.det, null_policy(4), z, ep, cfg);
    CHECK(r.steps_used() == 1);
  }

  SUBCASE("reports carry raw units and weighted costs") {
    StandardizationStats st{Eigen::RowVectorXd::Zero(4), Eigen::RowVectorXd::Constant(4, 2.0)};
    auto scaled = AnomalyDetector::residual(f.gvar, st, 5);
    scaled.set_threshold(f.det.threshold() / 2.0, 0.99);
    const Matrix zs = z / 2.0;
    Vector theta(4);
    theta << 3.0, 0.0, 4.0, 0.0;
    Vector c(4);
    c << 1.0, 1.0, 2.0, 1.0;
    const auto r = explain(*f.gvar, scaled, constant_policy(theta), zs, ep, {}, c);
    REQUIRE_FALSE(r.actions.empty());
    const auto& a = r.actions.front();
    CHECK((a.theta_raw - 2.0 * theta).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(a.cost == doctest::Approx(std::sqrt(36.0 + 256.0)));
    CHECK(r.counterfactual.row(0)(0) == doctest::Approx(z(static_cast<Eigen::Index>(ep.start), 0) + 6.0));
  }

  SUBCASE("reported scores match re-scoring the emitted counterfactual") {
    Vector theta(4);
    theta << -1.0, 0.5, 0.0, 2.0;
    for (const auto& e : {f.episodes[0], f.episodes[2], f.episodes[3]}) {
      const auto r = explain(*f.gvar, f.det, constant_policy(theta), z, e, {});
      Matrix joined = z.topRows(static_cast<Eigen::Index>(r.first_step + r.scores.size()));
      joined.middleRows(static_cast<Eigen::Index>(r.first_step), r.counterfactual.rows()) =
          apply_standardizer(r.counterfactual, f.det.stats());
      for (std::size_t i = 0; i < r.scores.size(); ++i) {
        const auto end = static_cast<Eigen::Index>(r.first_step + i);
        CHECK(f.det.score(joined.middleRows(end - 4, 5)) == doctest::Approx(r.scores[i]).epsilon(1e-12));
      }
    }
  }

  SUBCASE("unflipped long episodes stop at the action cap") {
    auto eager = f.det;
    eager.set_threshold(0.0, 0.99);
    const Episode longer{100, 114, std::nullopt};
    const auto r = explain(*f.gvar, eager, null_policy(4), z, longer, {});
    CHECK(r.steps_used() == 10);
    const RecourseReport reports[] = {r};
    CHECK(action_step(reports) == 10.0);
  }

  SUBCASE("gradient of the episode loss matches finite differences") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      RecourseFunction h(4, 5, seed, RecourseVariant::Full, 16, false);
      WalkConfig cfg;
      cfg.lookahead = 2;
      CHECK(recourse_gradient_check(h, *f.gvar, f.det, z, f.episodes[seed], cfg) < 1e-4);
    }
  }

  SUBCASE("training reduces the episode loss") {
    RecourseTrainConfig cfg;
    cfg.epochs = 5;
    cfg.hidden = 16;
    cfg.learning_rate = 1e-2;
    RecourseTrainReport report;
    train_recourse(*f.gvar, f.det, z, f.episodes, cfg, &report);
    REQUIRE(report.epoch_loss.size() == 5);
    CHECK(report.epoch_loss.back() < report.epoch_loss.front());
  }
}

TEST_CASE("ablations ignore their disabled input") {
  std::mt19937_64 rng(8);
  Matrix h1(4, 3), h2(4, 3);
  for (Eigen::Index i = 0; i < 4; ++i) {
    h1.row(i) = random_vector(3, rng).transpose();
    h2.row(i) = random_vector(3, rng).transpose();
  }
  const Vector d1 = random_vector(3, rng), d2 = random_vector(3, rng);

  const RecourseFunction dev(3, 5, 1, RecourseVariant::DeviationOnly, 8, false);
  CHECK((dev.predict(h1, d1) - dev.predict(h2, d1)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((dev.predict(h1, d1) - dev.predict(h1, d2)).cwiseAbs().maxCoeff() > 0.0);

  const RecourseFunction seq(3, 5, 1, RecourseVariant::SequenceOnly, 8, false);
  CHECK((seq.predict(h1, d1) - seq.predict(h1, d2)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((seq.predict(h1, d1) - seq.predict(h2, d1)).cwiseAbs().maxCoeff() > 0.0);

  const RecourseFunction full(3, 5, 1, RecourseVariant::Full, 8, false);
  CHECK((full.predict(h1, d1) - full.predict(h2, d1)).cwiseAbs().maxCoeff() > 0.0);
  CHECK((full.predict(h1, d1) - full.predict(h1, d2)).cwiseAbs().maxCoeff() > 0.0);
  CHECK_THROWS_AS(full.predict(h1.topRows(3), d1), DimensionMismatch);
}

TEST_CASE("recourse checkpoints round trip") {
  std::mt19937_64 rng(9);
  const RecourseFunction h(3, 5, 2, RecourseVariant::SequenceOnly, 6, false);
  const auto back = recourse_from_json(to_json(h));
  Matrix hist(4, 3);
  for (Eigen::Index i = 0; i < 4; ++i) hist.row(i) = random_vector(3, rng).transpose();
  const Vector dev = random_vector(3, rng);
  CHECK(back.predict(hist, dev) == h.predict(hist, dev));
  CHECK(back.variant() == RecourseVariant::SequenceOnly);
  CHECK(recourse_variant_from_string("no_lstm") == RecourseVariant::DeviationOnly);
  CHECK_THROWS_AS(recourse_variant_from_string("bogus"), InvalidArgument);
}

TEST_CASE("training preconditions") {
  const auto p = LinearSystemParams::sample(10);
  auto gvar = true_linear(p);
  auto det = AnomalyDetector::residual(gvar, identity_stats(4), 5);
  det.set_threshold(1.0, 0.99);
  RecourseTrainConfig cfg;
  const Matrix z = gen_linear(p, 100).series.values();
  CHECK_THROWS_AS(train_recourse(*gvar, det, z, {}, cfg, nullptr), EmptyInput);
  cfg.lookahead = 0;
  CHECK_THROWS_AS(train_recourse(*gvar, det, z, {{10, 12, std::nullopt}}, cfg, nullptr), ParameterError);
}
