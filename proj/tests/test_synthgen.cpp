#include <cmath>
#include <set>

#include "doctest.h"

#include "recad/errors.hpp"
#include "recad/synthgen.hpp"

using namespace recad;

namespace {

Matrix clean_values(const GeneratedDataset& ds) { return resimulate(ds, false); }

LotkaVolterraParams small_lv(std::uint64_t seed) {
  auto p = LotkaVolterraParams::with_default_adjacency(3);
  p.seed = seed;
  return p;
}

}  // namespace

TEST_CASE("seed derivation separates streams") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 10; ++s)
    for (std::uint64_t stream = 0; stream < 10; ++stream) seen.insert(derive_seed(s, stream));
  CHECK(seen.size() == 100);
  CHECK(derive_seed(7, 3) == derive_seed(7, 3));
}

TEST_CASE("linear coefficients are drawn inside the admissible band") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto p = LinearSystemParams::sample(seed);
    for (double a : p.coefficients) {
      CHECK(std::abs(a) >= 0.2);
      CHECK(std::abs(a) <= 0.8);
    }
  }
  auto bad = LinearSystemParams::sample(1);
  bad.coefficients[4] = 0.9;
  CHECK_THROWS_AS(gen_linear(bad, 200), ParameterError);
  bad.coefficients[4] = -0.1;
  CHECK_THROWS_AS(gen_linear(bad, 200), ParameterError);
  CHECK_THROWS_AS(gen_linear(LinearSystemParams::sample(1), 99), InvalidArgument);
}

TEST_CASE("noise-free linear system from zero stays at zero") {
  auto p = LinearSystemParams::sample(3);
  p.noise_std = 0.0;
  const auto ds = gen_linear(p, 500);
  CHECK(ds.series.values().isZero());
  CHECK(ds.series.dims() == 4);
}

TEST_CASE("linear values follow the structural equations") {
  const auto p = LinearSystemParams::sample(4);
  const auto ds = gen_linear(p, 300);
  const auto& a = p.coefficients;
  const Matrix& x = ds.series.values();
  const Matrix& u = ds.exogenous;
  for (Eigen::Index t = 1; t < x.rows(); ++t) {
    CHECK(std::abs(x(t, 0) - (a[0] * x(t - 1, 0) + u(t, 0))) < 1e-12);
    CHECK(std::abs(x(t, 1) - (a[1] * x(t - 1, 1) + a[2] * x(t - 1, 0) + u(t, 1))) < 1e-12);
    CHECK(std::abs(x(t, 2) - (a[3] * x(t - 1, 2) + a[4] * x(t - 1, 1) + u(t, 2))) < 1e-12);
    CHECK(std::abs(x(t, 3) - (a[5] * x(t - 1, 3) + a[6] * x(t - 1, 1) + a[7] * x(t - 1, 2) + u(t, 3))) < 1e-12);
  }
  CHECK((x.row(0) - u.row(0)).isZero());
  // Transition matrix rows agree with the equations.
  const Matrix A = p.transition();
  CHECK((x.bottomRows(299).transpose() - (A * x.topRows(299).transpose() + u.bottomRows(299).transpose()))
            .cwiseAbs()
            .maxCoeff() < 1e-12);
}

TEST_CASE("resimulation reproduces generated series") {
  const auto lin = gen_linear(LinearSystemParams::sample(5), 2000);
  CHECK((resimulate(lin, true) - lin.series.values()).cwiseAbs().maxCoeff() < 1e-12);
  const auto lv = gen_lotka_volterra(small_lv(5), 500);
  CHECK((resimulate(lv, true) - lv.series.values()).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("generation is bit-identical for identical seeds") {
  const auto a = gen_linear(LinearSystemParams::sample(6), 1000);
  const auto b = gen_linear(LinearSystemParams::sample(6), 1000);
  CHECK(a.series.values() == b.series.values());
  CHECK(a.exogenous == b.exogenous);
  const auto c = gen_lotka_volterra(small_lv(6), 300);
  const auto d = gen_lotka_volterra(small_lv(6), 300);
  CHECK(c.series.values() == d.series.values());
  CHECK(gen_linear(LinearSystemParams::sample(7), 1000).series.values() != a.series.values());
}

TEST_CASE("zero populations are a fixed point") {
  const auto p = small_lv(1);
  const Matrix u = Matrix::Zero(200, 6);
  const auto sim = simulate_lotka_volterra(p, Vector::Zero(6), u, Perturbation::none(200, 6));
  CHECK(sim.values.isZero());
}

TEST_CASE("decoupled Lotka-Volterra follows closed forms") {
  auto p = small_lv(1);
  p.beta = 0.0;
  p.delta = 0.0;
  p.eta = 0.1;
  p.obs_noise_std = 0.0;
  Vector x0(6);
  x0 << 0.5, 2.0, 14.0, 3.0, 1.0, 0.2;
  const Eigen::Index T = 400;
  const auto sim = simulate_lotka_volterra(p, x0, Matrix::Zero(T, 6), Perturbation::none(T, 6));
  const double K = p.alpha / p.eta;
  for (Eigen::Index t = 0; t < T; t += 7) {
    const double time = static_cast<double>(t) * p.dt * static_cast<double>(p.subsample);
    for (int i = 0; i < 3; ++i) {
      const double e = std::exp(p.alpha * time);
      const double logistic = K * x0(i) * e / (K + x0(i) * (e - 1.0));
      CHECK(std::abs(sim.values(t, i) - logistic) < 1e-6 * std::max(1.0, logistic));
      const double decay = x0(3 + i) * std::exp(-p.rho * time);
      CHECK(std::abs(sim.values(t, 3 + i) - decay) < 1e-8);
    }
  }
}

TEST_CASE("refining the step converges for coupled dynamics") {
  auto coarse = small_lv(2);
  coarse.obs_noise_std = 0.0;
  auto fine = coarse;
  fine.dt = coarse.dt / 10.0;
  fine.subsample = coarse.subsample * 10;
  Vector x0(6);
  x0 << 4.0, 3.5, 4.5, 1.2, 1.4, 1.3;
  const auto a = simulate_lotka_volterra(coarse, x0, Matrix::Zero(300, 6), Perturbation::none(300, 6));
  const auto b = simulate_lotka_volterra(fine, x0, Matrix::Zero(300, 6), Perturbation::none(300, 6));
  CHECK((a.values - b.values).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("default Lotka-Volterra stays positive and bounded") {
  auto p = LotkaVolterraParams::with_default_adjacency(10);
  p.seed = 3;
  const auto ds = gen_lotka_volterra(p, 20000);
  CHECK(ds.series.dims() == 20);
  const Matrix clean = ds.series.values() - ds.exogenous;
  CHECK(clean.minCoeff() > 0.0);
  CHECK(clean.maxCoeff() < p.bound);
  CHECK(ds.series.dim_names().front() == "prey1");
  CHECK(ds.series.dim_names().back() == "predator10");
}

TEST_CASE("default adjacency is consistent") {
  const auto p = LotkaVolterraParams::with_default_adjacency(4);
  for (std::size_t j = 0; j < 4; ++j)
    for (auto i : p.predator_parents[j]) {
      const auto& back = p.prey_parents[i];
      CHECK(std::find(back.begin(), back.end(), j) != back.end());
    }
  auto bad = p;
  bad.prey_parents[2].clear();
  CHECK_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("instability is reported with its step") {
  auto p = small_lv(1);
  p.alpha = 50.0;
  p.eta = 1e-9;
  p.bound = 1e3;
  Vector initial(6);
  initial << 1.0, 1.0, 1.0, 1e-3, 1e-3, 1e-3;
  try {
    simulate_lotka_volterra(p, initial, Matrix::Zero(100, 6), Perturbation::none(100, 6));
    FAIL("expected an instability error");
  } catch (const InstabilityError& e) {
    CHECK(e.step() > 0);
  }
}

TEST_CASE("zero rate is a no-op") {
  const auto ds = gen_linear(LinearSystemParams::sample(8), 1000);
  AnomalySpec spec;
  spec.rate = 0.0;
  const auto out = inject_anomalies(ds, spec);
  CHECK(out.series.values() == ds.series.values());
  CHECK(out.injected.empty());
}

TEST_CASE("injected labels match event records") {
  for (auto kind : {AnomalyKind::ExternalPoint, AnomalyKind::ExternalSeq, AnomalyKind::StructuralSeq}) {
    const auto ds = gen_linear(LinearSystemParams::sample(9), 20000);
    AnomalySpec spec;
    spec.kind = kind;
    spec.rate = kind == AnomalyKind::ExternalPoint ? 0.02 : 0.06;
    spec.seed = 3;
    const auto out = inject_anomalies(ds, spec);
    std::vector<int> cover(20000, 0);
    for (const auto& e : out.injected) {
      CHECK(e.kind == kind);
      CHECK(!e.dims.empty());
      CHECK(e.dims.size() <= 3);
      if (kind == AnomalyKind::ExternalPoint) CHECK(e.length == 1);
      else CHECK((e.length >= 3 && e.length <= 5));
      for (std::size_t s = 0; s < e.length; ++s) ++cover[e.start + s];
    }
    const auto& labels = out.series.labels();
    std::size_t abnormal = 0;
    for (std::size_t t = 0; t < labels.size(); ++t) {
      CHECK(cover[t] <= 1);
      CHECK(labels[t] == (cover[t] == 1));
      abnormal += labels[t];
    }
    const double realized = static_cast<double>(abnormal) / 20000.0;
    CHECK(realized >= 0.8 * spec.rate);
    CHECK(realized <= 1.2 * spec.rate);
  }
}

TEST_CASE("removing the anomaly terms restores the clean series") {
  const auto ds = gen_linear(LinearSystemParams::sample(10), 5000);
  for (auto kind : {AnomalyKind::ExternalPoint, AnomalyKind::ExternalSeq, AnomalyKind::StructuralSeq}) {
    AnomalySpec spec;
    spec.kind = kind;
    spec.rate = 0.05;
    const auto out = inject_anomalies(ds, spec);
    CHECK(clean_values(out) == ds.series.values());
    CHECK((resimulate(out, true) - out.series.values()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(out.series.values() != ds.series.values());
  }
  const auto lv = gen_lotka_volterra(small_lv(10), 2000);
  AnomalySpec spec;
  spec.rate = 0.05;
  const auto out = inject_anomalies(lv, spec);
  CHECK((clean_values(out) - lv.series.values()).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("a linear point anomaly ripples through the transition matrix") {
  const auto p = LinearSystemParams::sample(11);
  const auto ds = gen_linear(p, 1000);
  AnomalySpec spec;
  spec.rate = 0.001;
  spec.seed = 5;
  const auto out = inject_anomalies(ds, spec);
  REQUIRE(out.injected.size() == 1);
  const auto& e = out.injected.front();
  Vector eps = Vector::Zero(4);
  for (std::size_t i = 0; i < e.dims.size(); ++i) eps(static_cast<Eigen::Index>(e.dims[i])) = e.epsilon(0, static_cast<Eigen::Index>(i));
  const Matrix diff = out.series.values() - ds.series.values();
  const auto t = static_cast<Eigen::Index>(e.start);
  CHECK(diff.topRows(t).isZero());
  const Matrix A = p.transition();
  Vector expected = eps;
  for (Eigen::Index k = 0; k < 6; ++k) {
    CHECK((diff.row(t + k).transpose() - expected).cwiseAbs().maxCoeff() < 1e-12);
    expected = A * expected;
  }
}

TEST_CASE("structural swaps flip the self coefficient with gain") {
  const auto p = LinearSystemParams::sample(12);
  const auto ds = gen_linear(p, 3000);
  AnomalySpec spec;
  spec.kind = AnomalyKind::StructuralSeq;
  spec.rate = 0.02;
  const auto out = inject_anomalies(ds, spec);
  const Matrix& x = out.series.values();
  const Matrix& u = out.exogenous;
  const Matrix A = p.transition();
  for (const auto& e : out.injected) {
    for (std::size_t s = 0; s < e.length; ++s) {
      const auto t = static_cast<Eigen::Index>(e.start + s);
      Vector pred = A * x.row(t - 1).transpose() + u.row(t).transpose();
      for (auto j : e.dims) {
        const auto jj = static_cast<Eigen::Index>(j);
        pred(jj) += (-2.5 * A(jj, jj)) * x(t - 1, jj);
      }
      CHECK((x.row(t).transpose() - pred).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("Lotka-Volterra external anomalies stay in the observation") {
  const auto lv = gen_lotka_volterra(small_lv(13), 2000);
  AnomalySpec spec;
  spec.rate = 0.01;
  const auto out = inject_anomalies(lv, spec);
  const Matrix diff = out.series.values() - lv.series.values();
  std::vector<bool> touched(2000, false);
  for (const auto& e : out.injected) touched[e.start] = true;
  for (Eigen::Index t = 0; t < 2000; ++t)
    if (!touched[static_cast<std::size_t>(t)]) CHECK(diff.row(t).isZero());
}

TEST_CASE("placement and anomaly settings errors") {
  const auto ds = gen_linear(LinearSystemParams::sample(14), 1000);
  AnomalySpec spec;
  spec.rate = 0.2;
  CHECK_THROWS_AS(inject_anomalies(ds, spec), PlacementError);
  spec.rate = 0.3;
  CHECK_THROWS_AS(inject_anomalies(ds, spec), InvalidArgument);
  spec.rate = 0.02;
  spec.kind = AnomalyKind::ExternalSeq;
  spec.seq_len_min = 1;
  CHECK_THROWS_AS(inject_anomalies(ds, spec), InvalidArgument);
  spec.seq_len_min = 3;
  const auto once = inject_anomalies(ds, spec);
  CHECK_THROWS_AS(inject_anomalies(once, spec), InvalidArgument);
}

TEST_CASE("split datasets continue the same trajectory") {
  const auto lin = gen_linear(LinearSystemParams::sample(15), 3000);
  const auto [head, tail] = split_dataset(lin, 1000);
  CHECK(head.series.steps() == 1000);
  CHECK(tail.series.steps() == 2000);
  CHECK((resimulate(tail, false) - lin.series.values().bottomRows(2000)).cwiseAbs().maxCoeff() < 1e-12);
  const auto lv = gen_lotka_volterra(small_lv(15), 1500);
  const auto [lhead, ltail] = split_dataset(lv, 500);
  CHECK((resimulate(ltail, false) - lv.series.values().bottomRows(1000)).cwiseAbs().maxCoeff() < 1e-8);
  CHECK_THROWS_AS(split_dataset(lin, 0), InvalidArgument);
}

TEST_CASE("events json is versioned") {
  const auto ds = gen_linear(LinearSystemParams::sample(16), 2000);
  AnomalySpec spec;
  const auto out = inject_anomalies(ds, spec);
  const auto j = events_to_json(out);
  CHECK(j["schema"] == 1);
  CHECK(j["events"].size() == out.injected.size());
  CHECK(j["system"]["kind"] == "linear");
}
