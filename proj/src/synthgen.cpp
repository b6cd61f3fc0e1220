#include "recad/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "recad/errors.hpp"

namespace recad {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

using Rng = std::mt19937_64;

enum Stream : std::uint64_t {
  kCoefficients = 1,
  kExogenous = 2,
  kInitial = 3,
  kPlacement = 4,
  kMagnitudes = 5,
};

}  // namespace

LinearSystemParams LinearSystemParams::sample(std::uint64_t seed) {
  Rng rng(derive_seed(seed, kCoefficients));
  std::uniform_real_distribution<double> mag(0.2, 0.8);
  std::bernoulli_distribution sign(0.5);
  LinearSystemParams p;
  p.seed = seed;
  for (double& a : p.coefficients) {
    const double m = mag(rng);
    a = sign(rng) ? m : -m;
  }
  return p;
}

Matrix LinearSystemParams::transition() const {
  const auto& a = coefficients;
  Matrix A = Matrix::Zero(4, 4);
  A(0, 0) = a[0];
  A(1, 1) = a[1];
  A(1, 0) = a[2];
  A(2, 2) = a[3];
  A(2, 1) = a[4];
  A(3, 3) = a[5];
  A(3, 1) = a[6];
  A(3, 2) = a[7];
  return A;
}

namespace {

void validate_linear(const LinearSystemParams& p) {
  for (std::size_t i = 0; i < p.coefficients.size(); ++i) {
    const double m = std::abs(p.coefficients[i]);
    if (!(m >= 0.2 && m <= 0.8)) {
      throw ParameterError("coefficient a" + std::to_string(i + 1) + " = " + std::to_string(p.coefficients[i]) +
                           " lies outside [0.2, 0.8] in magnitude");
    }
  }
  if (!(p.noise_std >= 0.0) || !std::isfinite(p.noise_std)) throw ParameterError("noise_std must be >= 0");
}

}  // namespace

LotkaVolterraParams LotkaVolterraParams::with_default_adjacency(std::size_t p) {
  LotkaVolterraParams params;
  params.p = p;
  params.prey_parents.assign(p, {});
  params.predator_parents.assign(p, {});
  for (std::size_t j = 0; j < p; ++j) {
    params.predator_parents[j] = {j};
    if (p > 1) params.predator_parents[j].push_back((j + p - 1) % p);
  }
  for (std::size_t i = 0; i < p; ++i) {
    params.prey_parents[i] = {i};
    if (p > 1) params.prey_parents[i].push_back((i + 1) % p);
  }
  return params;
}

void LotkaVolterraParams::validate() const {
  if (p == 0) throw ParameterError("Lotka-Volterra needs at least one species per role");
  for (double v : {alpha, eta, rho, dt}) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ParameterError("alpha, eta, rho and dt must be positive");
  }
  // Zero coupling is allowed and decouples the two roles.
  for (double v : {beta, delta}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ParameterError("beta and delta must be non-negative");
  }
  if (subsample == 0) throw ParameterError("subsample must be >= 1");
  if (obs_noise_std < 0.0) throw ParameterError("observation noise must be >= 0");
  if (prey_parents.size() != p || predator_parents.size() != p)
    throw ParameterError("adjacency must list parents for every species");
  for (const auto& parents : prey_parents) {
    if (parents.empty()) throw ParameterError("every prey needs at least one predator parent");
    for (auto j : parents)
      if (j >= p) throw ParameterError("predator index out of range");
  }
  for (const auto& parents : predator_parents) {
    if (parents.empty()) throw ParameterError("every predator needs at least one prey parent");
    for (auto k : parents)
      if (k >= p) throw ParameterError("prey index out of range");
  }
}

std::string to_string(AnomalyKind kind) {
  switch (kind) {
    case AnomalyKind::ExternalPoint:
      return "external_point";
    case AnomalyKind::ExternalSeq:
      return "external_seq";
    case AnomalyKind::StructuralSeq:
      return "structural_seq";
  }
  return "unknown";
}

AnomalyKind anomaly_kind_from_string(const std::string& s) {
  if (s == "external_point" || s == "point") return AnomalyKind::ExternalPoint;
  if (s == "external_seq" || s == "seq") return AnomalyKind::ExternalSeq;
  if (s == "structural_seq" || s == "structural") return AnomalyKind::StructuralSeq;
  throw InvalidArgument("unknown anomaly kind '" + s + "'");
}

void AnomalySpec::validate() const {
  if (!(rate >= 0.0 && rate <= 0.2)) throw InvalidArgument("anomaly rate must lie in (0, 0.2]");
  if (!(magnitude_min > 0.0 && magnitude_max >= magnitude_min)) throw InvalidArgument("bad magnitude range");
  if (kind != AnomalyKind::ExternalPoint && (seq_len_min < 2 || seq_len_max < seq_len_min))
    throw InvalidArgument("sequence anomalies need 2 <= seq_len_min <= seq_len_max");
  if (max_affected_dims == 0) throw InvalidArgument("max_affected_dims must be >= 1");
}

Perturbation Perturbation::none(Eigen::Index T, Eigen::Index d) {
  Perturbation p;
  p.additive = Matrix::Zero(T, d);
  p.structural = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(T, d, false);
  return p;
}

namespace {

void check_perturbation(const Perturbation& pert, Eigen::Index T, Eigen::Index d) {
  if (pert.additive.rows() != T || pert.additive.cols() != d || pert.structural.rows() != T ||
      pert.structural.cols() != d) {
    throw DimensionMismatch("perturbation shape does not match the exogenous trace");
  }
}

}  // namespace

Simulation simulate_linear(const LinearSystemParams& params, const Vector& initial, const Matrix& exogenous,
                           const Perturbation& perturbation) {
  validate_linear(params);
  const Eigen::Index T = exogenous.rows();
  if (exogenous.cols() != 4 || initial.size() != 4) throw DimensionMismatch("the Linear system has d = 4");
  check_perturbation(perturbation, T, 4);
  const auto& a = params.coefficients;
  Simulation sim;
  sim.values.resize(T, 4);
  sim.applied = perturbation.additive;
  Vector prev = initial;
  for (Eigen::Index t = 0; t < T; ++t) {
    std::array<double, 4> f{
        a[0] * prev(0),
        a[1] * prev(1) + a[2] * prev(0),
        a[3] * prev(2) + a[4] * prev(1),
        a[5] * prev(3) + a[6] * prev(1) + a[7] * prev(2),
    };
    for (int j = 0; j < 4; ++j) {
      if (perturbation.structural(t, j)) {
        // Abnormal mechanism: the lag-1 self coefficient flips sign with 1.5x gain.
        const double self = a[LinearSystemParams::kSelfCoefficient[j]];
        sim.applied(t, j) += (-1.5 * self - self) * prev(j);
      }
      sim.values(t, j) = f[j] + exogenous(t, j) + sim.applied(t, j);
    }
    prev = sim.values.row(t).transpose();
  }
  return sim;
}

GeneratedDataset gen_linear(const LinearSystemParams& params, std::size_t T) {
  validate_linear(params);
  if (T < 100) throw InvalidArgument("generators need T >= 100");
  Rng rng(derive_seed(params.seed, kExogenous));
  std::normal_distribution<double> noise(0.0, 1.0);
  Matrix u(static_cast<Eigen::Index>(T), 4);
  for (Eigen::Index t = 0; t < u.rows(); ++t)
    for (Eigen::Index j = 0; j < 4; ++j) u(t, j) = params.noise_std * noise(rng);
  Vector initial = Vector::Zero(4);
  auto sim = simulate_linear(params, initial, u, Perturbation::none(u.rows(), 4));
  std::vector<std::string> names{"x1", "x2", "x3", "x4"};
  return GeneratedDataset{MultivariateSeries(std::move(sim.values), std::vector<bool>(T, false), names), u, {},
                          params, initial};
}

namespace {

Vector lv_derivative(const LotkaVolterraParams& p, const Vector& s, const std::vector<bool>& swapped) {
  const std::size_t n = p.p;
  Vector ds(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = s(i);
    double pred = 0.0;
    for (auto j : p.prey_parents[i]) pred += s(n + j);
    const double growth = swapped[i] ? -1.5 * p.alpha : p.alpha;
    ds(i) = growth * x - p.beta * x * pred - p.eta * x * x;
  }
  for (std::size_t j = 0; j < n; ++j) {
    const double y = s(n + j);
    double prey = 0.0;
    for (auto k : p.predator_parents[j]) prey += s(k);
    const double death = swapped[n + j] ? -1.5 * p.rho : p.rho;
    ds(n + j) = p.delta * y * prey - death * y;
  }
  return ds;
}

Vector lv_advance(const LotkaVolterraParams& p, Vector s, const std::vector<bool>& swapped) {
  const double h = p.dt;
  for (std::size_t k = 0; k < p.subsample; ++k) {
    const Vector k1 = lv_derivative(p, s, swapped);
    const Vector k2 = lv_derivative(p, s + 0.5 * h * k1, swapped);
    const Vector k3 = lv_derivative(p, s + 0.5 * h * k2, swapped);
    const Vector k4 = lv_derivative(p, s + h * k3, swapped);
    s += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return s;
}

void check_state(const LotkaVolterraParams& p, const Vector& s, std::size_t t, bool allow_zero) {
  for (Eigen::Index j = 0; j < s.size(); ++j) {
    const double v = s(j);
    if (!std::isfinite(v) || v > p.bound || v < 0.0 || (!allow_zero && v == 0.0)) {
      throw InstabilityError(t, "population " + std::to_string(j) + " reached " + std::to_string(v));
    }
  }
}

}  // namespace

Simulation simulate_lotka_volterra(const LotkaVolterraParams& params, const Vector& initial,
                                   const Matrix& exogenous, const Perturbation& perturbation) {
  params.validate();
  const Eigen::Index d = static_cast<Eigen::Index>(params.dims());
  const Eigen::Index T = exogenous.rows();
  if (exogenous.cols() != d || initial.size() != d) throw DimensionMismatch("Lotka-Volterra has d = 2p");
  check_perturbation(perturbation, T, d);
  // All-zero initial populations are a fixed point and stay valid.
  const bool extinct = (initial.array() == 0.0).all();
  Simulation sim;
  sim.values.resize(T, d);
  sim.applied = perturbation.additive;
  Vector state = initial;
  std::vector<bool> normal(static_cast<std::size_t>(d), false);
  std::vector<bool> swapped(static_cast<std::size_t>(d), false);
  for (Eigen::Index t = 0; t < T; ++t) {
    if (t > 0) {
      bool any_swap = false;
      for (Eigen::Index j = 0; j < d; ++j) {
        swapped[j] = perturbation.structural(t, j);
        any_swap = any_swap || swapped[j];
      }
      if (any_swap) {
        const Vector expected = lv_advance(params, state, normal);
        state = lv_advance(params, state, swapped);
        for (Eigen::Index j = 0; j < d; ++j)
          if (swapped[j]) sim.applied(t, j) = state(j) - expected(j);
      } else {
        state = lv_advance(params, state, normal);
      }
    }
    check_state(params, state, static_cast<std::size_t>(t), extinct);
    sim.values.row(t) = state.transpose() + exogenous.row(t);
    // External terms add to the observation input u and leave the state alone.
    for (Eigen::Index j = 0; j < d; ++j) {
      if (perturbation.additive(t, j) == 0.0 || perturbation.structural(t, j)) continue;
      double eps = perturbation.additive(t, j);
      // A dip that would drive the observed population negative is reflected.
      if (sim.values(t, j) + eps <= 0.0) eps = -eps;
      sim.applied(t, j) = eps;
      sim.values(t, j) += eps;
    }
  }
  return sim;
}

GeneratedDataset gen_lotka_volterra(const LotkaVolterraParams& params, std::size_t T) {
  params.validate();
  if (params.beta == 0.0 || params.delta == 0.0)
    throw ParameterError("the coexistence starting point needs beta and delta > 0");
  if (T < 100) throw InvalidArgument("generators need T >= 100");
  const Eigen::Index d = static_cast<Eigen::Index>(params.dims());
  Rng init_rng(derive_seed(params.seed, kInitial));
  // Start near the coexistence equilibrium (prey rho/delta per predator parent).
  const double prey_eq = params.rho / params.delta;
  std::uniform_real_distribution<double> jitter(0.7, 1.3);
  Vector initial(d);
  for (std::size_t i = 0; i < params.p; ++i) initial(i) = prey_eq * jitter(init_rng);
  for (std::size_t j = 0; j < params.p; ++j) {
    const double pred_eq = (params.alpha - params.eta * prey_eq) /
                           (params.beta * static_cast<double>(params.prey_parents[j].size()));
    initial(params.p + j) = pred_eq * jitter(init_rng);
  }
  Rng rng(derive_seed(params.seed, kExogenous));
  std::normal_distribution<double> noise(0.0, 1.0);
  Matrix n(static_cast<Eigen::Index>(T), d);
  for (Eigen::Index t = 0; t < n.rows(); ++t)
    for (Eigen::Index j = 0; j < d; ++j) n(t, j) = params.obs_noise_std * noise(rng);
  auto sim = simulate_lotka_volterra(params, initial, n, Perturbation::none(n.rows(), d));
  std::vector<std::string> names;
  for (std::size_t i = 0; i < params.p; ++i) names.push_back("prey" + std::to_string(i + 1));
  for (std::size_t j = 0; j < params.p; ++j) names.push_back("predator" + std::to_string(j + 1));
  return GeneratedDataset{MultivariateSeries(std::move(sim.values), std::vector<bool>(T, false), names), n, {},
                          params, initial};
}

namespace {

Simulation simulate(const GeneratedDataset& ds, const Matrix& exogenous, const Perturbation& pert) {
  return std::visit(
      [&](const auto& params) -> Simulation {
        using P = std::decay_t<decltype(params)>;
        if constexpr (std::is_same_v<P, LinearSystemParams>) {
          return simulate_linear(params, ds.initial_state, exogenous, pert);
        } else {
          return simulate_lotka_volterra(params, ds.initial_state, exogenous, pert);
        }
      },
      ds.system);
}

Perturbation perturbation_from_events(const std::vector<InjectedEvent>& events, Eigen::Index T, Eigen::Index d) {
  Perturbation pert = Perturbation::none(T, d);
  for (const auto& e : events) {
    for (std::size_t s = 0; s < e.length; ++s) {
      for (std::size_t k = 0; k < e.dims.size(); ++k) {
        pert.additive(static_cast<Eigen::Index>(e.start + s), static_cast<Eigen::Index>(e.dims[k])) =
            e.epsilon(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k));
      }
    }
  }
  return pert;
}

}  // namespace

Matrix resimulate(const GeneratedDataset& dataset, bool include_injections) {
  const Eigen::Index T = dataset.exogenous.rows();
  const Eigen::Index d = dataset.exogenous.cols();
  if (!include_injections) return simulate(dataset, dataset.exogenous, Perturbation::none(T, d)).values;
  return simulate(dataset, dataset.exogenous, perturbation_from_events(dataset.injected, T, d)).values;
}

Matrix resimulate_with_exogenous(const GeneratedDataset& dataset, const Matrix& exogenous) {
  return simulate(dataset, exogenous, Perturbation::none(exogenous.rows(), exogenous.cols())).values;
}

std::pair<GeneratedDataset, GeneratedDataset> split_dataset(const GeneratedDataset& dataset, std::size_t n) {
  const std::size_t T = dataset.series.steps();
  if (!dataset.injected.empty()) throw InvalidArgument("only clean datasets can be split");
  if (n == 0 || n >= T) throw InvalidArgument("split point must fall inside the series");
  const auto head_rows = static_cast<Eigen::Index>(n);
  const auto tail_rows = static_cast<Eigen::Index>(T - n);
  GeneratedDataset head{dataset.series.slice(0, n), dataset.exogenous.topRows(head_rows), {}, dataset.system,
                        dataset.initial_state};
  Vector tail_initial;
  if (std::holds_alternative<LinearSystemParams>(dataset.system)) {
    tail_initial = dataset.series.values().row(head_rows - 1).transpose();
  } else {
    tail_initial = (dataset.series.values().row(head_rows) - dataset.exogenous.row(head_rows)).transpose();
  }
  GeneratedDataset tail{dataset.series.slice(n, T), dataset.exogenous.bottomRows(tail_rows), {}, dataset.system,
                        tail_initial};
  return {std::move(head), std::move(tail)};
}

GeneratedDataset inject_anomalies(const GeneratedDataset& dataset, const AnomalySpec& spec) {
  spec.validate();
  if (spec.rate == 0.0) return dataset;
  if (!dataset.injected.empty()) throw InvalidArgument("dataset already carries injected anomalies");
  const std::size_t T = dataset.series.steps();
  const std::size_t d = dataset.series.dims();

  Eigen::RowVectorXd ref;
  if (spec.reference_std) {
    ref = *spec.reference_std;
    if (static_cast<std::size_t>(ref.size()) != d) throw DimensionMismatch("reference_std length differs from d");
  } else {
    ref = fit_standardizer(dataset.series).std;
  }

  Rng place_rng(derive_seed(spec.seed, kPlacement));
  const bool point = spec.kind == AnomalyKind::ExternalPoint;
  const auto target = static_cast<std::size_t>(std::llround(spec.rate * static_cast<double>(T)));
  std::vector<std::size_t> lengths;
  std::size_t covered = 0;
  std::uniform_int_distribution<std::size_t> len_dist(spec.seq_len_min, spec.seq_len_max);
  while (covered < target) {
    const std::size_t len = point ? 1 : len_dist(place_rng);
    lengths.push_back(len);
    covered += len;
  }
  if (lengths.empty()) return dataset;

  // Stars and bars: distribute the free slack uniformly between events so
  // that placements never overlap and keep min_gap normal steps around them.
  std::size_t required = spec.warmup;
  for (auto len : lengths) required += len + spec.min_gap;
  if (required > T) {
    throw PlacementError("rate " + std::to_string(spec.rate) + " needs " + std::to_string(required) +
                         " steps including gaps, series has " + std::to_string(T));
  }
  const std::size_t slack = T - required;
  std::uniform_int_distribution<std::size_t> slack_dist(0, slack);
  std::vector<std::size_t> offsets(lengths.size());
  for (auto& o : offsets) o = slack_dist(place_rng);
  std::sort(offsets.begin(), offsets.end());

  Rng mag_rng(derive_seed(spec.seed, kMagnitudes));
  std::uniform_real_distribution<double> mag(spec.magnitude_min, spec.magnitude_max);
  std::bernoulli_distribution sign(0.5);
  const std::size_t max_dims = std::min(spec.max_affected_dims, d);
  std::uniform_int_distribution<std::size_t> ndims_dist(1, max_dims);

  std::vector<InjectedEvent> events;
  Perturbation pert = Perturbation::none(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(d));
  std::size_t cursor = spec.warmup;
  for (std::size_t e = 0; e < lengths.size(); ++e) {
    InjectedEvent ev;
    ev.kind = spec.kind;
    ev.length = lengths[e];
    ev.start = cursor + offsets[e];
    cursor += lengths[e] + spec.min_gap;

    std::vector<std::size_t> all(d);
    std::iota(all.begin(), all.end(), 0);
    const std::size_t k = ndims_dist(mag_rng);
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, d - 1);
      std::swap(all[i], all[pick(mag_rng)]);
    }
    ev.dims.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(ev.dims.begin(), ev.dims.end());

    ev.epsilon = Matrix::Zero(static_cast<Eigen::Index>(ev.length), static_cast<Eigen::Index>(k));
    for (std::size_t s = 0; s < ev.length; ++s) {
      const auto t = static_cast<Eigen::Index>(ev.start + s);
      for (std::size_t i = 0; i < k; ++i) {
        const auto j = static_cast<Eigen::Index>(ev.dims[i]);
        if (spec.kind == AnomalyKind::StructuralSeq) {
          pert.structural(t, j) = true;
        } else {
          const double m = mag(mag_rng) * ref(j);
          pert.additive(t, j) = sign(mag_rng) ? m : -m;
        }
      }
    }
    events.push_back(std::move(ev));
  }

  Simulation sim = simulate(dataset, dataset.exogenous, pert);
  std::vector<bool> labels(T, false);
  for (auto& ev : events) {
    for (std::size_t s = 0; s < ev.length; ++s) {
      labels[ev.start + s] = true;
      for (std::size_t i = 0; i < ev.dims.size(); ++i) {
        ev.epsilon(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(i)) =
            sim.applied(static_cast<Eigen::Index>(ev.start + s), static_cast<Eigen::Index>(ev.dims[i]));
      }
    }
  }
  GeneratedDataset out = dataset;
  out.series = MultivariateSeries(std::move(sim.values), std::move(labels), dataset.series.dim_names());
  out.injected = std::move(events);
  return out;
}

nlohmann::json events_to_json(const GeneratedDataset& dataset) {
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : dataset.injected) {
    nlohmann::json eps = nlohmann::json::array();
    for (Eigen::Index s = 0; s < e.epsilon.rows(); ++s) {
      std::vector<double> row(e.epsilon.cols());
      for (Eigen::Index k = 0; k < e.epsilon.cols(); ++k) row[k] = e.epsilon(s, k);
      eps.push_back(row);
    }
    events.push_back({{"start", e.start}, {"length", e.length}, {"dims", e.dims}, {"kind", to_string(e.kind)},
                      {"epsilon", eps}});
  }
  nlohmann::json system;
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, LinearSystemParams>) {
          system = {{"kind", "linear"}, {"coefficients", p.coefficients}, {"noise_std", p.noise_std},
                    {"seed", p.seed}};
        } else {
          system = {{"kind", "lotka_volterra"}, {"p", p.p}, {"alpha", p.alpha}, {"beta", p.beta},
                    {"eta", p.eta}, {"delta", p.delta}, {"rho", p.rho}, {"dt", p.dt},
                    {"subsample", p.subsample}, {"obs_noise_std", p.obs_noise_std}, {"seed", p.seed},
                    {"prey_parents", p.prey_parents}, {"predator_parents", p.predator_parents}};
        }
      },
      dataset.system);
  return {{"schema", 1}, {"steps", dataset.series.steps()}, {"system", system}, {"events", events}};
}

}  // namespace recad
