#pragma once

// Seeded generators for the Linear and Lotka-Volterra benchmark systems and
// the three anomaly-injection regimes. Every dataset keeps its clean
// exogenous trace and the injected anomaly terms, so any series can be
// resimulated exactly from its ingredients.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"

#include "recad/series.hpp"

namespace recad {

// Stateless seed derivation (splitmix64) so independent streams can be
// carved out of one user seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// x1_t = a1 x1_{t-1} + u1_t
// x2_t = a2 x2_{t-1} + a3 x1_{t-1} + u2_t
// x3_t = a4 x3_{t-1} + a5 x2_{t-1} + u3_t
// x4_t = a6 x4_{t-1} + a7 x2_{t-1} + a8 x3_{t-1} + u4_t
struct LinearSystemParams {
  std::array<double, 8> coefficients{};
  double noise_std = 0.4;
  std::uint64_t seed = 0;

  // Coefficients drawn from U([-0.8,-0.2] u [0.2,0.8]).
  static LinearSystemParams sample(std::uint64_t seed);
  // A with x_t = A x_{t-1} + u_t.
  Matrix transition() const;
  // Index into `coefficients` of the lag-1 self term of each dimension.
  static constexpr std::array<int, 4> kSelfCoefficient{0, 1, 3, 5};
};

// Prey i:     dx/dt = alpha x - beta x * sum_{j in Pa(x)} y_j - eta x^2
// Predator j: dy/dt = delta y * sum_{k in Pa(y)} x_k - rho y
// integrated with RK4, observed every `subsample` steps with additive
// Gaussian observation noise. Columns are prey 0..p-1, then predators.
struct LotkaVolterraParams {
  std::size_t p = 10;
  double alpha = 1.1;
  double beta = 0.4;
  double eta = 2.75e-5;
  double delta = 0.1;
  double rho = 0.4;
  double dt = 0.01;
  std::size_t subsample = 10;
  double obs_noise_std = 0.05;
  // Any population above this (or non-positive) is an instability.
  double bound = 1e5;
  // prey_parents[i]: predators eating prey i; predator_parents[j]: prey of predator j.
  std::vector<std::vector<std::size_t>> prey_parents;
  std::vector<std::vector<std::size_t>> predator_parents;
  std::uint64_t seed = 0;

  // Predator j eats prey j and (j-1) mod p, so prey i is eaten by predators
  // i and (i+1) mod p.
  static LotkaVolterraParams with_default_adjacency(std::size_t p = 10);
  std::size_t dims() const { return 2 * p; }
  void validate() const;
};

enum class AnomalyKind { ExternalPoint, ExternalSeq, StructuralSeq };

std::string to_string(AnomalyKind kind);
AnomalyKind anomaly_kind_from_string(const std::string& s);

struct AnomalySpec {
  AnomalyKind kind = AnomalyKind::ExternalPoint;
  // Target fraction of abnormal steps.
  double rate = 0.02;
  // |epsilon| per affected dimension, in units of the reference std.
  double magnitude_min = 3.0;
  double magnitude_max = 5.0;
  std::size_t seq_len_min = 3;
  std::size_t seq_len_max = 5;
  // Each event hits a random subset of 1..max_affected_dims dimensions.
  std::size_t max_affected_dims = 3;
  // Normal steps kept between consecutive events and before the first one.
  std::size_t min_gap = 10;
  std::size_t warmup = 20;
  // Per-dimension scale for magnitudes; the clean series' own std when absent.
  std::optional<Eigen::RowVectorXd> reference_std;
  std::uint64_t seed = 0;

  void validate() const;
};

struct InjectedEvent {
  std::size_t start = 0;
  std::size_t length = 0;
  std::vector<std::size_t> dims;
  AnomalyKind kind = AnomalyKind::ExternalPoint;
  // length x dims.size(): the anomaly term added at each affected step.
  Matrix epsilon;
};

using SystemParams = std::variant<LinearSystemParams, LotkaVolterraParams>;

struct GeneratedDataset {
  MultivariateSeries series;
  // T x d clean exogenous draws (process noise for Linear, observation noise
  // for Lotka-Volterra).
  Matrix exogenous;
  std::vector<InjectedEvent> injected;
  SystemParams system;
  // State before step 0 (Linear) or at step 0 before noise (Lotka-Volterra).
  Vector initial_state;
};

// Additive anomaly terms and structural-swap flags, both T x d.
struct Perturbation {
  Matrix additive;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> structural;

  static Perturbation none(Eigen::Index T, Eigen::Index d);
};

struct Simulation {
  Matrix values;
  // The additive terms actually applied, including those produced by
  // structural swaps (f~ - f) and sign reflections that keep observed
  // populations positive.
  Matrix applied;
};

GeneratedDataset gen_linear(const LinearSystemParams& params, std::size_t T);
GeneratedDataset gen_lotka_volterra(const LotkaVolterraParams& params, std::size_t T);

Simulation simulate_linear(const LinearSystemParams& params, const Vector& initial, const Matrix& exogenous,
                           const Perturbation& perturbation);
Simulation simulate_lotka_volterra(const LotkaVolterraParams& params, const Vector& initial,
                                   const Matrix& exogenous, const Perturbation& perturbation);

// Rebuilds the series from stored ingredients. With `include_injections`
// false this is the clean counterpart of an injected dataset.
Matrix resimulate(const GeneratedDataset& dataset, bool include_injections);
// Same system, arbitrary exogenous trace, no anomaly terms.
Matrix resimulate_with_exogenous(const GeneratedDataset& dataset, const Matrix& exogenous);

// Cuts a clean dataset at step n into two contiguous datasets; the tail
// resimulates from the state reached at step n.
std::pair<GeneratedDataset, GeneratedDataset> split_dataset(const GeneratedDataset& dataset, std::size_t n);

GeneratedDataset inject_anomalies(const GeneratedDataset& dataset, const AnomalySpec& spec);

nlohmann::json events_to_json(const GeneratedDataset& dataset);

}  // namespace recad
