#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "recad/series.hpp"
#include "recad/synthgen.hpp"

namespace recad {

// Maximal contiguous run of detected-abnormal steps, [start, end] inclusive.
struct Episode {
  std::size_t start = 0;
  std::size_t end = 0;
  // Index of the first injected event overlapping the run, if any.
  std::optional<std::size_t> event;

  std::size_t length() const { return end - start + 1; }
};

std::vector<Episode> find_episodes(const std::vector<bool>& flagged);
void attach_events(std::vector<Episode>& episodes, const std::vector<InjectedEvent>& events);

struct RecourseAction {
  std::size_t t = 0;
  // Standardized units, and the same action in raw units.
  Vector theta;
  Vector theta_raw;
  // ||c . theta_raw||_2.
  double cost = 0.0;
};

struct RecourseReport {
  Episode episode;
  std::vector<RecourseAction> actions;
  // Steps walked, their counterfactual values (raw units) and scores.
  std::size_t first_step = 0;
  Matrix counterfactual;
  std::vector<double> scores;
  bool flipped = false;
  std::size_t detected_steps = 0;
  std::size_t flipped_steps = 0;

  std::size_t steps_used() const { return actions.size(); }
  double total_cost() const;
};

// Flipped detected steps over all detected steps.
double flipping_ratio(std::span<const RecourseReport> reports);
// Total action cost per episode; unflipped episodes keep their costs.
double action_cost(std::span<const RecourseReport> reports);
// Acted steps per episode.
double action_step(std::span<const RecourseReport> reports);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

double mean(std::span<const double> v);
// Sample standard deviation (n - 1); needs at least two values.
double sample_std(std::span<const double> v);

}  // namespace recad
