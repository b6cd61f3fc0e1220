#include "recad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "recad/errors.hpp"

namespace recad {

std::vector<Episode> find_episodes(const std::vector<bool>& flagged) {
  std::vector<Episode> out;
  for (std::size_t t = 0; t < flagged.size(); ++t) {
    if (!flagged[t]) continue;
    if (!out.empty() && out.back().end + 1 == t) {
      out.back().end = t;
    } else {
      out.push_back(Episode{t, t, std::nullopt});
    }
  }
  return out;
}

void attach_events(std::vector<Episode>& episodes, const std::vector<InjectedEvent>& events) {
  for (auto& ep : episodes) {
    ep.event.reset();
    for (std::size_t i = 0; i < events.size(); ++i) {
      const auto& e = events[i];
      if (e.start <= ep.end && ep.start < e.start + e.length) {
        ep.event = i;
        break;
      }
    }
  }
}

double RecourseReport::total_cost() const {
  double c = 0.0;
  for (const auto& a : actions) c += a.cost;
  return c;
}

namespace {

void require_episodes(std::span<const RecourseReport> reports) {
  if (reports.empty()) throw UndefinedMetric("no abnormal episodes to average over");
}

}  // namespace

double flipping_ratio(std::span<const RecourseReport> reports) {
  std::size_t detected = 0;
  std::size_t flipped = 0;
  for (const auto& r : reports) {
    detected += r.detected_steps;
    flipped += r.flipped_steps;
  }
  if (detected == 0) throw UndefinedMetric("flipping ratio needs at least one detected step");
  return static_cast<double>(flipped) / static_cast<double>(detected);
}

double action_cost(std::span<const RecourseReport> reports) {
  require_episodes(reports);
  double total = 0.0;
  for (const auto& r : reports) total += r.total_cost();
  return total / static_cast<double>(reports.size());
}

double action_step(std::span<const RecourseReport> reports) {
  require_episodes(reports);
  std::size_t total = 0;
  for (const auto& r : reports) total += r.steps_used();
  return static_cast<double>(total) / static_cast<double>(reports.size());
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && v[idx[j]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[idx[k]] = r;
    i = j;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionMismatch("spearman needs equal-length samples");
  if (x.size() < 2) throw UndefinedMetric("spearman needs at least two points");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double mx = mean(rx);
  const double my = mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedMetric("spearman is undefined for a constant sample");
  return sxy / std::sqrt(sxx * syy);
}

double mean(std::span<const double> v) {
  if (v.empty()) throw EmptyInput("mean of an empty sample");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(std::span<const double> v) {
  if (v.size() < 2) throw UndefinedMetric("standard deviation needs at least two values");
  const double m = mean(v);
  double sq = 0.0;
  for (double x : v) sq += (x - m) * (x - m);
  return std::sqrt(sq / static_cast<double>(v.size() - 1));
}

}  // namespace recad
