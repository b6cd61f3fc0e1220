#include "recad/recourse.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "recad/errors.hpp"
#include "recad/synthgen.hpp"

namespace recad {

std::string to_string(RecourseVariant v) {
  switch (v) {
    case RecourseVariant::Full:
      return "full";
    case RecourseVariant::DeviationOnly:
      return "deviation_only";
    case RecourseVariant::SequenceOnly:
      return "sequence_only";
  }
  return "unknown";
}

RecourseVariant recourse_variant_from_string(const std::string& s) {
  if (s == "full") return RecourseVariant::Full;
  if (s == "deviation_only" || s == "no_lstm") return RecourseVariant::DeviationOnly;
  if (s == "sequence_only" || s == "no_ffnn") return RecourseVariant::SequenceOnly;
  throw InvalidArgument("unknown recourse variant '" + s + "'");
}

RecourseFunction::RecourseFunction(std::size_t dims, std::size_t window, std::uint64_t seed,
                                   RecourseVariant variant, std::size_t hidden, bool zero_head)
    : dims_(dims), window_(window), hidden_(hidden), variant_(variant) {
  if (dims == 0 || hidden == 0) throw InvalidArgument("recourse function needs d and hidden >= 1");
  if (window < 2) throw InvalidArgument("window length must be at least 2");
  nn::Rng rng(derive_seed(seed, 301));
  const auto d = static_cast<Eigen::Index>(dims);
  const auto h = static_cast<Eigen::Index>(hidden);
  seq_encoder = nn::Lstm(d, h, rng);
  dev_encoder = nn::Dense(d, h, rng);
  head = zero_head ? nn::Dense::zeros(2 * h, d) : nn::Dense(2 * h, d, rng);
}

ad::Var RecourseFunction::predict(ad::Tape& tape, std::span<const ad::Var> history, ad::Var deviation) const {
  if (history.size() != window_ - 1) {
    throw DimensionMismatch("recourse history needs K-1 = " + std::to_string(window_ - 1) + " rows");
  }
  const Eigen::Index batch = deviation.rows();
  const auto h = static_cast<Eigen::Index>(hidden_);
  ad::Var z_seq = variant_ == RecourseVariant::DeviationOnly ? tape.constant(Matrix::Zero(batch, h))
                                                             : seq_encoder.forward(tape, history);
  ad::Var z_dev = variant_ == RecourseVariant::SequenceOnly ? tape.constant(Matrix::Zero(batch, h))
                                                            : ad::relu(dev_encoder.forward(tape, deviation));
  const ad::Var parts[] = {z_seq, z_dev};
  return head.forward(tape, ad::concat_cols(parts));
}

Vector RecourseFunction::predict(const Matrix& history, const Vector& deviation) const {
  ad::Tape tape(ad::Tape::Mode::Inference);
  std::vector<ad::Var> rows;
  for (Eigen::Index r = 0; r < history.rows(); ++r) rows.push_back(tape.constant(history.row(r)));
  ad::Var theta = predict(tape, rows, tape.constant(deviation.transpose()));
  return theta.value().row(0).transpose();
}

void RecourseFunction::collect(std::vector<ad::Parameter*>& out) {
  seq_encoder.collect(out);
  out.push_back(&dev_encoder.weight);
  out.push_back(&dev_encoder.bias);
  out.push_back(&head.weight);
  out.push_back(&head.bias);
}

void RecourseFunction::collect(std::vector<const ad::Parameter*>& out) const {
  seq_encoder.collect(out);
  out.push_back(&dev_encoder.weight);
  out.push_back(&dev_encoder.bias);
  out.push_back(&head.weight);
  out.push_back(&head.bias);
}

Vector compute_deviation(const GvarModel& gvar, const Matrix& window) {
  if (window.rows() < 2 || static_cast<std::size_t>(window.cols()) != gvar.dims())
    throw DimensionMismatch("deviation needs a K x d window");
  const Eigen::Index lags = std::min<Eigen::Index>(window.rows() - 1, static_cast<Eigen::Index>(gvar.order()));
  const Matrix history = window.middleRows(window.rows() - 1 - lags, lags);
  return window.row(window.rows() - 1).transpose() - gvar.forecast_truncated(history);
}

CounterfactualRollout counterfactual_rollout(const GvarModel& gvar, const Matrix& z,
                                             const std::vector<RecourseAction>& actions, std::size_t horizon,
                                             const AnomalyDetector* detector) {
  if (actions.empty()) throw InvalidArgument("rollout needs at least one action");
  if (static_cast<std::size_t>(z.cols()) != gvar.dims()) throw DimensionMismatch("series width differs from d");
  const std::size_t p = gvar.order();
  std::size_t start = actions.front().t;
  for (const auto& a : actions) start = std::min(start, a.t);
  const std::size_t history = std::max(p, detector ? detector->window() - 1 : 0);
  if (start < history) {
    throw InsufficientHistory("action at t = " + std::to_string(start) + " needs t >= " + std::to_string(history));
  }
  const std::size_t stop = start + horizon;
  if (stop >= static_cast<std::size_t>(z.rows())) throw InvalidArgument("rollout runs past the end of the series");

  Matrix cf = z.topRows(static_cast<Eigen::Index>(stop + 1));
  const auto P = static_cast<Eigen::Index>(p);
  for (std::size_t t = start; t <= stop; ++t) {
    const auto ti = static_cast<Eigen::Index>(t);
    if (t > start) {
      const Vector u = z.row(ti).transpose() - gvar.forecast(z.middleRows(ti - P, P));
      cf.row(ti) = (gvar.forecast(cf.middleRows(ti - P, P)) + u).transpose();
    }
    for (const auto& a : actions)
      if (a.t == t) cf.row(ti) += a.theta.transpose();
  }

  CounterfactualRollout out;
  out.start = start;
  out.values = cf.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(horizon + 1));
  if (detector) {
    const auto K = static_cast<Eigen::Index>(detector->window());
    for (std::size_t t = start; t <= stop; ++t) {
      const double s = detector->score(cf.middleRows(static_cast<Eigen::Index>(t) - K + 1, K));
      out.scores.push_back(s);
      out.flipped.push_back(s <= detector->threshold());
    }
  }
  return out;
}

ad::Var recourse_loss(ad::Tape& tape, std::span<const ad::Var> scores, std::span<const ad::Var> thetas, double tau,
                      double lambda) {
  ad::Var loss = tape.constant(Matrix::Zero(1, 1));
  const ad::Var threshold = tape.constant(Matrix::Constant(1, 1, tau));
  for (const auto& s : scores) loss = loss + ad::sum(ad::hinge(s - threshold));
  for (const auto& th : thetas) loss = loss + lambda * ad::sum(ad::row_norms(th));
  return loss;
}

ActionPolicy recad_policy(const RecourseFunction& h) {
  return [&h](ad::Tape& tape, std::span<const ad::Var> history, ad::Var, ad::Var deviation) {
    return h.predict(tape, history, deviation);
  };
}

EpisodeWalk walk_episode(ad::Tape& tape, const GvarModel& gvar, const AnomalyDetector& detector, const Matrix& z,
                         const Episode& episode, const ActionPolicy& policy, const WalkConfig& cfg) {
  const std::size_t K = detector.window();
  const std::size_t p = gvar.order();
  const std::size_t reach = std::max(p, K - 1);
  const std::size_t t0 = episode.start;
  const auto T = static_cast<std::size_t>(z.rows());
  if (t0 < reach) throw InsufficientHistory("episode starts before a full window of history");
  if (episode.end < t0 || episode.end >= T) throw InvalidArgument("episode lies outside the series");
  if (static_cast<std::size_t>(z.cols()) != gvar.dims()) throw DimensionMismatch("series width differs from d");

  const std::size_t base = t0 - reach;
  std::vector<ad::Var> cf;
  for (std::size_t t = base; t < t0; ++t) cf.push_back(tape.constant(z.row(static_cast<Eigen::Index>(t))));
  auto at = [&](std::size_t t) { return cf[t - base]; };
  auto lags = [&](std::size_t t, std::size_t n) {
    std::vector<ad::Var> out;
    for (std::size_t k = 1; k <= n; ++k) out.push_back(at(t - k));
    return out;
  };
  auto window = [&](std::size_t t) {
    std::vector<ad::Var> rows;
    for (std::size_t r = t + 1 - K; r <= t; ++r) rows.push_back(at(r));
    return rows;
  };
  const auto P = static_cast<Eigen::Index>(p);
  const std::size_t dev_lags = std::min(p, K - 1);
  const double tau = detector.threshold();

  EpisodeWalk walk;
  walk.first_step = t0;
  std::vector<ad::Var> score_vars;
  std::size_t last_action = t0;
  for (std::size_t t = t0; t < T; ++t) {
    const std::size_t horizon_end = walk.action_steps.empty() ? episode.end
                                                              : std::max(episode.end, last_action + cfg.lookahead);
    if (t > horizon_end) break;
    const auto ti = static_cast<Eigen::Index>(t);
    ad::Var x;
    if (t == t0) {
      x = tape.constant(z.row(ti));
    } else {
      // Abduct the factual residual, then re-predict from counterfactual lags.
      const Matrix u = z.row(ti) - gvar.forecast(z.middleRows(ti - P, P)).transpose();
      const auto cf_lags = lags(t, p);
      x = gvar.forecast(tape, cf_lags) + tape.constant(u);
    }
    cf.push_back(x);
    ad::Var s = detector.score(tape, window(t));
    if (s.scalar() > tau && walk.action_steps.size() < cfg.max_actions) {
      const auto history = lags(t, K - 1);
      std::vector<ad::Var> ordered(history.rbegin(), history.rend());
      const auto dl = lags(t, dev_lags);
      ad::Var deviation = x - gvar.forecast(tape, dl);
      ad::Var theta = policy(tape, ordered, x, deviation);
      cf.back() = x + theta;
      walk.thetas.push_back(theta);
      walk.action_steps.push_back(t);
      last_action = t;
      s = detector.score(tape, window(t));
    }
    score_vars.push_back(s);
    walk.scores.push_back(s.scalar());
    walk.values.push_back(cf.back());
  }
  walk.loss = recourse_loss(tape, score_vars, walk.thetas, tau, cfg.lambda);
  return walk;
}

RecourseReport explain(const GvarModel& gvar, const AnomalyDetector& detector, const ActionPolicy& policy,
                       const Matrix& z, const Episode& episode, const WalkConfig& cfg, const Vector& cost_vector) {
  ad::Tape tape(ad::Tape::Mode::Inference);
  const EpisodeWalk walk = walk_episode(tape, gvar, detector, z, episode, policy, cfg);
  const auto& stats = detector.stats();
  const Vector c = cost_vector.size() ? cost_vector : Vector::Ones(static_cast<Eigen::Index>(gvar.dims()));
  if (c.size() != static_cast<Eigen::Index>(gvar.dims())) throw DimensionMismatch("cost vector length differs from d");

  RecourseReport report;
  report.episode = episode;
  report.first_step = walk.first_step;
  for (std::size_t i = 0; i < walk.thetas.size(); ++i) {
    RecourseAction a;
    a.t = walk.action_steps[i];
    a.theta = walk.thetas[i].value().row(0).transpose();
    a.theta_raw = a.theta.cwiseProduct(stats.std.transpose());
    a.cost = c.cwiseProduct(a.theta_raw).norm();
    report.actions.push_back(std::move(a));
  }
  Matrix values(static_cast<Eigen::Index>(walk.values.size()), static_cast<Eigen::Index>(gvar.dims()));
  for (std::size_t i = 0; i < walk.values.size(); ++i) values.row(static_cast<Eigen::Index>(i)) = walk.values[i].value();
  report.counterfactual = invert_standardizer(values, stats);
  report.scores = walk.scores;
  const double tau = detector.threshold();
  report.flipped = std::all_of(walk.scores.begin(), walk.scores.end(), [&](double s) { return s <= tau; });
  report.detected_steps = episode.length();
  for (std::size_t t = episode.start; t <= episode.end; ++t)
    if (walk.scores[t - walk.first_step] <= tau) ++report.flipped_steps;
  return report;
}

void RecourseTrainConfig::validate() const {
  if (!(lambda >= 0.0)) throw ParameterError("lambda must be >= 0");
  if (lookahead < 1) throw ParameterError("lookahead L must be >= 1");
  if (max_actions < 1) throw ParameterError("max_actions must be >= 1");
  if (!(learning_rate > 0.0)) throw ParameterError("learning_rate must be positive");
}

RecourseFunction train_recourse(const GvarModel& gvar, const AnomalyDetector& detector, const Matrix& z,
                                const std::vector<Episode>& episodes, const RecourseTrainConfig& cfg,
                                RecourseTrainReport* report) {
  cfg.validate();
  if (episodes.empty()) throw EmptyInput("recourse training needs at least one abnormal episode");
  RecourseFunction h(gvar.dims(), detector.window(), cfg.seed, cfg.variant, cfg.hidden);
  std::vector<ad::Parameter*> params;
  h.collect(params);
  const std::vector<const ad::Parameter*> tracked(params.begin(), params.end());
  nn::Adam adam({.learning_rate = cfg.learning_rate});
  const ActionPolicy policy = recad_policy(h);
  const WalkConfig walk_cfg = cfg.walk();

  std::vector<std::size_t> order(episodes.size());
  std::iota(order.begin(), order.end(), 0);
  nn::Rng rng(derive_seed(cfg.seed, 302));
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t i : order) {
      ad::Tape tape;
      tape.track_only(tracked);
      EpisodeWalk walk = walk_episode(tape, gvar, detector, z, episodes[i], policy, walk_cfg);
      const double loss = walk.loss.scalar();
      if (!std::isfinite(loss)) throw DivergenceError(step, "recourse loss became non-finite");
      total += loss;
      adam.step(params, tape.backward(walk.loss));
      ++step;
    }
    if (report) report->epoch_loss.push_back(total / static_cast<double>(episodes.size()));
  }
  return h;
}

double recourse_gradient_check(const RecourseFunction& h, const GvarModel& gvar, const AnomalyDetector& detector,
                               const Matrix& z, const Episode& episode, const WalkConfig& cfg, double step) {
  RecourseFunction work = h;
  std::vector<ad::Parameter*> params;
  work.collect(params);
  const std::vector<const ad::Parameter*> tracked(params.begin(), params.end());
  const ActionPolicy policy = recad_policy(work);
  ad::Tape tape;
  tape.track_only(tracked);
  EpisodeWalk walk = walk_episode(tape, gvar, detector, z, episode, policy, cfg);
  const ad::Gradients analytic = tape.backward(walk.loss);
  auto loss = [&] {
    ad::Tape t(ad::Tape::Mode::Inference);
    return walk_episode(t, gvar, detector, z, episode, policy, cfg).loss.scalar();
  };
  return nn::max_gradient_error(params, analytic, loss, step);
}

nlohmann::json to_json(const RecourseFunction& h) {
  return {{"schema", 1},
          {"kind", "recourse"},
          {"model", "recad"},
          {"dims", h.dims()},
          {"window", h.window()},
          {"hidden", h.hidden()},
          {"variant", to_string(h.variant())},
          {"seq_encoder", nn::to_json(h.seq_encoder)},
          {"dev_encoder", nn::to_json(h.dev_encoder)},
          {"head", nn::to_json(h.head)}};
}

RecourseFunction recourse_from_json(const nlohmann::json& j) {
  if (j.value("schema", 0) != 1 || j.value("kind", "") != "recourse") throw FormatError("not a recourse checkpoint");
  RecourseFunction h(j.at("dims").get<std::size_t>(), j.at("window").get<std::size_t>(), 0,
                     recourse_variant_from_string(j.at("variant").get<std::string>()),
                     j.at("hidden").get<std::size_t>());
  h.seq_encoder = nn::lstm_from_json(j.at("seq_encoder"));
  h.dev_encoder = nn::dense_from_json(j.at("dev_encoder"));
  h.head = nn::dense_from_json(j.at("head"));
  const auto d = static_cast<Eigen::Index>(h.dims());
  const auto hid = static_cast<Eigen::Index>(h.hidden());
  if (h.seq_encoder.input_size() != d || h.seq_encoder.hidden_size() != hid || h.dev_encoder.in() != d ||
      h.dev_encoder.out() != hid || h.head.in() != 2 * hid || h.head.out() != d)
    throw FormatError("recourse checkpoint shapes are inconsistent");
  return h;
}

nlohmann::json to_json(const RecourseReport& report) {
  nlohmann::json actions = nlohmann::json::array();
  for (const auto& a : report.actions) {
    actions.push_back({{"t", a.t},
                       {"theta_raw_units", std::vector<double>(a.theta_raw.data(), a.theta_raw.data() + a.theta_raw.size())},
                       {"cost", a.cost}});
  }
  return {{"schema", 1},
          {"episode", {{"start", report.episode.start}, {"end", report.episode.end}}},
          {"actions", actions},
          {"flipped", report.flipped},
          {"steps_used", report.steps_used()},
          {"detected_steps", report.detected_steps},
          {"flipped_steps", report.flipped_steps},
          {"scores", report.scores}};
}

}  // namespace recad
