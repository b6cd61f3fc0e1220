#include "recad/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>

#include "recad/errors.hpp"
#include "recad/synthgen.hpp"

namespace recad {

std::string to_string(ScorerKind kind) { return kind == ScorerKind::Residual ? "residual" : "autoencoder"; }

ScorerKind scorer_kind_from_string(const std::string& s) {
  if (s == "residual") return ScorerKind::Residual;
  if (s == "autoencoder") return ScorerKind::Autoencoder;
  throw InvalidArgument("unknown scorer '" + s + "'");
}

double empirical_quantile(std::vector<double> scores, double q) {
  if (scores.empty()) throw EmptyInput("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw InvalidArgument("quantile must lie in [0, 1]");
  std::sort(scores.begin(), scores.end());
  const double h = q * static_cast<double>(scores.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, scores.size() - 1);
  return scores[lo] + (h - static_cast<double>(lo)) * (scores[hi] - scores[lo]);
}

double calibrate_threshold(std::span<const double> scores, double q, std::size_t min_scores) {
  if (scores.size() < min_scores) {
    throw InsufficientHistory("calibration needs at least " + std::to_string(min_scores) + " scores, got " +
                              std::to_string(scores.size()));
  }
  for (double s : scores)
    if (!std::isfinite(s)) throw InvalidArgument("calibration scores must be finite");
  return empirical_quantile(std::vector<double>(scores.begin(), scores.end()), q);
}

std::size_t Detection::first_scored() const {
  for (std::size_t t = 0; t < scored.size(); ++t)
    if (scored[t]) return t;
  return scored.size();
}

AnomalyDetector AnomalyDetector::residual(std::shared_ptr<const GvarModel> gvar, StandardizationStats stats,
                                          std::size_t window) {
  if (!gvar) throw InvalidArgument("residual scorer needs a GVAR model");
  if (window < 2 || gvar->order() != window - 1) {
    throw InvalidArgument("residual scorer needs a GVAR of order K-1 = " + std::to_string(window - 1) +
                          ", got order " + std::to_string(gvar->order()));
  }
  if (stats.dims() != gvar->dims()) throw DimensionMismatch("standardization and GVAR disagree on d");
  AnomalyDetector det;
  det.kind_ = ScorerKind::Residual;
  det.window_ = window;
  det.stats_ = std::move(stats);
  det.gvar_ = std::move(gvar);
  return det;
}

namespace {

Matrix flatten_windows(const Matrix& z, std::size_t K) {
  const auto n = z.rows() - static_cast<Eigen::Index>(K) + 1;
  const Eigen::Index d = z.cols();
  Matrix out(n, static_cast<Eigen::Index>(K) * d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(K); ++r) out.block(i, r * d, 1, d) = z.row(i + r);
  return out;
}

}  // namespace

AnomalyDetector AnomalyDetector::autoencoder(const Matrix& z, StandardizationStats stats, std::size_t window,
                                             const AutoencoderConfig& cfg) {
  if (window < 2) throw InvalidArgument("window length must be at least 2");
  if (static_cast<std::size_t>(z.rows()) < window + 1) throw EmptyInput("not enough windows to train on");
  if (stats.dims() != static_cast<std::size_t>(z.cols())) throw DimensionMismatch("stats width differs from d");
  const Matrix windows = flatten_windows(z, window);
  std::vector<Eigen::Index> widths{windows.cols()};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(windows.cols());
  nn::Rng rng(derive_seed(cfg.seed, 201));
  AnomalyDetector det;
  det.kind_ = ScorerKind::Autoencoder;
  det.window_ = window;
  det.stats_ = std::move(stats);
  det.ae_ = nn::Mlp(widths, nn::Activation::Tanh, rng);

  std::vector<ad::Parameter*> params;
  det.ae_.collect(params);
  nn::Adam adam({.learning_rate = cfg.learning_rate});
  std::vector<Eigen::Index> order(static_cast<std::size_t>(windows.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - s);
      Matrix batch(static_cast<Eigen::Index>(n), windows.cols());
      for (std::size_t i = 0; i < n; ++i) batch.row(static_cast<Eigen::Index>(i)) = windows.row(order[s + i]);
      ad::Tape tape;
      ad::Var x = tape.constant(batch);
      ad::Var r = x - det.ae_.forward(tape, x);
      ad::Var loss = ad::scale(ad::sum(ad::hadamard(r, r)), 1.0 / static_cast<double>(n));
      if (!std::isfinite(loss.scalar())) throw DivergenceError(step, "autoencoder loss became non-finite");
      adam.step(params, tape.backward(loss));
      ++step;
    }
  }
  return det;
}

void AnomalyDetector::set_threshold(double tau, double q) {
  if (!std::isfinite(tau)) throw InvalidArgument("threshold must be finite");
  tau_ = tau;
  quantile_ = q;
}

void AnomalyDetector::calibrate(const Matrix& z_validation, double q, std::size_t min_scores) {
  const Vector s = score_series(z_validation);
  set_threshold(calibrate_threshold(std::span<const double>(s.data(), static_cast<std::size_t>(s.size())), q,
                                    min_scores),
                q);
}

double AnomalyDetector::score(const Matrix& window) const {
  if (static_cast<std::size_t>(window.rows()) != window_ || window.cols() != stats_.mean.size()) {
    throw DimensionMismatch("score needs a " + std::to_string(window_) + " x " + std::to_string(stats_.dims()) +
                            " window");
  }
  return score_series(window)(0);
}

Vector AnomalyDetector::score_series(const Matrix& z) const {
  if (z.cols() != stats_.mean.size()) throw DimensionMismatch("series width differs from the detector's d");
  if (static_cast<std::size_t>(z.rows()) < window_) throw EmptyInput("series shorter than the window");
  if (kind_ == ScorerKind::Residual) {
    // Windows end at K-1..T-1; the forecast for the last row uses the K-1
    // rows before it, which is exactly GVAR's one-step forecast.
    return gvar_->abduct_series(z).rowwise().norm();
  }
  const Matrix w = flatten_windows(z, window_);
  return (w - ae_.evaluate(w)).rowwise().norm();
}

ad::Var AnomalyDetector::score(ad::Tape& tape, std::span<const ad::Var> rows) const {
  if (rows.size() != window_) throw DimensionMismatch("differentiable score needs K window rows");
  if (kind_ == ScorerKind::Residual) {
    std::vector<ad::Var> lags;
    for (std::size_t k = 1; k < window_; ++k) lags.push_back(rows[window_ - 1 - k]);
    return ad::row_norms(rows.back() - gvar_->forecast(tape, lags));
  }
  ad::Var flat = ad::concat_cols(rows);
  return ad::row_norms(flat - ae_.forward(tape, flat));
}

Detection AnomalyDetector::detect(const MultivariateSeries& raw) const {
  return detect_standardized(apply_standardizer(raw.values(), stats_));
}

Detection AnomalyDetector::detect_standardized(const Matrix& z) const {
  const auto T = static_cast<std::size_t>(z.rows());
  Detection det;
  det.scores.assign(T, std::numeric_limits<double>::quiet_NaN());
  det.scored.assign(T, false);
  det.flagged.assign(T, false);
  if (T < window_) return det;
  const Vector s = score_series(z);
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const std::size_t t = window_ - 1 + static_cast<std::size_t>(i);
    det.scores[t] = s(i);
    det.scored[t] = true;
    det.flagged[t] = s(i) > tau_;
  }
  return det;
}

double auc_roc(std::span<const double> scores, const std::vector<bool>& truth) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos = 0.0;
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (truth[idx[k]]) rank_sum += avg_rank;
    i = j;
  }
  for (bool b : truth) pos += b ? 1.0 : 0.0;
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) throw UndefinedMetric("AUC needs both classes");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double average_precision(std::span<const double> scores, const std::vector<bool>& truth) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double pos = 0.0;
  for (bool b : truth) pos += b ? 1.0 : 0.0;
  if (pos == 0.0 || pos == static_cast<double>(n)) throw UndefinedMetric("AUC-PR needs both classes");
  // Tied scores enter as one threshold step.
  double tp = 0.0;
  double seen = 0.0;
  double ap = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    double new_tp = 0.0;
    while (j < n && scores[idx[j]] == scores[idx[i]]) {
      new_tp += truth[idx[j]] ? 1.0 : 0.0;
      ++j;
    }
    tp += new_tp;
    seen += static_cast<double>(j - i);
    ap += (new_tp / pos) * (tp / seen);
    i = j;
  }
  return ap;
}

DetectionReport eval_detection(const std::vector<bool>& predicted, const std::vector<bool>& truth,
                               const std::vector<double>& scores, const std::vector<bool>& scored) {
  if (predicted.size() != truth.size() || scores.size() != truth.size() || scored.size() != truth.size())
    throw DimensionMismatch("predicted, truth and scores must have equal lengths");
  std::vector<double> s;
  std::vector<bool> y;
  double tp = 0.0, fp = 0.0, fn = 0.0;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    if (!scored[t]) continue;
    s.push_back(scores[t]);
    y.push_back(truth[t]);
    if (predicted[t] && truth[t]) tp += 1.0;
    if (predicted[t] && !truth[t]) fp += 1.0;
    if (!predicted[t] && truth[t]) fn += 1.0;
  }
  DetectionReport r;
  r.evaluated = s.size();
  r.auc_roc = auc_roc(s, y);
  r.auc_pr = average_precision(s, y);
  r.precision = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
  r.recall = tp + fn > 0.0 ? tp / (tp + fn) : 0.0;
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

DetectionReport eval_detection(const Detection& detection, const std::vector<bool>& truth) {
  return eval_detection(detection.flagged, truth, detection.scores, detection.scored);
}

double best_f1_threshold(const Detection& detection, const std::vector<bool>& truth) {
  std::vector<std::pair<double, bool>> pts;
  double pos = 0.0;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    if (!detection.scored[t]) continue;
    pts.emplace_back(detection.scores[t], truth[t]);
    pos += truth[t] ? 1.0 : 0.0;
  }
  if (pos == 0.0) throw UndefinedMetric("best-F1 threshold needs positive labels");
  std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  double tp = 0.0, best = -1.0, tau = pts.front().first;
  for (std::size_t i = 0; i < pts.size();) {
    std::size_t j = i;
    while (j < pts.size() && pts[j].first == pts[i].first) tp += pts[j++].second ? 1.0 : 0.0;
    const double f1 = 2.0 * tp / (static_cast<double>(j) + pos);
    if (f1 > best) {
      best = f1;
      // Flag everything scoring at least pts[i]: tau sits just below it.
      tau = j < pts.size() ? 0.5 * (pts[i].first + pts[j].first) : std::nextafter(pts[i].first, -1e300);
    }
    i = j;
  }
  return tau;
}

void write_detection_csv(const std::filesystem::path& path, const Detection& detection) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "step,score,label\n" << std::setprecision(17);
  for (std::size_t t = 0; t < detection.scores.size(); ++t) {
    if (detection.scored[t])
      out << t << ',' << detection.scores[t] << ',' << (detection.flagged[t] ? 1 : 0) << '\n';
    else
      out << t << ",,unscored\n";
  }
}

nlohmann::json to_json(const AnomalyDetector& detector) {
  nlohmann::json j{{"schema", 1},
                   {"kind", "detector"},
                   {"scorer", to_string(detector.kind())},
                   {"window", detector.window()},
                   {"threshold", detector.threshold()},
                   {"quantile", detector.quantile()},
                   {"standardization", to_json(detector.stats())}};
  if (detector.kind() == ScorerKind::Residual)
    j["gvar"] = to_json(*detector.gvar());
  else
    j["autoencoder"] = nn::to_json(detector.autoencoder_net());
  return j;
}

AnomalyDetector detector_from_json(const nlohmann::json& j) {
  if (j.value("schema", 0) != 1 || j.value("kind", "") != "detector") throw FormatError("not a detector file");
  const auto kind = scorer_kind_from_string(j.at("scorer").get<std::string>());
  const auto window = j.at("window").get<std::size_t>();
  StandardizationStats stats = stats_from_json(j.at("standardization"));
  AnomalyDetector det;
  if (kind == ScorerKind::Residual) {
    det = AnomalyDetector::residual(std::make_shared<const GvarModel>(gvar_from_json(j.at("gvar"))),
                                    std::move(stats), window);
  } else {
    det.kind_ = ScorerKind::Autoencoder;
    det.window_ = window;
    det.stats_ = std::move(stats);
    det.ae_ = nn::mlp_from_json(j.at("autoencoder"));
    if (det.ae_.in() != static_cast<Eigen::Index>(window * det.stats_.dims()))
      throw FormatError("autoencoder width does not match the window");
  }
  const auto tau = j.at("threshold");
  if (!tau.is_number()) throw FormatError("detector threshold is not a number");
  det.set_threshold(tau.get<double>(), j.at("quantile").get<double>());
  return det;
}

}  // namespace recad
