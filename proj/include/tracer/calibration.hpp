#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "tracer/evaluation.hpp"
#include "tracer/risk.hpp"
#include "tracer/signals.hpp"
#include "tracer/trajectory.hpp"

namespace tracer {

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GridSpec {
  std::vector<double> alpha = {0.0, 0.5, 1.0, 2.0, 4.0};
  std::vector<double> beta = {0.0, 0.5, 1.0, 2.0, 4.0};
  std::vector<double> gamma = {0.0, 0.5, 1.0, 2.0, 4.0};
  std::vector<double> k = {0.1, 0.2, 0.3, 0.5, 1.0};
  int refine_levels = 2;
  double shrink = 0.5;
  double tau = 0.1;      // loss temperature
  double pilot_w = 0.25; // w held here during the (alpha,beta,gamma,k) search
  double w_step = 0.05;  // final line search over w in {0, w_step, ..., 1}

  void validate() const {
    if (refine_levels < 0)
      throw CalibrationError("refine_levels must be >= 0");
    if (!(shrink > 0.0 && shrink < 1.0))
      throw CalibrationError("shrink factor must lie in (0,1)");
    if (!(tau > 0.0)) throw CalibrationError("tau must be > 0");
    if (alpha.empty() || beta.empty() || gamma.empty() || k.empty())
      throw CalibrationError("grid value lists must be non-empty");
    for (double v : alpha)
      if (!(v >= 0.0)) throw CalibrationError("grid alpha values must be >= 0");
    for (double v : beta)
      if (!(v >= 0.0)) throw CalibrationError("grid beta values must be >= 0");
    for (double v : gamma)
      if (!(v >= 0.0)) throw CalibrationError("grid gamma values must be >= 0");
    for (double v : k)
      if (!(v > 0.0 && v <= 1.0))
        throw CalibrationError("grid k values must lie in (0,1]");
  }
};

// Mean pairwise softplus of the scaled margin, evaluated in the overflow-safe
// log1p form.
inline double pairwise_logistic_loss(const std::vector<double>& scores_fail,
                                     const std::vector<double>& scores_succ,
                                     double tau) {
  if (scores_fail.empty())
    throw CalibrationError("pairwise loss: no failure scores");
  if (scores_succ.empty())
    throw CalibrationError("pairwise loss: no success scores");
  if (!(tau > 0.0)) throw CalibrationError("pairwise loss: tau must be > 0");
  double total = 0.0;
  for (double sf : scores_fail) {
    for (double ss : scores_succ) {
      const double x = -(sf - ss) / tau;  // softplus(x) = log(1 + e^x)
      total += x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    }
  }
  return total / (static_cast<double>(scores_fail.size()) *
                  static_cast<double>(scores_succ.size()));
}

struct CalibrationReport {
  TracerParams best;
  double loss = 0.0;
  std::vector<std::pair<TracerParams, double>> surface;
  double validation_auroc = 0.0;
};

namespace detail {

struct PreparedEpisode {
  std::vector<StepSignals> signals;
  std::vector<Actor> actors;
  int label = 0;
};

inline double score_prepared(const PreparedEpisode& ep, const TracerParams& p) {
  std::vector<double> r;
  r.reserve(ep.signals.size());
  for (std::size_t t = 0; t < ep.signals.size(); ++t)
    r.push_back(step_risk(step_components(ep.signals[t], ep.actors[t], p)));
  return risk_functional(r, p.k, p.w);
}

inline double loss_at(const std::vector<PreparedEpisode>& eps,
                      const TracerParams& p, double tau) {
  std::vector<double> fail, succ;
  for (const auto& ep : eps)
    (ep.label == 1 ? fail : succ).push_back(score_prepared(ep, p));
  return pairwise_logistic_loss(fail, succ, tau);
}

inline std::vector<double> refine_axis(const std::vector<double>& coarse,
                                       double center, double step, double lo,
                                       double hi) {
  std::set<double> vals{center};
  for (double v : {center - step, center - 0.5 * step, center + 0.5 * step,
                   center + step}) {
    if (v >= lo && v <= hi) vals.insert(v);
  }
  (void)coarse;
  return {vals.begin(), vals.end()};
}

inline double axis_spacing(const std::vector<double>& vals) {
  if (vals.size() < 2) return 0.0;
  std::vector<double> sorted(vals);
  std::sort(sorted.begin(), sorted.end());
  double best = sorted[1] - sorted[0];
  for (std::size_t i = 1; i + 1 < sorted.size(); ++i)
    best = std::min(best, sorted[i + 1] - sorted[i]);
  return best;
}

}  // namespace detail

inline std::vector<detail::PreparedEpisode> prepare_episodes(
    const std::vector<TrajectoryRecord>& data, const ContentFilterConfig& filter,
    const RepetitionConfig& rep, EmbeddingProvider& emb,
    bool require_labels = true) {
  std::vector<detail::PreparedEpisode> out;
  out.reserve(data.size());
  for (const auto& traj : data) {
    if (!traj.outcome) {
      if (require_labels)
        throw CalibrationError("episode \"" + traj.episode_id +
                               "\" has no outcome label");
      continue;
    }
    detail::PreparedEpisode ep;
    ep.signals = compute_step_signals(traj, filter, rep, emb);
    ep.actors.reserve(traj.steps.size());
    for (const auto& s : traj.steps) ep.actors.push_back(s.actor);
    ep.label = *traj.outcome;
    out.push_back(std::move(ep));
  }
  return out;
}

// Coarse-to-fine grid search over (alpha, beta, gamma, k) at the pilot w,
// followed by a line search over w at the incumbent. Step signals are computed
// once per episode and reused across every candidate. Deterministic: candidates
// are visited in lexicographic order and ties keep the earlier candidate.
inline CalibrationReport fit(const std::vector<TrajectoryRecord>& train,
                             const std::vector<TrajectoryRecord>& validation,
                             const GridSpec& grid,
                             const ContentFilterConfig& filter,
                             const RepetitionConfig& rep,
                             EmbeddingProvider& emb) {
  grid.validate();
  const auto train_eps = prepare_episodes(train, filter, rep, emb);
  bool has_fail = false, has_succ = false;
  for (const auto& ep : train_eps) (ep.label == 1 ? has_fail : has_succ) = true;
  if (!has_fail) throw CalibrationError("training set has no failure episodes");
  if (!has_succ) throw CalibrationError("training set has no success episodes");

  CalibrationReport report;
  double best_loss = std::numeric_limits<double>::infinity();
  TracerParams best{};
  best.w = grid.pilot_w;

  const auto consider = [&](const TracerParams& p) {
    const double loss = detail::loss_at(train_eps, p, grid.tau);
    report.surface.emplace_back(p, loss);
    if (loss < best_loss) {
      best_loss = loss;
      best = p;
    }
  };

  const auto sweep = [&](const std::vector<double>& as,
                         const std::vector<double>& bs,
                         const std::vector<double>& gs,
                         const std::vector<double>& ks) {
    for (double a : as)
      for (double b : bs)
        for (double g : gs)
          for (double kk : ks)
            consider({a, b, g, kk, grid.pilot_w});
  };

  sweep(grid.alpha, grid.beta, grid.gamma, grid.k);

  double da = detail::axis_spacing(grid.alpha);
  double db = detail::axis_spacing(grid.beta);
  double dg = detail::axis_spacing(grid.gamma);
  double dk = detail::axis_spacing(grid.k);
  const double inf = std::numeric_limits<double>::infinity();
  for (int level = 0; level < grid.refine_levels; ++level) {
    da *= grid.shrink;
    db *= grid.shrink;
    dg *= grid.shrink;
    dk *= grid.shrink;
    sweep(detail::refine_axis(grid.alpha, best.alpha, da, 0.0, inf),
          detail::refine_axis(grid.beta, best.beta, db, 0.0, inf),
          detail::refine_axis(grid.gamma, best.gamma, dg, 0.0, inf),
          detail::refine_axis(grid.k, best.k, dk, 1e-9, 1.0));
  }

  // w is calibrated last, on the loss; ties resolve to the smaller w.
  for (double w = 0.0; w <= 1.0 + 1e-12; w += grid.w_step) {
    TracerParams p = best;
    p.w = std::min(w, 1.0);
    const double loss = detail::loss_at(train_eps, p, grid.tau);
    report.surface.emplace_back(p, loss);
    if (loss < best_loss) {
      best_loss = loss;
      best = p;
    }
  }

  report.best = best;
  report.loss = best_loss;

  const auto& val = validation.empty() ? train : validation;
  const auto val_eps = prepare_episodes(val, filter, rep, emb);
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& ep : val_eps) {
    scores.push_back(detail::score_prepared(ep, best));
    labels.push_back(ep.label);
  }
  report.validation_auroc = auroc(scores, labels);
  return report;
}

// Threshold on episode scores maximizing Youden's J (TPR - FPR) with the rule
// "score >= threshold flags failure". Candidates are the observed scores plus
// midpoints between adjacent distinct scores; ties break toward the lower
// threshold for earlier warning.
inline double select_threshold(const std::vector<double>& scores,
                               const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw CalibrationError("select_threshold: scores/labels length mismatch");
  detail::require_both_classes(labels, "select_threshold");
  std::vector<double> distinct(scores);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()),
                 distinct.end());
  std::vector<double> candidates;
  for (std::size_t i = 0; i < distinct.size(); ++i) {
    candidates.push_back(distinct[i]);
    if (i + 1 < distinct.size())
      candidates.push_back(0.5 * (distinct[i] + distinct[i + 1]));
  }
  std::sort(candidates.begin(), candidates.end());
  double n_pos = 0, n_neg = 0;
  for (int y : labels) (y == 1 ? n_pos : n_neg) += 1;
  double best_j = -std::numeric_limits<double>::infinity();
  double best_thr = candidates.front();
  for (double thr : candidates) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= thr) (labels[i] == 1 ? tp : fp) += 1;
    }
    const double j = tp / n_pos - fp / n_neg;
    if (j > best_j + 1e-12) {
      best_j = j;
      best_thr = thr;
    }
  }
  return best_thr;
}

inline nlohmann::ordered_json params_to_json(const TracerParams& p) {
  nlohmann::ordered_json j;
  j["alpha"] = p.alpha;
  j["beta"] = p.beta;
  j["gamma"] = p.gamma;
  j["k"] = p.k;
  j["w"] = p.w;
  return j;
}

inline TracerParams params_from_json(const nlohmann::json& j) {
  TracerParams p;
  p.alpha = j.at("alpha").get<double>();
  p.beta = j.at("beta").get<double>();
  p.gamma = j.at("gamma").get<double>();
  p.k = j.at("k").get<double>();
  p.w = j.at("w").get<double>();
  p.validate();
  return p;
}

// Single-record file, same syntax as the trajectory log.
inline void write_calibration_report(std::ostream& out,
                                     const CalibrationReport& report) {
  nlohmann::ordered_json j;
  j["best"] = params_to_json(report.best);
  j["loss"] = report.loss;
  j["validation_auroc"] = report.validation_auroc;
  auto surface = nlohmann::ordered_json::array();
  for (const auto& [p, loss] : report.surface) {
    auto entry = params_to_json(p);
    entry["loss"] = loss;
    surface.push_back(std::move(entry));
  }
  j["surface"] = std::move(surface);
  out << j.dump() << '\n';
}

inline CalibrationReport read_calibration_report(std::istream& in) {
  std::string line;
  if (!std::getline(in, line))
    throw CalibrationError("empty calibration report");
  nlohmann::json j = nlohmann::json::parse(line);
  CalibrationReport report;
  report.best = params_from_json(j.at("best"));
  report.loss = j.at("loss").get<double>();
  report.validation_auroc = j.at("validation_auroc").get<double>();
  for (const auto& entry : j.at("surface"))
    report.surface.emplace_back(params_from_json(entry),
                                entry.at("loss").get<double>());
  return report;
}

}  // namespace tracer
