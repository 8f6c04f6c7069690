#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tracer/signals.hpp"
#include "tracer/trajectory.hpp"

namespace tracer {

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shortest round-trip decimal representation, so emitted CSV parses back to
// identical doubles.
inline std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

namespace detail {

inline void require_both_classes(const std::vector<int>& labels,
                                 const char* where) {
  bool pos = false, neg = false;
  for (int y : labels) {
    if (y == 1) pos = true;
    else if (y == 0) neg = true;
    else throw EvaluationError(std::string(where) + ": labels must be 0 or 1");
  }
  if (!pos) throw EvaluationError(std::string(where) +
                                  ": no failure (label 1) episodes");
  if (!neg) throw EvaluationError(std::string(where) +
                                  ": no success (label 0) episodes");
}

}  // namespace detail

// Rank-based (Mann-Whitney) AUROC with midrank tie correction. Failures
// (label 1) are the positive class, ranked by higher score.
inline double auroc(const std::vector<double>& scores,
                    const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw EvaluationError("auroc: scores/labels length mismatch");
  detail::require_both_classes(labels, "auroc");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
    for (std::size_t q = i; q <= j; ++q) rank[order[q]] = mid;
    i = j + 1;
  }
  double rank_sum_pos = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t q = 0; q < n; ++q) {
    if (labels[q] == 1) {
      rank_sum_pos += rank[q];
      ++n_pos;
    }
  }
  const std::size_t n_neg = n - n_pos;
  const double u = rank_sum_pos -
                   static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;
};

// ROC sweep over distinct score thresholds, highest first. Detection rule:
// score >= threshold flags failure.
inline std::vector<RocPoint> roc_curve(const std::vector<double>& scores,
                                       const std::vector<int>& labels) {
  detail::require_both_classes(labels, "roc_curve");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  double n_pos = 0, n_neg = 0;
  for (int y : labels) (y == 1 ? n_pos : n_neg) += 1;
  std::vector<RocPoint> out;
  double tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double thr = scores[order[i]];
    while (i < order.size() && scores[order[i]] == thr) {
      (labels[order[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    out.push_back({fp / n_neg, tp / n_pos, thr});
  }
  return out;
}

struct ArcPoint {
  double rejection = 0.0;
  double accuracy = 0.0;
};

struct AuarcResult {
  double area = 0.0;
  std::vector<ArcPoint> curve;
};

// Accuracy-rejection curve: episodes sorted most-uncertain-first; rejecting
// the top j of n maps to x = j/(n-1). Ties in score are rejected as a block,
// so only block boundaries appear as cut points. Always retains at least one
// episode; the area is the trapezoid over the achievable points.
inline AuarcResult auarc(const std::vector<double>& scores,
                         const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw EvaluationError("auarc: scores/labels length mismatch");
  if (scores.empty()) throw EvaluationError("auarc: no episodes");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return scores[a] > scores[b];
                   });
  // successes retained after rejecting the j highest-scoring episodes
  std::size_t successes = 0;
  for (int y : labels) successes += (y == 0);
  AuarcResult out;
  std::size_t rejected = 0, retained_succ = successes;
  const auto x_of = [&](std::size_t j) {
    return n > 1 ? static_cast<double>(j) / static_cast<double>(n - 1) : 0.0;
  };
  out.curve.push_back(
      {0.0, static_cast<double>(retained_succ) / static_cast<double>(n)});
  while (rejected < n - 1) {
    // reject the next tie block
    const double s = scores[order[rejected]];
    std::size_t j = rejected;
    while (j < n && scores[order[j]] == s) {
      retained_succ -= (labels[order[j]] == 0);
      ++j;
    }
    if (j >= n) break;  // block reaches the end; cannot reject everything
    rejected = j;
    out.curve.push_back({x_of(rejected),
                         static_cast<double>(retained_succ) /
                             static_cast<double>(n - rejected)});
  }
  if (out.curve.size() == 1) {
    out.area = out.curve.front().accuracy;
    return out;
  }
  double area = 0.0;
  for (std::size_t q = 1; q < out.curve.size(); ++q) {
    const auto& a = out.curve[q - 1];
    const auto& b = out.curve[q];
    area += 0.5 * (a.accuracy + b.accuracy) * (b.rejection - a.rejection);
  }
  // If tie blocks make the last achievable cut point fall short of x = 1,
  // extend flat at the final accuracy.
  const auto& last = out.curve.back();
  area += last.accuracy * (1.0 - last.rejection);
  out.area = area;
  return out;
}

struct EarlyWarningStats {
  // cumulative detection rate at progress fractions 0.05, 0.10, ..., 1.0
  std::vector<std::pair<double, double>> curve;
  std::size_t episodes = 0;
  std::size_t detected = 0;
  std::size_t undetected = 0;  // reported separately, never imputed as 1.0
  std::optional<double> mean_detection_time;    // over detected episodes
  std::optional<double> median_detection_time;  // over detected episodes
  double detected_by_20pct = 0.0;
};

// Per failed episode, detection time is (first t with prefix score >=
// threshold)/N. Undetected episodes count in the curve shortfall but are
// excluded from the mean/median.
inline EarlyWarningStats early_warning(
    const std::vector<std::vector<double>>& prefix_scores_failed,
    double threshold) {
  if (!std::isfinite(threshold))
    throw EvaluationError("early_warning: threshold must be finite");
  EarlyWarningStats out;
  out.episodes = prefix_scores_failed.size();
  std::vector<double> times;
  for (const auto& prefix : prefix_scores_failed) {
    if (prefix.empty())
      throw EvaluationError("early_warning: episode with no steps");
    bool found = false;
    for (std::size_t t = 0; t < prefix.size(); ++t) {
      if (prefix[t] >= threshold) {
        times.push_back(static_cast<double>(t + 1) /
                        static_cast<double>(prefix.size()));
        found = true;
        break;
      }
    }
    if (!found) ++out.undetected;
  }
  out.detected = times.size();
  std::sort(times.begin(), times.end());
  for (int grid = 1; grid <= 20; ++grid) {
    const double p = 0.05 * grid;
    const auto upto = std::upper_bound(times.begin(), times.end(), p + 1e-12);
    const double rate =
        out.episodes == 0
            ? 0.0
            : static_cast<double>(upto - times.begin()) /
                  static_cast<double>(out.episodes);
    out.curve.emplace_back(p, rate);
  }
  if (!times.empty()) {
    out.mean_detection_time =
        std::accumulate(times.begin(), times.end(), 0.0) /
        static_cast<double>(times.size());
    const std::size_t m = times.size();
    out.median_detection_time =
        m % 2 == 1 ? times[m / 2] : 0.5 * (times[m / 2 - 1] + times[m / 2]);
    out.detected_by_20pct = out.curve[3].second;  // progress fraction 0.20
  }
  return out;
}

// Normalized-entropy reference baseline: mean over steps (with token
// log-probs) of the unfiltered mean token surprisal. No content filter, no
// tail focus.
inline double normalized_entropy_score(const TrajectoryRecord& traj) {
  double sum = 0.0;
  std::size_t steps = 0;
  for (const auto& s : traj.steps) {
    if (!s.token_logprobs) continue;
    double step_sum = 0.0;
    for (const auto& lp : *s.token_logprobs) step_sum += -lp.logprob;
    sum += step_sum / static_cast<double>(s.token_logprobs->size());
    ++steps;
  }
  return steps == 0 ? 0.0 : sum / static_cast<double>(steps);
}

// Running version of the baseline for early-warning comparisons: entry t is
// the baseline over steps 1..t.
inline std::vector<double> normalized_entropy_prefix_scores(
    const TrajectoryRecord& traj) {
  std::vector<double> out;
  out.reserve(traj.steps.size());
  double sum = 0.0;
  std::size_t steps = 0;
  for (const auto& s : traj.steps) {
    if (s.token_logprobs) {
      double step_sum = 0.0;
      for (const auto& lp : *s.token_logprobs) step_sum += -lp.logprob;
      sum += step_sum / static_cast<double>(s.token_logprobs->size());
      ++steps;
    }
    out.push_back(steps == 0 ? 0.0 : sum / static_cast<double>(steps));
  }
  return out;
}

struct EvalReport {
  double auroc_episode = 0.0;
  double auarc_value = 0.0;
  std::vector<ArcPoint> arc_curve;
  std::vector<RocPoint> roc;
  EarlyWarningStats warning;
  std::size_t n_fail = 0;
  std::size_t n_succ = 0;
  std::optional<double> auroc_prefix;
  std::optional<double> auroc_baseline;
  std::optional<double> auroc_permuted;
  std::optional<double> baseline_detected_by_20pct;
  double threshold = 0.0;
};

// Writes summary.txt plus machine-readable roc.csv, arc.csv,
// early_warning.csv into `dir`.
inline void emit_report(const EvalReport& report,
                        const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  const auto open = [&](const char* name) {
    std::ofstream out(dir / name);
    if (!out)
      throw std::runtime_error("cannot write " + (dir / name).string());
    return out;
  };

  {
    auto out = open("roc.csv");
    out << "fpr,tpr,threshold\n";
    for (const auto& p : report.roc)
      out << format_double(p.fpr) << ',' << format_double(p.tpr) << ','
          << format_double(p.threshold) << '\n';
  }
  {
    auto out = open("arc.csv");
    out << "rejection,accuracy\n";
    for (const auto& p : report.arc_curve)
      out << format_double(p.rejection) << ',' << format_double(p.accuracy)
          << '\n';
  }
  {
    auto out = open("early_warning.csv");
    out << "progress,detection_rate\n";
    for (const auto& [p, rate] : report.warning.curve)
      out << format_double(p) << ',' << format_double(rate) << '\n';
  }
  {
    auto out = open("summary.txt");
    char line[128];
    std::snprintf(line, sizeof(line), "AUROC/AUARC: %.3f / %.3f",
                  report.auroc_episode, report.auarc_value);
    out << line << '\n';
    out << "episodes: " << (report.n_fail + report.n_succ)
        << " (fail " << report.n_fail << ", success " << report.n_succ
        << ")\n";
    out << "threshold: " << format_double(report.threshold) << '\n';
    if (report.auroc_prefix)
      out << "prefix AUROC: " << format_double(*report.auroc_prefix) << '\n';
    if (report.auroc_baseline)
      out << "baseline (normalized entropy) AUROC: "
          << format_double(*report.auroc_baseline) << '\n';
    if (report.auroc_permuted)
      out << "permuted-label AUROC: " << format_double(*report.auroc_permuted)
          << '\n';
    out << "early warning: detected " << report.warning.detected << '/'
        << report.warning.episodes << ", undetected "
        << report.warning.undetected << '\n';
    out << "detected by 20% progress: "
        << format_double(report.warning.detected_by_20pct) << '\n';
    if (report.baseline_detected_by_20pct)
      out << "baseline detected by 20% progress: "
          << format_double(*report.baseline_detected_by_20pct) << '\n';
    if (report.warning.mean_detection_time)
      out << "mean normalized detection time: "
          << format_double(*report.warning.mean_detection_time) << '\n';
    if (report.warning.median_detection_time)
      out << "median normalized detection time: "
          << format_double(*report.warning.median_detection_time) << '\n';
  }
}

}  // namespace tracer
