#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "tracer/signals.hpp"
#include "tracer/trajectory.hpp"

namespace tracer {

struct TracerParams {
  double alpha = 1.0;  // repetition weight
  double beta = 1.0;   // agent coherence-gap weight
  double gamma = 1.0;  // user coordination-gap weight
  double k = 0.3;      // tail fraction, in (0,1]
  double w = 0.25;     // worst-case interpolation, in [0,1]

  void validate() const {
    if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be >= 0");
    if (!(beta >= 0.0)) throw std::invalid_argument("beta must be >= 0");
    if (!(gamma >= 0.0)) throw std::invalid_argument("gamma must be >= 0");
    if (!(k > 0.0 && k <= 1.0))
      throw std::invalid_argument("k must lie in (0,1]");
    if (!(w >= 0.0 && w <= 1.0))
      throw std::invalid_argument("w must lie in [0,1]");
  }

  bool operator==(const TracerParams&) const = default;
};

// Component order: (r^U, r^rep, r^A, r^Uo).
using StepComponents = std::array<double, 4>;

// Unavailable surprisal contributes 0 (never epsilon); the situational
// channels are gated by actor.
inline StepComponents step_components(const StepSignals& s, Actor actor,
                                      const TracerParams& p) {
  return {
      s.u_available ? s.u : 0.0,
      p.alpha * s.d_rep,
      actor == Actor::Agent ? p.beta * s.d_o_agent : 0.0,
      actor == Actor::User ? p.gamma * s.d_o_user : 0.0,
  };
}

inline double step_risk(const StepComponents& c) {
  return std::max(std::max(c[0], c[1]), std::max(c[2], c[3]));
}

struct StepRisk {
  StepComponents components{};
  double r = 0.0;  // infinity norm of components
  Actor actor = Actor::Agent;
  double agent_part = 0.0;  // r = agent_part + user_part, one side zero
  double user_part = 0.0;
};

inline std::vector<StepRisk> step_risks(const TrajectoryRecord& traj,
                                        const std::vector<StepSignals>& signals,
                                        const TracerParams& p) {
  p.validate();
  if (signals.size() != traj.steps.size())
    throw std::invalid_argument("step_risks: signals/steps length mismatch");
  std::vector<StepRisk> out;
  out.reserve(signals.size());
  for (std::size_t t = 0; t < signals.size(); ++t) {
    StepRisk sr;
    sr.actor = traj.steps[t].actor;
    sr.components = step_components(signals[t], sr.actor, p);
    sr.r = step_risk(sr.components);
    (sr.actor == Actor::Agent ? sr.agent_part : sr.user_part) = sr.r;
    out.push_back(sr);
  }
  return out;
}

inline std::vector<double> risk_values(const std::vector<StepRisk>& risks) {
  std::vector<double> out;
  out.reserve(risks.size());
  for (const auto& r : risks) out.push_back(r.r);
  return out;
}

// K = max{1, floor(kN)}
inline std::size_t tail_k_count(double k, std::size_t n) {
  if (!(k > 0.0 && k <= 1.0)) throw std::invalid_argument("k must be in (0,1]");
  if (n < 1) throw std::invalid_argument("N must be >= 1");
  const auto floored =
      static_cast<std::size_t>(std::floor(k * static_cast<double>(n)));
  return std::max<std::size_t>(1, floored);
}

// Mean of the top-K order statistics (empirical CVaR of the risk vector).
inline double tail_mean(std::vector<double> r, double k) {
  if (r.empty()) throw std::invalid_argument("tail_mean: empty risk vector");
  const std::size_t kk = tail_k_count(k, r.size());
  std::partial_sort(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(kk),
                    r.end(), std::greater<double>());
  return std::accumulate(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(kk),
                         0.0) /
         static_cast<double>(kk);
}

// rho_{k,w}(r) = (1-w) TM_k(r) + w max(r)
inline double risk_functional(const std::vector<double>& r, double k,
                              double w) {
  if (r.empty())
    throw std::invalid_argument("risk_functional: empty risk vector");
  const double tm = tail_mean(r, k);
  const double mx = *std::max_element(r.begin(), r.end());
  return (1.0 - w) * tm + w * mx;
}

inline double tracer_score(const std::vector<double>& r,
                           const TracerParams& p) {
  return risk_functional(r, p.k, p.w);
}

struct ActorDecomposition {
  std::vector<double> agent;  // actor-wise step risks, zero off-actor
  std::vector<double> user;
};

// Agent side keeps max{U, alpha*D_rep, beta*D_o^A} at agent steps; user side
// keeps max{U, gamma*D_o^U} at user steps. Elementwise sum reconstructs r.
inline ActorDecomposition actor_decomposition(
    const std::vector<StepRisk>& risks) {
  ActorDecomposition out;
  out.agent.reserve(risks.size());
  out.user.reserve(risks.size());
  for (const auto& sr : risks) {
    out.agent.push_back(sr.agent_part);
    out.user.push_back(sr.user_part);
  }
  return out;
}

// Score of every prefix 1..t. K is recomputed per prefix length by default;
// freeze_k reproduces the alternative that keeps K = max{1, floor(kN)} of the
// full trajectory.
inline std::vector<double> prefix_scores(const std::vector<double>& r, double k,
                                         double w, bool freeze_k = false) {
  if (r.empty())
    throw std::invalid_argument("prefix_scores: empty risk vector");
  const std::size_t full_k = tail_k_count(k, r.size());
  std::vector<double> out;
  out.reserve(r.size());
  std::vector<double> sorted;  // descending prefix risks
  double running_max = 0.0;
  for (std::size_t t = 0; t < r.size(); ++t) {
    sorted.insert(std::upper_bound(sorted.begin(), sorted.end(), r[t],
                                   std::greater<double>()),
                  r[t]);
    running_max = std::max(running_max, r[t]);
    std::size_t kk = freeze_k ? std::min(full_k, t + 1) : tail_k_count(k, t + 1);
    const double tm =
        std::accumulate(sorted.begin(),
                        sorted.begin() + static_cast<std::ptrdiff_t>(kk), 0.0) /
        static_cast<double>(kk);
    out.push_back((1.0 - w) * tm + w * running_max);
  }
  return out;
}

inline std::vector<double> prefix_scores(const std::vector<StepRisk>& risks,
                                         const TracerParams& p,
                                         bool freeze_k = false) {
  return prefix_scores(risk_values(risks), p.k, p.w, freeze_k);
}

struct EpisodeScore {
  std::string episode_id;
  double score = 0.0;
  double score_agent = 0.0;
  double score_user = 0.0;
  std::size_t n_steps = 0;
  std::size_t argmax_step = 0;  // 1-based position of the largest step risk
};

inline EpisodeScore score_episode(const TrajectoryRecord& traj,
                                  const std::vector<StepSignals>& signals,
                                  const TracerParams& p) {
  const auto risks = step_risks(traj, signals, p);
  const auto values = risk_values(risks);
  const auto parts = actor_decomposition(risks);
  EpisodeScore out;
  out.episode_id = traj.episode_id;
  out.score = tracer_score(values, p);
  out.score_agent = tracer_score(parts.agent, p);
  out.score_user = tracer_score(parts.user, p);
  out.n_steps = values.size();
  out.argmax_step =
      static_cast<std::size_t>(std::max_element(values.begin(), values.end()) -
                               values.begin()) +
      1;
  return out;
}

}  // namespace tracer
