#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "tracer/config.hpp"
#include "tracer/risk.hpp"
#include "tracer/signals.hpp"
#include "tracer/text.hpp"
#include "tracer/trajectory.hpp"

namespace tracer {

class SpecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class HazardKind { none, loop, tool_mismatch, coordination_gap };

inline const char* hazard_kind_name(HazardKind k) {
  switch (k) {
    case HazardKind::loop: return "loop";
    case HazardKind::tool_mismatch: return "tool_mismatch";
    case HazardKind::coordination_gap: return "coordination_gap";
    default: return "none";
  }
}

inline HazardKind hazard_kind_from_name(const std::string& name) {
  if (name == "loop") return HazardKind::loop;
  if (name == "tool_mismatch") return HazardKind::tool_mismatch;
  if (name == "coordination_gap") return HazardKind::coordination_gap;
  if (name == "none") return HazardKind::none;
  throw SpecError("unknown hazard kind: " + name);
}

struct ScenarioSpec {
  std::size_t episodes = 1000;
  int min_steps = 10;
  int max_steps = 40;
  std::vector<HazardKind> hazard_kinds = {HazardKind::loop,
                                          HazardKind::tool_mismatch,
                                          HazardKind::coordination_gap};
  double hazard_density = 0.35;  // per-episode probability of planted hazards
  int hazards_min = 2;
  int hazards_max = 4;
  double tool_call_prob = 0.4;
  std::uint64_t seed = 7;

  void validate() const {
    if (episodes == 0) throw SpecError("episodes must be >= 1");
    if (min_steps < 4 || max_steps < min_steps)
      throw SpecError("need 4 <= min_steps <= max_steps");
    if (!(hazard_density >= 0.0 && hazard_density <= 1.0))
      throw SpecError("hazard_density must lie in [0,1]");
    if (hazards_min < 1 || hazards_max < hazards_min)
      throw SpecError("need 1 <= hazards_min <= hazards_max");
    if (!(tool_call_prob >= 0.0 && tool_call_prob <= 1.0))
      throw SpecError("tool_call_prob must lie in [0,1]");
    const bool only_none =
        hazard_kinds.empty() ||
        std::all_of(hazard_kinds.begin(), hazard_kinds.end(),
                    [](HazardKind k) { return k == HazardKind::none; });
    if (hazard_density > 0.0 && only_none)
      throw SpecError("hazard_density > 0 requires a non-none hazard kind");
  }

  static ScenarioSpec from_config(const KeyValueConfig& cfg) {
    ScenarioSpec spec;
    spec.episodes = static_cast<std::size_t>(
        cfg.get_int("episodes", static_cast<long long>(spec.episodes)));
    spec.min_steps = static_cast<int>(cfg.get_int("min_steps", spec.min_steps));
    spec.max_steps = static_cast<int>(cfg.get_int("max_steps", spec.max_steps));
    spec.hazard_density = cfg.get_double("hazard_density", spec.hazard_density);
    spec.hazards_min =
        static_cast<int>(cfg.get_int("hazards_min", spec.hazards_min));
    spec.hazards_max =
        static_cast<int>(cfg.get_int("hazards_max", spec.hazards_max));
    spec.tool_call_prob = cfg.get_double("tool_call_prob", spec.tool_call_prob);
    spec.seed = static_cast<std::uint64_t>(
        cfg.get_int("seed", static_cast<long long>(spec.seed)));
    if (cfg.has("hazard_kinds")) {
      spec.hazard_kinds.clear();
      for (const auto& name : cfg.get_string_list("hazard_kinds", {}))
        spec.hazard_kinds.push_back(hazard_kind_from_name(name));
    }
    spec.validate();
    return spec;
  }
};

struct HazardAnnotation {
  std::string episode_id;
  int step = 0;  // 1-based
  HazardKind kind = HazardKind::none;
  double c = 0.0;  // planted condition C_t
};

struct SynthDataset {
  std::vector<TrajectoryRecord> trajectories;
  std::vector<HazardAnnotation> annotations;
};

namespace detail {

// Task vocabulary for normal turns; the hazard vocabulary is disjoint so
// cross-vocabulary cosine similarity is near zero under the hashed-BoW
// embedding.
inline const std::vector<std::string>& base_vocab() {
  static const std::vector<std::string> v = {
      "order",   "refund",  "flight",  "booking", "ticket",  "status",
      "account", "update",  "payment", "confirm", "seat",    "invoice",
      "customer","record",  "request", "detail",  "change",  "policy",
      "balance", "itinerary"};
  return v;
}

inline const std::vector<std::string>& hazard_vocab() {
  static const std::vector<std::string> v = {
      "zephyr", "quasar",  "nebula", "krypton", "vortex",
      "cipher", "glacier", "tundra", "obsidian","aurora"};
  return v;
}

inline std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

inline std::vector<std::string> sample_words(
    const std::vector<std::string>& vocab, std::size_t count,
    std::mt19937_64& rng) {
  std::vector<std::size_t> idx(vocab.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::string> out;
  count = std::min(count, vocab.size());
  for (std::size_t i = 0; i < count; ++i) out.push_back(vocab[idx[i]]);
  return out;
}

inline std::uint64_t episode_seed(std::uint64_t spec_seed,
                                  const std::string& episode_id) {
  // Derived per-episode seed: parallel and serial generation agree.
  return fnv1a64(episode_id) ^ (spec_seed * 0x9E3779B97F4A7C15ULL);
}

inline void attach_logprobs(StepRecord& step, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> prob(0.2, 0.9);
  std::vector<TokenLogProb> lps;
  for (const auto& tok : tokenize(step.text))
    lps.push_back({tok, std::log(prob(rng))});
  if (!lps.empty()) step.token_logprobs = std::move(lps);
}

}  // namespace detail

// Deterministic generator for planted-hazard episodes. Loop hazards repeat a
// prior agent turn, tool_mismatch hazards answer a tool call from a disjoint
// vocabulary, coordination_gap hazards make the user reply from a disjoint
// vocabulary. Episodes are labeled failure iff they carry a planted hazard.
inline SynthDataset generate(const ScenarioSpec& spec) {
  spec.validate();
  SynthDataset out;
  std::vector<HazardKind> kinds;
  for (HazardKind k : spec.hazard_kinds)
    if (k != HazardKind::none) kinds.push_back(k);

  for (std::size_t e = 0; e < spec.episodes; ++e) {
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "ep-%06zu", e);
    const std::string episode_id = idbuf;
    std::mt19937_64 rng(detail::episode_seed(spec.seed, episode_id));

    std::uniform_int_distribution<int> len_dist(spec.min_steps, spec.max_steps);
    const int n = len_dist(rng);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // Plan hazards first. Steps are 1-based; user speaks on odd steps, agent
    // on even steps.
    std::vector<HazardKind> plan(static_cast<std::size_t>(n) + 1,
                                 HazardKind::none);
    const bool want_hazards =
        !kinds.empty() && unit(rng) < spec.hazard_density;
    if (want_hazards) {
      std::uniform_int_distribution<int> count_dist(spec.hazards_min,
                                                    spec.hazards_max);
      const int wanted = count_dist(rng);
      std::uniform_int_distribution<std::size_t> kind_dist(0, kinds.size() - 1);
      for (int h = 0; h < wanted; ++h) {
        const HazardKind kind = kinds[kind_dist(rng)];
        // loop needs an agent step with a prior agent turn (step >= 4);
        // tool_mismatch any agent step; coordination_gap a user step with an
        // agent predecessor (odd step >= 3).
        std::vector<int> eligible;
        for (int t = kind == HazardKind::loop ? 4 : 2; t <= n; ++t) {
          const bool agent_step = t % 2 == 0;
          if (kind == HazardKind::coordination_gap) {
            if (!agent_step && t >= 3 && plan[t] == HazardKind::none)
              eligible.push_back(t);
          } else if (agent_step && plan[t] == HazardKind::none) {
            eligible.push_back(t);
          }
        }
        if (eligible.empty()) continue;
        std::uniform_int_distribution<std::size_t> pos_dist(
            0, eligible.size() - 1);
        plan[static_cast<std::size_t>(eligible[pos_dist(rng)])] = kind;
      }
    }

    TrajectoryRecord traj;
    traj.episode_id = episode_id;
    std::string last_agent_text;
    bool planted = false;
    for (int t = 1; t <= n; ++t) {
      StepRecord step;
      step.index = t;
      const bool agent_step = t % 2 == 0;
      step.actor = agent_step ? Actor::Agent : Actor::User;
      const HazardKind kind = plan[static_cast<std::size_t>(t)];

      if (agent_step) {
        if (kind == HazardKind::loop && !last_agent_text.empty()) {
          step.text = last_agent_text;  // near-duplicate turn: exact repeat
        } else if (kind == HazardKind::tool_mismatch) {
          step.is_tool_call = true;
          auto words = detail::sample_words(detail::base_vocab(), 3, rng);
          words.insert(words.begin(), "lookup");
          step.text = detail::join(words);
          step.observation_text =
              detail::join(detail::sample_words(detail::hazard_vocab(), 4, rng));
        } else if (unit(rng) < spec.tool_call_prob) {
          step.is_tool_call = true;
          auto words = detail::sample_words(detail::base_vocab(), 3, rng);
          auto obs = words;
          obs.push_back("result");
          obs.push_back("ready");
          words.insert(words.begin(), "lookup");
          step.text = detail::join(words);
          step.observation_text = detail::join(obs);
        } else {
          step.text =
              detail::join(detail::sample_words(detail::base_vocab(), 6, rng));
        }
        last_agent_text = step.text;
      } else {
        if (kind == HazardKind::coordination_gap) {
          step.text =
              detail::join(detail::sample_words(detail::hazard_vocab(), 4, rng));
        } else {
          // echo part of the previous agent turn plus fresh task words
          std::vector<std::string> words;
          const auto prev = tokenize(last_agent_text);
          for (std::size_t i = 0; i < prev.size() && i < 3; ++i)
            words.push_back(prev[i]);
          for (auto& w : detail::sample_words(detail::base_vocab(), 3, rng))
            words.push_back(std::move(w));
          step.text = detail::join(words);
        }
      }
      detail::attach_logprobs(step, rng);
      traj.steps.push_back(std::move(step));

      if (kind != HazardKind::none) {
        planted = true;
        out.annotations.push_back({episode_id, t, kind, 1.0});
      }
    }
    traj.outcome = planted ? 1 : 0;
    out.trajectories.push_back(std::move(traj));
  }
  return out;
}

// Sidecar annotations file.
inline void write_annotations(std::ostream& out,
                              const std::vector<HazardAnnotation>& anns) {
  out << "episode_id,step,hazard_kind,C_t\n";
  for (const auto& a : anns)
    out << a.episode_id << ',' << a.step << ',' << hazard_kind_name(a.kind)
        << ',' << a.c << '\n';
}

// ---------------------------------------------------------------------------
// Synthetic surprisal oracle

struct SurprisalOracle {
  // One row per generated position: true distribution Q and model
  // distribution P over the same small vocabulary.
  std::vector<std::vector<double>> q_rows;
  std::vector<std::vector<double>> p_rows;

  void validate() const {
    if (q_rows.empty() || q_rows.size() != p_rows.size())
      throw SpecError("oracle needs matching non-empty Q and P rows");
    for (std::size_t j = 0; j < q_rows.size(); ++j) {
      const auto& q = q_rows[j];
      const auto& p = p_rows[j];
      if (q.empty() || q.size() != p.size())
        throw SpecError("oracle row " + std::to_string(j) +
                        ": Q and P must share a vocabulary");
      double qs = 0.0, ps = 0.0;
      for (std::size_t v = 0; v < q.size(); ++v) {
        if (q[v] < 0.0 || p[v] < 0.0)
          throw SpecError("oracle probabilities must be nonnegative");
        if (q[v] > 0.0 && p[v] == 0.0)
          throw SpecError("oracle row " + std::to_string(j) +
                          ": Q places mass where P is zero");
        qs += q[v];
        ps += p[v];
      }
      if (std::abs(qs - 1.0) > 1e-12 || std::abs(ps - 1.0) > 1e-12)
        throw SpecError("oracle row " + std::to_string(j) +
                        ": distributions must sum to 1");
    }
  }
};

struct OracleExpectation {
  double entropy_part = 0.0;  // mean Shannon entropy of Q rows
  double kl_part = 0.0;       // mean KL(Q || P)
  double total = 0.0;
};

// Exact expectation of the filtered surprisal under the oracle, by direct
// summation over the vocabulary.
inline OracleExpectation surprisal_oracle_expectation(
    const SurprisalOracle& oracle) {
  oracle.validate();
  OracleExpectation out;
  for (std::size_t j = 0; j < oracle.q_rows.size(); ++j) {
    const auto& q = oracle.q_rows[j];
    const auto& p = oracle.p_rows[j];
    double h = 0.0, kl = 0.0;
    for (std::size_t v = 0; v < q.size(); ++v) {
      if (q[v] == 0.0) continue;
      h += -q[v] * std::log(q[v]);
      kl += q[v] * std::log(q[v] / p[v]);
    }
    out.entropy_part += h;
    out.kl_part += kl;
  }
  const auto n = static_cast<double>(oracle.q_rows.size());
  out.entropy_part /= n;
  out.kl_part /= n;
  out.total = out.entropy_part + out.kl_part;
  return out;
}

// One resampled step under the oracle: tokens drawn from Q, log-probs scored
// under P. Token names avoid the stop-word and numeric filters.
inline std::vector<TokenLogProb> sample_oracle_step(
    const SurprisalOracle& oracle, std::mt19937_64& rng) {
  std::vector<TokenLogProb> out;
  out.reserve(oracle.q_rows.size());
  for (std::size_t j = 0; j < oracle.q_rows.size(); ++j) {
    std::discrete_distribution<std::size_t> draw(oracle.q_rows[j].begin(),
                                                 oracle.q_rows[j].end());
    const std::size_t v = draw(rng);
    out.push_back({"tok" + std::to_string(v),
                   std::log(oracle.p_rows[j][v])});
  }
  return out;
}

// Random oracle with entries bounded away from 0 and 1, so every sampled
// token passes the default content filter and Q << P holds by construction.
inline SurprisalOracle make_random_oracle(std::mt19937_64& rng,
                                          std::size_t positions,
                                          std::size_t vocab) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto random_row = [&] {
    std::vector<double> row(vocab);
    double sum = 0.0;
    for (double& x : row) {
      x = unit(rng);
      sum += x;
    }
    // mix with uniform: entries end up in [1/(2V), (1 + 1/V)/2]
    for (double& x : row)
      x = 0.5 * x / sum + 0.5 / static_cast<double>(vocab);
    return row;
  };
  SurprisalOracle oracle;
  for (std::size_t j = 0; j < positions; ++j) {
    oracle.q_rows.push_back(random_row());
    oracle.p_rows.push_back(random_row());
  }
  return oracle;
}

// ---------------------------------------------------------------------------
// Monte-Carlo check of the breakdown bound

struct BoundCheckResult {
  double empirical_p = 0.0;  // Monte-Carlo estimate of P(B)
  double bound = 0.0;        // c * mean(K * TM_k) + c * eta_hat
  double std_error = 0.0;
  double eta_hat = 0.0;  // max observed below-tail sum
  bool holds = false;
};

// Hazards are drawn with lambda_t = min{1, c * r_t} where r_t is the step
// risk computed under theta, closing the loop between the planted hazard
// model and the measured risk. Assumption 1 (lambda_t <= c * r_t) then holds
// per step by construction; the below-tail sums furnish the empirical tail
// slack eta_hat.
inline BoundCheckResult breakdown_bound_check(const ScenarioSpec& spec,
                                              const TracerParams& params,
                                              double c, std::size_t trials,
                                              const ContentFilterConfig& filter,
                                              const RepetitionConfig& rep,
                                              EmbeddingProvider& emb) {
  if (!(c > 0.0))
    throw std::invalid_argument("breakdown_bound_check: c must be > 0");
  if (trials < 1000)
    throw std::invalid_argument("breakdown_bound_check: trials must be >= 1000");
  params.validate();

  ScenarioSpec trial_spec = spec;
  trial_spec.episodes = trials;
  const auto data = generate(trial_spec);

  BoundCheckResult out;
  double breakdowns = 0.0;
  double mean_tail_term = 0.0;
  for (const auto& traj : data.trajectories) {
    const auto signals = compute_step_signals(traj, filter, rep, emb);
    const auto risks = risk_values(step_risks(traj, signals, params));
    const std::size_t kk = tail_k_count(params.k, risks.size());
    std::vector<double> sorted(risks);
    std::sort(sorted.begin(), sorted.end(), std::greater<double>());
    double top = 0.0, below = 0.0;
    for (std::size_t i = 0; i < sorted.size(); ++i)
      (i < kk ? top : below) += sorted[i];
    mean_tail_term += top;  // K * TM_k
    out.eta_hat = std::max(out.eta_hat, below);

    std::mt19937_64 rng(detail::episode_seed(spec.seed ^ 0xB0BACAFEULL,
                                             traj.episode_id));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    bool breakdown = false;
    for (double r : risks) {
      const double lambda = std::min(1.0, c * r);
      if (unit(rng) < lambda) {
        breakdown = true;
        break;
      }
    }
    breakdowns += breakdown ? 1.0 : 0.0;
  }

  const auto n = static_cast<double>(trials);
  out.empirical_p = breakdowns / n;
  mean_tail_term /= n;
  out.bound = c * mean_tail_term + c * out.eta_hat;
  out.std_error = std::sqrt(out.empirical_p * (1.0 - out.empirical_p) / n);
  out.holds = out.empirical_p <= out.bound + 3.0 * out.std_error + 1e-12;
  return out;
}

}  // namespace tracer
