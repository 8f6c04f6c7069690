#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "tracer/embeddings.hpp"
#include "tracer/text.hpp"
#include "tracer/trajectory.hpp"

namespace tracer {

struct ContentFilterConfig {
  StopwordSet stopwords = default_stopwords();
  double pi0 = 0.9;        // probability threshold, in (0,1)
  double epsilon = 0.001;  // surprisal fallback when no content tokens remain

  void validate() const {
    if (!(pi0 > 0.0 && pi0 < 1.0))
      throw std::invalid_argument("pi0 must lie in (0,1)");
    if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");
    if (stopwords.empty())
      throw std::invalid_argument("stop-word set must be non-empty");
  }
};

struct RepetitionConfig {
  // Window counts the m most recent prior agent turns, not raw steps.
  int window = 6;

  void validate() const {
    if (window < 1) throw std::invalid_argument("window m must be >= 1");
  }
};

struct StepSignals {
  double u = 0.0;  // content-aware normalized surprisal
  bool u_available = false;
  double d_rep = 0.0;  // hybrid repetition, agent steps only
  double d_o_agent = 0.0;  // action/observation coherence gap, tool steps
  bool d_o_agent_available = false;
  double d_o_user = 0.0;  // agent-message/user-reply coordination gap
  bool d_o_user_available = false;

  bool operator==(const StepSignals&) const = default;
};

// Content-bearing token predicate: p <= pi0, not a stop word, not purely
// numeric. Returns 0-based indices into `tokens`.
inline std::vector<std::size_t> content_token_indices(
    const std::vector<TokenLogProb>& tokens, const ContentFilterConfig& cfg) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    const auto& t = tokens[j];
    // Small slack keeps the inclusive p <= pi0 boundary stable through the
    // exp/log round trip.
    if (std::exp(t.logprob) > cfg.pi0 + 1e-12) continue;
    const std::string lowered = trim_lower(t.token);
    if (cfg.stopwords.count(lowered)) continue;
    if (is_numeric_token(lowered)) continue;
    out.push_back(j);
  }
  return out;
}

// Mean of -logprob over content-bearing tokens; epsilon when none remain.
inline double normalized_surprisal(const std::vector<TokenLogProb>& tokens,
                                   const ContentFilterConfig& cfg) {
  const auto idx = content_token_indices(tokens, cfg);
  if (idx.empty()) return cfg.epsilon;
  double sum = 0.0;
  for (auto j : idx) sum += -tokens[j].logprob;
  return sum / static_cast<double>(idx.size());
}

// Content tokens of raw text: tokenize, then apply the same stop-word and
// numeric filters as the surprisal predicate (no probability filter; raw text
// carries none).
inline std::unordered_set<std::string> content_tokens(
    const std::string& text, const ContentFilterConfig& cfg) {
  std::unordered_set<std::string> out;
  for (auto& tok : tokenize(text)) {
    if (cfg.stopwords.count(tok)) continue;
    if (is_numeric_token(tok)) continue;
    out.insert(std::move(tok));
  }
  return out;
}

// Jaccard overlap of content tokens; 0 when the union is empty.
inline double lexical_jaccard(const std::string& u, const std::string& v,
                              const ContentFilterConfig& cfg) {
  const auto a = content_tokens(u, cfg);
  const auto b = content_tokens(v, cfg);
  if (a.empty() && b.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& t : a) inter += b.count(t);
  const std::size_t uni = a.size() + b.size() - inter;
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace detail {

// Product of semantic and lexical similarity, clamped so rounding in the
// cosine cannot push the score outside [0,1].
inline double repetition_term(double sim_sem, double sim_lex) {
  return std::clamp(sim_sem * sim_lex, 0.0, 1.0);
}

}  // namespace detail

// Max over the window of sim_sem * sim_lex against prior agent turns; 0 when
// the window is empty. `step` is a 0-based position into traj.steps.
inline double hybrid_repetition(std::size_t step, const TrajectoryRecord& traj,
                                const RepetitionConfig& cfg,
                                const ContentFilterConfig& filter,
                                EmbeddingProvider& emb) {
  if (step >= traj.steps.size())
    throw std::out_of_range("hybrid_repetition: step out of range");
  if (traj.steps[step].actor != Actor::Agent)
    throw std::invalid_argument(
        "hybrid_repetition is defined for agent steps only");
  const auto& cur = traj.steps[step].text;
  const auto cur_emb = emb.embed(cur);
  double best = 0.0;
  int seen = 0;
  for (std::size_t i = step; i-- > 0 && seen < cfg.window;) {
    if (traj.steps[i].actor != Actor::Agent) continue;
    ++seen;
    const auto& prev = traj.steps[i].text;
    const double sem = cosine_similarity(cur_emb, emb.embed(prev));
    const double lex = lexical_jaccard(cur, prev, filter);
    best = std::max(best, detail::repetition_term(sem, lex));
  }
  return best;
}

// delta(z(x_t), z(o_t)) = 1 - sim_sem at tool-call steps. Missing observation
// text yields an unavailable signal rather than an error.
inline std::optional<double> coherence_gap_agent(std::size_t step,
                                                 const TrajectoryRecord& traj,
                                                 EmbeddingProvider& emb) {
  const auto& s = traj.steps.at(step);
  if (s.actor != Actor::Agent || !s.is_tool_call || !s.observation_text)
    return std::nullopt;
  return 1.0 - cosine_similarity(emb.embed(s.text),
                                 emb.embed(*s.observation_text));
}

// delta(z(x_{t-1}), z(x_t)) for a user turn directly after an agent turn.
inline std::optional<double> coherence_gap_user(std::size_t step,
                                                const TrajectoryRecord& traj,
                                                EmbeddingProvider& emb) {
  const auto& s = traj.steps.at(step);
  if (s.actor != Actor::User || step == 0 ||
      traj.steps[step - 1].actor != Actor::Agent)
    return std::nullopt;
  return 1.0 - cosine_similarity(emb.embed(traj.steps[step - 1].text),
                                 emb.embed(s.text));
}

// Per-step signals for a whole trajectory. Step-t output depends only on
// steps <= t. Surprisal is computed for any step carrying token_logprobs,
// agent or user alike; without them it is flagged unavailable and the risk
// layer treats it as zero.
inline std::vector<StepSignals> compute_step_signals(
    const TrajectoryRecord& traj, const ContentFilterConfig& filter,
    const RepetitionConfig& rep, EmbeddingProvider& emb) {
  filter.validate();
  rep.validate();
  const std::size_t n = traj.steps.size();
  std::vector<StepSignals> out(n);

  // Message embeddings are needed repeatedly by the repetition window; compute
  // each once.
  std::vector<EmbeddingVector> msg_emb(n);
  {
    std::vector<std::string> texts;
    texts.reserve(n);
    for (const auto& s : traj.steps) texts.push_back(s.text);
    msg_emb = emb.embed_batch(texts);
  }

  std::vector<std::size_t> agent_history;  // 0-based positions of agent turns
  for (std::size_t t = 0; t < n; ++t) {
    const auto& s = traj.steps[t];
    StepSignals& sig = out[t];

    if (s.token_logprobs) {
      sig.u = normalized_surprisal(*s.token_logprobs, filter);
      sig.u_available = true;
    }

    if (s.actor == Actor::Agent) {
      double best = 0.0;
      const std::size_t window = static_cast<std::size_t>(rep.window);
      const std::size_t from =
          agent_history.size() > window ? agent_history.size() - window : 0;
      for (std::size_t h = from; h < agent_history.size(); ++h) {
        const std::size_t prev = agent_history[h];
        const double sem = cosine_similarity(msg_emb[t], msg_emb[prev]);
        const double lex =
            lexical_jaccard(s.text, traj.steps[prev].text, filter);
        best = std::max(best, detail::repetition_term(sem, lex));
      }
      sig.d_rep = best;

      if (s.is_tool_call && s.observation_text) {
        sig.d_o_agent =
            1.0 - cosine_similarity(msg_emb[t], emb.embed(*s.observation_text));
        sig.d_o_agent_available = true;
      }
      agent_history.push_back(t);
    } else {
      if (t > 0 && traj.steps[t - 1].actor == Actor::Agent) {
        sig.d_o_user = 1.0 - cosine_similarity(msg_emb[t - 1], msg_emb[t]);
        sig.d_o_user_available = true;
      }
    }
  }
  return out;
}

// Debug dump. Header is part of the external interface.
inline void write_signal_csv(std::ostream& out, const TrajectoryRecord& traj,
                             const std::vector<StepSignals>& signals) {
  out << "step,actor,u,u_available,d_rep,d_o_agent,d_o_user\n";
  for (std::size_t t = 0; t < signals.size(); ++t) {
    const auto& s = signals[t];
    out << (t + 1) << ',' << actor_name(traj.steps[t].actor) << ',' << s.u
        << ',' << (s.u_available ? 1 : 0) << ',' << s.d_rep << ','
        << s.d_o_agent << ',' << s.d_o_user << '\n';
  }
}

}  // namespace tracer
