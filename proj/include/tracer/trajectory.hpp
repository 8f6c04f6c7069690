#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

namespace tracer {

enum class Actor { Agent, User };

inline const char* actor_name(Actor a) {
  return a == Actor::Agent ? "agent" : "user";
}

struct TokenLogProb {
  std::string token;
  double logprob = 0.0;  // natural log; must be <= 0

  bool operator==(const TokenLogProb&) const = default;
};

struct StepRecord {
  int index = 0;  // 1-based, positional
  Actor actor = Actor::Agent;
  std::string text;
  std::optional<std::string> observation_text;
  bool is_tool_call = false;
  std::optional<std::vector<TokenLogProb>> token_logprobs;
  std::optional<long long> timestamp;

  bool operator==(const StepRecord&) const = default;
};

struct TrajectoryRecord {
  std::string episode_id;
  std::vector<StepRecord> steps;
  std::optional<int> outcome;  // 0 = success, 1 = failure

  bool operator==(const TrajectoryRecord&) const = default;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

namespace detail {

inline StepRecord parse_step(const nlohmann::json& j, std::size_t line,
                             int position) {
  StepRecord s;
  s.index = position;
  if (!j.is_object()) throw ParseError(line, "step is not an object");
  const auto actor = j.value("actor", std::string{});
  if (actor == "agent") {
    s.actor = Actor::Agent;
  } else if (actor == "user") {
    s.actor = Actor::User;
  } else {
    throw ParseError(line, "actor must be \"agent\" or \"user\", got \"" +
                               actor + "\"");
  }
  if (!j.contains("text") || !j.at("text").is_string())
    throw ParseError(line, "step is missing string field \"text\"");
  s.text = j.at("text").get<std::string>();
  if (j.contains("observation_text") && !j.at("observation_text").is_null())
    s.observation_text = j.at("observation_text").get<std::string>();
  s.is_tool_call = j.value("is_tool_call", false);
  if (s.is_tool_call && s.actor == Actor::User)
    throw ParseError(line, "tool-call step with actor=user violates "
                           "invariant \"is_tool_call implies actor=agent\"");
  if (j.contains("token_logprobs") && !j.at("token_logprobs").is_null()) {
    const auto& lps = j.at("token_logprobs");
    if (!lps.is_array() || lps.empty())
      throw ParseError(line, "token_logprobs must be a non-empty array");
    std::vector<TokenLogProb> out;
    out.reserve(lps.size());
    for (const auto& pair : lps) {
      if (!pair.is_array() || pair.size() != 2 || !pair[0].is_string() ||
          !pair[1].is_number())
        throw ParseError(line, "token_logprobs entries must be "
                               "[token, logprob] pairs");
      TokenLogProb lp{pair[0].get<std::string>(), pair[1].get<double>()};
      if (!(lp.logprob <= 0.0) || !std::isfinite(lp.logprob))
        throw ParseError(line, "token \"" + lp.token +
                                   "\" violates invariant \"logprob <= 0\"");
      out.push_back(std::move(lp));
    }
    s.token_logprobs = std::move(out);
  }
  if (j.contains("timestamp") && !j.at("timestamp").is_null())
    s.timestamp = j.at("timestamp").get<long long>();
  return s;
}

}  // namespace detail

inline TrajectoryRecord parse_trajectory_line(const std::string& line,
                                              std::size_t line_no) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(line_no, std::string("malformed record: ") + e.what());
  }
  if (!j.is_object()) throw ParseError(line_no, "record is not an object");
  TrajectoryRecord t;
  if (!j.contains("episode_id") || !j.at("episode_id").is_string() ||
      j.at("episode_id").get<std::string>().empty())
    throw ParseError(line_no, "episode_id must be a non-empty string");
  t.episode_id = j.at("episode_id").get<std::string>();
  if (j.contains("outcome") && !j.at("outcome").is_null()) {
    const int y = j.at("outcome").get<int>();
    if (y != 0 && y != 1)
      throw ParseError(line_no, "outcome must be 0, 1, or null");
    t.outcome = y;
  }
  if (!j.contains("steps") || !j.at("steps").is_array() ||
      j.at("steps").empty())
    throw ParseError(line_no, "steps must be a non-empty array");
  int pos = 1;
  for (const auto& sj : j.at("steps"))
    t.steps.push_back(detail::parse_step(sj, line_no, pos++));
  return t;
}

// Trajectory log: UTF-8, one trajectory per line. Step indices in the file are
// advisory; canonical indices are positional (1..N).
inline std::vector<TrajectoryRecord> parse_trajectory_log(std::istream& in) {
  std::vector<TrajectoryRecord> out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    TrajectoryRecord t = parse_trajectory_line(line, line_no);
    if (!seen.insert(t.episode_id).second)
      throw ParseError(line_no, "duplicate episode_id \"" + t.episode_id + "\"");
    out.push_back(std::move(t));
  }
  return out;
}

inline std::vector<TrajectoryRecord> load_trajectory_log(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trajectory log: " + path);
  return parse_trajectory_log(in);
}

inline nlohmann::ordered_json trajectory_to_json(const TrajectoryRecord& t) {
  nlohmann::ordered_json j;
  j["episode_id"] = t.episode_id;
  j["outcome"] = t.outcome ? nlohmann::ordered_json(*t.outcome)
                           : nlohmann::ordered_json(nullptr);
  auto& steps = j["steps"] = nlohmann::ordered_json::array();
  for (const auto& s : t.steps) {
    nlohmann::ordered_json sj;
    sj["actor"] = actor_name(s.actor);
    sj["text"] = s.text;
    sj["observation_text"] =
        s.observation_text ? nlohmann::ordered_json(*s.observation_text)
                           : nlohmann::ordered_json(nullptr);
    sj["is_tool_call"] = s.is_tool_call;
    if (s.token_logprobs) {
      auto arr = nlohmann::ordered_json::array();
      for (const auto& lp : *s.token_logprobs)
        arr.push_back({lp.token, lp.logprob});
      sj["token_logprobs"] = std::move(arr);
    } else {
      sj["token_logprobs"] = nullptr;
    }
    if (s.timestamp) sj["timestamp"] = *s.timestamp;
    steps.push_back(std::move(sj));
  }
  return j;
}

inline void write_trajectory_log(std::ostream& out,
                                 const std::vector<TrajectoryRecord>& ts) {
  for (const auto& t : ts) out << trajectory_to_json(t).dump() << '\n';
}

// Violations are the return value, not errors; each names the step index and
// the invariant it breaks.
inline std::vector<std::string> validate_trajectory(const TrajectoryRecord& t) {
  std::vector<std::string> out;
  if (t.episode_id.empty()) out.push_back("episode_id is empty");
  if (t.steps.empty()) out.push_back("trajectory has no steps (N >= 1)");
  int expected = 1;
  for (const auto& s : t.steps) {
    const std::string at = "step " + std::to_string(s.index) + ": ";
    if (s.index != expected)
      out.push_back(at + "indices must increase strictly by 1 (expected " +
                    std::to_string(expected) + ")");
    if (s.is_tool_call && s.actor == Actor::User)
      out.push_back(at + "is_tool_call implies actor=agent");
    if (s.token_logprobs) {
      if (s.token_logprobs->empty())
        out.push_back(at + "token_logprobs, when present, must be non-empty");
      for (const auto& lp : *s.token_logprobs)
        if (!(lp.logprob <= 0.0) || !std::isfinite(lp.logprob))
          out.push_back(at + "token \"" + lp.token + "\": logprob <= 0");
    }
    ++expected;
  }
  if (t.outcome && *t.outcome != 0 && *t.outcome != 1)
    out.push_back("outcome must be 0 or 1 when present");
  return out;
}

}  // namespace tracer
