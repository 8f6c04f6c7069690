#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace tracer {

// FNV-1a 64-bit with the standard offset basis. Fixed on purpose: the hashed
// bag-of-words embedding pins golden vectors against it, so changing the hash
// (or its seed) is a breaking change.
constexpr std::uint64_t kFnvOffsetBasis = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t seed = kFnvOffsetBasis) {
  std::uint64_t h = seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

inline char ascii_lower(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

inline bool is_alnum_byte(char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') ||
         (c >= 'A' && c <= 'Z');
}

// Lowercase and split on runs of non-alphanumeric bytes. Shared by the
// hashed-BoW embedder and the lexical Jaccard channel so both see the same
// token boundaries.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (is_alnum_byte(c)) {
      cur.push_back(ascii_lower(c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// "Purely numeric up to punctuation": at least one digit and no letters.
// Mixed tokens like "A123" count as non-numeric.
inline bool is_numeric_token(std::string_view token) {
  bool has_digit = false;
  for (char c : token) {
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) return false;
    if (c >= '0' && c <= '9') has_digit = true;
  }
  return has_digit;
}

inline std::string trim_lower(std::string_view token) {
  std::size_t b = 0, e = token.size();
  while (b < e && std::isspace(static_cast<unsigned char>(token[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(token[e - 1]))) --e;
  std::string out(token.substr(b, e - b));
  std::transform(out.begin(), out.end(), out.begin(), ascii_lower);
  return out;
}

using StopwordSet = std::unordered_set<std::string>;

// Fixed default English stop-word list. Replaceable via config; the default is
// pinned so golden tests stay stable.
inline const StopwordSet& default_stopwords() {
  static const StopwordSet words = {
      "a",       "about",   "above",   "after",    "again",   "against",
      "all",     "am",      "an",      "and",      "any",     "are",
      "aren",    "as",      "at",      "be",       "because", "been",
      "before",  "being",   "below",   "between",  "both",    "but",
      "by",      "can",     "cannot",  "could",    "couldn",  "did",
      "didn",    "do",      "does",    "doesn",    "doing",   "don",
      "down",    "during",  "each",    "few",      "for",     "from",
      "further", "had",     "hadn",    "has",      "hasn",    "have",
      "haven",   "having",  "he",      "her",      "here",    "hers",
      "herself", "him",     "himself", "his",      "how",     "i",
      "if",      "in",      "into",    "is",       "isn",     "it",
      "its",     "itself",  "just",    "let",      "me",      "more",
      "most",    "mustn",   "my",      "myself",   "no",      "nor",
      "not",     "now",     "of",      "off",      "on",      "once",
      "only",    "or",      "other",   "ought",    "our",     "ours",
      "ourselves", "out",   "over",    "own",      "same",    "shan",
      "she",     "should",  "shouldn", "so",       "some",    "such",
      "than",    "that",    "the",     "their",    "theirs",  "them",
      "themselves", "then", "there",   "these",    "they",    "this",
      "those",   "through", "to",      "too",      "under",   "until",
      "up",      "very",    "was",     "wasn",     "we",      "were",
      "weren",   "what",    "when",    "where",    "which",   "while",
      "who",     "whom",    "why",     "will",     "with",    "won",
      "would",   "wouldn",  "you",     "your",     "yours",   "yourself",
      "yourselves", "also", "however", "therefore", "thus",   "hence",
      "ok",      "okay",    "yes",     "yeah",     "please",  "thanks",
      "thank",   "sure",    "well",    "oh",       "hi",      "hello",
      "hey",     "um",      "uh",      "hmm",      "s",       "t",
      "d",       "ll",      "m",       "re",       "ve",      "y",
      "shall",   "may",     "might",   "must",     "get",     "got",
      "one",     "two",     "many",    "much",     "still",   "yet",
  };
  return words;
}

// Stop-word list file: UTF-8, one token per line, '#' comments allowed.
inline StopwordSet load_stopwords(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open stop-word list: " + path);
  StopwordSet out;
  std::string line;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::string tok = trim_lower(line);
    if (!tok.empty()) out.insert(std::move(tok));
  }
  return out;
}

}  // namespace tracer
