#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "tracer/text.hpp"

namespace tracer {

using EmbeddingVector = std::vector<double>;

class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ProviderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// <u,v> / (|u||v|), exactly 0 if either vector is zero.
inline double cosine_similarity(const EmbeddingVector& u,
                                const EmbeddingVector& v) {
  if (u.size() != v.size())
    throw DimensionError("cosine_similarity: dimension mismatch (" +
                         std::to_string(u.size()) + " vs " +
                         std::to_string(v.size()) + ")");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) return 0.0;
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dimension() const = 0;
  virtual std::vector<EmbeddingVector> embed_batch(
      const std::vector<std::string>& texts) = 0;

  EmbeddingVector embed(const std::string& text) {
    return embed_batch({text}).front();
  }
};

// Deterministic hashed bag-of-words embedding: lowercase, split on
// non-alphanumeric runs, FNV-1a each token into one of d buckets, accumulate
// term frequency, L2-normalize. Empty text maps to the all-zero vector.
class HashedBowEmbedder final : public EmbeddingProvider {
 public:
  explicit HashedBowEmbedder(std::size_t dimension = 256) : dim_(dimension) {
    if (dim_ < 8)
      throw std::invalid_argument("embedding dimension must be >= 8");
  }

  std::size_t dimension() const override { return dim_; }

  std::vector<EmbeddingVector> embed_batch(
      const std::vector<std::string>& texts) override {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& text : texts) {
      EmbeddingVector v(dim_, 0.0);
      for (const auto& tok : tokenize(text)) v[fnv1a64(tok) % dim_] += 1.0;
      double norm = 0.0;
      for (double x : v) norm += x * x;
      if (norm > 0.0) {
        norm = std::sqrt(norm);
        for (double& x : v) x /= norm;
      }
      out.push_back(std::move(v));
    }
    return out;
  }

 private:
  std::size_t dim_;
};

// Bounded FIFO cache keyed on exact text bytes (normalization happens inside
// the provider, never before keying). Many concurrent readers, serialized
// writes; results with and without the cache are identical.
class CachingEmbedder final : public EmbeddingProvider {
 public:
  CachingEmbedder(std::shared_ptr<EmbeddingProvider> inner,
                  std::size_t capacity)
      : inner_(std::move(inner)), capacity_(capacity) {}

  std::size_t dimension() const override { return inner_->dimension(); }

  std::vector<EmbeddingVector> embed_batch(
      const std::vector<std::string>& texts) override {
    std::vector<EmbeddingVector> out(texts.size());
    std::vector<std::size_t> misses;
    {
      std::shared_lock lock(mutex_);
      for (std::size_t i = 0; i < texts.size(); ++i) {
        auto it = cache_.find(texts[i]);
        if (it != cache_.end()) {
          out[i] = it->second;
        } else {
          misses.push_back(i);
        }
      }
    }
    if (misses.empty()) return out;
    std::vector<std::string> miss_texts;
    miss_texts.reserve(misses.size());
    for (auto i : misses) miss_texts.push_back(texts[i]);
    auto fresh = inner_->embed_batch(miss_texts);
    {
      std::unique_lock lock(mutex_);
      for (std::size_t j = 0; j < misses.size(); ++j) {
        out[misses[j]] = fresh[j];
        if (capacity_ == 0) continue;
        if (cache_.find(miss_texts[j]) == cache_.end()) {
          if (cache_.size() >= capacity_) {
            cache_.erase(order_.front());
            order_.pop_front();
          }
          cache_.emplace(miss_texts[j], fresh[j]);
          order_.push_back(miss_texts[j]);
        }
      }
    }
    return out;
  }

 private:
  std::shared_ptr<EmbeddingProvider> inner_;
  std::size_t capacity_;
  std::shared_mutex mutex_;
  std::unordered_map<std::string, EmbeddingVector> cache_;
  std::deque<std::string> order_;
};

struct EmbeddingProviderConfig {
  enum class Kind { builtin_hashed_bow, external_http };
  Kind kind = Kind::builtin_hashed_bow;
  std::size_t dimension = 256;
  std::string endpoint;  // external only
  std::size_t cache_capacity = 4096;
  int timeout_ms = 5000;
  int retries = 2;
  bool fallback_to_builtin = false;
};

inline std::shared_ptr<EmbeddingProvider> with_cache(
    std::shared_ptr<EmbeddingProvider> inner, std::size_t capacity) {
  if (capacity == 0) return inner;
  return std::make_shared<CachingEmbedder>(std::move(inner), capacity);
}

}  // namespace tracer
