#pragma once

#include <memory>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "tracer/embeddings.hpp"

namespace tracer {

// External provider: HTTP POST {"texts": [string, ...]} to the configured
// endpoint, expecting {"vectors": [[real, ...], ...]}. A wrong dimension or an
// unreachable endpoint raises ProviderError; with fallback_to_builtin set the
// builtin hashed-BoW provider answers instead.
class HttpEmbedder final : public EmbeddingProvider {
 public:
  explicit HttpEmbedder(EmbeddingProviderConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.endpoint.empty())
      throw std::invalid_argument("external_http provider requires endpoint");
    if (cfg_.fallback_to_builtin)
      fallback_ = std::make_unique<HashedBowEmbedder>(cfg_.dimension);
  }

  std::size_t dimension() const override { return cfg_.dimension; }

  std::vector<EmbeddingVector> embed_batch(
      const std::vector<std::string>& texts) override {
    try {
      return post(texts);
    } catch (const ProviderError&) {
      if (fallback_) return fallback_->embed_batch(texts);
      throw;
    }
  }

 private:
  std::vector<EmbeddingVector> post(const std::vector<std::string>& texts) {
    // endpoint: http://host:port/path
    auto split = split_endpoint(cfg_.endpoint);
    httplib::Client client(split.first);
    client.set_connection_timeout(cfg_.timeout_ms / 1000,
                                  (cfg_.timeout_ms % 1000) * 1000);
    client.set_read_timeout(cfg_.timeout_ms / 1000,
                            (cfg_.timeout_ms % 1000) * 1000);
    nlohmann::json body;
    body["texts"] = texts;
    const std::string payload = body.dump();
    for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
      auto res = client.Post(split.second, payload, "application/json");
      if (!res) continue;
      if (res->status != 200)
        throw ProviderError("embedding provider returned HTTP " +
                            std::to_string(res->status));
      return parse_vectors(res->body, texts.size());
    }
    throw ProviderError("embedding provider unreachable: " + cfg_.endpoint);
  }

  std::vector<EmbeddingVector> parse_vectors(const std::string& body,
                                             std::size_t expected) const {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
      throw ProviderError(std::string("bad provider response: ") + e.what());
    }
    if (!j.contains("vectors") || !j.at("vectors").is_array() ||
        j.at("vectors").size() != expected)
      throw ProviderError("provider response missing \"vectors\"");
    std::vector<EmbeddingVector> out;
    for (const auto& vj : j.at("vectors")) {
      EmbeddingVector v = vj.get<EmbeddingVector>();
      if (v.size() != cfg_.dimension)
        throw ProviderError("provider returned dimension " +
                            std::to_string(v.size()) + ", expected " +
                            std::to_string(cfg_.dimension));
      out.push_back(std::move(v));
    }
    return out;
  }

  static std::pair<std::string, std::string> split_endpoint(
      const std::string& url) {
    auto scheme = url.find("://");
    auto path_start =
        url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
  }

  EmbeddingProviderConfig cfg_;
  std::unique_ptr<HashedBowEmbedder> fallback_;
};

inline std::shared_ptr<EmbeddingProvider> make_provider(
    const EmbeddingProviderConfig& cfg) {
  std::shared_ptr<EmbeddingProvider> inner;
  if (cfg.kind == EmbeddingProviderConfig::Kind::builtin_hashed_bow)
    inner = std::make_shared<HashedBowEmbedder>(cfg.dimension);
  else
    inner = std::make_shared<HttpEmbedder>(cfg);
  return with_cache(std::move(inner), cfg.cache_capacity);
}

}  // namespace tracer
