#include "toolwatch/embedding.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "toolwatch/digest.hpp"
#include "toolwatch/error.hpp"
#include "toolwatch/rng.hpp"
#include "toolwatch/text.hpp"

namespace toolwatch {

using nlohmann::json;

std::vector<EmbeddingVector> EmbeddingProvider::embed(std::span<const std::string> texts) {
  std::vector<std::string> truncated;
  truncated.reserve(texts.size());
  for (const std::string& t : texts) truncated.push_back(text::truncate_chars(t, kEmbeddingTruncationChars));
  auto out = compute(truncated);
  if (out.size() != texts.size())
    throw IntegrityError("embedding backend returned " + std::to_string(out.size()) + " vectors for " +
                         std::to_string(texts.size()) + " texts");
  for (const EmbeddingVector& v : out) {
    if (v.size() != dim())
      throw IntegrityError("embedding dimension " + std::to_string(v.size()) + ", expected " +
                           std::to_string(dim()));
    for (double x : v)
      if (!std::isfinite(x)) throw IntegrityError("embedding contains a non-finite value");
  }
  return out;
}

EmbeddingVector EmbeddingProvider::embed_one(std::string_view text) {
  const std::string t(text);
  return embed(std::span<const std::string>(&t, 1)).front();
}

EmbeddingVector embed_deterministic(std::string_view text, std::size_t dim) {
  const std::string truncated = text::truncate_chars(text, kEmbeddingTruncationChars);
  std::vector<std::string> tokens = text::split_whitespace(truncated);
  if (tokens.empty()) tokens.emplace_back();
  EmbeddingVector v(dim, 0.0);
  for (const std::string& tok : tokens) {
    const std::uint64_t m = splitmix64_mix(fnv1a64(tok));
    v[m % dim] += (m >> 63) != 0 ? -1.0 : 1.0;
  }
  double norm2 = 0.0;
  for (double x : v) norm2 += x * x;
  if (norm2 == 0.0) {
    // every bucket cancelled out
    v[splitmix64_mix(fnv1a64(truncated)) % dim] = 1.0;
    return v;
  }
  const double norm = std::sqrt(norm2);
  for (double& x : v) x /= norm;
  return v;
}

DeterministicEmbedder::DeterministicEmbedder(std::size_t dim, std::string model_id)
    : dim_(dim), model_id_(std::move(model_id)) {
  if (dim_ == 0) throw ConfigError("embedding dimension must be positive");
}

std::vector<EmbeddingVector> DeterministicEmbedder::compute(std::span<const std::string> texts) {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const std::string& t : texts) out.push_back(embed_deterministic(t, dim_));
  return out;
}

RemoteEmbedder::RemoteEmbedder(std::string endpoint, std::string model_id, std::size_t dim,
                               std::size_t batch_size, int retries)
    : model_id_(std::move(model_id)), dim_(dim), batch_size_(batch_size), retries_(retries) {
  constexpr std::string_view kScheme = "http://";
  if (endpoint.rfind(kScheme, 0) != 0)
    throw ConfigError("remote embedding endpoint must start with http://: " + endpoint);
  const std::string rest = endpoint.substr(kScheme.size());
  const auto slash = rest.find('/');
  host_ = std::string(kScheme) + rest.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : rest.substr(slash);
  if (batch_size_ == 0) batch_size_ = 1;
}

std::vector<EmbeddingVector> RemoteEmbedder::post_batch(std::span<const std::string> texts) {
  httplib::Client client(host_);
  client.set_connection_timeout(10);
  client.set_read_timeout(120);
  const std::string body =
      json{{"model_id", model_id_}, {"texts", std::vector<std::string>(texts.begin(), texts.end())}}.dump();
  std::string last_error;
  for (int attempt = 0; attempt <= retries_; ++attempt) {
    auto res = client.Post(path_, body, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw TransportError("embedding endpoint returned HTTP " + std::to_string(res->status));
    json reply = json::parse(res->body, nullptr, false);
    if (reply.is_discarded() || !reply.contains("embeddings") || !reply["embeddings"].is_array())
      throw IntegrityError("embedding endpoint reply lacks an \"embeddings\" array");
    std::vector<EmbeddingVector> out;
    for (const json& row : reply["embeddings"]) {
      if (!row.is_array()) throw IntegrityError("embedding row is not an array");
      EmbeddingVector v;
      v.reserve(row.size());
      for (const json& x : row) {
        if (!x.is_number()) throw IntegrityError("embedding value is not a number");
        v.push_back(x.get<double>());
      }
      out.push_back(std::move(v));
    }
    return out;
  }
  throw TransportError("embedding endpoint unreachable after " + std::to_string(retries_ + 1) +
                       " attempts: " + last_error);
}

std::vector<EmbeddingVector> RemoteEmbedder::compute(std::span<const std::string> texts) {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (std::size_t start = 0; start < texts.size(); start += batch_size_) {
    const std::size_t n = std::min(batch_size_, texts.size() - start);
    auto part = post_batch(texts.subspan(start, n));
    if (part.size() != n) throw IntegrityError("embedding endpoint returned a short batch");
    for (auto& v : part) out.push_back(std::move(v));
  }
  return out;
}

CachedEmbedder::CachedEmbedder(std::shared_ptr<EmbeddingProvider> backend,
                               std::optional<std::filesystem::path> path, WarningSink warn)
    : backend_(std::move(backend)), path_(std::move(path)), warn_(std::move(warn)) {
  if (!backend_) throw ConfigError("cached embedder needs a backend");
  if (!warn_) warn_ = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
  load();
}

std::string CachedEmbedder::cache_key(std::string_view model_id, std::string_view truncated_text) {
  std::string material;
  material.reserve(model_id.size() + truncated_text.size() + 1);
  material.append(model_id);
  material.push_back('\x1f');
  material.append(truncated_text);
  return sha256_hex(material);
}

void CachedEmbedder::load() {
  if (!path_ || !std::filesystem::exists(*path_)) return;
  std::ifstream in(*path_);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    bool ok = !j.is_discarded() && j.is_object() && j.contains("key") && j["key"].is_string() &&
              j.contains("dim") && j["dim"].is_number_unsigned() && j.contains("values") &&
              j["values"].is_array();
    EmbeddingVector v;
    if (ok) {
      ok = j["dim"].get<std::size_t>() == dim() && j["values"].size() == dim();
      for (std::size_t k = 0; ok && k < j["values"].size(); ++k) {
        const json& x = j["values"][k];
        ok = x.is_number() && std::isfinite(x.get<double>());
        if (ok) v.push_back(x.get<double>());
      }
    }
    if (!ok) {
      ++skipped_;
      warn_("embedding cache " + path_->string() + ":" + std::to_string(line_no) +
            ": corrupt entry skipped");
      continue;
    }
    entries_[j["key"].get<std::string>()] = std::move(v);
  }
}

std::size_t CachedEmbedder::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::vector<EmbeddingVector> CachedEmbedder::compute(std::span<const std::string> texts) {
  std::vector<std::string> keys;
  keys.reserve(texts.size());
  for (const std::string& t : texts) keys.push_back(cache_key(model_id(), t));

  std::vector<std::string> missing_texts;
  std::vector<std::string> missing_keys;
  {
    std::lock_guard lock(mutex_);
    std::unordered_map<std::string, bool> queued;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      if (entries_.count(keys[i]) || queued.count(keys[i])) continue;
      queued[keys[i]] = true;
      missing_texts.push_back(texts[i]);
      missing_keys.push_back(keys[i]);
    }
  }
  if (!missing_texts.empty()) {
    auto fresh = backend_->embed(missing_texts);
    std::lock_guard lock(mutex_);
    std::ofstream out;
    if (path_) {
      out.open(*path_, std::ios::app | std::ios::binary);
      if (!out) throw ConfigError("embedding cache not writable: " + path_->string());
    }
    for (std::size_t k = 0; k < fresh.size(); ++k) {
      if (out.is_open())
        out << json{{"key", missing_keys[k]}, {"dim", fresh[k].size()}, {"values", fresh[k]}}.dump() << '\n';
      entries_[missing_keys[k]] = std::move(fresh[k]);
    }
  }
  std::vector<EmbeddingVector> result;
  result.reserve(texts.size());
  std::lock_guard lock(mutex_);
  for (const std::string& k : keys) result.push_back(entries_.at(k));
  return result;
}

void ProviderConfig::validate() const {
  if (dim == 0) throw ConfigError("provider dim must be positive");
  if (backend == Backend::remote_service && (!endpoint || endpoint->empty()))
    throw ConfigError("remote_service backend requires an endpoint");
}

void to_json(json& j, const ProviderConfig& c) {
  j = json{{"backend", c.backend == ProviderConfig::Backend::remote_service ? "remote_service"
                                                                          : "deterministic_test"},
           {"model_id", c.model_id},
           {"dim", c.dim},
           {"endpoint", c.endpoint ? json(*c.endpoint) : json(nullptr)},
           {"cache_path", c.cache_path ? json(*c.cache_path) : json(nullptr)}};
}

void from_json(const json& j, ProviderConfig& c) {
  c = ProviderConfig{};
  const std::string backend = j.value("backend", std::string("deterministic_test"));
  if (backend == "deterministic_test") c.backend = ProviderConfig::Backend::deterministic_test;
  else if (backend == "remote_service") c.backend = ProviderConfig::Backend::remote_service;
  else throw ConfigError("unknown embedding backend \"" + backend + "\"");
  if (c.backend == ProviderConfig::Backend::remote_service) c.model_id = "all-MiniLM-L6-v2";
  c.model_id = j.value("model_id", c.model_id);
  c.dim = j.value("dim", c.dim);
  if (auto it = j.find("endpoint"); it != j.end() && !it->is_null()) c.endpoint = it->get<std::string>();
  if (auto it = j.find("cache_path"); it != j.end() && !it->is_null()) c.cache_path = it->get<std::string>();
}

std::shared_ptr<EmbeddingProvider> make_provider(ProviderConfig config) {
  if (const char* env = std::getenv(kEndpointEnvVar); env && *env &&
      config.backend == ProviderConfig::Backend::remote_service)
    config.endpoint = env;
  config.validate();
  std::shared_ptr<EmbeddingProvider> backend;
  if (config.backend == ProviderConfig::Backend::remote_service)
    backend = std::make_shared<RemoteEmbedder>(*config.endpoint, config.model_id, config.dim);
  else
    backend = std::make_shared<DeterministicEmbedder>(config.dim, config.model_id);
  std::optional<std::filesystem::path> path;
  if (config.cache_path) path = *config.cache_path;
  return std::make_shared<CachedEmbedder>(std::move(backend), std::move(path));
}

}  // namespace toolwatch
