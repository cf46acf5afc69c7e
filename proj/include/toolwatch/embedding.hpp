#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace toolwatch {

using EmbeddingVector = std::vector<double>;

inline constexpr std::size_t kDefaultEmbeddingDim = 384;
inline constexpr std::size_t kEmbeddingTruncationChars = 512;

// Environment variable that overrides the configured remote endpoint.
inline constexpr const char* kEndpointEnvVar = "TOOLWATCH_EMBED_ENDPOINT";

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  virtual std::size_t dim() const = 0;
  virtual const std::string& model_id() const = 0;

  // One vector per input, in order. Inputs are truncated to 512 characters
  // before reaching the backend; backend output is checked for dimension and
  // finiteness (IntegrityError).
  std::vector<EmbeddingVector> embed(std::span<const std::string> texts);
  EmbeddingVector embed_one(std::string_view text);

 protected:
  // Receives already-truncated texts.
  virtual std::vector<EmbeddingVector> compute(std::span<const std::string> texts) = 0;
};

// Signed feature hashing over whitespace tokens of the truncated text:
// token t adds +-1 at bucket mix(fnv1a64(t)) % dim (sign = top bit), then the
// vector is L2-normalized. Texts without tokens hash the empty token.
EmbeddingVector embed_deterministic(std::string_view text, std::size_t dim);

class DeterministicEmbedder final : public EmbeddingProvider {
 public:
  explicit DeterministicEmbedder(std::size_t dim = kDefaultEmbeddingDim,
                                 std::string model_id = "deterministic-token-hash-v1");
  std::size_t dim() const override { return dim_; }
  const std::string& model_id() const override { return model_id_; }

 protected:
  std::vector<EmbeddingVector> compute(std::span<const std::string> texts) override;

 private:
  std::size_t dim_;
  std::string model_id_;
};

// POST {"model_id", "texts": [...]} to the endpoint, expecting
// {"embeddings": [[...], ...]}. Only plain http:// endpoints are supported.
class RemoteEmbedder final : public EmbeddingProvider {
 public:
  RemoteEmbedder(std::string endpoint, std::string model_id, std::size_t dim,
                 std::size_t batch_size = 64, int retries = 3);
  std::size_t dim() const override { return dim_; }
  const std::string& model_id() const override { return model_id_; }

 protected:
  std::vector<EmbeddingVector> compute(std::span<const std::string> texts) override;

 private:
  std::vector<EmbeddingVector> post_batch(std::span<const std::string> texts);

  std::string host_;
  std::string path_;
  std::string model_id_;
  std::size_t dim_;
  std::size_t batch_size_;
  int retries_;
};

// Append-only JSONL cache keyed by SHA-256 of (model_id, truncated text).
// Each line: {"key": hex, "dim": n, "values": [...]}. Corrupt lines are
// skipped with a warning and recomputed on demand.
class CachedEmbedder final : public EmbeddingProvider {
 public:
  using WarningSink = std::function<void(const std::string&)>;

  CachedEmbedder(std::shared_ptr<EmbeddingProvider> backend, std::optional<std::filesystem::path> path,
                 WarningSink warn = {});

  std::size_t dim() const override { return backend_->dim(); }
  const std::string& model_id() const override { return backend_->model_id(); }

  std::size_t size() const;
  std::size_t skipped_entries() const noexcept { return skipped_; }

  static std::string cache_key(std::string_view model_id, std::string_view truncated_text);

 protected:
  std::vector<EmbeddingVector> compute(std::span<const std::string> texts) override;

 private:
  void load();

  std::shared_ptr<EmbeddingProvider> backend_;
  std::optional<std::filesystem::path> path_;
  WarningSink warn_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, EmbeddingVector> entries_;
  std::size_t skipped_ = 0;
};

struct ProviderConfig {
  enum class Backend { deterministic_test, remote_service };

  Backend backend = Backend::deterministic_test;
  std::string model_id = "deterministic-token-hash-v1";
  std::size_t dim = kDefaultEmbeddingDim;
  std::optional<std::string> endpoint;
  std::optional<std::string> cache_path;

  void validate() const;
  bool operator==(const ProviderConfig&) const = default;
};

void to_json(nlohmann::json& j, const ProviderConfig& c);
void from_json(const nlohmann::json& j, ProviderConfig& c);

// Applies the endpoint environment override, wraps the backend in a cache
// (in-memory when no cache_path is set).
std::shared_ptr<EmbeddingProvider> make_provider(ProviderConfig config);

}  // namespace toolwatch
