#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "toolwatch/embedding.hpp"
#include "toolwatch/graph.hpp"
#include "toolwatch/session.hpp"

namespace toolwatch {

enum class FeatureMode { metadata, content, combined };

std::string_view to_string(FeatureMode mode);
FeatureMode feature_mode_from_string(std::string_view s);

// Node feature layout:
//   metadata  [one-hot tool (n_tools) | param hash | response length]   n_tools + 2
//   content   [embed(args) | embed(response)]                            2 * embedding_dim
//   combined  metadata | content                                         n_tools + 2 + 2 * embedding_dim
struct FeatureConfig {
  FeatureMode mode = FeatureMode::content;
  ToolVocab vocab;
  std::size_t embedding_dim = kDefaultEmbeddingDim;
  std::size_t response_cap = 10000;
  std::uint32_t hash_modulus = 10000;

  std::size_t node_dim() const;
  std::size_t pooled_dim() const { return 2 * node_dim(); }
  bool needs_provider() const { return mode != FeatureMode::metadata; }
  // SHA-256 of the canonical JSON form.
  std::string digest() const;

  bool operator==(const FeatureConfig&) const = default;
};

void to_json(nlohmann::json& j, const FeatureConfig& c);
void from_json(const nlohmann::json& j, FeatureConfig& c);

// (MD5(args_text) as a big-endian 128-bit integer mod modulus) / modulus.
double param_hash(std::string_view args_text, std::uint32_t modulus = 10000);

Eigen::VectorXd metadata_features(const ToolCall& call, const ToolVocab& vocab,
                                  std::size_t response_cap = 10000, std::uint32_t hash_modulus = 10000);
Eigen::VectorXd content_features(const ToolCall& call, EmbeddingProvider& provider);
// provider may be null for metadata mode; otherwise ConfigError.
Eigen::VectorXd node_features(const ToolCall& call, const FeatureConfig& config, EmbeddingProvider* provider);

// n x node_dim matrix for all calls of a session; embeddings are requested in one batch.
Eigen::MatrixXd node_matrix(const Session& session, const FeatureConfig& config, EmbeddingProvider* provider);

// Graphs with node features filled. All texts of the corpus go to the provider
// in a single batch.
std::vector<SessionGraph> featurize_corpus(std::span<const Session> sessions, const FeatureConfig& config,
                                           EmbeddingProvider* provider, const DataFlowRule& rule = {});

// Column-wise mean followed by column-wise max. Summation runs over sorted
// column values so the result is exactly invariant to row order.
Eigen::VectorXd pooled_readout(const Eigen::MatrixXd& node_matrix);

// One pooled row per graph.
Eigen::MatrixXd pooled_matrix(std::span<const SessionGraph> graphs);

// Featurized dump, one JSON object per line:
//   {"session_id", "label", "n_nodes", "dim", "nodes": [[...]], "pooled": [...]}
void write_featurized(std::ostream& out, std::span<const SessionGraph> graphs);

}  // namespace toolwatch
