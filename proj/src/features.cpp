#include "toolwatch/features.hpp"

#include <algorithm>
#include <ostream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "toolwatch/digest.hpp"
#include "toolwatch/error.hpp"

namespace toolwatch {

using nlohmann::json;

std::string_view to_string(FeatureMode mode) {
  switch (mode) {
    case FeatureMode::metadata: return "metadata";
    case FeatureMode::content: return "content";
    case FeatureMode::combined: return "combined";
  }
  return "unknown";
}

FeatureMode feature_mode_from_string(std::string_view s) {
  if (s == "metadata") return FeatureMode::metadata;
  if (s == "content") return FeatureMode::content;
  if (s == "combined") return FeatureMode::combined;
  throw ConfigError("unknown feature mode \"" + std::string(s) + "\"");
}

std::size_t FeatureConfig::node_dim() const {
  const std::size_t meta = vocab.n_tools() + 2;
  const std::size_t content = 2 * embedding_dim;
  switch (mode) {
    case FeatureMode::metadata: return meta;
    case FeatureMode::content: return content;
    case FeatureMode::combined: return meta + content;
  }
  return 0;
}

std::string FeatureConfig::digest() const {
  json j;
  to_json(j, *this);
  return sha256_hex(canonical_json(j));
}

void to_json(json& j, const FeatureConfig& c) {
  j = json{{"mode", std::string(to_string(c.mode))},
           {"vocab", c.vocab},
           {"embedding_dim", c.embedding_dim},
           {"response_cap", c.response_cap},
           {"hash_modulus", c.hash_modulus}};
}

void from_json(const json& j, FeatureConfig& c) {
  c.mode = feature_mode_from_string(j.at("mode").get<std::string>());
  c.vocab = j.at("vocab").get<ToolVocab>();
  c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  c.response_cap = j.at("response_cap").get<std::size_t>();
  c.hash_modulus = j.at("hash_modulus").get<std::uint32_t>();
}

double param_hash(std::string_view args_text, std::uint32_t modulus) {
  const auto digest = md5(args_text);
  std::uint64_t r = 0;
  for (std::uint8_t b : digest) r = (r * 256 + b) % modulus;
  return static_cast<double>(r) / static_cast<double>(modulus);
}

Eigen::VectorXd metadata_features(const ToolCall& call, const ToolVocab& vocab, std::size_t response_cap,
                                  std::uint32_t hash_modulus) {
  const auto n = static_cast<Eigen::Index>(vocab.n_tools());
  Eigen::VectorXd f = Eigen::VectorXd::Zero(n + 2);
  if (auto idx = vocab.index_of(call.tool_name)) f[static_cast<Eigen::Index>(*idx)] = 1.0;
  f[n] = param_hash(call.args_text, hash_modulus);
  f[n + 1] = static_cast<double>(std::min(call.response_length, response_cap)) /
             static_cast<double>(response_cap);
  return f;
}

Eigen::VectorXd content_features(const ToolCall& call, EmbeddingProvider& provider) {
  const std::vector<std::string> texts{call.args_text, call.response_text};
  const auto emb = provider.embed(texts);
  const auto d = static_cast<Eigen::Index>(provider.dim());
  Eigen::VectorXd f(2 * d);
  f.head(d) = Eigen::Map<const Eigen::VectorXd>(emb[0].data(), d);
  f.tail(d) = Eigen::Map<const Eigen::VectorXd>(emb[1].data(), d);
  return f;
}

namespace {

void require_provider(const FeatureConfig& config, const EmbeddingProvider* provider) {
  if (!config.needs_provider()) return;
  if (!provider)
    throw ConfigError(std::string(to_string(config.mode)) + " features require an embedding provider");
  if (provider->dim() != config.embedding_dim)
    throw ConfigError("embedding provider dim " + std::to_string(provider->dim()) +
                      " does not match feature config dim " + std::to_string(config.embedding_dim));
}

// Fills one row given precomputed embeddings (may be null in metadata mode).
void fill_row(Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row, const ToolCall& call, const FeatureConfig& config,
              const EmbeddingVector* args_emb, const EmbeddingVector* resp_emb) {
  Eigen::Index at = 0;
  if (config.mode != FeatureMode::content) {
    const Eigen::VectorXd meta =
        metadata_features(call, config.vocab, config.response_cap, config.hash_modulus);
    row.segment(0, meta.size()) = meta.transpose();
    at = meta.size();
  }
  if (config.mode != FeatureMode::metadata) {
    const auto d = static_cast<Eigen::Index>(config.embedding_dim);
    row.segment(at, d) = Eigen::Map<const Eigen::RowVectorXd>(args_emb->data(), d);
    row.segment(at + d, d) = Eigen::Map<const Eigen::RowVectorXd>(resp_emb->data(), d);
  }
}

}  // namespace

Eigen::VectorXd node_features(const ToolCall& call, const FeatureConfig& config, EmbeddingProvider* provider) {
  require_provider(config, provider);
  Eigen::RowVectorXd row(static_cast<Eigen::Index>(config.node_dim()));
  if (config.mode == FeatureMode::metadata) {
    fill_row(row, call, config, nullptr, nullptr);
  } else {
    const std::vector<std::string> texts{call.args_text, call.response_text};
    const auto emb = provider->embed(texts);
    fill_row(row, call, config, &emb[0], &emb[1]);
  }
  return row.transpose();
}

Eigen::MatrixXd node_matrix(const Session& session, const FeatureConfig& config, EmbeddingProvider* provider) {
  require_provider(config, provider);
  const auto n = static_cast<Eigen::Index>(session.calls.size());
  Eigen::MatrixXd m(n, static_cast<Eigen::Index>(config.node_dim()));
  std::vector<EmbeddingVector> emb;
  if (config.needs_provider()) {
    std::vector<std::string> texts;
    for (const ToolCall& c : session.calls) {
      texts.push_back(c.args_text);
      texts.push_back(c.response_text);
    }
    emb = provider->embed(texts);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    fill_row(m.row(i), session.calls[k], config, emb.empty() ? nullptr : &emb[2 * k],
             emb.empty() ? nullptr : &emb[2 * k + 1]);
  }
  return m;
}

std::vector<SessionGraph> featurize_corpus(std::span<const Session> sessions, const FeatureConfig& config,
                                           EmbeddingProvider* provider, const DataFlowRule& rule) {
  require_provider(config, provider);
  // Deduplicate texts before the provider sees them.
  std::vector<std::string> unique;
  std::unordered_map<std::string, std::size_t> slot;
  if (config.needs_provider()) {
    for (const Session& s : sessions)
      for (const ToolCall& c : s.calls)
        for (const std::string* t : {&c.args_text, &c.response_text})
          if (slot.emplace(*t, unique.size()).second) unique.push_back(*t);
  }
  const auto emb = unique.empty() ? std::vector<EmbeddingVector>{} : provider->embed(unique);

  std::vector<SessionGraph> graphs;
  graphs.reserve(sessions.size());
  for (const Session& s : sessions) {
    SessionGraph g = build_graph(s, rule);
    g.node_features.resize(static_cast<Eigen::Index>(s.calls.size()),
                           static_cast<Eigen::Index>(config.node_dim()));
    for (std::size_t i = 0; i < s.calls.size(); ++i) {
      const ToolCall& c = s.calls[i];
      const EmbeddingVector* a = nullptr;
      const EmbeddingVector* r = nullptr;
      if (config.needs_provider()) {
        a = &emb[slot.at(c.args_text)];
        r = &emb[slot.at(c.response_text)];
      }
      fill_row(g.node_features.row(static_cast<Eigen::Index>(i)), c, config, a, r);
    }
    graphs.push_back(std::move(g));
  }
  return graphs;
}

Eigen::VectorXd pooled_readout(const Eigen::MatrixXd& m) {
  if (m.rows() == 0) throw ValidationError("pooled_readout: node matrix has no rows");
  const Eigen::Index d = m.cols();
  Eigen::VectorXd out(2 * d);
  std::vector<double> column(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index c = 0; c < d; ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) column[static_cast<std::size_t>(r)] = m(r, c);
    std::sort(column.begin(), column.end());
    double sum = 0.0;
    for (double x : column) sum += x;
    out[c] = sum / static_cast<double>(m.rows());
    out[d + c] = column.back();
  }
  return out;
}

Eigen::MatrixXd pooled_matrix(std::span<const SessionGraph> graphs) {
  if (graphs.empty()) return {};
  const Eigen::Index p = 2 * graphs.front().node_features.cols();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(graphs.size()), p);
  for (std::size_t i = 0; i < graphs.size(); ++i)
    x.row(static_cast<Eigen::Index>(i)) = pooled_readout(graphs[i].node_features).transpose();
  return x;
}

void write_featurized(std::ostream& out, std::span<const SessionGraph> graphs) {
  for (const SessionGraph& g : graphs) {
    const Eigen::MatrixXd& m = g.node_features;
    json nodes = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      std::vector<double> row(m.cols());
      for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
      nodes.push_back(std::move(row));
    }
    const Eigen::VectorXd pooled = pooled_readout(m);
    out << json{{"session_id", g.session_id},
                {"label", std::string(to_string(g.label))},
                {"n_nodes", g.n_nodes},
                {"dim", m.cols()},
                {"nodes", std::move(nodes)},
                {"pooled", std::vector<double>(pooled.data(), pooled.data() + pooled.size())}}
               .dump()
        << '\n';
  }
}

}  // namespace toolwatch
