#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "toolwatch/classical.hpp"
#include "toolwatch/embedding.hpp"
#include "toolwatch/features.hpp"
#include "toolwatch/nn.hpp"
#include "toolwatch/session.hpp"
#include "toolwatch/ssl.hpp"

// Model-agnostic training and scoring on top of featurized graphs.
namespace toolwatch::pipeline {

enum class ModelKind { logreg, linear_svm, random_forest, mlp, sage, ssl_sage };

std::string_view to_string(ModelKind kind);
ModelKind model_kind_from_string(std::string_view s);
bool is_classical(ModelKind kind);

struct ModelSpec {
  ModelKind kind = ModelKind::sage;
  FeatureMode mode = FeatureMode::content;
  nn::TrainConfig train;
  ssl::SslConfig ssl;
};

inline constexpr int kArtifactVersion = 1;

struct TrainedModel {
  ModelKind kind = ModelKind::sage;
  FeatureConfig features;
  std::uint64_t seed = 0;
  std::variant<classical::Model, nn::Network> params;
  std::optional<double> best_val_auroc;
  int best_epoch = 0;
  nn::TrainConfig train;
  ssl::SslConfig ssl;
};

// Vocabulary from `train` only; embedding_dim from the provider.
// ConfigError when the mode needs a provider and none is given.
FeatureConfig make_feature_config(FeatureMode mode, std::span<const Session> train, const EmbeddingProvider* provider);

struct FitTrace {
  nn::TrainTrace supervised;
  std::vector<double> pretrain_loss;
  std::vector<double> objective;  // classical solvers
};

// Graphs must be featurized with `features`. `seed` overrides spec.train.seed.
TrainedModel fit(const ModelSpec& spec, const FeatureConfig& features, std::span<const SessionGraph> train,
                 std::span<const SessionGraph> val, std::uint64_t seed, FitTrace* trace = nullptr);

std::vector<double> score(const TrainedModel& model, std::span<const SessionGraph> graphs);

// Score at which a session is called an attack.
double decision_threshold(const TrainedModel& model);

// Featurize, fit, score in one go.
TrainedModel train_model(const ModelSpec& spec, std::span<const Session> train, std::span<const Session> val,
                         EmbeddingProvider* provider, std::uint64_t seed);
std::vector<double> score_sessions(const TrainedModel& model, std::span<const Session> sessions,
                                   EmbeddingProvider* provider);

void to_json(nlohmann::json& j, const TrainedModel& m);
void from_json(const nlohmann::json& j, TrainedModel& m);

void save_model(const TrainedModel& m, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);

}  // namespace toolwatch::pipeline
