#include "toolwatch/pipeline.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "toolwatch/error.hpp"
#include "toolwatch/metrics.hpp"

namespace toolwatch::pipeline {

using nlohmann::json;

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::logreg: return "logreg";
    case ModelKind::linear_svm: return "linear_svm";
    case ModelKind::random_forest: return "random_forest";
    case ModelKind::mlp: return "mlp";
    case ModelKind::sage: return "sage";
    case ModelKind::ssl_sage: return "ssl_sage";
  }
  return "unknown";
}

ModelKind model_kind_from_string(std::string_view s) {
  for (ModelKind k : {ModelKind::logreg, ModelKind::linear_svm, ModelKind::random_forest, ModelKind::mlp,
                      ModelKind::sage, ModelKind::ssl_sage})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown model kind \"" + std::string(s) + "\"");
}

bool is_classical(ModelKind kind) {
  return kind == ModelKind::logreg || kind == ModelKind::linear_svm || kind == ModelKind::random_forest;
}

namespace {

classical::Kind classical_kind(ModelKind k) {
  switch (k) {
    case ModelKind::logreg: return classical::Kind::logreg;
    case ModelKind::linear_svm: return classical::Kind::linear_svm;
    default: return classical::Kind::random_forest;
  }
}

std::vector<int> labels_of(std::span<const SessionGraph> graphs) {
  std::vector<int> y;
  for (const SessionGraph& g : graphs) y.push_back(g.label == Label::attack ? 1 : 0);
  return y;
}

bool both_classes(const std::vector<int>& y) {
  const auto pos = std::count(y.begin(), y.end(), 1);
  return pos > 0 && pos < static_cast<long>(y.size());
}

void check_featurized(std::span<const SessionGraph> graphs, const FeatureConfig& features) {
  for (const SessionGraph& g : graphs)
    if (static_cast<std::size_t>(g.node_features.cols()) != features.node_dim() ||
        static_cast<std::size_t>(g.node_features.rows()) != g.n_nodes)
      throw ConfigError("graph " + g.session_id + " has node dimension " + std::to_string(g.node_features.cols()) +
                        ", feature config expects " + std::to_string(features.node_dim()));
}

}  // namespace

FeatureConfig make_feature_config(FeatureMode mode, std::span<const Session> train, const EmbeddingProvider* provider) {
  FeatureConfig cfg;
  cfg.mode = mode;
  cfg.vocab = build_tool_vocabulary(train);
  if (cfg.needs_provider()) {
    if (provider == nullptr)
      throw ConfigError("feature mode \"" + std::string(to_string(mode)) + "\" needs an embedding provider");
    cfg.embedding_dim = provider->dim();
  }
  return cfg;
}

TrainedModel fit(const ModelSpec& spec, const FeatureConfig& features, std::span<const SessionGraph> train,
                 std::span<const SessionGraph> val, std::uint64_t seed, FitTrace* trace) {
  check_featurized(train, features);
  check_featurized(val, features);
  TrainedModel m;
  m.kind = spec.kind;
  m.features = features;
  m.seed = seed;
  m.train = spec.train;
  m.train.seed = seed;
  m.ssl = spec.ssl;
  const std::vector<int> y_val = labels_of(val);

  if (is_classical(spec.kind)) {
    classical::LabeledMatrix data{pooled_matrix(train), labels_of(train)};
    std::vector<double>* obj = trace ? &trace->objective : nullptr;
    classical::Model cm;
    switch (spec.kind) {
      case ModelKind::logreg: cm = classical::train_logreg(data, {}, obj); break;
      case ModelKind::linear_svm: {
        classical::SvmOptions o;
        o.seed = seed;
        cm = classical::train_linear_svm(data, o, obj);
        break;
      }
      default: {
        classical::ForestOptions o;
        o.seed = seed;
        cm = classical::train_random_forest(data, o);
      }
    }
    m.params = std::move(cm);
    if (!val.empty() && both_classes(y_val)) m.best_val_auroc = eval::auroc(score(m, val), y_val);
    return m;
  }

  const nn::Arch arch = spec.kind == ModelKind::mlp ? nn::Arch::mlp : nn::Arch::sage;
  const nn::Dataset dtrain = nn::make_dataset(arch, train);
  const nn::Dataset dval = nn::make_dataset(arch, val);
  nn::TrainResult res;
  if (spec.kind == ModelKind::ssl_sage) {
    std::vector<nn::GraphData> benign;
    for (std::size_t i = 0; i < dtrain.size(); ++i)
      if (dtrain.labels[i] == 0) benign.push_back(dtrain.graphs[i]);
    const ssl::PretrainResult pre = ssl::pretrain_encoder(benign, spec.ssl, m.train);
    if (trace) trace->pretrain_loss = pre.epoch_loss;
    res = ssl::finetune(pre.encoder, dtrain, dval, spec.ssl, m.train);
  } else {
    res = nn::train_supervised(dtrain, dval, m.train);
  }
  if (trace) trace->supervised = res.trace;
  m.best_val_auroc = res.best_val_auroc;
  m.best_epoch = res.best_epoch;
  m.params = std::move(res.net);
  return m;
}

std::vector<double> score(const TrainedModel& model, std::span<const SessionGraph> graphs) {
  if (graphs.empty()) return {};
  check_featurized(graphs, model.features);
  if (const auto* cm = std::get_if<classical::Model>(&model.params)) return classical::predict_score(*cm, pooled_matrix(graphs));
  const auto& net = std::get<nn::Network>(model.params);
  return nn::predict_scores(net, nn::make_dataset(net.arch, graphs));
}

double decision_threshold(const TrainedModel& model) {
  return model.kind == ModelKind::linear_svm ? classical::decision_threshold(classical::Kind::linear_svm) : 0.5;
}

TrainedModel train_model(const ModelSpec& spec, std::span<const Session> train, std::span<const Session> val,
                         EmbeddingProvider* provider, std::uint64_t seed) {
  const FeatureConfig features = make_feature_config(spec.mode, train, provider);
  const auto gtrain = featurize_corpus(train, features, provider);
  const auto gval = featurize_corpus(val, features, provider);
  return fit(spec, features, gtrain, gval, seed);
}

std::vector<double> score_sessions(const TrainedModel& model, std::span<const Session> sessions,
                                   EmbeddingProvider* provider) {
  if (model.features.needs_provider()) {
    if (provider == nullptr) throw ConfigError("model features need an embedding provider");
    if (provider->dim() != model.features.embedding_dim)
      throw ConfigError("provider dimension " + std::to_string(provider->dim()) + " does not match the model's " +
                        std::to_string(model.features.embedding_dim));
  }
  return score(model, featurize_corpus(sessions, model.features, provider));
}

void to_json(json& j, const TrainedModel& m) {
  j = json{{"format", "toolwatch-model"},
           {"version", kArtifactVersion},
           {"kind", std::string(to_string(m.kind))},
           {"features", m.features},
           {"feature_config_digest", m.features.digest()},
           {"seed", m.seed},
           {"best_epoch", m.best_epoch},
           {"train", m.train},
           {"ssl", m.ssl}};
  j["best_val_auroc"] = m.best_val_auroc ? json(*m.best_val_auroc) : json(nullptr);
  if (const auto* cm = std::get_if<classical::Model>(&m.params))
    j["params"] = *cm;
  else
    j["params"] = std::get<nn::Network>(m.params);
}

void from_json(const json& j, TrainedModel& m) {
  if (j.value("format", "") != "toolwatch-model") throw ValidationError("not a model artifact");
  if (j.at("version").get<int>() != kArtifactVersion)
    throw ValidationError("unsupported model artifact version " + j.at("version").dump());
  m.kind = model_kind_from_string(j.at("kind").get<std::string>());
  m.features = j.at("features").get<FeatureConfig>();
  if (j.at("feature_config_digest").get<std::string>() != m.features.digest())
    throw IntegrityError("feature config digest mismatch in model artifact");
  m.seed = j.at("seed").get<std::uint64_t>();
  m.best_epoch = j.value("best_epoch", 0);
  m.train = j.at("train").get<nn::TrainConfig>();
  m.ssl = j.at("ssl").get<ssl::SslConfig>();
  const json& bv = j.at("best_val_auroc");
  m.best_val_auroc = bv.is_null() ? std::nullopt : std::optional<double>(bv.get<double>());
  if (is_classical(m.kind)) {
    auto cm = j.at("params").get<classical::Model>();
    if (cm.kind != classical_kind(m.kind)) throw ValidationError("model artifact kind mismatch");
    if (cm.dim != m.features.pooled_dim()) throw ConfigError("model dimension does not match its feature config");
    m.params = std::move(cm);
  } else {
    auto net = j.at("params").get<nn::Network>();
    if (net.input_dim != m.features.node_dim()) throw ConfigError("network input does not match its feature config");
    m.params = std::move(net);
  }
}

void save_model(const TrainedModel& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << json(m).dump() << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

TrainedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError("model", std::string("malformed model artifact: ") + e.what());
  }
  return j.get<TrainedModel>();
}

}  // namespace toolwatch::pipeline
