#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "toolwatch/nn.hpp"
#include "toolwatch/rng.hpp"

// Contrastive pre-training of the GraphSAGE encoder on benign graphs, then
// supervised fine-tuning with a fresh head.
namespace toolwatch::ssl {

struct AugmentConfig {
  double feature_mask_rate = 0.2;  // per feature entry
  double edge_drop_rate = 0.2;     // per undirected node pair

  bool operator==(const AugmentConfig&) const = default;
};

struct SslConfig {
  double temperature = 0.5;
  int pretrain_epochs = 100;
  int finetune_epochs = 50;
  double finetune_lr = 1e-4;
  AugmentConfig augment;

  bool operator==(const SslConfig&) const = default;
};

void to_json(nlohmann::json& j, const SslConfig& c);
void from_json(const nlohmann::json& j, SslConfig& c);

// Zeroes feature entries, drops undirected neighbor pairs (self-loops stay),
// then gives any node left without neighbors a self-loop. Features are drawn
// first (row-major), then pairs (i < j, ascending).
nn::GraphData augment_graph(const nn::GraphData& graph, const AugmentConfig& config, Rng& rng);

// Mean over the 2N views of -log(exp(cos(a, p(a))/tau) / sum_{c != a} exp(cos(a, c)/tau)).
// `partner[a]` is the positive view of row a. Writes dL/dz when asked.
double nt_xent_loss(const Eigen::MatrixXd& z, std::span<const std::size_t> partner, double temperature,
                    Eigen::MatrixXd* dz = nullptr);

struct PretrainResult {
  nn::Network encoder;  // head tensors are untouched initial values
  std::vector<double> epoch_loss;
};

// Views of batch graph k sit at rows k and k + B. Uses config.lr, weight
// decay, clipping, batch size, dropout and seed from `train`.
PretrainResult pretrain_encoder(std::span<const nn::GraphData> benign, const SslConfig& ssl,
                                const nn::TrainConfig& train);

// Fresh head on the pre-trained encoder, then supervised training at
// ssl.finetune_lr for up to ssl.finetune_epochs with the usual early stopping.
nn::TrainResult finetune(const nn::Network& encoder, const nn::Dataset& train, const nn::Dataset& val,
                         const SslConfig& ssl, nn::TrainConfig config);

}  // namespace toolwatch::ssl
