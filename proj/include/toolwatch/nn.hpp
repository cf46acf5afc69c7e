#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "toolwatch/features.hpp"
#include "toolwatch/graph.hpp"
#include "toolwatch/rng.hpp"

// MLP on pooled features and two-layer GraphSAGE (mean aggregator) with a
// mean||max readout. Double precision, nodes as rows, weights stored out x in.
namespace toolwatch::nn {

enum class Arch { mlp, sage };

std::string_view to_string(Arch arch);
Arch arch_from_string(std::string_view s);

double elu(double x);

// Node features plus distinct neighbor lists (edge kinds merged).
struct GraphData {
  Eigen::MatrixXd x;
  std::vector<std::vector<std::size_t>> neighbors;
};

GraphData to_graph_data(const SessionGraph& graph);

// Tensor order:
//   sage: sage1.w_self, sage1.w_neigh, sage1.b, sage2.w_self, sage2.w_neigh, sage2.b, head...
//   head: head1.w, head1.b, head2.w, head2.b
// Biases are 1 x out row vectors.
struct Network {
  Arch arch = Arch::sage;
  std::size_t input_dim = 0;
  std::size_t hidden = 128;
  std::vector<Eigen::MatrixXd> tensors;

  std::size_t encoder_tensors() const { return arch == Arch::sage ? 6 : 0; }
  std::size_t parameter_count() const;
  std::vector<std::string> tensor_names() const;
  // Same shapes, all zero.
  Network zeros_like() const;
  bool operator==(const Network&) const;
};

// Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) from the "init" substream.
Network init_network(Arch arch, std::size_t input_dim, std::size_t hidden, std::uint64_t seed);

// Replaces the classifier head with a fresh one drawn from `seed`.
void reset_head(Network& net, std::uint64_t seed);

// out_i = ELU(h_i W_self^T + mean_{j in N(i)} h_j W_neigh^T + b)
Eigen::MatrixXd sage_layer(const Eigen::MatrixXd& h, const std::vector<std::vector<std::size_t>>& neighbors,
                           const Eigen::MatrixXd& w_self, const Eigen::MatrixXd& w_neigh, const Eigen::MatrixXd& b);

// Evaluation-mode graph embedding z_G (2 * hidden).
Eigen::VectorXd encode_graph(const Network& net, const GraphData& graph);

// Network input: graphs for sage, pooled rows for mlp.
struct Batch {
  std::vector<const GraphData*> graphs;
  Eigen::MatrixXd pooled;
  std::size_t size() const;
};

struct Dropout {
  double rate = 0.0;
  Rng* rng = nullptr;  // null disables dropout
};

// Encoder output (G x 2*hidden) with the state needed for backprop.
struct EncoderState;

class Forward {
 public:
  Forward(const Network& net, const Batch& batch, Dropout dropout);
  ~Forward();
  Forward(const Forward&) = delete;
  Forward& operator=(const Forward&) = delete;

  const Eigen::MatrixXd& embedding() const { return z_; }  // head input
  const Eigen::MatrixXd& logits() const { return logits_; }

  // Accumulates parameter gradients into `grad` given dL/dlogits.
  void backward(const Eigen::MatrixXd& dlogits, Network& grad) const;
  // Encoder-only backprop given dL/dz (sage only).
  void backward_encoder(const Eigen::MatrixXd& dz, Network& grad) const;

 private:
  const Network& net_;
  std::unique_ptr<EncoderState> enc_;
  Eigen::MatrixXd z_;
  Eigen::MatrixXd u_;       // head pre-activation
  Eigen::MatrixXd v_;       // head hidden after ELU and dropout
  Eigen::MatrixXd v_mask_;  // dropout scale (empty when disabled)
  Eigen::MatrixXd logits_;
};

// Encoder embeddings for a set of graphs, evaluation mode, one row per graph.
Eigen::MatrixXd encode_batch(const Network& net, const Batch& batch, Dropout dropout = {});

// Weighted cross-entropy sum_i w_i * CE_i / sum_i w_i, with its gradient
// w.r.t. the logits.
double weighted_cross_entropy(const Eigen::MatrixXd& logits, std::span<const int> labels,
                              std::span<const double> weights, Eigen::MatrixXd* dlogits);

// Loss and gradient for one batch; `grad` is overwritten.
double loss_and_gradient(const Network& net, const Batch& batch, std::span<const int> labels,
                         std::span<const double> weights, Dropout dropout, Network& grad);

// Max over parameters of |analytic - numeric| / max(|analytic| + |numeric|, 1e-6),
// with central differences of step h and dropout off.
double gradient_check(const Network& net, const Batch& batch, std::span<const int> labels,
                      std::span<const double> weights, double h = 1e-5);

double global_norm(const Network& grad);

// P(attack) per row, evaluation mode.
std::vector<double> predict_scores(const Network& net, const Batch& batch);

struct Dataset {
  Arch arch = Arch::sage;
  std::vector<GraphData> graphs;  // sage
  Eigen::MatrixXd pooled;         // mlp
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t input_dim() const;
  Batch batch(std::span<const std::size_t> indices) const;
  Batch all() const;
  Dataset subset(std::span<const std::size_t> indices) const;
};

Dataset make_dataset(Arch arch, std::span<const SessionGraph> graphs);

std::vector<double> predict_scores(const Network& net, const Dataset& data);

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  std::size_t batch_size = 64;
  int max_epochs = 200;
  double clip_norm = 1.0;
  int eval_every = 10;
  int patience = 5;  // consecutive non-improving evaluations
  double dropout = 0.3;
  std::size_t hidden = 128;
  std::uint64_t seed = 0;
  double encoder_lr_scale = 1.0;  // 0 freezes the encoder
  bool class_weighted = true;

  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// PyTorch-style Adam: decay is added to the gradient before the moments.
class Adam {
 public:
  Adam(const Network& shape, double lr, double weight_decay, double encoder_lr_scale = 1.0);
  void step(Network& net, const Network& grad);

 private:
  double lr_, wd_, enc_scale_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  Network m_, v_;
};

// Scales `grad` to global norm `max_norm` when above it; returns the pre-clip norm.
double clip_global_norm(Network& grad, double max_norm);

struct TrainTrace {
  std::vector<double> epoch_loss;  // weighted mean per epoch
  std::vector<double> pre_clip_norm;  // per step
  std::vector<double> post_clip_norm;
  std::vector<std::pair<int, double>> val_auroc;  // (epoch, AUROC)
};

struct TrainResult {
  Network net;
  double best_val_auroc = 0.0;
  int best_epoch = 0;
  int epochs_run = 0;
  TrainTrace trace;
};

// Class-weighted cross-entropy with Adam, clipping and early stopping on
// validation AUROC (checked every eval_every epochs and at epoch 0). Returns
// the best checkpoint. `init` warm-starts from given parameters.
TrainResult train_supervised(const Dataset& train, const Dataset& val, const TrainConfig& config,
                             const std::optional<Network>& init = std::nullopt);

void to_json(nlohmann::json& j, const Network& net);
void from_json(const nlohmann::json& j, Network& net);

}  // namespace toolwatch::nn
