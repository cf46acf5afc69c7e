#include "toolwatch/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "toolwatch/error.hpp"

namespace toolwatch::ssl {

using nlohmann::json;
using Eigen::Index;
using Eigen::MatrixXd;

void to_json(json& j, const SslConfig& c) {
  j = json{{"temperature", c.temperature},
           {"pretrain_epochs", c.pretrain_epochs},
           {"finetune_epochs", c.finetune_epochs},
           {"finetune_lr", c.finetune_lr},
           {"feature_mask_rate", c.augment.feature_mask_rate},
           {"edge_drop_rate", c.augment.edge_drop_rate}};
}

void from_json(const json& j, SslConfig& c) {
  const SslConfig d;
  c.temperature = j.value("temperature", d.temperature);
  c.pretrain_epochs = j.value("pretrain_epochs", d.pretrain_epochs);
  c.finetune_epochs = j.value("finetune_epochs", d.finetune_epochs);
  c.finetune_lr = j.value("finetune_lr", d.finetune_lr);
  c.augment.feature_mask_rate = j.value("feature_mask_rate", d.augment.feature_mask_rate);
  c.augment.edge_drop_rate = j.value("edge_drop_rate", d.augment.edge_drop_rate);
  const auto rate_ok = [](double r) { return r >= 0.0 && r <= 1.0; };
  if (!(c.temperature > 0) || c.pretrain_epochs < 0 || c.finetune_epochs < 0 || !(c.finetune_lr >= 0) ||
      !rate_ok(c.augment.feature_mask_rate) || !rate_ok(c.augment.edge_drop_rate))
    throw ConfigError("ssl config has out-of-range values");
}

nn::GraphData augment_graph(const nn::GraphData& g, const AugmentConfig& cfg, Rng& rng) {
  nn::GraphData out;
  out.x = g.x;
  for (Index r = 0; r < out.x.rows(); ++r)
    for (Index c = 0; c < out.x.cols(); ++c)
      if (rng.bernoulli(cfg.feature_mask_rate)) out.x(r, c) = 0.0;

  const std::size_t n = g.neighbors.size();
  out.neighbors.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : g.neighbors[i]) {
      if (j == i) {
        out.neighbors[i].push_back(i);
      } else if (i < j && !rng.bernoulli(cfg.edge_drop_rate)) {
        out.neighbors[i].push_back(j);
        out.neighbors[j].push_back(i);
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto& nb = out.neighbors[i];
    if (nb.empty()) nb.push_back(i);
    std::sort(nb.begin(), nb.end());
  }
  return out;
}

double nt_xent_loss(const MatrixXd& z, std::span<const std::size_t> partner, double tau, MatrixXd* dz) {
  const Index m = z.rows();
  if (m < 2 || m % 2 != 0) throw ValidationError("NT-Xent needs an even number (>= 2) of views");
  if (static_cast<Index>(partner.size()) != m) throw ValidationError("partner map size does not match views");
  if (!(tau > 0)) throw ConfigError("temperature must be positive");
  for (Index a = 0; a < m; ++a) {
    const std::size_t p = partner[static_cast<std::size_t>(a)];
    if (p >= static_cast<std::size_t>(m) || static_cast<Index>(p) == a || partner[p] != static_cast<std::size_t>(a))
      throw ValidationError("partner map must pair every view with exactly one other view");
  }
  Eigen::VectorXd norms = z.rowwise().norm();
  for (Index a = 0; a < m; ++a)
    if (!(norms[a] >= 1e-12)) throw ValidationError("zero-norm embedding; cosine similarity is undefined");
  const MatrixXd u = norms.cwiseInverse().asDiagonal() * z;
  const MatrixXd s = (u * u.transpose()) / tau;

  double loss = 0.0;
  MatrixXd coef = MatrixXd::Zero(m, m);  // softmax over c != a minus the positive indicator
  for (Index a = 0; a < m; ++a) {
    double mx = -INFINITY;
    for (Index c = 0; c < m; ++c)
      if (c != a) mx = std::max(mx, s(a, c));
    double denom = 0.0;
    for (Index c = 0; c < m; ++c)
      if (c != a) denom += std::exp(s(a, c) - mx);
    const auto p = static_cast<Index>(partner[static_cast<std::size_t>(a)]);
    loss += -(s(a, p) - mx) + std::log(denom);
    if (dz) {
      for (Index c = 0; c < m; ++c)
        if (c != a) coef(a, c) = std::exp(s(a, c) - mx) / denom;
      coef(a, p) -= 1.0;
    }
  }
  loss /= static_cast<double>(m);
  if (dz) {
    const MatrixXd du = (coef + coef.transpose()) * u / (tau * static_cast<double>(m));
    dz->resize(m, z.cols());
    for (Index a = 0; a < m; ++a) {
      const double radial = du.row(a).dot(u.row(a));
      dz->row(a) = (du.row(a) - radial * u.row(a)) / norms[a];
    }
  }
  return loss;
}

PretrainResult pretrain_encoder(std::span<const nn::GraphData> benign, const SslConfig& ssl,
                                const nn::TrainConfig& cfg) {
  if (benign.empty()) throw ValidationError("pre-training needs at least one benign graph");
  const std::size_t d = static_cast<std::size_t>(benign.front().x.cols());
  PretrainResult res;
  res.encoder = nn::init_network(nn::Arch::sage, d, cfg.hidden, cfg.seed);
  nn::Network& net = res.encoder;
  nn::Adam opt(net, cfg.lr, cfg.weight_decay);
  Rng shuffle = substream(cfg.seed, "shuffle");
  Rng drop_rng = substream(cfg.seed, "dropout");
  const nn::Dropout dropout{cfg.dropout, &drop_rng};

  const std::size_t n = benign.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  nn::Network grad = net.zeros_like();
  for (int epoch = 0; epoch < ssl.pretrain_epochs; ++epoch) {
    shuffle.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, n - start);
      std::vector<nn::GraphData> views(2 * b);
      for (std::size_t k = 0; k < b; ++k) {
        const std::size_t gi = order[start + k];
        Rng aug = substream(cfg.seed, "augment", (static_cast<std::uint64_t>(epoch) << 32) | gi);
        views[k] = augment_graph(benign[gi], ssl.augment, aug);
        views[b + k] = augment_graph(benign[gi], ssl.augment, aug);
      }
      nn::Batch batch;
      for (const auto& v : views) batch.graphs.push_back(&v);
      std::vector<std::size_t> partner(2 * b);
      for (std::size_t k = 0; k < b; ++k) {
        partner[k] = b + k;
        partner[b + k] = k;
      }
      const nn::Forward fwd(net, batch, dropout);
      MatrixXd dz;
      const double loss = nt_xent_loss(fwd.embedding(), partner, ssl.temperature, &dz);
      total += loss * static_cast<double>(b);
      grad = net.zeros_like();
      fwd.backward_encoder(dz, grad);
      nn::clip_global_norm(grad, cfg.clip_norm);
      opt.step(net, grad);
    }
    res.epoch_loss.push_back(total / static_cast<double>(n));
  }
  return res;
}

nn::TrainResult finetune(const nn::Network& encoder, const nn::Dataset& train, const nn::Dataset& val,
                         const SslConfig& ssl, nn::TrainConfig cfg) {
  if (encoder.arch != nn::Arch::sage) throw ConfigError("fine-tuning needs a graph encoder");
  nn::Network net = encoder;
  reset_head(net, cfg.seed);
  cfg.lr = ssl.finetune_lr;
  cfg.max_epochs = ssl.finetune_epochs;
  cfg.hidden = encoder.hidden;
  return nn::train_supervised(train, val, cfg, net);
}

}  // namespace toolwatch::ssl
