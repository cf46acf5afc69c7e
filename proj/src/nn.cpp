#include "toolwatch/nn.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include <Eigen/SparseCore>
#include <nlohmann/json.hpp>

#include "toolwatch/error.hpp"
#include "toolwatch/metrics.hpp"

namespace toolwatch::nn {

using nlohmann::json;
using Eigen::Index;
using Eigen::MatrixXd;
using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor>;

std::string_view to_string(Arch arch) { return arch == Arch::mlp ? "mlp" : "sage"; }

Arch arch_from_string(std::string_view s) {
  if (s == "mlp") return Arch::mlp;
  if (s == "sage") return Arch::sage;
  throw ConfigError("unknown network architecture \"" + std::string(s) + "\"");
}

double elu(double x) { return x > 0 ? x : std::expm1(x); }

namespace {

MatrixXd elu(const MatrixXd& z) { return z.unaryExpr([](double x) { return nn::elu(x); }); }

// dL/dz given dL/dh and the activation input z.
MatrixXd elu_backward(const MatrixXd& dh, const MatrixXd& z) {
  return dh.binaryExpr(z, [](double g, double x) { return x > 0 ? g : g * std::exp(x); });
}

MatrixXd add_bias(MatrixXd m, const MatrixXd& b) {
  m.rowwise() += b.row(0);
  return m;
}

MatrixXd dropout_mask(Index rows, Index cols, const Dropout& d) {
  if (d.rng == nullptr || d.rate <= 0.0) return {};
  MatrixXd mask(rows, cols);
  const double keep = 1.0 - d.rate;
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) mask(r, c) = d.rng->bernoulli(keep) ? 1.0 / keep : 0.0;
  return mask;
}

SparseRows mean_operator(const std::vector<std::vector<std::size_t>>& neighbors) {
  const auto n = static_cast<Index>(neighbors.size());
  std::vector<Eigen::Triplet<double>> trip;
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    const auto& nb = neighbors[i];
    if (nb.empty()) throw ValidationError("isolated node " + std::to_string(i) + " has no neighbors");
    const double w = 1.0 / static_cast<double>(nb.size());
    for (std::size_t j : nb) {
      if (j >= neighbors.size()) throw ValidationError("neighbor index out of range");
      trip.emplace_back(static_cast<Index>(i), static_cast<Index>(j), w);
    }
  }
  SparseRows a(n, n);
  a.setFromTriplets(trip.begin(), trip.end());
  return a;
}

void check_layer_shapes(Index d_in, const MatrixXd& w_self, const MatrixXd& w_neigh, const MatrixXd& b) {
  if (w_self.cols() != d_in || w_neigh.cols() != d_in || w_self.rows() != w_neigh.rows() || b.rows() != 1 ||
      b.cols() != w_self.rows())
    throw ValidationError("sage layer parameter shapes are inconsistent with the input");
}

}  // namespace

GraphData to_graph_data(const SessionGraph& graph) {
  if (static_cast<std::size_t>(graph.node_features.rows()) != graph.n_nodes)
    throw ValidationError("graph " + graph.session_id + " has no node features");
  return {graph.node_features, graph.neighbor_sets()};
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += static_cast<std::size_t>(t.size());
  return n;
}

std::vector<std::string> Network::tensor_names() const {
  std::vector<std::string> names;
  if (arch == Arch::sage)
    names = {"sage1.w_self", "sage1.w_neigh", "sage1.b", "sage2.w_self", "sage2.w_neigh", "sage2.b"};
  for (const char* n : {"head1.w", "head1.b", "head2.w", "head2.b"}) names.emplace_back(n);
  return names;
}

Network Network::zeros_like() const {
  Network z = *this;
  for (auto& t : z.tensors) t.setZero();
  return z;
}

bool Network::operator==(const Network& o) const {
  if (arch != o.arch || input_dim != o.input_dim || hidden != o.hidden || tensors.size() != o.tensors.size())
    return false;
  for (std::size_t i = 0; i < tensors.size(); ++i)
    if (tensors[i].rows() != o.tensors[i].rows() || tensors[i].cols() != o.tensors[i].cols() ||
        tensors[i] != o.tensors[i])
      return false;
  return true;
}

namespace {

MatrixXd uniform_tensor(Index rows, Index cols, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  MatrixXd m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = bound * (2.0 * rng.uniform() - 1.0);
  return m;
}

std::size_t head_input_dim(Arch arch, std::size_t input_dim, std::size_t hidden) {
  return arch == Arch::sage ? 2 * hidden : 2 * input_dim;
}

void append_head(Network& net, Rng& rng) {
  const auto h = static_cast<Index>(net.hidden);
  const std::size_t in = head_input_dim(net.arch, net.input_dim, net.hidden);
  net.tensors.push_back(uniform_tensor(h, static_cast<Index>(in), in, rng));
  net.tensors.push_back(uniform_tensor(1, h, in, rng));
  net.tensors.push_back(uniform_tensor(2, h, net.hidden, rng));
  net.tensors.push_back(uniform_tensor(1, 2, net.hidden, rng));
}

}  // namespace

Network init_network(Arch arch, std::size_t input_dim, std::size_t hidden, std::uint64_t seed) {
  if (input_dim == 0 || hidden == 0) throw ConfigError("network dimensions must be positive");
  Network net{arch, input_dim, hidden, {}};
  Rng rng = substream(seed, "init");
  const auto d = static_cast<Index>(input_dim), h = static_cast<Index>(hidden);
  if (arch == Arch::sage) {
    net.tensors.push_back(uniform_tensor(h, d, input_dim, rng));
    net.tensors.push_back(uniform_tensor(h, d, input_dim, rng));
    net.tensors.push_back(uniform_tensor(1, h, input_dim, rng));
    net.tensors.push_back(uniform_tensor(h, h, hidden, rng));
    net.tensors.push_back(uniform_tensor(h, h, hidden, rng));
    net.tensors.push_back(uniform_tensor(1, h, hidden, rng));
  }
  append_head(net, rng);
  return net;
}

void reset_head(Network& net, std::uint64_t seed) {
  net.tensors.resize(net.encoder_tensors());
  Rng rng = substream(seed, "init", 1);
  append_head(net, rng);
}

Eigen::MatrixXd sage_layer(const MatrixXd& h, const std::vector<std::vector<std::size_t>>& neighbors,
                           const MatrixXd& w_self, const MatrixXd& w_neigh, const MatrixXd& b) {
  if (static_cast<std::size_t>(h.rows()) != neighbors.size())
    throw ValidationError("sage layer: neighbor list count does not match node count");
  check_layer_shapes(h.cols(), w_self, w_neigh, b);
  const SparseRows a = mean_operator(neighbors);
  MatrixXd z = h * w_self.transpose();
  z += a * (h * w_neigh.transpose());
  return elu(add_bias(std::move(z), b));
}

std::size_t Batch::size() const { return graphs.empty() ? static_cast<std::size_t>(pooled.rows()) : graphs.size(); }

struct EncoderState {
  MatrixXd x;
  SparseRows a;
  std::vector<Index> offsets;
  MatrixXd z1, h1, mask1, z2, h2;
  Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic> argmax;  // G x hidden
};

namespace {

std::unique_ptr<EncoderState> run_encoder(const Network& net, const Batch& batch, const Dropout& dropout,
                                          MatrixXd& z_out) {
  if (net.arch != Arch::sage) throw ValidationError("encoder requested for a non-graph network");
  if (batch.graphs.empty()) throw ValidationError("empty graph batch");
  auto st = std::make_unique<EncoderState>();
  {
    std::vector<std::vector<std::size_t>> nbr;
    Index total = 0;
    st->offsets.push_back(0);
    for (const GraphData* g : batch.graphs) {
      if (g->x.rows() == 0) throw ValidationError("graph without nodes");
      if (static_cast<std::size_t>(g->x.cols()) != net.input_dim)
        throw ValidationError("node feature dimension " + std::to_string(g->x.cols()) + " does not match network input " +
                              std::to_string(net.input_dim));
      if (g->neighbors.size() != static_cast<std::size_t>(g->x.rows()))
        throw ValidationError("neighbor list count does not match node count");
      for (const auto& nb : g->neighbors) {
        std::vector<std::size_t> shifted;
        shifted.reserve(nb.size());
        for (std::size_t j : nb) {
          if (j >= g->neighbors.size()) throw ValidationError("neighbor index out of range");
          shifted.push_back(j + static_cast<std::size_t>(total));
        }
        nbr.push_back(std::move(shifted));
      }
      total += g->x.rows();
      st->offsets.push_back(total);
    }
    st->x.resize(total, static_cast<Index>(net.input_dim));
    for (std::size_t k = 0; k < batch.graphs.size(); ++k)
      st->x.middleRows(st->offsets[k], batch.graphs[k]->x.rows()) = batch.graphs[k]->x;
    st->a = mean_operator(nbr);

    const auto& t = net.tensors;
    st->z1 = add_bias(st->x * t[0].transpose() + st->a * (st->x * t[1].transpose()), t[2]);
    st->h1 = elu(st->z1);
    st->mask1 = dropout_mask(st->h1.rows(), st->h1.cols(), dropout);
    const MatrixXd h1d = st->mask1.size() ? MatrixXd(st->h1.cwiseProduct(st->mask1)) : st->h1;
    st->z2 = add_bias(h1d * t[3].transpose() + st->a * (h1d * t[4].transpose()), t[5]);
    st->h2 = elu(st->z2);

    const auto g_count = static_cast<Index>(batch.graphs.size());
    const auto h = static_cast<Index>(net.hidden);
    z_out.resize(g_count, 2 * h);
    st->argmax.resize(g_count, h);
    for (Index g = 0; g < g_count; ++g) {
      const Index begin = st->offsets[static_cast<std::size_t>(g)];
      const Index n = st->offsets[static_cast<std::size_t>(g) + 1] - begin;
      for (Index c = 0; c < h; ++c) {
        double sum = 0.0, best = st->h2(begin, c);
        Index arg = begin;
        for (Index r = begin; r < begin + n; ++r) {
          const double v = st->h2(r, c);
          sum += v;
          if (v > best) {
            best = v;
            arg = r;
          }
        }
        z_out(g, c) = sum / static_cast<double>(n);
        z_out(g, h + c) = best;
        st->argmax(g, c) = arg;
      }
    }
  }
  return st;
}

}  // namespace

Forward::Forward(const Network& net, const Batch& batch, Dropout dropout) : net_(net) {
  if (net.arch == Arch::sage) {
    enc_ = run_encoder(net, batch, dropout, z_);
  } else {
    if (batch.pooled.rows() == 0) throw ValidationError("empty pooled batch");
    if (static_cast<std::size_t>(batch.pooled.cols()) != 2 * net.input_dim)
      throw ValidationError("pooled feature dimension " + std::to_string(batch.pooled.cols()) +
                            " does not match network input " + std::to_string(2 * net.input_dim));
    z_ = batch.pooled;
  }
  const std::size_t k = net.encoder_tensors();
  const auto& t = net.tensors;
  u_ = add_bias(z_ * t[k].transpose(), t[k + 1]);
  v_ = elu(u_);
  v_mask_ = dropout_mask(v_.rows(), v_.cols(), dropout);
  if (v_mask_.size()) v_ = v_.cwiseProduct(v_mask_);
  logits_ = add_bias(v_ * t[k + 2].transpose(), t[k + 3]);
}

Forward::~Forward() = default;

void Forward::backward(const MatrixXd& dlogits, Network& grad) const {
  const std::size_t k = net_.encoder_tensors();
  const auto& t = net_.tensors;
  grad.tensors[k + 2] += dlogits.transpose() * v_;
  grad.tensors[k + 3] += dlogits.colwise().sum();
  MatrixXd dv = dlogits * t[k + 2];
  if (v_mask_.size()) dv = dv.cwiseProduct(v_mask_);
  const MatrixXd du = elu_backward(dv, u_);
  grad.tensors[k] += du.transpose() * z_;
  grad.tensors[k + 1] += du.colwise().sum();
  if (net_.arch == Arch::sage) backward_encoder(du * t[k], grad);
}

void Forward::backward_encoder(const MatrixXd& dz, Network& grad) const {
  if (enc_ == nullptr) throw ValidationError("encoder backward on a non-graph network");
  const EncoderState& st = *enc_;
  const auto h = static_cast<Index>(net_.hidden);
  const auto& t = net_.tensors;
  MatrixXd dh2 = MatrixXd::Zero(st.h2.rows(), h);
  for (Index g = 0; g + 1 < static_cast<Index>(st.offsets.size()); ++g) {
    const Index begin = st.offsets[static_cast<std::size_t>(g)];
    const Index n = st.offsets[static_cast<std::size_t>(g) + 1] - begin;
    for (Index c = 0; c < h; ++c) {
      const double share = dz(g, c) / static_cast<double>(n);
      for (Index r = begin; r < begin + n; ++r) dh2(r, c) += share;
      dh2(st.argmax(g, c), c) += dz(g, h + c);
    }
  }
  const MatrixXd h1d = st.mask1.size() ? MatrixXd(st.h1.cwiseProduct(st.mask1)) : st.h1;
  const MatrixXd dz2 = elu_backward(dh2, st.z2);
  const MatrixXd db2 = st.a.transpose() * dz2;
  grad.tensors[3] += dz2.transpose() * h1d;
  grad.tensors[4] += db2.transpose() * h1d;
  grad.tensors[5] += dz2.colwise().sum();
  MatrixXd dh1 = dz2 * t[3] + db2 * t[4];
  if (st.mask1.size()) dh1 = dh1.cwiseProduct(st.mask1);
  const MatrixXd dz1 = elu_backward(dh1, st.z1);
  const MatrixXd db1 = st.a.transpose() * dz1;
  grad.tensors[0] += dz1.transpose() * st.x;
  grad.tensors[1] += db1.transpose() * st.x;
  grad.tensors[2] += dz1.colwise().sum();
}

Eigen::MatrixXd encode_batch(const Network& net, const Batch& batch, Dropout dropout) {
  MatrixXd z;
  run_encoder(net, batch, dropout, z);
  return z;
}

Eigen::VectorXd encode_graph(const Network& net, const GraphData& graph) {
  Batch b;
  b.graphs.push_back(&graph);
  return encode_batch(net, b).row(0).transpose();
}

double weighted_cross_entropy(const MatrixXd& logits, std::span<const int> labels, std::span<const double> weights,
                              MatrixXd* dlogits) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size() || labels.size() != weights.size())
    throw ValidationError("logits, labels and weights differ in length");
  if (logits.cols() != 2) throw ValidationError("expected two logits per row");
  double total_w = 0.0, loss = 0.0;
  for (double w : weights) total_w += w;
  if (total_w <= 0) throw ValidationError("sample weights sum to zero");
  if (dlogits) dlogits->resize(logits.rows(), 2);
  for (Index i = 0; i < logits.rows(); ++i) {
    const double m = std::max(logits(i, 0), logits(i, 1));
    const double e0 = std::exp(logits(i, 0) - m), e1 = std::exp(logits(i, 1) - m);
    const double lse = m + std::log(e0 + e1);
    const int y = labels[static_cast<std::size_t>(i)];
    const double w = weights[static_cast<std::size_t>(i)];
    loss += w * (lse - logits(i, y));
    if (dlogits) {
      const double p1 = e1 / (e0 + e1);
      (*dlogits)(i, 0) = w * ((1.0 - p1) - (y == 0 ? 1.0 : 0.0)) / total_w;
      (*dlogits)(i, 1) = w * (p1 - (y == 1 ? 1.0 : 0.0)) / total_w;
    }
  }
  return loss / total_w;
}

double loss_and_gradient(const Network& net, const Batch& batch, std::span<const int> labels,
                         std::span<const double> weights, Dropout dropout, Network& grad) {
  Forward fwd(net, batch, dropout);
  MatrixXd dlogits;
  const double loss = weighted_cross_entropy(fwd.logits(), labels, weights, &dlogits);
  grad = net.zeros_like();
  fwd.backward(dlogits, grad);
  return loss;
}

double gradient_check(const Network& net, const Batch& batch, std::span<const int> labels,
                      std::span<const double> weights, double h) {
  Network grad;
  loss_and_gradient(net, batch, labels, weights, {}, grad);
  Network probe = net;
  double worst = 0.0;
  for (std::size_t k = 0; k < probe.tensors.size(); ++k) {
    MatrixXd& t = probe.tensors[k];
    for (Index i = 0; i < t.size(); ++i) {
      const double saved = t.data()[i];
      t.data()[i] = saved + h;
      const double up = weighted_cross_entropy(Forward(probe, batch, {}).logits(), labels, weights, nullptr);
      t.data()[i] = saved - h;
      const double down = weighted_cross_entropy(Forward(probe, batch, {}).logits(), labels, weights, nullptr);
      t.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = grad.tensors[k].data()[i];
      const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

double global_norm(const Network& grad) {
  double s = 0.0;
  for (const auto& t : grad.tensors) s += t.squaredNorm();
  return std::sqrt(s);
}

double clip_global_norm(Network& grad, double max_norm) {
  const double norm = global_norm(grad);
  if (norm > max_norm) {
    const double coef = max_norm / (norm + 1e-6);
    for (auto& t : grad.tensors) t *= coef;
  }
  return norm;
}

std::vector<double> predict_scores(const Network& net, const Batch& batch) {
  Forward fwd(net, batch, {});
  const MatrixXd& l = fwd.logits();
  std::vector<double> out(static_cast<std::size_t>(l.rows()));
  for (Index i = 0; i < l.rows(); ++i) out[static_cast<std::size_t>(i)] = 1.0 / (1.0 + std::exp(l(i, 0) - l(i, 1)));
  return out;
}

std::size_t Dataset::input_dim() const {
  if (arch == Arch::mlp) return static_cast<std::size_t>(pooled.cols()) / 2;
  return graphs.empty() ? 0 : static_cast<std::size_t>(graphs.front().x.cols());
}

Batch Dataset::batch(std::span<const std::size_t> indices) const {
  Batch b;
  if (arch == Arch::sage) {
    for (std::size_t i : indices) b.graphs.push_back(&graphs.at(i));
  } else {
    b.pooled.resize(static_cast<Index>(indices.size()), pooled.cols());
    for (std::size_t k = 0; k < indices.size(); ++k) b.pooled.row(static_cast<Index>(k)) = pooled.row(static_cast<Index>(indices[k]));
  }
  return b;
}

Batch Dataset::all() const {
  std::vector<std::size_t> idx(size());
  std::iota(idx.begin(), idx.end(), 0);
  return batch(idx);
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset d;
  d.arch = arch;
  d.pooled.resize(arch == Arch::mlp ? static_cast<Index>(indices.size()) : 0, arch == Arch::mlp ? pooled.cols() : 0);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    d.labels.push_back(labels.at(i));
    if (arch == Arch::sage)
      d.graphs.push_back(graphs.at(i));
    else
      d.pooled.row(static_cast<Index>(k)) = pooled.row(static_cast<Index>(i));
  }
  return d;
}

Dataset make_dataset(Arch arch, std::span<const SessionGraph> graphs) {
  Dataset d;
  d.arch = arch;
  for (const SessionGraph& g : graphs) {
    d.labels.push_back(g.label == Label::attack ? 1 : 0);
    if (arch == Arch::sage) d.graphs.push_back(to_graph_data(g));
  }
  if (arch == Arch::mlp) d.pooled = pooled_matrix(graphs);
  return d;
}

std::vector<double> predict_scores(const Network& net, const Dataset& data) {
  std::vector<double> out;
  out.reserve(data.size());
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    std::vector<std::size_t> idx(std::min(kChunk, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto s = predict_scores(net, data.batch(idx));
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"lr", c.lr},
           {"weight_decay", c.weight_decay},
           {"batch_size", c.batch_size},
           {"max_epochs", c.max_epochs},
           {"clip_norm", c.clip_norm},
           {"eval_every", c.eval_every},
           {"patience", c.patience},
           {"dropout", c.dropout},
           {"hidden", c.hidden},
           {"seed", c.seed},
           {"encoder_lr_scale", c.encoder_lr_scale},
           {"class_weighted", c.class_weighted}};
}

void from_json(const json& j, TrainConfig& c) {
  TrainConfig d;
  c.lr = j.value("lr", d.lr);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.max_epochs = j.value("max_epochs", d.max_epochs);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
  c.eval_every = j.value("eval_every", d.eval_every);
  c.patience = j.value("patience", d.patience);
  c.dropout = j.value("dropout", d.dropout);
  c.hidden = j.value("hidden", d.hidden);
  c.seed = j.value("seed", d.seed);
  c.encoder_lr_scale = j.value("encoder_lr_scale", d.encoder_lr_scale);
  c.class_weighted = j.value("class_weighted", d.class_weighted);
  if (!(c.lr >= 0) || !(c.weight_decay >= 0) || c.batch_size == 0 || c.max_epochs < 0 || !(c.clip_norm > 0) ||
      c.eval_every <= 0 || c.patience <= 0 || !(c.dropout >= 0 && c.dropout < 1) || c.hidden == 0 ||
      !(c.encoder_lr_scale >= 0))
    throw ConfigError("train config has out-of-range values");
}

Adam::Adam(const Network& shape, double lr, double weight_decay, double encoder_lr_scale)
    : lr_(lr), wd_(weight_decay), enc_scale_(encoder_lr_scale), m_(shape.zeros_like()), v_(shape.zeros_like()) {}

void Adam::step(Network& net, const Network& grad) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const std::size_t n_enc = net.encoder_tensors();
  for (std::size_t k = 0; k < net.tensors.size(); ++k) {
    const double lr = k < n_enc ? lr_ * enc_scale_ : lr_;
    if (lr == 0.0) continue;
    MatrixXd& p = net.tensors[k];
    const MatrixXd g = grad.tensors[k] + wd_ * p;
    m_.tensors[k] = beta1_ * m_.tensors[k] + (1.0 - beta1_) * g;
    v_.tensors[k] = beta2_ * v_.tensors[k] + (1.0 - beta2_) * g.cwiseProduct(g);
    const double step = lr / bc1;
    p.array() -= step * m_.tensors[k].array() / ((v_.tensors[k].array() / bc2).sqrt() + eps_);
  }
}

namespace {

void check_partition(const Dataset& d, const char* what) {
  const auto pos = std::count(d.labels.begin(), d.labels.end(), 1);
  if (pos == 0 || pos == static_cast<long>(d.labels.size()))
    throw ConfigError(std::string(what) + " partition needs both classes");
}

}  // namespace

TrainResult train_supervised(const Dataset& train, const Dataset& val, const TrainConfig& cfg,
                             const std::optional<Network>& init) {
  if (train.size() == 0) throw ValidationError("empty training partition");
  {
    const auto pos = std::count(train.labels.begin(), train.labels.end(), 1);
    if (pos == 0 || pos == static_cast<long>(train.size()))
      throw ValidationError("training partition needs both classes");
  }
  check_partition(val, "validation");
  if (train.arch != val.arch || train.input_dim() != val.input_dim())
    throw ValidationError("training and validation data have different layouts");

  TrainResult res;
  res.net = init ? *init : init_network(train.arch, train.input_dim(), cfg.hidden, cfg.seed);
  if (res.net.arch != train.arch || res.net.input_dim != train.input_dim())
    throw ConfigError("initial network does not match the data layout");
  Network& net = res.net;

  std::vector<double> weights(train.size(), 1.0);
  if (cfg.class_weighted) {
    const double m = static_cast<double>(train.size());
    const double pos = static_cast<double>(std::count(train.labels.begin(), train.labels.end(), 1));
    for (std::size_t i = 0; i < train.size(); ++i)
      weights[i] = train.labels[i] == 1 ? m / (2.0 * pos) : m / (2.0 * (m - pos));
  }

  Adam opt(net, cfg.lr, cfg.weight_decay, cfg.encoder_lr_scale);
  Rng shuffle = substream(cfg.seed, "shuffle");
  Rng drop_rng = substream(cfg.seed, "dropout");
  const Dropout dropout{cfg.dropout, &drop_rng};

  Network best = net;
  double best_auc = eval::auroc(predict_scores(net, val), val.labels);
  res.trace.val_auroc.emplace_back(0, best_auc);
  int bad = 0;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Network grad = net.zeros_like();
  std::vector<int> batch_labels;
  std::vector<double> batch_weights;
  int epoch = 0;
  while (epoch < cfg.max_epochs) {
    ++epoch;
    shuffle.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      batch_labels.clear();
      batch_weights.clear();
      for (std::size_t i : idx) {
        batch_labels.push_back(train.labels[i]);
        batch_weights.push_back(weights[i]);
      }
      const double loss = loss_and_gradient(net, train.batch(idx), batch_labels, batch_weights, dropout, grad);
      epoch_loss += loss * static_cast<double>(idx.size());
      res.trace.pre_clip_norm.push_back(clip_global_norm(grad, cfg.clip_norm));
      res.trace.post_clip_norm.push_back(global_norm(grad));
      opt.step(net, grad);
    }
    res.trace.epoch_loss.push_back(epoch_loss / static_cast<double>(train.size()));
    if (epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs) {
      const double auc = eval::auroc(predict_scores(net, val), val.labels);
      res.trace.val_auroc.emplace_back(epoch, auc);
      if (auc > best_auc) {
        best_auc = auc;
        best = net;
        res.best_epoch = epoch;
        bad = 0;
      } else if (++bad >= cfg.patience) {
        break;
      }
    }
  }
  res.epochs_run = epoch;
  res.best_val_auroc = best_auc;
  res.net = std::move(best);
  return res;
}

void to_json(json& j, const Network& net) {
  json tensors = json::array();
  const auto names = net.tensor_names();
  for (std::size_t k = 0; k < net.tensors.size(); ++k) {
    const MatrixXd& t = net.tensors[k];
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(t.size()));
    for (Index r = 0; r < t.rows(); ++r)
      for (Index c = 0; c < t.cols(); ++c) data.push_back(t(r, c));
    tensors.push_back({{"name", k < names.size() ? names[k] : ""}, {"rows", t.rows()}, {"cols", t.cols()},
                       {"data", std::move(data)}});
  }
  j = json{{"arch", std::string(to_string(net.arch))},
           {"input_dim", net.input_dim},
           {"hidden", net.hidden},
           {"tensors", std::move(tensors)}};
}

void from_json(const json& j, Network& net) {
  net.arch = arch_from_string(j.at("arch").get<std::string>());
  net.input_dim = j.at("input_dim").get<std::size_t>();
  net.hidden = j.at("hidden").get<std::size_t>();
  const Network shape = init_network(net.arch, net.input_dim, net.hidden, 0);
  const json& ts = j.at("tensors");
  if (ts.size() != shape.tensors.size()) throw ValidationError("network file has the wrong tensor count");
  net.tensors.clear();
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const Index rows = ts[k].at("rows").get<Index>(), cols = ts[k].at("cols").get<Index>();
    if (rows != shape.tensors[k].rows() || cols != shape.tensors[k].cols())
      throw ValidationError("network tensor " + std::to_string(k) + " has the wrong shape");
    const auto data = ts[k].at("data").get<std::vector<double>>();
    if (data.size() != static_cast<std::size_t>(rows * cols)) throw ValidationError("network tensor data size mismatch");
    MatrixXd t(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) t(r, c) = data[static_cast<std::size_t>(r * cols + c)];
    if (!t.allFinite()) throw ValidationError("network tensor contains non-finite values");
    net.tensors.push_back(std::move(t));
  }
}

}  // namespace toolwatch::nn
