#include <doctest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "support.hpp"
#include "toolwatch/experiments.hpp"
#include "toolwatch/ssl.hpp"
#include "toolwatch/synthetic.hpp"

using namespace toolwatch;
using namespace toolwatch::ssl;

namespace {

nn::GraphData path_graph(std::size_t n, Eigen::Index d, Rng& rng) {
  nn::GraphData g;
  g.x.resize(static_cast<Eigen::Index>(n), d);
  for (Eigen::Index i = 0; i < g.x.size(); ++i) g.x.data()[i] = 1.0 + rng.uniform();
  g.neighbors.resize(n);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    g.neighbors[i].push_back(i + 1);
    g.neighbors[i + 1].push_back(i);
  }
  if (n == 1) g.neighbors[0] = {0};
  return g;
}

std::vector<nn::GraphData> benign_graphs(std::size_t count, std::uint64_t seed) {
  synth::SyntheticSpec s;
  s.n_tasks = 12;
  s.sessions_per_task = 6;
  s.seed = seed;
  const auto corpus = synth::generate_synthetic_corpus(s);
  std::vector<Session> benign;
  for (const auto& x : corpus)
    if (x.label == Label::benign && benign.size() < count) benign.push_back(x);
  auto provider = make_provider(ProviderConfig{});
  const FeatureConfig fc = pipeline::make_feature_config(FeatureMode::content, benign, provider.get());
  std::vector<nn::GraphData> out;
  for (const auto& g : featurize_corpus(benign, fc, provider.get())) out.push_back(nn::to_graph_data(g));
  return out;
}

}  // namespace

TEST_CASE("augmentation") {
  Rng rng(1);
  const nn::GraphData g = path_graph(5, 3, rng);

  SUBCASE("zero rates leave the graph alone") {
    Rng a(2);
    const nn::GraphData v = augment_graph(g, {0.0, 0.0}, a);
    CHECK(v.x == g.x);
    CHECK(v.neighbors == g.neighbors);
  }
  SUBCASE("full rates leave only repaired self-loops") {
    Rng a(3);
    const nn::GraphData two = path_graph(2, 3, rng);
    const nn::GraphData v = augment_graph(two, {1.0, 1.0}, a);
    CHECK(v.x.isZero(0));
    CHECK(v.neighbors == std::vector<std::vector<std::size_t>>{{0}, {1}});
  }
  SUBCASE("mask rate is honoured on average") {
    Rng big_rng(4);
    nn::GraphData big = path_graph(100, 100, big_rng);
    Rng a(5);
    const nn::GraphData v = augment_graph(big, {0.2, 0.0}, a);
    const double zeroed = static_cast<double>((v.x.array() == 0.0).count()) / 10000.0;
    CHECK(std::abs(zeroed - 0.2) <= 0.02);
  }
  SUBCASE("same stream, same view") {
    Rng a(6), b(6);
    const nn::GraphData v1 = augment_graph(g, {}, a), v2 = augment_graph(g, {}, b);
    CHECK(v1.x == v2.x);
    CHECK(v1.neighbors == v2.neighbors);
  }
}

TEST_CASE("nt-xent special cases") {
  Eigen::MatrixXd pair(2, 3);
  pair << 1, 2, 3, -1, 0.5, 2;
  const std::vector<std::size_t> p1{1, 0};
  CHECK(std::abs(nt_xent_loss(pair, p1, 0.5)) <= 1e-12);

  const Eigen::MatrixXd same = Eigen::MatrixXd::Constant(4, 3, 0.7);
  const std::vector<std::size_t> p2{2, 3, 0, 1};
  CHECK(nt_xent_loss(same, p2, 0.5) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("nt-xent matches direct summation and finite differences") {
  Rng rng(7);
  Eigen::MatrixXd z(8, 5);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  const std::vector<std::size_t> partner{4, 5, 6, 7, 0, 1, 2, 3};
  Eigen::MatrixXd dz;
  const double loss = nt_xent_loss(z, partner, 0.5, &dz);
  CHECK(std::abs(loss - twtest::naive_nt_xent(z, partner, 0.5)) <= 1e-9);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    Eigen::MatrixXd zp = z, zm = z;
    zp.data()[i] += h;
    zm.data()[i] -= h;
    const double num = (nt_xent_loss(zp, partner, 0.5) - nt_xent_loss(zm, partner, 0.5)) / (2 * h);
    CHECK(std::abs(num - dz.data()[i]) <= 1e-6);
  }
}

TEST_CASE("pre-training") {
  const auto graphs = benign_graphs(24, 3);
  REQUIRE(graphs.size() == 24);
  SslConfig s;
  s.pretrain_epochs = 15;
  nn::TrainConfig c;
  c.batch_size = 8;
  c.hidden = 32;
  c.seed = 5;
  const PretrainResult r = pretrain_encoder(graphs, s, c);
  REQUIRE(r.epoch_loss.size() == 15);
  CHECK(r.epoch_loss.back() < r.epoch_loss.front());

  const PretrainResult again = pretrain_encoder(graphs, s, c);
  CHECK(again.encoder == r.encoder);

  c.batch_size = 1;
  s.pretrain_epochs = 2;
  for (double l : pretrain_encoder(graphs, s, c).epoch_loss) CHECK(std::abs(l) <= 1e-12);
}

TEST_CASE("fine-tuning") {
  synth::SyntheticSpec spec;
  spec.n_tasks = 30;
  spec.sessions_per_task = 8;
  spec.strength_input = 0.6;
  spec.strength_output = 0.6;
  const auto corpus = synth::generate_synthetic_corpus(spec);
  auto provider = make_provider(ProviderConfig{});

  SUBCASE("matches supervised at full labels") {
    pipeline::ModelSpec sup;
    sup.kind = pipeline::ModelKind::sage;
    pipeline::ModelSpec ft = sup;
    ft.kind = pipeline::ModelKind::ssl_sage;
    double a = 0, b = 0;
    for (std::uint64_t seed : {7, 42, 123}) {
      a += *experiments::run_single(corpus, sup, eval::Protocol::task_stratified, seed, provider.get()).report.auroc / 3;
      b += *experiments::run_single(corpus, ft, eval::Protocol::task_stratified, seed, provider.get()).report.auroc / 3;
    }
    MESSAGE("supervised " << a << ", ssl+ft " << b);
    CHECK(std::abs(a - b) <= 0.05);
  }

  SUBCASE("frozen encoder only moves the head") {
    FeatureConfig fc = pipeline::make_feature_config(FeatureMode::content, corpus, provider.get());
    const auto gs = featurize_corpus(corpus, fc, provider.get());
    std::vector<std::size_t> tr, va;
    for (std::size_t i = 0; i < gs.size(); ++i) (i % 4 == 0 ? va : tr).push_back(i);
    const nn::Dataset all = nn::make_dataset(nn::Arch::sage, gs);
    const nn::Network encoder = nn::init_network(nn::Arch::sage, fc.node_dim(), 32, 1);
    SslConfig s;
    s.finetune_epochs = 3;
    nn::TrainConfig c;
    c.encoder_lr_scale = 0.0;
    c.eval_every = 1;
    const nn::TrainResult res = finetune(encoder, all.subset(tr), all.subset(va), s, c);
    for (std::size_t k = 0; k < encoder.encoder_tensors(); ++k) CHECK(res.net.tensors[k] == encoder.tensors[k]);
    bool head_moved = false;
    nn::Network fresh = encoder;
    nn::reset_head(fresh, c.seed);
    for (std::size_t k = encoder.encoder_tensors(); k < encoder.tensors.size(); ++k)
      head_moved |= res.net.tensors[k] != fresh.tensors[k];
    CHECK((head_moved || res.best_epoch == 0));
  }
}

TEST_CASE("ssl config json") {
  SslConfig s;
  s.temperature = 0.2;
  s.augment.edge_drop_rate = 0.4;
  nlohmann::json j = s;
  CHECK(j.at("edge_drop_rate") == 0.4);
  CHECK(j.get<SslConfig>() == s);
}
