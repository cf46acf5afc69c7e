#include <doctest.h>

#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "toolwatch/error.hpp"
#include "toolwatch/experiments.hpp"
#include "toolwatch/metrics.hpp"
#include "toolwatch/nn.hpp"
#include "toolwatch/synthetic.hpp"

using namespace toolwatch;
using namespace toolwatch::nn;

namespace {

GraphData random_graph(std::size_t n, Eigen::Index d, Rng& rng) {
  GraphData g;
  g.x.resize(static_cast<Eigen::Index>(n), d);
  for (Eigen::Index i = 0; i < g.x.size(); ++i) g.x.data()[i] = rng.normal();
  g.neighbors.resize(n);
  if (n == 1) g.neighbors[0] = {0};
  for (std::size_t i = 0; i + 1 < n; ++i) {
    g.neighbors[i].push_back(i + 1);
    g.neighbors[i + 1].push_back(i);
  }
  // a few extra chords
  for (std::size_t k = 0; k < n / 2; ++k) {
    const std::size_t a = rng.below(n), b = rng.below(n);
    if (a == b) continue;
    g.neighbors[a].push_back(b);
    g.neighbors[b].push_back(a);
  }
  for (auto& v : g.neighbors) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }
  return g;
}

GraphData permuted(const GraphData& g, const std::vector<std::size_t>& perm) {
  // new node k is old node perm[k]
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t k = 0; k < perm.size(); ++k) inv[perm[k]] = k;
  GraphData p;
  p.x.resize(g.x.rows(), g.x.cols());
  p.neighbors.resize(perm.size());
  for (std::size_t k = 0; k < perm.size(); ++k) {
    p.x.row(static_cast<Eigen::Index>(k)) = g.x.row(static_cast<Eigen::Index>(perm[k]));
    for (std::size_t old : g.neighbors[perm[k]]) p.neighbors[k].push_back(inv[old]);
    std::sort(p.neighbors[k].begin(), p.neighbors[k].end());
  }
  return p;
}

std::vector<Session> strong_corpus(std::uint64_t seed = 7) {
  synth::SyntheticSpec s;
  s.n_tasks = 30;
  s.sessions_per_task = 8;
  s.strength_input = 0.7;
  s.strength_output = 0.7;
  s.seed = seed;
  return synth::generate_synthetic_corpus(s);
}

}  // namespace

TEST_CASE("sage layer arithmetic") {
  Eigen::MatrixXd h(1, 2);
  h << 1, 0;
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(2, 2);
  const Eigen::MatrixXd zero_b = Eigen::MatrixXd::Zero(1, 2);
  const Eigen::MatrixXd out = sage_layer(h, {{0}}, eye, eye, zero_b);
  CHECK(out(0, 0) == 2.0);
  CHECK(out(0, 1) == 0.0);

  const Eigen::MatrixXd zeros = Eigen::MatrixXd::Zero(3, 2);
  CHECK(sage_layer(zeros, {{1}, {0, 2}, {1}}, eye, eye, zero_b).isZero(0));
  CHECK(elu(-1.0) == doctest::Approx(std::exp(-1.0) - 1.0));
  CHECK_THROWS_AS(sage_layer(zeros, {{1}, {}, {1}}, eye, eye, zero_b), ValidationError);
}

TEST_CASE("sage layer is permutation equivariant") {
  Rng rng(5);
  const GraphData g = random_graph(9, 4, rng);
  const Network net = init_network(Arch::sage, 4, 6, 1);
  const Eigen::MatrixXd out = sage_layer(g.x, g.neighbors, net.tensors[0], net.tensors[1], net.tensors[2]);
  std::vector<std::size_t> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  const GraphData p = permuted(g, perm);
  const Eigen::MatrixXd pout = sage_layer(p.x, p.neighbors, net.tensors[0], net.tensors[1], net.tensors[2]);
  for (std::size_t k = 0; k < perm.size(); ++k)
    CHECK((pout.row(static_cast<Eigen::Index>(k)) - out.row(static_cast<Eigen::Index>(perm[k]))).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("graph encoding") {
  Rng rng(6);
  const Network net = init_network(Arch::sage, 5, 8, 2);
  const GraphData single = random_graph(1, 5, rng);
  const Eigen::VectorXd z1 = encode_graph(net, single);
  CHECK(z1.size() == 16);
  CHECK(z1.head(8) == z1.tail(8));

  const GraphData g = random_graph(7, 5, rng);
  const Eigen::VectorXd z = encode_graph(net, g);
  CHECK(encode_graph(net, g) == z);
  std::vector<std::size_t> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  for (int t = 0; t < 20; ++t) {
    rng.shuffle(perm);
    CHECK((encode_graph(net, permuted(g, perm)) - z).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("gradient checks") {
  Rng rng(9);
  SUBCASE("mlp on four samples") {
    const Network net = init_network(Arch::mlp, 3, 5, 4);
    Batch b;
    b.pooled.resize(4, 6);
    for (Eigen::Index i = 0; i < b.pooled.size(); ++i) b.pooled.data()[i] = rng.normal();
    const std::vector<int> y{0, 1, 1, 0};
    const std::vector<double> w{1.0, 0.5, 2.0, 1.0};
    CHECK(gradient_check(net, b, y, w) < 1e-4);
  }
  SUBCASE("sage on a three-node graph") {
    const Network net = init_network(Arch::sage, 3, 4, 5);
    const GraphData g = random_graph(3, 3, rng);
    const GraphData h = random_graph(2, 3, rng);
    Batch b;
    b.graphs = {&g, &h};
    const std::vector<int> y{1, 0};
    const std::vector<double> w{1.0, 1.0};
    CHECK(gradient_check(net, b, y, w) < 1e-4);
  }
  SUBCASE("saturated optimum has a vanishing gradient") {
    Network net = init_network(Arch::mlp, 2, 3, 6);
    const std::size_t h1w = 0, h1b = 1, h2b = 3;
    net.tensors[h1w].setZero();
    net.tensors[h1b].setOnes();
    net.tensors[2].setZero();
    net.tensors[h2b] << -50.0, 50.0;
    Batch b;
    b.pooled = Eigen::MatrixXd::Constant(3, 4, 0.25);
    b.pooled(1, 2) = -0.7;
    const std::vector<int> y{1, 1, 1};
    const std::vector<double> w{1, 1, 1};
    Network grad = net.zeros_like();
    const double loss = loss_and_gradient(net, b, y, w, {}, grad);
    CHECK(loss < 1e-40);
    CHECK(global_norm(grad) < 1e-6);
  }
}

TEST_CASE("weighted cross-entropy") {
  Eigen::MatrixXd logits(2, 2);
  logits << 0, 0, 1, -1;
  const std::vector<int> y{1, 0};
  const std::vector<double> w{3, 1};
  Eigen::MatrixXd d;
  const double loss = weighted_cross_entropy(logits, y, w, &d);
  const double ce1 = std::log(2.0), ce2 = std::log(1.0 + std::exp(-2.0));
  CHECK(loss == doctest::Approx((3 * ce1 + ce2) / 4).epsilon(1e-14));
  CHECK(d(0, 1) == doctest::Approx(3.0 / 4.0 * (0.5 - 1.0)).epsilon(1e-14));
}

TEST_CASE("clipping and adam") {
  Network g = init_network(Arch::mlp, 2, 3, 1);
  for (auto& t : g.tensors) t.setConstant(10.0);
  const double pre = clip_global_norm(g, 1.0);
  CHECK(pre > 1.0);
  CHECK(global_norm(g) == doctest::Approx(1.0).epsilon(1e-5));

  Network net = init_network(Arch::sage, 2, 3, 1);
  const Network before = net;
  Network grad = net.zeros_like();
  for (auto& t : grad.tensors) t.setOnes();
  Adam frozen(net, 0.1, 0.0, 0.0);
  frozen.step(net, grad);
  for (std::size_t k = 0; k < net.encoder_tensors(); ++k) CHECK(net.tensors[k] == before.tensors[k]);
  for (std::size_t k = net.encoder_tensors(); k < net.tensors.size(); ++k) {
    // first Adam step moves every entry by lr against the gradient sign
    CHECK((net.tensors[k] - before.tensors[k]).cwiseAbs().maxCoeff() == doctest::Approx(0.1).epsilon(1e-6));
  }
}

TEST_CASE("network json round trip") {
  const Network net = init_network(Arch::sage, 4, 5, 3);
  nlohmann::json j = net;
  CHECK(nlohmann::json::parse(j.dump()).get<Network>() == net);
  CHECK(net.tensor_names().size() == 10);
  CHECK(net.parameter_count() == 2 * 5 * 4 + 5 + 2 * 5 * 5 + 5 + 5 * 10 + 5 + 2 * 5 + 2);
  CHECK(init_network(Arch::sage, 4, 5, 3) == net);
  CHECK(!(init_network(Arch::sage, 4, 5, 4) == net));
}

TEST_CASE("training on a content-separable corpus") {
  const auto corpus = strong_corpus();
  auto provider = make_provider(ProviderConfig{});
  pipeline::ModelSpec spec;
  spec.kind = pipeline::ModelKind::sage;
  spec.mode = FeatureMode::content;
  const auto r = experiments::run_single(corpus, spec, eval::Protocol::task_stratified, 7, provider.get());
  CHECK(*r.report.auroc >= 0.95);

  SUBCASE("deterministic per seed") {
    const auto again = experiments::run_single(corpus, spec, eval::Protocol::task_stratified, 7, provider.get());
    CHECK(again.scores == r.scores);
  }

  SUBCASE("flipped labels are learned as well") {
    auto flipped = corpus;
    for (Session& s : flipped) {
      s.label = s.label == Label::attack ? Label::benign : Label::attack;
      s.attack_mode.reset();
      if (s.label == Label::attack) s.attack_mode = AttackMode::combined();
    }
    const auto rf = experiments::run_single(flipped, spec, eval::Protocol::task_stratified, 7, provider.get());
    CHECK(std::abs(*rf.report.auroc - *r.report.auroc) <= 0.05);
  }
}

TEST_CASE("zero epochs returns the initialization at chance level") {
  const auto corpus = strong_corpus(11);
  auto provider = make_provider(ProviderConfig{});
  FeatureConfig fc = pipeline::make_feature_config(FeatureMode::content, corpus, provider.get());
  const auto graphs = featurize_corpus(corpus, fc, provider.get());
  std::vector<std::size_t> tr, va;
  for (std::size_t i = 0; i < graphs.size(); ++i) (i % 4 == 0 ? va : tr).push_back(i);
  const Dataset all = make_dataset(Arch::sage, graphs);
  const Dataset train = all.subset(tr), val = all.subset(va);
  double mean = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    TrainConfig c;
    c.max_epochs = 0;
    c.seed = seed;
    c.hidden = 32;
    const TrainResult res = train_supervised(train, val, c);
    CHECK(res.net == init_network(Arch::sage, train.input_dim(), 32, seed));
    mean += res.best_val_auroc / 10;
  }
  CHECK(std::abs(mean - 0.5) <= 0.1);
}

TEST_CASE("training input checks") {
  Rng rng(1);
  Dataset d;
  d.arch = Arch::sage;
  for (int i = 0; i < 4; ++i) d.graphs.push_back(random_graph(3, 2, rng));
  d.labels = {1, 1, 1, 1};
  Dataset v = d;
  v.labels = {0, 1, 0, 1};
  CHECK_THROWS_AS(train_supervised(d, v, {}), ValidationError);
  Dataset single_val = v;
  single_val.labels = {0, 0, 0, 0};
  CHECK_THROWS_AS(train_supervised(v, single_val, {}), ConfigError);

  TrainConfig c;
  c.lr = 0.05;
  nlohmann::json j = c;
  CHECK(j.get<TrainConfig>() == c);
}

TEST_CASE("early stopping keeps the best checkpoint") {
  const auto corpus = strong_corpus(3);
  auto provider = make_provider(ProviderConfig{});
  FeatureConfig fc = pipeline::make_feature_config(FeatureMode::content, corpus, provider.get());
  const auto graphs = featurize_corpus(corpus, fc, provider.get());
  std::vector<std::size_t> tr, va;
  for (std::size_t i = 0; i < graphs.size(); ++i) (i % 5 == 0 ? va : tr).push_back(i);
  const Dataset all = make_dataset(Arch::mlp, graphs);
  TrainConfig c;
  c.max_epochs = 60;
  c.eval_every = 5;
  c.patience = 2;
  const TrainResult res = train_supervised(all.subset(tr), all.subset(va), c);
  REQUIRE(!res.trace.val_auroc.empty());
  CHECK(res.trace.val_auroc.front().first == 0);
  double best = -1;
  for (auto [epoch, a] : res.trace.val_auroc) best = std::max(best, a);
  CHECK(res.best_val_auroc == best);
  const auto scores = predict_scores(res.net, all.subset(va));
  CHECK(eval::auroc(scores, all.subset(va).labels) == doctest::Approx(best).epsilon(1e-12));
  for (double n : res.trace.post_clip_norm) CHECK(n <= 1.0 + 1e-9);
}
