#include <doctest.h>

#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "support.hpp"
#include "toolwatch/error.hpp"
#include "toolwatch/experiments.hpp"
#include "toolwatch/metrics.hpp"
#include "toolwatch/splits.hpp"
#include "toolwatch/synthetic.hpp"

using namespace toolwatch;
using namespace toolwatch::eval;

namespace {

std::vector<Session> task_corpus(std::size_t tasks, std::size_t per_task) {
  std::vector<Session> out;
  for (std::size_t t = 0; t < tasks; ++t)
    for (std::size_t k = 0; k < per_task; ++k) {
      const Label l = k % 2 ? Label::attack : Label::benign;
      out.push_back(twtest::make_session("t" + std::to_string(t) + "-" + std::to_string(k), l, {{"x", "{}", ""}},
                                         "task" + std::to_string(t)));
    }
  return out;
}

std::vector<Session> label_corpus(std::size_t benign, std::size_t attack) {
  std::vector<Session> out;
  for (std::size_t i = 0; i < benign + attack; ++i)
    out.push_back(twtest::make_session("s" + std::to_string(i), i < benign ? Label::benign : Label::attack,
                                       {{"x", "{}", ""}}));
  return out;
}

std::map<std::string, const Session*> by_id(const std::vector<Session>& c) {
  std::map<std::string, const Session*> m;
  for (const auto& s : c) m[s.session_id] = &s;
  return m;
}

}  // namespace

TEST_CASE("auroc") {
  const std::vector<int> y{0, 0, 1, 1};
  CHECK(auroc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, y) == 1.0);
  CHECK(auroc(std::vector<double>{0.3, 0.3, 0.3, 0.3}, y) == 0.5);
  CHECK(auroc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, y) == 0.75);
  CHECK_THROWS_AS(auroc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), UndefinedMetricError);

  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng.below(60);
    std::vector<double> s(n);
    std::vector<int> l(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.below(8)) / 8.0;
      l[i] = static_cast<int>(rng.below(2));
    }
    l[0] = 0;
    l[1] = 1;
    CHECK(std::abs(auroc(s, l) - twtest::naive_auroc(s, l)) <= 1e-9);
    CHECK(std::abs(auprc(s, l) - twtest::naive_auprc(s, l)) <= 1e-9);
  }
}

TEST_CASE("auprc") {
  CHECK(auprc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}) == 1.0);
  Rng rng(2);
  std::vector<double> s(20000);
  std::vector<int> l(20000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = rng.uniform();
    l[i] = rng.bernoulli(0.3);
  }
  CHECK(std::abs(auprc(s, l) - 0.3) <= 0.05);
  CHECK_THROWS_AS(auprc(std::vector<double>{0.1}, std::vector<int>{0}), UndefinedMetricError);
}

TEST_CASE("curves") {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y{0, 0, 1, 1};
  const auto roc = roc_curve(s, y);
  CHECK(roc.front().x == 0.0);
  CHECK(roc.back().x == 1.0);
  CHECK(roc.back().y == 1.0);
  const auto pr = pr_curve(s, y);
  CHECK(pr.back().x == 1.0);
}

TEST_CASE("threshold metrics") {
  SUBCASE("all correct") {
    const auto r = classification_metrics(std::vector<double>{0.9, 0.8, 0.1}, std::vector<int>{1, 1, 0});
    CHECK(*r.macro_f1 == 1.0);
    CHECK(*r.fpr == 0.0);
  }
  SUBCASE("everything flagged") {
    const auto r = classification_metrics(std::vector<double>{0.9, 0.8, 0.6}, std::vector<int>{1, 0, 0});
    CHECK(*r.recall == 1.0);
    CHECK(*r.fpr == 1.0);
  }
  SUBCASE("constructed confusion") {
    std::vector<double> s;
    std::vector<int> y;
    auto add = [&](int n, double score, int label) {
      for (int i = 0; i < n; ++i) {
        s.push_back(score);
        y.push_back(label);
      }
    };
    add(3, 0.9, 1);  // tp
    add(1, 0.9, 0);  // fp
    add(4, 0.1, 0);  // tn
    add(2, 0.1, 1);  // fn
    const auto r = classification_metrics(s, y);
    CHECK(r.confusion == Confusion{3, 1, 4, 2});
    CHECK(*r.precision == 0.75);
    CHECK(*r.recall == 0.6);
    CHECK(*r.fpr == 0.2);
    for (auto v : {r.auroc, r.auprc, r.macro_f1, r.precision, r.recall, r.fpr}) {
      CHECK(*v >= 0.0);
      CHECK(*v <= 1.0);
    }
  }
  SUBCASE("single class reports undefined fields") {
    const auto r = classification_metrics(std::vector<double>{0.9, 0.2}, std::vector<int>{0, 0});
    CHECK(!r.auroc);
    CHECK(std::find(r.undefined.begin(), r.undefined.end(), "auroc") != r.undefined.end());
    nlohmann::json j = r;
    CHECK(j.at("auroc").is_null());
  }
}

TEST_CASE("per-mode breakdown") {
  const std::vector<double> s{0.9, 0.8, 0.2, 0.7, 0.1};
  const std::vector<int> y{1, 1, 1, 1, 0};
  const std::vector<std::optional<AttackMode>> m{AttackMode::combined(), AttackMode::combined(), AttackMode::input(),
                                                 AttackMode::input(), std::nullopt};
  const auto rows = per_mode_breakdown(s, y, m);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].mode == "both");
  CHECK(rows[0].recall == 1.0);
  CHECK(rows[0].n == 2);
  CHECK(rows[1].mode == "tool_input");
  CHECK(rows[1].recall == 0.5);
  CHECK(*rows[1].auroc == 1.0);
}

TEST_CASE("population statistics") {
  const auto [m, sd] = mean_sd(std::vector<double>{1, 3});
  CHECK(m == 2.0);
  CHECK(sd == 1.0);
}

TEST_CASE("apportionment") {
  CHECK(apportion(80) == std::array<std::size_t, 3>{56, 8, 16});
  CHECK(apportion(10) == std::array<std::size_t, 3>{7, 1, 2});
  for (std::size_t u = 0; u < 400; ++u) {
    const auto a = apportion(u);
    CHECK(a[0] + a[1] + a[2] == u);
    CHECK(std::abs(static_cast<double>(a[0]) - 0.7 * u) < 1.0);
    CHECK(std::abs(static_cast<double>(a[1]) - 0.1 * u) < 1.0);
    CHECK(std::abs(static_cast<double>(a[2]) - 0.2 * u) < 1.0);
  }
}

TEST_CASE("task-stratified split") {
  const auto corpus = task_corpus(80, 3);
  const SplitSpec spec = task_stratified_split(corpus, 7);
  const auto ids = by_id(corpus);
  std::set<std::string> tasks[3];
  const std::vector<std::string>* parts[3] = {&spec.train, &spec.val, &spec.test};
  for (int k = 0; k < 3; ++k)
    for (const auto& id : *parts[k]) tasks[k].insert(*ids.at(id)->task_id);
  CHECK(tasks[0].size() == 56);
  CHECK(tasks[1].size() == 8);
  CHECK(tasks[2].size() == 16);
  for (int a = 0; a < 3; ++a)
    for (int b = a + 1; b < 3; ++b)
      for (const auto& t : tasks[a]) CHECK(!tasks[b].count(t));
  const Partition p = resolve(spec, corpus);
  CHECK(p.train.size() + p.val.size() + p.test.size() == corpus.size());

  const auto small = task_corpus(10, 2);
  const SplitSpec s10 = task_stratified_split(small, 1);
  CHECK(s10.train.size() == 14);
  CHECK(s10.val.size() == 2);
  CHECK(s10.test.size() == 4);

  auto missing = small;
  missing[3].task_id.reset();
  CHECK_THROWS_AS(task_stratified_split(missing, 1), ValidationError);
}

TEST_CASE("label-stratified split") {
  const auto corpus = label_corpus(100, 100);
  const auto ids = by_id(corpus);
  const SplitSpec a = label_stratified_split(corpus, 1);
  auto count = [&](const std::vector<std::string>& part, Label l) {
    return std::count_if(part.begin(), part.end(), [&](const std::string& id) { return ids.at(id)->label == l; });
  };
  for (Label l : {Label::benign, Label::attack}) {
    CHECK(count(a.train, l) == 70);
    CHECK(count(a.val, l) == 10);
    CHECK(count(a.test, l) == 20);
  }
  const SplitSpec b = label_stratified_split(corpus, 2);
  CHECK(a.train.size() == b.train.size());
  CHECK(a.test.size() == b.test.size());
  CHECK(std::set<std::string>(a.test.begin(), a.test.end()) != std::set<std::string>(b.test.begin(), b.test.end()));

  const auto odd = label_corpus(500, 499);
  const auto odd_ids = by_id(odd);
  const SplitSpec c = label_stratified_split(odd, 3);
  for (auto [l, n] : {std::pair{Label::benign, 500.0}, std::pair{Label::attack, 499.0}}) {
    auto cnt = [&](const std::vector<std::string>& part) {
      return static_cast<double>(
          std::count_if(part.begin(), part.end(), [&](const std::string& id) { return odd_ids.at(id)->label == l; }));
    };
    CHECK(std::abs(cnt(c.train) - 0.7 * n) < 1.0);
    CHECK(std::abs(cnt(c.val) - 0.1 * n) < 1.0);
    CHECK(std::abs(cnt(c.test) - 0.2 * n) < 1.0);
  }
}

TEST_CASE("k-fold splits") {
  const auto corpus = task_corpus(23, 4);
  const SplitSpec spec = kfold_split(corpus, Protocol::kfold_task, 5, 9);
  const auto ids = by_id(corpus);
  std::map<std::string, std::set<int>> folds_of_task;
  for (const auto& [id, fold] : spec.fold_of) folds_of_task[*ids.at(id)->task_id].insert(fold);
  CHECK(folds_of_task.size() == 23);
  for (const auto& [t, f] : folds_of_task) CHECK(f.size() == 1);

  for (int fold = 0; fold < 5; ++fold) {
    const Partition p = fold_partition(spec, corpus, fold);
    CHECK(p.train.size() + p.val.size() + p.test.size() == corpus.size());
    std::set<std::string> test_tasks, other;
    for (auto i : p.test) test_tasks.insert(*corpus[i].task_id);
    for (auto i : p.train) other.insert(*corpus[i].task_id);
    for (auto i : p.val) other.insert(*corpus[i].task_id);
    for (const auto& t : test_tasks) CHECK(!other.count(t));
    CHECK(!p.val.empty());
  }

  nlohmann::json j = spec;
  const SplitSpec back = j.get<SplitSpec>();
  CHECK(back.fold_of == spec.fold_of);
  CHECK(back.protocol == Protocol::kfold_task);
}

TEST_CASE("subsampling") {
  std::vector<std::size_t> idx(100);
  std::iota(idx.begin(), idx.end(), 0);
  CHECK(subsample(idx, 0.01, 1).size() == 1);
  CHECK(subsample(idx, 0.25, 1).size() == 25);
  CHECK(subsample(idx, 1.0, 1).size() == 100);
  CHECK(subsample(idx, 0.1, 1) == subsample(idx, 0.1, 1));
}

TEST_CASE("synthetic generator") {
  synth::SyntheticSpec s;
  s.n_tasks = 20;
  s.sessions_per_task = 10;
  const auto a = synth::generate_synthetic_corpus(s);
  CHECK(a.size() == 200);
  const auto st = corpus_stats(a);
  CHECK(st.by_label.at("attack") > 0);
  CHECK(st.by_label.at("benign") > 0);
  CHECK(st.distinct_tasks == 20);
  CHECK(synth::generate_synthetic_corpus(s) == a);
  for (const auto& x : a) validate(x);

  s.seed = 8;
  CHECK(synth::generate_synthetic_corpus(s) != a);
  nlohmann::json j = s;
  CHECK(j.get<synth::SyntheticSpec>().seed == 8);
  s.attack_fraction = 1.5;
  CHECK_THROWS_AS(synth::validate(s), ValidationError);
}

TEST_CASE("zero perturbation strength leaves nothing to learn") {
  synth::SyntheticSpec s;
  s.n_tasks = 60;
  s.strength_input = 0.0;
  s.strength_output = 0.0;
  const auto corpus = synth::generate_synthetic_corpus(s);
  auto provider = make_provider(ProviderConfig{});
  pipeline::ModelSpec spec;
  spec.kind = pipeline::ModelKind::logreg;
  const auto r = experiments::run_single(corpus, spec, Protocol::task_stratified, 7, provider.get());
  CHECK(std::abs(*r.report.auroc - 0.5) <= 0.1);
}

TEST_CASE("weak input channel is detected less often than combined attacks") {
  synth::SyntheticSpec s;
  s.n_tasks = 100;
  s.sessions_per_task = 8;
  s.tool_pool_size = 500;
  s.task_attack_skew = 0.8;
  s.strength_input = 0.07;
  s.strength_output = 0.15;
  s.benign_vocab_size = 200;
  const auto corpus = synth::generate_synthetic_corpus(s);
  auto provider = make_provider(ProviderConfig{});
  pipeline::ModelSpec spec;
  spec.kind = pipeline::ModelKind::logreg;
  std::map<std::string, double> recall;
  for (std::uint64_t seed : {7, 42, 123}) {
    const auto r = experiments::run_single(corpus, spec, Protocol::task_stratified, seed, provider.get());
    for (const auto& row : r.report.per_mode) recall[row.mode] += row.recall / 3;
  }
  CHECK(recall.at("both") > recall.at("tool_input"));
}

TEST_CASE("task-independent signal shows no leakage gap") {
  synth::SyntheticSpec s;
  s.n_tasks = 150;
  s.sessions_per_task = 8;
  s.task_attack_skew = 0.0;
  s.strength_input = 0.3;
  s.strength_output = 0.3;
  s.benign_vocab_size = 200;
  const auto corpus = synth::generate_synthetic_corpus(s);
  auto provider = make_provider(ProviderConfig{});
  pipeline::ModelSpec spec;
  spec.kind = pipeline::ModelKind::logreg;
  const std::vector<std::uint64_t> seeds{7, 42, 123};
  const auto gap = experiments::leakage_gap(corpus, spec, seeds, provider.get());
  CHECK(gap.rows.size() == 3);
  CHECK(std::abs(gap.gap) <= 0.05);
  CHECK(experiments::format_gap_table(gap).find("gap") != std::string::npos);
}

TEST_CASE("label-efficiency sweep bookkeeping") {
  synth::SyntheticSpec s;
  s.n_tasks = 10;
  s.sessions_per_task = 10;
  const auto corpus = synth::generate_synthetic_corpus(s);
  auto provider = make_provider(ProviderConfig{});
  pipeline::ModelSpec spec;
  spec.kind = pipeline::ModelKind::sage;
  spec.train.max_epochs = 10;
  spec.train.hidden = 16;
  experiments::SweepOptions o;
  o.methods = {experiments::Method::supervised};
  const auto rep = experiments::label_efficiency_sweep(corpus, spec, o, provider.get());
  CHECK(rep.rows.size() == 6);
  CHECK(rep.cells.size() == 30);
  for (const auto& c : rep.cells) {
    if (c.fraction == 0.01) {
      CHECK(c.n_labeled == 1);
      CHECK((c.flagged || std::abs(*c.auroc - 0.5) <= 0.1));
    }
  }
  CHECK(rep.row_mean(1.0, experiments::Method::supervised).has_value());
  nlohmann::json j = rep;
  CHECK(j.at("rows").size() == 6);
}
