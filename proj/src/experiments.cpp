#include "toolwatch/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include <nlohmann/json.hpp>

#include "toolwatch/error.hpp"

namespace toolwatch::experiments {

using nlohmann::json;

namespace {

std::vector<Session> pick(std::span<const Session> corpus, std::span<const std::size_t> idx) {
  std::vector<Session> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(corpus[i]);
  return out;
}

std::vector<int> labels_of(std::span<const Session> s) {
  std::vector<int> y;
  for (const Session& x : s) y.push_back(x.label == Label::attack ? 1 : 0);
  return y;
}

bool both_classes(std::span<const int> y) {
  const auto pos = std::count(y.begin(), y.end(), 1);
  return pos > 0 && pos < static_cast<long>(y.size());
}

bool has_all_tasks(std::span<const Session> corpus) {
  return std::all_of(corpus.begin(), corpus.end(), [](const Session& s) { return s.task_id.has_value(); });
}

}  // namespace

RunResult run_single(std::span<const Session> corpus, const pipeline::ModelSpec& spec, eval::Protocol protocol,
                     std::uint64_t seed, EmbeddingProvider* provider) {
  RunResult r;
  r.split = eval::make_split(corpus, protocol, seed);
  eval::Partition part;
  if (r.split.n_folds > 0)
    part = eval::fold_partition(r.split, corpus, 0);
  else
    part = eval::resolve(r.split, corpus);
  const auto train = pick(corpus, part.train), val = pick(corpus, part.val), test = pick(corpus, part.test);
  const FeatureConfig features = pipeline::make_feature_config(spec.mode, train, provider);
  const auto gtrain = featurize_corpus(train, features, provider);
  const auto gval = featurize_corpus(val, features, provider);
  const auto gtest = featurize_corpus(test, features, provider);
  r.model = pipeline::fit(spec, features, gtrain, gval, seed);
  r.best_val_auroc = r.model.best_val_auroc;
  r.scores = pipeline::score(r.model, gtest);
  r.labels = labels_of(test);
  const double thr = pipeline::decision_threshold(r.model);
  r.report = eval::classification_metrics(r.scores, r.labels, thr);
  std::vector<std::optional<AttackMode>> modes;
  for (const Session& s : test) modes.push_back(s.attack_mode);
  r.report.per_mode = eval::per_mode_breakdown(r.scores, r.labels, modes, thr);
  r.report.seed = seed;
  r.report.protocol = std::string(eval::to_string(protocol));
  return r;
}

GapReport leakage_gap(std::span<const Session> corpus, const pipeline::ModelSpec& spec,
                      std::span<const std::uint64_t> seeds, EmbeddingProvider* provider) {
  if (seeds.empty()) throw ConfigError("leakage gap needs at least one seed");
  if (!has_all_tasks(corpus)) throw ValidationError("leakage gap needs task ids on every session");
  GapReport rep;
  rep.model = std::string(pipeline::to_string(spec.kind));
  rep.mode = std::string(to_string(spec.mode));
  std::vector<double> rnd, task;
  for (std::uint64_t seed : seeds) {
    const auto a = run_single(corpus, spec, eval::Protocol::label_stratified, seed, provider);
    const auto b = run_single(corpus, spec, eval::Protocol::task_stratified, seed, provider);
    if (!a.report.auroc || !b.report.auroc) throw UndefinedMetricError("test partition lacks a class");
    rep.rows.push_back({seed, *a.report.auroc, *b.report.auroc});
    rnd.push_back(*a.report.auroc);
    task.push_back(*b.report.auroc);
  }
  std::tie(rep.random_mean, rep.random_sd) = eval::mean_sd(rnd);
  std::tie(rep.task_mean, rep.task_sd) = eval::mean_sd(task);
  rep.gap = rep.random_mean - rep.task_mean;
  return rep;
}

std::string method_name(Method m) { return m == Method::supervised ? "supervised" : "ssl_ft"; }

std::optional<double> SweepReport::row_mean(double fraction, Method method) const {
  for (const SweepRow& r : rows)
    if (r.method == method && std::abs(r.fraction - fraction) < 1e-12 && r.n > 0) return r.mean;
  return std::nullopt;
}

SweepReport label_efficiency_sweep(std::span<const Session> corpus, const pipeline::ModelSpec& spec,
                                   const SweepOptions& opt, EmbeddingProvider* provider) {
  if (spec.kind != pipeline::ModelKind::sage && spec.kind != pipeline::ModelKind::ssl_sage)
    throw ConfigError("the label-efficiency sweep compares graph models");
  SweepReport rep;
  rep.protocol = has_all_tasks(corpus) ? eval::Protocol::kfold_task : eval::Protocol::kfold_label;
  rep.folds = opt.folds;
  rep.seed = opt.seed;
  const eval::SplitSpec split = eval::kfold_split(corpus, rep.protocol, opt.folds, opt.seed);

  for (int fold = 0; fold < opt.folds; ++fold) {
    const eval::Partition part = eval::fold_partition(split, corpus, fold);
    const auto train = pick(corpus, part.train), val = pick(corpus, part.val), test = pick(corpus, part.test);
    const FeatureConfig features = pipeline::make_feature_config(spec.mode, train, provider);
    const auto gtrain = featurize_corpus(train, features, provider);
    const auto gval = featurize_corpus(val, features, provider);
    const auto gtest = featurize_corpus(test, features, provider);
    const std::vector<int> ytest = labels_of(test);
    const nn::Dataset dtrain = nn::make_dataset(nn::Arch::sage, gtrain);
    const nn::Dataset dval = nn::make_dataset(nn::Arch::sage, gval);
    const nn::Dataset dtest = nn::make_dataset(nn::Arch::sage, gtest);
    const std::uint64_t run_seed = opt.seed + static_cast<std::uint64_t>(fold);
    nn::TrainConfig tc = spec.train;
    tc.seed = run_seed;

    std::optional<nn::Network> encoder;
    if (std::find(opt.methods.begin(), opt.methods.end(), Method::ssl_ft) != opt.methods.end()) {
      std::vector<nn::GraphData> benign;
      for (std::size_t i = 0; i < dtrain.size(); ++i)
        if (dtrain.labels[i] == 0) benign.push_back(dtrain.graphs[i]);
      encoder = ssl::pretrain_encoder(benign, spec.ssl, tc).encoder;
    }

    std::vector<std::size_t> all(dtrain.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    for (std::size_t fi = 0; fi < opt.fractions.size(); ++fi) {
      const double f = opt.fractions[fi];
      const auto keep = eval::subsample(all, f, opt.seed, static_cast<std::uint64_t>(fold) * 1000 + fi);
      const nn::Dataset sub = dtrain.subset(keep);
      for (Method m : opt.methods) {
        SweepCell cell{f, fold, m, keep.size(), std::nullopt, false, {}};
        if (!both_classes(sub.labels)) {
          cell.flagged = true;
          cell.note = "single-class training subset";
        } else if (!both_classes(ytest)) {
          cell.flagged = true;
          cell.note = "single-class test fold";
        } else {
          const nn::TrainResult res = m == Method::supervised ? nn::train_supervised(sub, dval, tc)
                                                              : ssl::finetune(*encoder, sub, dval, spec.ssl, tc);
          cell.auroc = eval::auroc(nn::predict_scores(res.net, dtest), ytest);
        }
        rep.cells.push_back(std::move(cell));
      }
    }
  }

  for (double f : opt.fractions)
    for (Method m : opt.methods) {
      SweepRow row{f, m, 0, 0.0, 0.0, 0};
      std::vector<double> v;
      for (const SweepCell& c : rep.cells)
        if (c.method == m && c.fraction == f) {
          if (c.auroc)
            v.push_back(*c.auroc);
          else
            ++row.flagged;
        }
      row.n = v.size();
      if (!v.empty()) std::tie(row.mean, row.sd) = eval::mean_sd(v);
      rep.rows.push_back(row);
    }
  return rep;
}

void to_json(json& j, const GapReport& r) {
  json rows = json::array();
  for (const GapRow& g : r.rows)
    rows.push_back({{"seed", g.seed}, {"random_auroc", g.random_auroc}, {"task_auroc", g.task_auroc},
                    {"gap", g.random_auroc - g.task_auroc}});
  j = json{{"model", r.model},       {"mode", r.mode},         {"rows", std::move(rows)},
           {"random_mean", r.random_mean}, {"random_sd", r.random_sd}, {"task_mean", r.task_mean},
           {"task_sd", r.task_sd},   {"gap", r.gap}};
}

void to_json(json& j, const SweepReport& r) {
  json cells = json::array();
  for (const SweepCell& c : r.cells) {
    json o{{"fraction", c.fraction}, {"fold", c.fold},     {"method", method_name(c.method)},
           {"n_labeled", c.n_labeled}, {"flagged", c.flagged}, {"note", c.note}};
    o["auroc"] = c.auroc ? json(*c.auroc) : json(nullptr);
    cells.push_back(std::move(o));
  }
  json rows = json::array();
  for (const SweepRow& w : r.rows)
    rows.push_back({{"fraction", w.fraction}, {"method", method_name(w.method)}, {"n", w.n}, {"mean", w.mean},
                    {"sd", w.sd}, {"flagged", w.flagged}});
  j = json{{"protocol", std::string(eval::to_string(r.protocol))},
           {"folds", r.folds},
           {"seed", r.seed},
           {"validation", "1/8 of each fold's training part, fully labeled"},
           {"cells", std::move(cells)},
           {"rows", std::move(rows)}};
}

std::string format_gap_table(const GapReport& r) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-14s %-10s %-18s %-18s %-8s\n", "model", "mode", "random_split", "task_disjoint",
                "gap");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-14s %-10s %.3f +- %.3f      %.3f +- %.3f      %+.3f\n", r.model.c_str(),
                r.mode.c_str(), r.random_mean, r.random_sd, r.task_mean, r.task_sd, r.gap);
  out += buf;
  return out;
}

std::string format_sweep_table(const SweepReport& r) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-12s %-9s %-18s %-7s\n", "method", "fraction", "auroc", "flagged");
  out += buf;
  for (Method m : {Method::supervised, Method::ssl_ft})
    for (const SweepRow& w : r.rows) {
      if (w.method != m) continue;
      if (w.n > 0)
        std::snprintf(buf, sizeof buf, "%-12s %7.0f%%  %.3f +- %.3f      %zu\n", method_name(m).c_str(),
                      100.0 * w.fraction, w.mean, w.sd, w.flagged);
      else
        std::snprintf(buf, sizeof buf, "%-12s %7.0f%%  %-18s %zu\n", method_name(m).c_str(), 100.0 * w.fraction,
                      "n/a", w.flagged);
      out += buf;
    }
  return out;
}

std::string format_mode_table(std::span<const eval::ModeRow> rows) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-20s %6s %8s %8s\n", "mode", "n", "recall", "auroc");
  out += buf;
  for (const eval::ModeRow& r : rows) {
    if (r.auroc)
      std::snprintf(buf, sizeof buf, "%-20s %6zu %8.3f %8.3f\n", r.mode.c_str(), r.n, r.recall, *r.auroc);
    else
      std::snprintf(buf, sizeof buf, "%-20s %6zu %8.3f %8s\n", r.mode.c_str(), r.n, r.recall, "n/a");
    out += buf;
  }
  return out;
}

}  // namespace toolwatch::experiments
