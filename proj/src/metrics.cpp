#include "toolwatch/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <nlohmann/json.hpp>

#include "toolwatch/error.hpp"

namespace toolwatch::eval {

namespace {

void check_sizes(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ValidationError("scores and labels differ in length");
}

std::vector<std::size_t> order_descending(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  check_sizes(scores, labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mann-Whitney U with midranks for ties.
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[idx[k]] == 1) {
        rank_sum += midrank;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("AUROC needs both classes");
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

double auprc(std::span<const double> scores, std::span<const int> labels) {
  check_sizes(scores, labels);
  const std::size_t n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (n_pos == 0) throw UndefinedMetricError("AUPRC needs at least one positive");
  const auto idx = order_descending(scores);
  double ap = 0.0, prev_recall = 0.0;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

std::vector<CurvePoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  check_sizes(scores, labels);
  const auto n_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const auto n_neg = static_cast<double>(labels.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("ROC curve needs both classes");
  const auto idx = order_descending(scores);
  std::vector<CurvePoint> pts{{INFINITY, 0.0, 0.0}};
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    pts.push_back({scores[idx[i]], fp / n_neg, tp / n_pos});
    i = j;
  }
  return pts;
}

std::vector<CurvePoint> pr_curve(std::span<const double> scores, std::span<const int> labels) {
  check_sizes(scores, labels);
  const auto n_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  if (n_pos == 0) throw UndefinedMetricError("PR curve needs at least one positive");
  const auto idx = order_descending(scores);
  std::vector<CurvePoint> pts;
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    pts.push_back({scores[idx[i]], tp / n_pos, tp / (tp + fp)});
    i = j;
  }
  return pts;
}

Confusion confusion_at(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_sizes(scores, labels);
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i] == 1) (predicted ? c.tp : c.fn) += 1;
    else (predicted ? c.fp : c.tn) += 1;
  }
  return c;
}

MetricsReport classification_metrics(std::span<const double> scores, std::span<const int> labels,
                                     double threshold) {
  MetricsReport r;
  r.threshold = threshold;
  r.confusion = confusion_at(scores, labels, threshold);
  const auto& c = r.confusion;
  const auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  r.precision = ratio(c.tp, c.tp + c.fp);
  r.recall = ratio(c.tp, c.tp + c.fn);
  r.fpr = ratio(c.fp, c.fp + c.tn);
  // Per-class F1 = 2TP / (2TP + FP + FN); a class with no support and no
  // predictions makes macro F1 undefined.
  const auto f1 = [&](std::size_t tp, std::size_t fp, std::size_t fn) { return ratio(2 * tp, 2 * tp + fp + fn); };
  const auto f1_attack = f1(c.tp, c.fp, c.fn);
  const auto f1_benign = f1(c.tn, c.fn, c.fp);
  if (f1_attack && f1_benign && c.tp + c.fn > 0 && c.tn + c.fp > 0)
    r.macro_f1 = 0.5 * (*f1_attack + *f1_benign);
  try {
    r.auroc = auroc(scores, labels);
  } catch (const UndefinedMetricError&) {
  }
  try {
    r.auprc = auprc(scores, labels);
  } catch (const UndefinedMetricError&) {
  }
  const std::pair<const char*, const std::optional<double>*> fields[] = {
      {"auroc", &r.auroc}, {"auprc", &r.auprc},   {"macro_f1", &r.macro_f1},
      {"precision", &r.precision}, {"recall", &r.recall}, {"fpr", &r.fpr}};
  for (const auto& [name, value] : fields)
    if (!value->has_value()) r.undefined.emplace_back(name);
  return r;
}

std::vector<ModeRow> per_mode_breakdown(std::span<const double> scores, std::span<const int> labels,
                                        std::span<const std::optional<AttackMode>> modes, double threshold) {
  check_sizes(scores, labels);
  if (modes.size() != scores.size()) throw ValidationError("modes and scores differ in length");
  std::vector<double> benign_scores;
  std::map<std::string, std::vector<double>> by_mode;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 0) {
      benign_scores.push_back(scores[i]);
    } else {
      by_mode[modes[i] ? modes[i]->to_string() : "unspecified"].push_back(scores[i]);
    }
  }
  std::vector<ModeRow> rows;
  for (const auto& [mode, attack_scores] : by_mode) {
    ModeRow row;
    row.mode = mode;
    row.n = attack_scores.size();
    row.recall = static_cast<double>(std::count_if(attack_scores.begin(), attack_scores.end(),
                                                   [&](double s) { return s >= threshold; })) /
                 static_cast<double>(row.n);
    if (!benign_scores.empty()) {
      std::vector<double> s(benign_scores);
      std::vector<int> y(benign_scores.size(), 0);
      s.insert(s.end(), attack_scores.begin(), attack_scores.end());
      y.insert(y.end(), attack_scores.size(), 1);
      row.auroc = auroc(s, y);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {
nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }
}  // namespace

void to_json(nlohmann::json& j, const ModeRow& r) {
  j = {{"mode", r.mode}, {"n", r.n}, {"recall", r.recall}, {"auroc", opt(r.auroc)}};
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = {{"auroc", opt(r.auroc)},
       {"auprc", opt(r.auprc)},
       {"macro_f1", opt(r.macro_f1)},
       {"precision", opt(r.precision)},
       {"recall", opt(r.recall)},
       {"fpr", opt(r.fpr)},
       {"confusion", {{"tp", r.confusion.tp}, {"fp", r.confusion.fp}, {"tn", r.confusion.tn}, {"fn", r.confusion.fn}}},
       {"threshold", r.threshold},
       {"per_mode", r.per_mode},
       {"seed", r.seed},
       {"protocol", r.protocol},
       {"undefined", r.undefined}};
}

std::pair<double, double> mean_sd(std::span<const double> values) {
  if (values.empty()) return {NAN, NAN};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / static_cast<double>(values.size()))};
}

}  // namespace toolwatch::eval
