#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "toolwatch/session.hpp"

// Binary detection metrics. Attack (label 1) is the positive class everywhere.
namespace toolwatch::eval {

// Probability that a random attack outscores a random benign session, ties 0.5.
// UndefinedMetricError unless both classes are present.
double auroc(std::span<const double> scores, std::span<const int> labels);

// Average precision: sum over descending distinct thresholds of (R_k - R_{k-1}) * P_k.
// UndefinedMetricError without positives.
double auprc(std::span<const double> scores, std::span<const int> labels);

struct CurvePoint {
  double threshold;
  double x;  // FPR (ROC) or recall (PR)
  double y;  // TPR (ROC) or precision (PR)
};
std::vector<CurvePoint> roc_curve(std::span<const double> scores, std::span<const int> labels);
std::vector<CurvePoint> pr_curve(std::span<const double> scores, std::span<const int> labels);

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  bool operator==(const Confusion&) const = default;
};

// Predicted attack when score >= threshold.
Confusion confusion_at(std::span<const double> scores, std::span<const int> labels, double threshold);

struct ModeRow {
  std::string mode;
  std::size_t n = 0;
  double recall = 0.0;
  std::optional<double> auroc;  // against every benign session of the fold
};

// Metric fields are empty when undefined for the input; their names are
// listed in `undefined`.
struct MetricsReport {
  std::optional<double> auroc, auprc, macro_f1, precision, recall, fpr;
  Confusion confusion;
  double threshold = 0.5;
  std::vector<ModeRow> per_mode;
  std::uint64_t seed = 0;
  std::string protocol;
  std::vector<std::string> undefined;
};

MetricsReport classification_metrics(std::span<const double> scores, std::span<const int> labels,
                                     double threshold = 0.5);

// Rows ordered by mode name; modes with no attack sessions are absent.
std::vector<ModeRow> per_mode_breakdown(std::span<const double> scores, std::span<const int> labels,
                                        std::span<const std::optional<AttackMode>> modes,
                                        double threshold = 0.5);

void to_json(nlohmann::json& j, const MetricsReport& r);
void to_json(nlohmann::json& j, const ModeRow& r);

// Population mean and standard deviation (ddof = 0).
std::pair<double, double> mean_sd(std::span<const double> values);

}  // namespace toolwatch::eval
