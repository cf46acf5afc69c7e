#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "toolwatch/metrics.hpp"
#include "toolwatch/pipeline.hpp"
#include "toolwatch/splits.hpp"

// Experiment drivers: single split runs, leakage gap, label-efficiency sweep.
namespace toolwatch::experiments {

struct RunResult {
  eval::SplitSpec split;
  eval::MetricsReport report;  // on the test partition, with per-mode rows
  std::vector<double> scores;
  std::vector<int> labels;
  std::optional<double> best_val_auroc;
  pipeline::TrainedModel model;
};

// Split, featurize with the training vocabulary, fit, score the test part.
RunResult run_single(std::span<const Session> corpus, const pipeline::ModelSpec& spec, eval::Protocol protocol,
                     std::uint64_t seed, EmbeddingProvider* provider);

struct GapRow {
  std::uint64_t seed = 0;
  double random_auroc = 0.0;  // label-stratified
  double task_auroc = 0.0;    // task-disjoint
};

struct GapReport {
  std::string model;
  std::string mode;
  std::vector<GapRow> rows;
  double random_mean = 0.0, random_sd = 0.0;
  double task_mean = 0.0, task_sd = 0.0;
  double gap = 0.0;  // random_mean - task_mean
};

GapReport leakage_gap(std::span<const Session> corpus, const pipeline::ModelSpec& spec,
                      std::span<const std::uint64_t> seeds, EmbeddingProvider* provider);

enum class Method { supervised, ssl_ft };
std::string method_name(Method m);

struct SweepCell {
  double fraction = 1.0;
  int fold = 0;
  Method method = Method::supervised;
  std::size_t n_labeled = 0;
  std::optional<double> auroc;
  bool flagged = false;
  std::string note;
};

struct SweepRow {
  double fraction = 1.0;
  Method method = Method::supervised;
  std::size_t n = 0;  // unflagged folds
  double mean = 0.0, sd = 0.0;
  std::size_t flagged = 0;
};

struct SweepReport {
  eval::Protocol protocol = eval::Protocol::kfold_task;
  int folds = 5;
  std::uint64_t seed = 0;
  std::vector<SweepCell> cells;
  std::vector<SweepRow> rows;  // per (fraction, method)
  std::optional<double> row_mean(double fraction, Method method) const;
};

struct SweepOptions {
  std::vector<double> fractions{0.01, 0.05, 0.10, 0.25, 0.50, 1.00};
  int folds = 5;
  std::vector<Method> methods{Method::supervised, Method::ssl_ft};
  std::uint64_t seed = 42;
};

// Task-disjoint folds when every session has a task id, label-stratified
// otherwise. Validation is carved from each fold's training part and stays
// fully labeled; SSL pre-training sees every benign training graph.
SweepReport label_efficiency_sweep(std::span<const Session> corpus, const pipeline::ModelSpec& spec,
                                   const SweepOptions& options, EmbeddingProvider* provider);

void to_json(nlohmann::json& j, const GapReport& r);
void to_json(nlohmann::json& j, const SweepReport& r);

std::string format_gap_table(const GapReport& r);
std::string format_sweep_table(const SweepReport& r);
std::string format_mode_table(std::span<const eval::ModeRow> rows);

}  // namespace toolwatch::experiments
