#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

// Pooled-feature baselines. Labels are 0 = benign, 1 = attack.
namespace toolwatch::classical {

struct LabeledMatrix {
  Eigen::MatrixXd x;   // m x p
  std::vector<int> y;  // m
};

// Inverse-frequency weights w_c = m / (2 * count_c).
struct ClassWeights {
  double benign = 1.0;
  double attack = 1.0;
  double operator()(int label) const { return label == 1 ? attack : benign; }
};

// ValidationError unless both classes are present.
ClassWeights class_weights(std::span<const int> y);

enum class Kind { logreg, linear_svm, random_forest };

std::string_view to_string(Kind kind);
Kind kind_from_string(std::string_view s);

struct LinearParams {
  Eigen::VectorXd w;
  double b = 0.0;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // go left when x[feature] <= threshold
  int left = -1;
  int right = -1;
  double value = 0.0;  // weighted attack fraction at the node
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
};

struct ForestParams {
  std::vector<Tree> trees;
};

struct Model {
  Kind kind = Kind::logreg;
  std::size_t dim = 0;
  std::variant<LinearParams, ForestParams> params;
  std::string config;  // canonical JSON snapshot of the training options
};

struct LogregOptions {
  double c = 1.0;
  bool balanced = true;
  double tolerance = 1e-6;  // on the max-abs gradient, relative to the initial one
  int max_iterations = 1000;
  int memory = 10;
};

// Objective: sum_i w_i * log(1 + exp(-s_i (x_i.w + b))) + ||w||^2 / (2C), s_i = +-1.
// The bias is not regularized.
double logreg_objective(const LinearParams& params, const LabeledMatrix& data, const ClassWeights& weights,
                        double c);

// `objective_trace`, when given, receives the objective after every iteration.
Model train_logreg(const LabeledMatrix& data, const LogregOptions& options = {},
                   std::vector<double>* objective_trace = nullptr);

struct SvmOptions {
  double alpha = 1e-4;
  int epochs = 50;
  bool balanced = true;
  std::uint64_t seed = 0;
};

// Objective: mean_i w_i * max(0, 1 - s_i (x_i.w + b)) + alpha * ||w||^2.
double svm_objective(const LinearParams& params, const LabeledMatrix& data, const ClassWeights& weights,
                     double alpha);

// Epoch-based SGD with the "optimal" schedule eta_t = 1 / (alpha (t0 + t)).
// An epoch that raises the objective is rolled back (the step counter keeps
// advancing), so the recorded per-epoch objective never increases.
Model train_linear_svm(const LabeledMatrix& data, const SvmOptions& options = {},
                       std::vector<double>* objective_trace = nullptr);

struct ForestOptions {
  int n_trees = 200;
  bool balanced = true;
  std::uint64_t seed = 0;
  std::size_t min_samples_leaf = 1;
  std::optional<std::size_t> max_features;  // default floor(sqrt(p))
};

// Bootstrap CART trees with class-weighted Gini impurity.
Model train_random_forest(const LabeledMatrix& data, const ForestOptions& options = {});

// Higher = more attack-like. logreg: probability; linear_svm: raw decision
// value; random_forest: mean leaf attack fraction.
std::vector<double> predict_score(const Model& model, const Eigen::MatrixXd& x);

// Threshold that corresponds to "predict attack" for this kind's score scale.
double decision_threshold(Kind kind);

void to_json(nlohmann::json& j, const Model& model);
void from_json(const nlohmann::json& j, Model& model);

}  // namespace toolwatch::classical
