#include "toolwatch/classical.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

#include <nlohmann/json.hpp>

#include "toolwatch/error.hpp"
#include "toolwatch/rng.hpp"
#include "toolwatch/session.hpp"

namespace toolwatch::classical {

using nlohmann::json;

ClassWeights class_weights(std::span<const int> y) {
  const auto pos = static_cast<double>(std::count(y.begin(), y.end(), 1));
  const auto m = static_cast<double>(y.size());
  const double neg = m - pos;
  if (pos == 0 || neg == 0) throw ValidationError("class weights need both classes present");
  return {m / (2.0 * neg), m / (2.0 * pos)};
}

std::string_view to_string(Kind kind) {
  switch (kind) {
    case Kind::logreg: return "logreg";
    case Kind::linear_svm: return "linear_svm";
    case Kind::random_forest: return "random_forest";
  }
  return "unknown";
}

Kind kind_from_string(std::string_view s) {
  if (s == "logreg") return Kind::logreg;
  if (s == "linear_svm") return Kind::linear_svm;
  if (s == "random_forest") return Kind::random_forest;
  throw ConfigError("unknown classical model kind \"" + std::string(s) + "\"");
}

namespace {

void check_training_data(const LabeledMatrix& d) {
  if (static_cast<std::size_t>(d.x.rows()) != d.y.size())
    throw ValidationError("feature rows and labels differ in count");
  if (d.y.size() < 2) throw ValidationError("training needs at least two samples");
  for (int v : d.y)
    if (v != 0 && v != 1) throw ValidationError("labels must be 0 or 1");
  if (!d.x.allFinite()) throw ValidationError("training features contain non-finite values");
}

Eigen::VectorXd sample_weights(const LabeledMatrix& d, const ClassWeights& cw) {
  Eigen::VectorXd w(static_cast<Eigen::Index>(d.y.size()));
  for (std::size_t i = 0; i < d.y.size(); ++i) w[static_cast<Eigen::Index>(i)] = cw(d.y[i]);
  return w;
}

Eigen::VectorXd signs(const LabeledMatrix& d) {
  Eigen::VectorXd s(static_cast<Eigen::Index>(d.y.size()));
  for (std::size_t i = 0; i < d.y.size(); ++i) s[static_cast<Eigen::Index>(i)] = d.y[i] == 1 ? 1.0 : -1.0;
  return s;
}

double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }
double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

// theta = [w; b]
struct LogregProblem {
  const Eigen::MatrixXd& x;
  Eigen::VectorXd s;
  Eigen::VectorXd sw;
  double c;

  double value_and_gradient(const Eigen::VectorXd& theta, Eigen::VectorXd* grad) const {
    const Eigen::Index p = x.cols();
    const auto w = theta.head(p);
    const double b = theta[p];
    const Eigen::VectorXd z = (x * w).array() + b;
    double f = w.squaredNorm() / (2.0 * c);
    Eigen::VectorXd coef(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double margin = s[i] * z[i];
      f += sw[i] * softplus(-margin);
      coef[i] = -sw[i] * s[i] * sigmoid(-margin);
    }
    if (grad) {
      grad->resize(p + 1);
      grad->head(p) = x.transpose() * coef + w / c;
      (*grad)[p] = coef.sum();
    }
    return f;
  }
};

}  // namespace

double logreg_objective(const LinearParams& params, const LabeledMatrix& data, const ClassWeights& weights,
                        double c) {
  LogregProblem prob{data.x, signs(data), sample_weights(data, weights), c};
  Eigen::VectorXd theta(params.w.size() + 1);
  theta << params.w, params.b;
  return prob.value_and_gradient(theta, nullptr);
}

Model train_logreg(const LabeledMatrix& data, const LogregOptions& opt, std::vector<double>* trace) {
  check_training_data(data);
  if (opt.c <= 0) throw ConfigError("logreg C must be positive");
  const ClassWeights cw = opt.balanced ? class_weights(data.y) : ClassWeights{};
  if (!opt.balanced) class_weights(data.y);  // still requires both classes
  const LogregProblem prob{data.x, signs(data), sample_weights(data, cw), opt.c};
  const Eigen::Index n = data.x.cols() + 1;

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd g;
  double f = prob.value_and_gradient(theta, &g);
  const double g0 = std::max(1.0, g.lpNorm<Eigen::Infinity>());
  std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> memory;  // (s, y)
  bool converged = g.lpNorm<Eigen::Infinity>() <= opt.tolerance * g0;

  for (int iter = 0; iter < opt.max_iterations && !converged; ++iter) {
    // Two-loop recursion.
    Eigen::VectorXd q = g;
    std::vector<double> alpha(memory.size());
    for (std::size_t k = memory.size(); k-- > 0;) {
      const auto& [sk, yk] = memory[k];
      alpha[k] = sk.dot(q) / yk.dot(sk);
      q -= alpha[k] * yk;
    }
    double gamma = 1.0 / std::max(1.0, g.norm());
    if (!memory.empty()) gamma = memory.back().first.dot(memory.back().second) / memory.back().second.squaredNorm();
    Eigen::VectorXd dir = gamma * q;
    for (std::size_t k = 0; k < memory.size(); ++k) {
      const auto& [sk, yk] = memory[k];
      const double beta = yk.dot(dir) / yk.dot(sk);
      dir += sk * (alpha[k] - beta);
    }
    dir = -dir;
    double slope = g.dot(dir);
    if (slope >= 0) {
      memory.clear();
      dir = -g / std::max(1.0, g.norm());
      slope = g.dot(dir);
    }
    // Backtracking Armijo.
    double step = 1.0;
    Eigen::VectorXd next, g_next;
    double f_next = f;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      next = theta + step * dir;
      f_next = prob.value_and_gradient(next, &g_next);
      if (std::isfinite(f_next) && f_next <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (g.lpNorm<Eigen::Infinity>() <= 1e2 * opt.tolerance * g0) {
        converged = true;  // at machine precision of the objective
        break;
      }
      throw ConvergenceError("logistic regression line search failed", g.lpNorm<Eigen::Infinity>());
    }
    Eigen::VectorXd sk = next - theta;
    Eigen::VectorXd yk = g_next - g;
    if (sk.dot(yk) > 1e-12 * sk.norm() * yk.norm()) {
      memory.emplace_back(std::move(sk), std::move(yk));
      if (static_cast<int>(memory.size()) > opt.memory) memory.pop_front();
    }
    theta = std::move(next);
    g = std::move(g_next);
    f = f_next;
    if (trace) trace->push_back(f);
    converged = g.lpNorm<Eigen::Infinity>() <= opt.tolerance * g0;
  }
  if (!converged)
    throw ConvergenceError("logistic regression did not converge in " + std::to_string(opt.max_iterations) +
                               " iterations",
                           g.lpNorm<Eigen::Infinity>());

  Model model;
  model.kind = Kind::logreg;
  model.dim = static_cast<std::size_t>(data.x.cols());
  model.params = LinearParams{theta.head(data.x.cols()), theta[data.x.cols()]};
  model.config = json{{"c", opt.c}, {"balanced", opt.balanced}, {"tolerance", opt.tolerance},
                      {"max_iterations", opt.max_iterations}, {"memory", opt.memory}}
                     .dump();
  return model;
}

double svm_objective(const LinearParams& p, const LabeledMatrix& data, const ClassWeights& weights, double alpha) {
  const Eigen::VectorXd z = (data.x * p.w).array() + p.b;
  double loss = 0.0;
  for (std::size_t i = 0; i < data.y.size(); ++i) {
    const double s = data.y[i] == 1 ? 1.0 : -1.0;
    loss += weights(data.y[i]) * std::max(0.0, 1.0 - s * z[static_cast<Eigen::Index>(i)]);
  }
  return loss / static_cast<double>(data.y.size()) + alpha * p.w.squaredNorm();
}

Model train_linear_svm(const LabeledMatrix& data, const SvmOptions& opt, std::vector<double>* trace) {
  check_training_data(data);
  if (opt.alpha <= 0) throw ConfigError("SVM alpha must be positive");
  const ClassWeights cw = opt.balanced ? class_weights(data.y) : ClassWeights{};
  if (!opt.balanced) class_weights(data.y);

  // Bottou's initial step heuristic for the hinge loss.
  const double typw = std::sqrt(1.0 / std::sqrt(opt.alpha));
  const double eta0 = typw;
  const double t0 = 1.0 / (eta0 * opt.alpha);

  const Eigen::Index p = data.x.cols();
  LinearParams cur{Eigen::VectorXd::Zero(p), 0.0};
  double best = svm_objective(cur, data, cw, opt.alpha);
  Rng rng = substream(opt.seed, "shuffle");
  std::vector<std::size_t> order(data.y.size());
  std::iota(order.begin(), order.end(), 0);
  double t = 0.0;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    LinearParams cand = cur;
    rng.shuffle(order);
    for (std::size_t i : order) {
      const double eta = 1.0 / (opt.alpha * (t0 + t));
      const double s = data.y[i] == 1 ? 1.0 : -1.0;
      const auto row = data.x.row(static_cast<Eigen::Index>(i));
      const double margin = s * (row.dot(cand.w) + cand.b);
      cand.w *= 1.0 - 2.0 * eta * opt.alpha;
      if (margin < 1.0) {
        const double step = eta * cw(data.y[i]) * s;
        cand.w += step * row.transpose();
        cand.b += step;
      }
      t += 1.0;
    }
    const double obj = svm_objective(cand, data, cw, opt.alpha);
    if (obj <= best) {
      cur = std::move(cand);
      best = obj;
    }
    if (trace) trace->push_back(best);
  }

  Model model;
  model.kind = Kind::linear_svm;
  model.dim = static_cast<std::size_t>(p);
  model.params = std::move(cur);
  model.config = json{{"alpha", opt.alpha}, {"epochs", opt.epochs}, {"balanced", opt.balanced}, {"seed", opt.seed}}
                     .dump();
  return model;
}

namespace {

struct Sample {
  std::size_t row;
  double weight;  // bootstrap multiplicity x class weight
  int label;
};

double gini(double w_pos, double w_total) {
  if (w_total <= 0) return 0.0;
  const double p = w_pos / w_total;
  return 2.0 * p * (1.0 - p);
}

class TreeBuilder {
 public:
  TreeBuilder(const Eigen::MatrixXd& x, std::size_t max_features, std::size_t min_leaf, Rng& rng)
      : x_(x), max_features_(max_features), min_leaf_(min_leaf), rng_(rng) {}

  Tree build(std::vector<Sample> samples) {
    Tree tree;
    grow(tree, samples);
    return tree;
  }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double gain = -1.0;
    std::size_t left_count = 0;
  };

  int grow(Tree& tree, std::vector<Sample>& samples) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    double w_total = 0, w_pos = 0;
    for (const Sample& s : samples) {
      w_total += s.weight;
      if (s.label == 1) w_pos += s.weight;
    }
    tree.nodes[static_cast<std::size_t>(id)].value = w_total > 0 ? w_pos / w_total : 0.0;
    if (w_pos == 0 || w_pos == w_total || samples.size() < 2 * min_leaf_) return id;

    const Split split = best_split(samples, w_pos, w_total);
    if (split.feature < 0) return id;

    const auto f = static_cast<Eigen::Index>(split.feature);
    auto mid = std::stable_partition(samples.begin(), samples.end(), [&](const Sample& s) {
      return x_(static_cast<Eigen::Index>(s.row), f) <= split.threshold;
    });
    std::vector<Sample> left(samples.begin(), mid), right(mid, samples.end());
    samples.clear();
    samples.shrink_to_fit();
    const int l = grow(tree, left);
    const int r = grow(tree, right);
    TreeNode& node = tree.nodes[static_cast<std::size_t>(id)];
    node.feature = split.feature;
    node.threshold = split.threshold;
    node.left = l;
    node.right = r;
    return id;
  }

  Split best_split(const std::vector<Sample>& samples, double w_pos, double w_total) {
    const std::size_t p = static_cast<std::size_t>(x_.cols());
    std::vector<std::size_t> features(p);
    std::iota(features.begin(), features.end(), 0);
    const double parent = w_total * gini(w_pos, w_total);
    Split best;
    std::vector<std::pair<double, const Sample*>> vals(samples.size());
    std::size_t visited = 0;
    for (std::size_t k = 0; k < p; ++k) {
      // Lazy Fisher-Yates: draw the k-th feature without replacement.
      std::swap(features[k], features[k + rng_.below(p - k)]);
      if (visited >= max_features_ && best.feature >= 0) break;
      ++visited;
      const auto f = static_cast<Eigen::Index>(features[k]);
      for (std::size_t i = 0; i < samples.size(); ++i)
        vals[i] = {x_(static_cast<Eigen::Index>(samples[i].row), f), &samples[i]};
      std::sort(vals.begin(), vals.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      if (vals.front().first == vals.back().first) continue;
      double lw = 0, lpos = 0;
      for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
        lw += vals[i].second->weight;
        if (vals[i].second->label == 1) lpos += vals[i].second->weight;
        if (vals[i].first == vals[i + 1].first) continue;
        const std::size_t left_count = i + 1;
        if (left_count < min_leaf_ || vals.size() - left_count < min_leaf_) continue;
        const double rw = w_total - lw, rpos = w_pos - lpos;
        const double gain = parent - lw * gini(lpos, lw) - rw * gini(rpos, rw);
        if (gain > best.gain) {
          double thr = 0.5 * (vals[i].first + vals[i + 1].first);
          if (thr >= vals[i + 1].first) thr = vals[i].first;
          best = {static_cast<int>(f), thr, gain, left_count};
        }
      }
    }
    return best;
  }

  const Eigen::MatrixXd& x_;
  std::size_t max_features_;
  std::size_t min_leaf_;
  Rng& rng_;
};

}  // namespace

Model train_random_forest(const LabeledMatrix& data, const ForestOptions& opt) {
  check_training_data(data);
  if (opt.n_trees <= 0) throw ConfigError("random forest needs at least one tree");
  const ClassWeights cw = opt.balanced ? class_weights(data.y) : ClassWeights{};
  if (!opt.balanced) class_weights(data.y);
  const std::size_t p = static_cast<std::size_t>(data.x.cols());
  const std::size_t mtry = std::clamp<std::size_t>(
      opt.max_features.value_or(static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(p))))), 1, p);
  const std::size_t m = data.y.size();

  ForestParams forest;
  forest.trees.reserve(static_cast<std::size_t>(opt.n_trees));
  for (int t = 0; t < opt.n_trees; ++t) {
    Rng rng = substream(opt.seed, "forest", static_cast<std::uint64_t>(t));
    std::vector<std::size_t> counts(m, 0);
    for (std::size_t k = 0; k < m; ++k) ++counts[rng.below(m)];
    std::vector<Sample> samples;
    for (std::size_t i = 0; i < m; ++i)
      if (counts[i] > 0) samples.push_back({i, static_cast<double>(counts[i]) * cw(data.y[i]), data.y[i]});
    TreeBuilder builder(data.x, mtry, std::max<std::size_t>(1, opt.min_samples_leaf), rng);
    forest.trees.push_back(builder.build(std::move(samples)));
  }

  Model model;
  model.kind = Kind::random_forest;
  model.dim = p;
  model.params = std::move(forest);
  model.config = json{{"n_trees", opt.n_trees}, {"balanced", opt.balanced}, {"seed", opt.seed},
                      {"min_samples_leaf", opt.min_samples_leaf}, {"max_features", mtry}}
                     .dump();
  return model;
}

std::vector<double> predict_score(const Model& model, const Eigen::MatrixXd& x) {
  if (x.rows() == 0) return {};
  if (static_cast<std::size_t>(x.cols()) != model.dim)
    throw ValidationError("feature dimension " + std::to_string(x.cols()) + " does not match model dimension " +
                          std::to_string(model.dim));
  std::vector<double> out(static_cast<std::size_t>(x.rows()));
  if (const auto* lin = std::get_if<LinearParams>(&model.params)) {
    const Eigen::VectorXd z = (x * lin->w).array() + lin->b;
    for (Eigen::Index i = 0; i < z.size(); ++i)
      out[static_cast<std::size_t>(i)] = model.kind == Kind::logreg ? sigmoid(z[i]) : z[i];
    return out;
  }
  const auto& forest = std::get<ForestParams>(model.params);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double sum = 0.0;
    for (const Tree& tree : forest.trees) {
      int at = 0;
      while (tree.nodes[static_cast<std::size_t>(at)].feature >= 0) {
        const TreeNode& n = tree.nodes[static_cast<std::size_t>(at)];
        at = x(i, n.feature) <= n.threshold ? n.left : n.right;
      }
      sum += tree.nodes[static_cast<std::size_t>(at)].value;
    }
    out[static_cast<std::size_t>(i)] = sum / static_cast<double>(forest.trees.size());
  }
  return out;
}

double decision_threshold(Kind kind) { return kind == Kind::linear_svm ? 0.0 : 0.5; }

void to_json(json& j, const Model& model) {
  j = json{{"kind", std::string(to_string(model.kind))},
           {"dim", model.dim},
           {"config", json::parse(model.config.empty() ? "{}" : model.config)}};
  if (const auto* lin = std::get_if<LinearParams>(&model.params)) {
    j["w"] = std::vector<double>(lin->w.data(), lin->w.data() + lin->w.size());
    j["b"] = lin->b;
  } else {
    json trees = json::array();
    for (const Tree& t : std::get<ForestParams>(model.params).trees) {
      json nodes = json::array();
      for (const TreeNode& n : t.nodes) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
      trees.push_back(std::move(nodes));
    }
    j["trees"] = std::move(trees);
  }
}

void from_json(const json& j, Model& model) {
  model.kind = kind_from_string(j.at("kind").get<std::string>());
  model.dim = j.at("dim").get<std::size_t>();
  model.config = canonical_json(j.value("config", json::object()));
  if (model.kind == Kind::random_forest) {
    ForestParams forest;
    for (const json& t : j.at("trees")) {
      Tree tree;
      for (const json& n : t)
        tree.nodes.push_back({n[0].get<int>(), n[1].get<double>(), n[2].get<int>(), n[3].get<int>(), n[4].get<double>()});
      forest.trees.push_back(std::move(tree));
    }
    model.params = std::move(forest);
  } else {
    const auto w = j.at("w").get<std::vector<double>>();
    if (w.size() != model.dim) throw ValidationError("linear model weight length does not match dim");
    model.params = LinearParams{Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size())),
                                j.at("b").get<double>()};
  }
}

}  // namespace toolwatch::classical
