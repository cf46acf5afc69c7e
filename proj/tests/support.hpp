#pragma once

// Fixtures and naive reference implementations shared by the test binaries.
// The oracles are written for clarity, not speed, and deliberately avoid the
// library's own helpers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "toolwatch/rng.hpp"
#include "toolwatch/session.hpp"

namespace twtest {

struct CallSpec {
  std::string tool;
  std::string args;
  std::string response;
};

inline toolwatch::Session make_session(std::string id, toolwatch::Label label, const std::vector<CallSpec>& calls,
                                       std::optional<std::string> task = std::nullopt,
                                       std::optional<toolwatch::AttackMode> mode = std::nullopt) {
  toolwatch::Session s;
  s.session_id = std::move(id);
  s.source = "test";
  s.task_id = std::move(task);
  s.label = label;
  if (label == toolwatch::Label::attack) s.attack_mode = mode.value_or(toolwatch::AttackMode::combined());
  for (std::size_t i = 0; i < calls.size(); ++i)
    s.calls.push_back(toolwatch::make_tool_call(i, calls[i].tool, calls[i].args, calls[i].response));
  return s;
}

// ASCII-only splitting is enough for the generated test corpora.
inline std::vector<std::string> ascii_tokens(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string t;
  while (in >> t) out.push_back(t);
  return out;
}

// Data-flow rule written out directly: prefix window 50, first 5 tokens,
// token length > 4, responses over 1000 characters ignored.
inline std::set<std::pair<std::size_t, std::size_t>> naive_data_flow(const std::vector<toolwatch::ToolCall>& calls) {
  std::set<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < calls.size(); ++i) {
    const std::string& r = calls[i].response_text;
    if (r.size() > 1000) continue;
    if (ascii_tokens(r).empty()) continue;
    const std::string prefix = r.substr(0, std::min<std::size_t>(50, r.size()));
    auto toks = ascii_tokens(r);
    if (toks.size() > 5) toks.resize(5);
    for (std::size_t j = i + 1; j < calls.size(); ++j) {
      const std::string& a = calls[j].args_text;
      bool hit = a.find(prefix) != std::string::npos;
      for (const auto& t : toks)
        if (t.size() > 4 && a.find(t) != std::string::npos) hit = true;
      if (hit) {
        out.insert({i, j});
        out.insert({j, i});
      }
    }
  }
  return out;
}

// Sessions over a tiny alphabet so that prefix and token matches are common.
inline toolwatch::Session random_session(toolwatch::Rng& rng, std::size_t id) {
  static const std::vector<std::string> words{"alpha", "beta", "gamma", "ok", "id_42", "file_12345",
                                              "x", "delta9", "yes", "epsilonz"};
  auto phrase = [&](std::size_t n) {
    std::string s;
    for (std::size_t k = 0; k < n; ++k) {
      if (k) s += rng.bernoulli(0.2) ? "\n" : " ";
      s += words[rng.below(words.size())];
    }
    return s;
  };
  const std::size_t n = 1 + rng.below(12);
  std::vector<CallSpec> calls;
  for (std::size_t i = 0; i < n; ++i) {
    std::string resp;
    const double u = rng.uniform();
    if (u < 0.05) resp = "";
    else if (u < 0.08) resp = "   ";
    else if (u < 0.12) resp = std::string(1001 - 5, 'q') + " " + phrase(1).substr(0, 3) + "zz";
    else resp = phrase(1 + rng.below(8));
    std::string args = "{\"q\":\"" + phrase(1 + rng.below(4));
    // Sometimes quote an earlier response prefix verbatim.
    if (i > 0 && rng.bernoulli(0.3)) {
      const std::string& prev = calls[rng.below(i)].response;
      args += " " + prev.substr(0, std::min<std::size_t>(prev.size(), 50 + rng.below(3)));
    }
    args += "\"}";
    calls.push_back({"tool" + std::to_string(rng.below(4)), args, resp});
  }
  return make_session("rand-" + std::to_string(id), toolwatch::Label::benign, calls);
}

// Fraction of (attack, benign) pairs ordered correctly, ties 0.5.
inline double naive_auroc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0;
  double pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1;
      if (s[i] > s[j]) num += 1;
      else if (s[i] == s[j]) num += 0.5;
    }
  return num / pairs;
}

// Average precision by sweeping every distinct score as a threshold.
inline double naive_auprc(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<double> th(s.begin(), s.end());
  std::sort(th.begin(), th.end(), std::greater<>());
  th.erase(std::unique(th.begin(), th.end()), th.end());
  double pos = 0;
  for (int v : y) pos += v;
  double ap = 0, prev_recall = 0;
  for (double t : th) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= t) (y[i] ? tp : fp) += 1;
    const double recall = tp / pos;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
  }
  return ap;
}

// NT-Xent by direct summation over every anchor and every candidate.
inline double naive_nt_xent(const Eigen::MatrixXd& z, const std::vector<std::size_t>& partner, double tau) {
  const auto m = static_cast<std::size_t>(z.rows());
  auto cosine = [&](std::size_t a, std::size_t b) {
    double dot = 0, na = 0, nb = 0;
    for (Eigen::Index k = 0; k < z.cols(); ++k) {
      dot += z(a, k) * z(b, k);
      na += z(a, k) * z(a, k);
      nb += z(b, k) * z(b, k);
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };
  double total = 0;
  for (std::size_t a = 0; a < m; ++a) {
    double denom = 0;
    for (std::size_t c = 0; c < m; ++c)
      if (c != a) denom += std::exp(cosine(a, c) / tau);
    total += -std::log(std::exp(cosine(a, partner[a]) / tau) / denom);
  }
  return total / static_cast<double>(m);
}

// Per-test scratch directory under the system temp dir, wiped on creation.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("toolwatch-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace twtest
