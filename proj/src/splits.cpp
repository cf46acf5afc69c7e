#include "toolwatch/splits.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "toolwatch/error.hpp"
#include "toolwatch/rng.hpp"

namespace toolwatch::eval {

using nlohmann::json;

std::string_view to_string(Protocol p) {
  switch (p) {
    case Protocol::task_stratified: return "task_stratified";
    case Protocol::label_stratified: return "label_stratified";
    case Protocol::kfold_task: return "kfold_task";
    case Protocol::kfold_label: return "kfold_label";
  }
  return "unknown";
}

Protocol protocol_from_string(std::string_view s) {
  if (s == "task_stratified") return Protocol::task_stratified;
  if (s == "label_stratified") return Protocol::label_stratified;
  if (s == "kfold_task") return Protocol::kfold_task;
  if (s == "kfold_label") return Protocol::kfold_label;
  throw ConfigError("unknown protocol \"" + std::string(s) + "\"");
}

std::array<std::size_t, 3> apportion(std::size_t units, const Ratios& r) {
  const std::array<double, 3> ratio{r.train, r.val, r.test};
  const double total = ratio[0] + ratio[1] + ratio[2];
  for (double x : ratio)
    if (!(x >= 0) || !(total > 0)) throw ConfigError("split ratios must be non-negative with a positive sum");
  std::array<std::size_t, 3> out{};
  std::array<double, 3> frac{};
  std::size_t used = 0;
  for (int k = 0; k < 3; ++k) {
    const double q = ratio[static_cast<std::size_t>(k)] / total * static_cast<double>(units);
    // Guard against quotas like 6.9999999999 that are integers in exact arithmetic.
    const double fl = std::floor(q + 1e-9);
    out[static_cast<std::size_t>(k)] = static_cast<std::size_t>(fl);
    frac[static_cast<std::size_t>(k)] = std::max(0.0, q - fl);
    used += out[static_cast<std::size_t>(k)];
  }
  std::array<int, 3> order{2, 1, 0};  // tie preference: test, val, train
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return frac[static_cast<std::size_t>(a)] > frac[static_cast<std::size_t>(b)] + 1e-12;
  });
  for (std::size_t k = 0; used < units; ++k, ++used) ++out[static_cast<std::size_t>(order[k % 3])];
  return out;
}

namespace {

template <typename T>
void cut(const std::vector<T>& shuffled, const Ratios& r, std::vector<T>& a, std::vector<T>& b, std::vector<T>& c) {
  const auto sizes = apportion(shuffled.size(), r);
  for (std::size_t i = 0; i < shuffled.size(); ++i) {
    if (i < sizes[0])
      a.push_back(shuffled[i]);
    else if (i < sizes[0] + sizes[1])
      b.push_back(shuffled[i]);
    else
      c.push_back(shuffled[i]);
  }
}

std::vector<std::string> sorted_tasks(std::span<const Session> sessions) {
  std::set<std::string> tasks;
  for (const Session& s : sessions) {
    if (!s.task_id)
      throw ValidationError("session " + s.session_id +
                            " has no task_id; use the label_stratified protocol for this corpus");
    tasks.insert(*s.task_id);
  }
  return {tasks.begin(), tasks.end()};
}

// Session ids per label, sorted.
std::array<std::vector<std::string>, 2> ids_by_label(std::span<const Session> sessions) {
  std::array<std::vector<std::string>, 2> out;
  for (const Session& s : sessions) out[s.label == Label::attack ? 1 : 0].push_back(s.session_id);
  for (auto& v : out) std::sort(v.begin(), v.end());
  if (out[0].empty() || out[1].empty()) throw ValidationError("label-stratified splitting needs both labels");
  return out;
}

void sort_all(SplitSpec& s) {
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.test.begin(), s.test.end());
}

}  // namespace

SplitSpec task_stratified_split(std::span<const Session> sessions, std::uint64_t seed, const Ratios& ratios) {
  std::vector<std::string> tasks = sorted_tasks(sessions);
  Rng rng = substream(seed, "split");
  rng.shuffle(tasks);
  std::vector<std::string> tr, va, te;
  cut(tasks, ratios, tr, va, te);
  const std::set<std::string> str(tr.begin(), tr.end()), sva(va.begin(), va.end());
  SplitSpec spec{Protocol::task_stratified, seed, {}, {}, {}, 0, {}};
  for (const Session& s : sessions) {
    auto& dst = str.contains(*s.task_id) ? spec.train : sva.contains(*s.task_id) ? spec.val : spec.test;
    dst.push_back(s.session_id);
  }
  sort_all(spec);
  return spec;
}

SplitSpec label_stratified_split(std::span<const Session> sessions, std::uint64_t seed, const Ratios& ratios) {
  auto by_label = ids_by_label(sessions);
  Rng rng = substream(seed, "split");
  SplitSpec spec{Protocol::label_stratified, seed, {}, {}, {}, 0, {}};
  for (auto& ids : by_label) {
    rng.shuffle(ids);
    cut(ids, ratios, spec.train, spec.val, spec.test);
  }
  sort_all(spec);
  return spec;
}

SplitSpec kfold_split(std::span<const Session> sessions, Protocol protocol, int folds, std::uint64_t seed) {
  if (folds < 2) throw ConfigError("k-fold splitting needs at least two folds");
  SplitSpec spec{protocol, seed, {}, {}, {}, folds, {}};
  Rng rng = substream(seed, "split");
  if (protocol == Protocol::kfold_task) {
    std::vector<std::string> tasks = sorted_tasks(sessions);
    if (tasks.size() < static_cast<std::size_t>(folds)) throw ValidationError("fewer tasks than folds");
    rng.shuffle(tasks);
    std::unordered_map<std::string, int> task_fold;
    for (std::size_t i = 0; i < tasks.size(); ++i) task_fold[tasks[i]] = static_cast<int>(i % static_cast<std::size_t>(folds));
    for (const Session& s : sessions) spec.fold_of[s.session_id] = task_fold.at(*s.task_id);
  } else if (protocol == Protocol::kfold_label) {
    auto by_label = ids_by_label(sessions);
    for (auto& ids : by_label) {
      rng.shuffle(ids);
      for (std::size_t i = 0; i < ids.size(); ++i) spec.fold_of[ids[i]] = static_cast<int>(i % static_cast<std::size_t>(folds));
    }
  } else {
    throw ConfigError("kfold_split needs a k-fold protocol");
  }
  return spec;
}

SplitSpec make_split(std::span<const Session> sessions, Protocol protocol, std::uint64_t seed) {
  switch (protocol) {
    case Protocol::task_stratified: return task_stratified_split(sessions, seed);
    case Protocol::label_stratified: return label_stratified_split(sessions, seed);
    default: return kfold_split(sessions, protocol, 5, seed);
  }
}

Partition resolve(const SplitSpec& spec, std::span<const Session> sessions) {
  if (spec.n_folds > 0) throw ConfigError("k-fold split specs are resolved per fold");
  std::unordered_map<std::string, int> where;
  const std::vector<std::string>* parts[3] = {&spec.train, &spec.val, &spec.test};
  for (int k = 0; k < 3; ++k)
    for (const std::string& id : *parts[k])
      if (!where.emplace(id, k).second) throw ValidationError("split assigns session " + id + " twice");
  if (where.size() != sessions.size()) throw ValidationError("split does not cover the corpus exactly");
  Partition p;
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    const auto it = where.find(sessions[i].session_id);
    if (it == where.end()) throw ValidationError("session " + sessions[i].session_id + " is not in the split");
    (it->second == 0 ? p.train : it->second == 1 ? p.val : p.test).push_back(i);
  }
  return p;
}

Partition fold_partition(const SplitSpec& spec, std::span<const Session> sessions, int fold) {
  if (spec.n_folds <= 0) throw ConfigError("not a k-fold split");
  if (fold < 0 || fold >= spec.n_folds) throw ConfigError("fold index out of range");
  if (spec.fold_of.size() != sessions.size()) throw ValidationError("fold map does not cover the corpus exactly");
  Partition p;
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    const auto it = spec.fold_of.find(sessions[i].session_id);
    if (it == spec.fold_of.end()) throw ValidationError("session " + sessions[i].session_id + " is not in the fold map");
    (it->second == fold ? p.test : rest).push_back(i);
  }
  Rng rng = substream(spec.seed, "split", static_cast<std::uint64_t>(fold) + 1);
  std::vector<bool> is_val(sessions.size(), false);
  if (spec.protocol == Protocol::kfold_task) {
    std::map<std::string, std::vector<std::size_t>> by_task;
    for (std::size_t i : rest) by_task[*sessions[i].task_id].push_back(i);
    std::vector<std::string> tasks;
    for (const auto& [t, _] : by_task) tasks.push_back(t);
    rng.shuffle(tasks);
    const std::size_t target = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(rest.size() / 8.0)));
    std::size_t taken = 0;
    bool seen[2] = {false, false};
    for (std::size_t k = 0; k + 1 < tasks.size() && (taken < target || !(seen[0] && seen[1])); ++k) {
      for (std::size_t i : by_task[tasks[k]]) {
        is_val[i] = true;
        seen[sessions[i].label == Label::attack ? 1 : 0] = true;
        ++taken;
      }
    }
  } else {
    std::array<std::vector<std::size_t>, 2> by_label;
    for (std::size_t i : rest) by_label[sessions[i].label == Label::attack ? 1 : 0].push_back(i);
    for (auto& ids : by_label) {
      rng.shuffle(ids);
      const std::size_t n_val = ids.size() < 2 ? 0 : std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(ids.size() / 8.0)));
      for (std::size_t k = 0; k < n_val; ++k) is_val[ids[k]] = true;
    }
  }
  for (std::size_t i : rest) (is_val[i] ? p.val : p.train).push_back(i);
  return p;
}

std::vector<std::size_t> subsample(std::span<const std::size_t> indices, double fraction, std::uint64_t seed,
                                   std::uint64_t stream_index) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("label fraction must be in (0, 1]");
  std::vector<std::size_t> v(indices.begin(), indices.end());
  if (v.empty()) return v;
  const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(v.size()))));
  Rng rng = substream(seed, "subsample", stream_index);
  rng.shuffle(v);
  v.resize(std::min(keep, v.size()));
  std::sort(v.begin(), v.end());
  return v;
}

void to_json(json& j, const SplitSpec& s) {
  j = json{{"protocol", std::string(to_string(s.protocol))}, {"seed", s.seed}};
  if (s.n_folds > 0) {
    j["n_folds"] = s.n_folds;
    j["fold_of"] = s.fold_of;
  } else {
    j["train"] = s.train;
    j["val"] = s.val;
    j["test"] = s.test;
  }
}

void from_json(const json& j, SplitSpec& s) {
  s.protocol = protocol_from_string(j.at("protocol").get<std::string>());
  s.seed = j.at("seed").get<std::uint64_t>();
  s.n_folds = j.value("n_folds", 0);
  s.fold_of = j.value("fold_of", std::map<std::string, int>{});
  s.train = j.value("train", std::vector<std::string>{});
  s.val = j.value("val", std::vector<std::string>{});
  s.test = j.value("test", std::vector<std::string>{});
}

}  // namespace toolwatch::eval
