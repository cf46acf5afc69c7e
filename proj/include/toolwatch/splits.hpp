#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "toolwatch/session.hpp"

namespace toolwatch::eval {

enum class Protocol { task_stratified, label_stratified, kfold_task, kfold_label };

std::string_view to_string(Protocol p);
Protocol protocol_from_string(std::string_view s);

struct Ratios {
  double train = 0.7, val = 0.1, test = 0.2;
};

// Largest-remainder apportionment of `units` by the ratios: every part is
// within one unit of its exact quota. Leftover units go to the largest
// fractional parts; ties prefer test, then val, then train.
std::array<std::size_t, 3> apportion(std::size_t units, const Ratios& ratios = {});

struct SplitSpec {
  Protocol protocol = Protocol::task_stratified;
  std::uint64_t seed = 0;
  // Single split protocols.
  std::vector<std::string> train, val, test;
  // k-fold protocols: session id -> test fold.
  int n_folds = 0;
  std::map<std::string, int> fold_of;
};

// Unique task ids are sorted, shuffled with the "split" stream and cut 70/10/20.
// ValidationError if any session lacks a task id.
SplitSpec task_stratified_split(std::span<const Session> sessions, std::uint64_t seed, const Ratios& ratios = {});

// Per label: sessions sorted by id, shuffled, cut 70/10/20.
SplitSpec label_stratified_split(std::span<const Session> sessions, std::uint64_t seed, const Ratios& ratios = {});

// Round-robin fold assignment over shuffled units (tasks or per-label sessions).
SplitSpec kfold_split(std::span<const Session> sessions, Protocol protocol, int folds, std::uint64_t seed);

SplitSpec make_split(std::span<const Session> sessions, Protocol protocol, std::uint64_t seed);

// Indices into `sessions`.
struct Partition {
  std::vector<std::size_t> train, val, test;
};

// Checks that the SplitSpec covers `sessions` exactly and disjointly.
Partition resolve(const SplitSpec& spec, std::span<const Session> sessions);

// Test = fold `fold`; validation = about 1/8 of the remaining part (whole
// tasks for kfold_task, per label for kfold_label) holding both classes when
// possible; the rest trains.
Partition fold_partition(const SplitSpec& spec, std::span<const Session> sessions, int fold);

// max(1, round(fraction * n)) training indices drawn by the "subsample" stream.
std::vector<std::size_t> subsample(std::span<const std::size_t> indices, double fraction, std::uint64_t seed,
                                   std::uint64_t stream_index = 0);

void to_json(nlohmann::json& j, const SplitSpec& s);
void from_json(const nlohmann::json& j, SplitSpec& s);

}  // namespace toolwatch::eval
