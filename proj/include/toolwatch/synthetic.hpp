#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "toolwatch/session.hpp"

// Seeded synthetic corpora for desk-scale experiments.
//
// Each task draws its own tool subset and word vocabulary, so benign text
// clusters per task and tool usage identifies the task. Attack sessions swap
// call arguments (input channel) and/or responses (output channel) for
// payloads built from a shared injection vocabulary, with the same length
// profile as benign text. Per-task attack rates are skewed, which is what a
// model can memorize when tasks leak across partitions.
namespace toolwatch::synth {

struct SyntheticSpec {
  std::size_t n_tasks = 40;
  std::size_t sessions_per_task = 10;
  std::size_t tools_per_task = 4;
  std::size_t tool_pool_size = 120;
  std::size_t calls_min = 4;
  std::size_t calls_max = 8;
  double attack_fraction = 0.5;
  // Task rates are attack_fraction +- skew * min(af, 1 - af), alternating over
  // shuffled tasks. Every task keeps at least one session of each label.
  double task_attack_skew = 0.6;
  // Relative weights of tool_input / tool_output / both among attacks.
  double weight_input = 1.0;
  double weight_output = 1.0;
  double weight_both = 1.0;
  // Per-call probability that the channel carries a payload.
  double strength_input = 0.15;
  double strength_output = 0.35;
  std::size_t payload_pool_size = 8;
  std::size_t injection_vocab_size = 10;
  std::size_t task_vocab_size = 12;
  // When positive, task vocabularies are drawn from one shared benign word
  // list of this size instead of being disjoint.
  std::size_t benign_vocab_size = 0;
  std::size_t words_min = 4;
  std::size_t words_max = 8;
  // Probability that a call's arguments quote a word from an earlier response.
  double data_flow_rate = 0.3;
  std::uint64_t seed = 7;
};

// ValidationError on inconsistent values.
void validate(const SyntheticSpec& spec);

std::vector<Session> generate_synthetic_corpus(const SyntheticSpec& spec);

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);

}  // namespace toolwatch::synth
