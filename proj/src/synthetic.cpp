#include "toolwatch/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include <nlohmann/json.hpp>

#include "toolwatch/error.hpp"
#include "toolwatch/rng.hpp"

namespace toolwatch::synth {

using nlohmann::json;

void validate(const SyntheticSpec& s) {
  const auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (s.n_tasks == 0 || s.sessions_per_task == 0) throw ValidationError("synthetic corpus needs tasks and sessions");
  if (s.tools_per_task == 0 || s.tools_per_task > s.tool_pool_size)
    throw ValidationError("tools_per_task must be in [1, tool_pool_size]");
  if (s.calls_min == 0 || s.calls_min > s.calls_max) throw ValidationError("need 1 <= calls_min <= calls_max");
  if (s.words_min == 0 || s.words_min > s.words_max) throw ValidationError("need 1 <= words_min <= words_max");
  if (!prob(s.attack_fraction) || !prob(s.task_attack_skew) || !prob(s.strength_input) ||
      !prob(s.strength_output) || !prob(s.data_flow_rate))
    throw ValidationError("synthetic rates must lie in [0, 1]");
  if (!(s.weight_input >= 0 && s.weight_output >= 0 && s.weight_both >= 0) ||
      !(s.weight_input + s.weight_output + s.weight_both > 0))
    throw ValidationError("attack mode weights must be non-negative with a positive sum");
  if (s.benign_vocab_size > 0 && s.benign_vocab_size < s.task_vocab_size)
    throw ValidationError("benign_vocab_size must be 0 or at least task_vocab_size");
  if (s.payload_pool_size == 0 || s.injection_vocab_size == 0 || s.task_vocab_size == 0)
    throw ValidationError("vocabulary and pool sizes must be positive");
}

namespace {

constexpr const char* kOnsets[] = {"b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
                                   "br", "st", "tr", "pl", "gr", "ch", "sh", "th"};
constexpr const char* kVowels[] = {"a", "e", "i", "o", "u", "ai", "ou", "ea"};

// Pseudo-words of 2-3 syllables; `used` keeps them globally distinct.
std::string fresh_word(Rng& rng, std::set<std::string>& used) {
  for (;;) {
    std::string w;
    const std::uint64_t syll = 2 + rng.below(2);
    for (std::uint64_t k = 0; k < syll; ++k) {
      w += kOnsets[rng.below(std::size(kOnsets))];
      w += kVowels[rng.below(std::size(kVowels))];
    }
    if (w.size() >= 5 && used.insert(w).second) return w;
  }
}

std::vector<std::string> fresh_words(Rng& rng, std::set<std::string>& used, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(fresh_word(rng, used));
  return out;
}

std::string sentence(Rng& rng, const std::vector<std::string>& vocab, std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s += ' ';
    s += vocab[rng.below(vocab.size())];
  }
  return s;
}

std::string args_json(const std::string& text) { return json{{"query", text}}.dump(); }

std::size_t between(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

struct Task {
  std::string id;
  std::vector<std::string> tools;
  std::vector<std::string> vocab;
  std::size_t n_attack = 0;
};

}  // namespace

std::vector<Session> generate_synthetic_corpus(const SyntheticSpec& spec) {
  validate(spec);
  Rng rng = substream(spec.seed, "synthetic");
  std::set<std::string> used;

  std::vector<std::string> tool_pool;
  for (std::size_t i = 0; i < spec.tool_pool_size; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "tool_%03zu", i);
    tool_pool.emplace_back(buf);
  }
  const std::vector<std::string> injection = fresh_words(rng, used, spec.injection_vocab_size);
  std::vector<std::string> payloads;
  for (std::size_t i = 0; i < spec.payload_pool_size; ++i)
    payloads.push_back(sentence(rng, injection, between(rng, spec.words_min, spec.words_max)));

  const std::vector<std::string> shared = fresh_words(rng, used, spec.benign_vocab_size);
  std::vector<Task> tasks(spec.n_tasks);
  for (std::size_t t = 0; t < spec.n_tasks; ++t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "task-%03zu", t);
    tasks[t].id = buf;
    std::vector<std::string> pool = tool_pool;
    rng.shuffle(pool);
    tasks[t].tools.assign(pool.begin(), pool.begin() + static_cast<long>(spec.tools_per_task));
    if (shared.empty()) {
      tasks[t].vocab = fresh_words(rng, used, spec.task_vocab_size);
    } else {
      std::vector<std::string> pool_words = shared;
      rng.shuffle(pool_words);
      tasks[t].vocab.assign(pool_words.begin(), pool_words.begin() + static_cast<long>(spec.task_vocab_size));
    }
  }

  // Skewed per-task attack counts.
  std::vector<std::size_t> perm(spec.n_tasks);
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  rng.shuffle(perm);
  const double af = spec.attack_fraction;
  const double amp = spec.task_attack_skew * std::min(af, 1.0 - af);
  for (std::size_t k = 0; k < perm.size(); ++k) {
    const double rate = af + (k % 2 == 0 ? amp : -amp);
    const auto s = static_cast<double>(spec.sessions_per_task);
    std::size_t n = static_cast<std::size_t>(std::llround(rate * s));
    if (spec.sessions_per_task >= 2 && af > 0.0 && af < 1.0) n = std::clamp<std::size_t>(n, 1, spec.sessions_per_task - 1);
    tasks[perm[k]].n_attack = n;
  }

  const double wsum = spec.weight_input + spec.weight_output + spec.weight_both;
  std::vector<Session> corpus;
  for (const Task& task : tasks) {
    std::vector<bool> attack(spec.sessions_per_task, false);
    for (std::size_t i = 0; i < task.n_attack; ++i) attack[i] = true;
    rng.shuffle(attack);
    for (std::size_t si = 0; si < spec.sessions_per_task; ++si) {
      Session s;
      char buf[64];
      std::snprintf(buf, sizeof buf, "synthetic:%s-s%02zu", task.id.c_str(), si);
      s.session_id = buf;
      s.source = "synthetic";
      s.task_id = task.id;
      s.label = attack[si] ? Label::attack : Label::benign;
      bool in = false, out = false;
      if (attack[si]) {
        const double u = rng.uniform() * wsum;
        if (u < spec.weight_input) {
          s.attack_mode = AttackMode::input();
          in = true;
        } else if (u < spec.weight_input + spec.weight_output) {
          s.attack_mode = AttackMode::output();
          out = true;
        } else {
          s.attack_mode = AttackMode::combined();
          in = out = true;
        }
      }
      const std::size_t n_calls = between(rng, spec.calls_min, spec.calls_max);
      std::vector<std::string> responses;
      for (std::size_t c = 0; c < n_calls; ++c) {
        const std::string& tool = task.tools[rng.below(task.tools.size())];
        std::string query = sentence(rng, task.vocab, between(rng, spec.words_min, spec.words_max));
        if (c > 0 && rng.bernoulli(spec.data_flow_rate)) {
          // Quote the first word of an earlier response.
          const std::string& prev = responses[rng.below(responses.size())];
          query += ' ' + prev.substr(0, prev.find(' '));
        }
        std::string response = sentence(rng, task.vocab, between(rng, spec.words_min, spec.words_max));
        if (in && rng.bernoulli(spec.strength_input))
          query = payloads[rng.below(payloads.size())] + ' ' + task.vocab[rng.below(task.vocab.size())];
        if (out && rng.bernoulli(spec.strength_output)) response = payloads[rng.below(payloads.size())];
        responses.push_back(response);
        s.calls.push_back(make_tool_call(c, tool, args_json(query), std::move(response)));
      }
      corpus.push_back(std::move(s));
    }
  }
  return corpus;
}

void to_json(json& j, const SyntheticSpec& s) {
  j = json{{"n_tasks", s.n_tasks},
           {"sessions_per_task", s.sessions_per_task},
           {"tools_per_task", s.tools_per_task},
           {"tool_pool_size", s.tool_pool_size},
           {"calls_min", s.calls_min},
           {"calls_max", s.calls_max},
           {"attack_fraction", s.attack_fraction},
           {"task_attack_skew", s.task_attack_skew},
           {"weight_input", s.weight_input},
           {"weight_output", s.weight_output},
           {"weight_both", s.weight_both},
           {"strength_input", s.strength_input},
           {"strength_output", s.strength_output},
           {"payload_pool_size", s.payload_pool_size},
           {"injection_vocab_size", s.injection_vocab_size},
           {"task_vocab_size", s.task_vocab_size},
           {"benign_vocab_size", s.benign_vocab_size},
           {"words_min", s.words_min},
           {"words_max", s.words_max},
           {"data_flow_rate", s.data_flow_rate},
           {"seed", s.seed}};
}

void from_json(const json& j, SyntheticSpec& s) {
  const SyntheticSpec d;
  s.n_tasks = j.value("n_tasks", d.n_tasks);
  s.sessions_per_task = j.value("sessions_per_task", d.sessions_per_task);
  s.tools_per_task = j.value("tools_per_task", d.tools_per_task);
  s.tool_pool_size = j.value("tool_pool_size", d.tool_pool_size);
  s.calls_min = j.value("calls_min", d.calls_min);
  s.calls_max = j.value("calls_max", d.calls_max);
  s.attack_fraction = j.value("attack_fraction", d.attack_fraction);
  s.task_attack_skew = j.value("task_attack_skew", d.task_attack_skew);
  s.weight_input = j.value("weight_input", d.weight_input);
  s.weight_output = j.value("weight_output", d.weight_output);
  s.weight_both = j.value("weight_both", d.weight_both);
  s.strength_input = j.value("strength_input", d.strength_input);
  s.strength_output = j.value("strength_output", d.strength_output);
  s.payload_pool_size = j.value("payload_pool_size", d.payload_pool_size);
  s.injection_vocab_size = j.value("injection_vocab_size", d.injection_vocab_size);
  s.task_vocab_size = j.value("task_vocab_size", d.task_vocab_size);
  s.benign_vocab_size = j.value("benign_vocab_size", d.benign_vocab_size);
  s.words_min = j.value("words_min", d.words_min);
  s.words_max = j.value("words_max", d.words_max);
  s.data_flow_rate = j.value("data_flow_rate", d.data_flow_rate);
  s.seed = j.value("seed", d.seed);
  validate(s);
}

}  // namespace toolwatch::synth
