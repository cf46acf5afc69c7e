#include "cli.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "toolwatch/adapters.hpp"
#include "toolwatch/digest.hpp"
#include "toolwatch/error.hpp"
#include "toolwatch/metrics.hpp"
#include "toolwatch/synthetic.hpp"

namespace toolwatch::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Missing input file or artifact; maps to exit code 4.
class MissingInput : public Error {
 public:
  using Error::Error;
};

// Bad command-line usage detected after parsing; exit code 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw MissingInput(what + " not found: " + p.string());
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw MissingInput("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
  if (!out) throw Error("failed writing " + p.string());
}

void write_json(const fs::path& p, const json& j) { write_file(p, j.dump(2) + "\n"); }

json read_json(const fs::path& p, const std::string& what) {
  require_file(p, what);
  try {
    return json::parse(read_file(p));
  } catch (const json::parse_error& e) {
    throw ParseError(what, "malformed JSON in " + p.string() + ": " + e.what());
  }
}

template <typename T>
T json_get(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key \"") + key + "\": " + e.what());
  }
}

}  // namespace

void to_json(json& j, const RunConfig& c) {
  json ds = json::array();
  for (const DatasetRef& d : c.datasets) ds.push_back({{"path", d.path}, {"source", d.source}});
  j = json{{"datasets", std::move(ds)},
           {"feature_mode", std::string(to_string(c.feature_mode))},
           {"model", std::string(pipeline::to_string(c.model))},
           {"train", c.train},
           {"ssl", c.ssl},
           {"protocol", std::string(eval::to_string(c.protocol))},
           {"seeds", c.seeds},
           {"output_dir", c.output_dir},
           {"sweep", {{"fractions", c.sweep.fractions}, {"folds", c.sweep.folds}, {"seed", c.sweep.seed}}}};
  j["provider"] = c.provider ? json(*c.provider) : json(nullptr);
}

void from_json(const json& j, RunConfig& c) {
  static const std::set<std::string> known{"datasets", "feature_mode", "provider", "model",      "train",
                                           "ssl",      "protocol",     "seeds",    "output_dir", "sweep"};
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  for (const auto& [k, _] : j.items())
    if (!known.contains(k)) throw ConfigError("unknown run config key \"" + k + "\"");
  c = RunConfig{};
  if (j.contains("datasets")) {
    for (const json& d : j.at("datasets")) {
      DatasetRef r;
      r.path = json_get<std::string>(d, "path");
      r.source = d.value("source", std::string("normalized"));
      if (!is_registered_source(r.source)) throw ConfigError("unknown dataset source \"" + r.source + "\"");
      c.datasets.push_back(std::move(r));
    }
  }
  if (j.contains("feature_mode")) c.feature_mode = feature_mode_from_string(json_get<std::string>(j, "feature_mode"));
  if (j.contains("provider") && !j.at("provider").is_null()) {
    try {
      c.provider = j.at("provider").get<ProviderConfig>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("provider config: ") + e.what());
    }
  }
  if (j.contains("model")) c.model = pipeline::model_kind_from_string(json_get<std::string>(j, "model"));
  try {
    if (j.contains("train")) c.train = j.at("train").get<nn::TrainConfig>();
    if (j.contains("ssl")) c.ssl = j.at("ssl").get<ssl::SslConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train/ssl config: ") + e.what());
  }
  if (j.contains("protocol")) c.protocol = eval::protocol_from_string(json_get<std::string>(j, "protocol"));
  if (j.contains("seeds")) c.seeds = json_get<std::vector<std::uint64_t>>(j, "seeds");
  if (c.seeds.empty()) throw ConfigError("seeds must not be empty");
  if (j.contains("output_dir")) c.output_dir = json_get<std::string>(j, "output_dir");
  if (j.contains("sweep")) {
    const json& s = j.at("sweep");
    c.sweep.fractions = s.contains("fractions") ? json_get<std::vector<double>>(s, "fractions") : c.sweep.fractions;
    c.sweep.folds = s.value("folds", c.sweep.folds);
    c.sweep.seed = s.value("seed", c.sweep.seed);
  }
}

RunConfig load_run_config(const fs::path& path) {
  RunConfig c = read_json(path, "config").get<RunConfig>();
  const fs::path base = path.parent_path();
  for (DatasetRef& d : c.datasets)
    if (fs::path(d.path).is_relative()) d.path = (base / d.path).lexically_normal().string();
  if (fs::path(c.output_dir).is_relative()) c.output_dir = (base / c.output_dir).lexically_normal().string();
  return c;
}

namespace {

std::vector<Session> load_raw(const fs::path& path, const std::string& source) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInput("cannot read " + path.string());
  std::vector<Session> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json raw;
    try {
      raw = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("line", path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    auto r = adapt_record(raw, source);
    if (auto* s = std::get_if<Session>(&r)) out.push_back(std::move(*s));
  }
  return out;
}

}  // namespace

std::vector<Session> load_datasets(const RunConfig& config) {
  if (config.datasets.empty()) throw ConfigError("run config lists no datasets");
  std::vector<Session> all;
  std::set<std::string> ids;
  for (const DatasetRef& d : config.datasets) {
    require_file(d.path, "dataset");
    auto part = d.source == "normalized" ? read_corpus(d.path) : load_raw(d.path, d.source);
    for (Session& s : part) {
      if (!ids.insert(s.session_id).second) throw ValidationError("duplicate session id " + s.session_id);
      all.push_back(std::move(s));
    }
  }
  return all;
}

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string mode, model, protocol, out;
};

RunConfig resolve_config(const Overrides& o) {
  if (o.config.empty()) throw UsageError("--config is required");
  RunConfig c = load_run_config(o.config);
  if (o.seed) c.seeds = {*o.seed};
  if (!o.mode.empty()) c.feature_mode = feature_mode_from_string(o.mode);
  if (!o.model.empty()) c.model = pipeline::model_kind_from_string(o.model);
  if (!o.protocol.empty()) c.protocol = eval::protocol_from_string(o.protocol);
  if (!o.out.empty()) c.output_dir = o.out;
  return c;
}

std::shared_ptr<EmbeddingProvider> provider_for(const RunConfig& c) {
  if (!c.provider) return nullptr;
  return make_provider(*c.provider);
}

pipeline::ModelSpec model_spec(const RunConfig& c) {
  pipeline::ModelSpec s;
  s.kind = c.model;
  s.mode = c.feature_mode;
  s.train = c.train;
  s.ssl = c.ssl;
  return s;
}

std::string seed_file(const std::string& stem, std::uint64_t seed) {
  return stem + "_seed" + std::to_string(seed) + ".json";
}

eval::Partition partition_for(const eval::SplitSpec& split, std::span<const Session> corpus) {
  return split.n_folds > 0 ? eval::fold_partition(split, corpus, 0) : eval::resolve(split, corpus);
}

std::vector<Session> pick(std::span<const Session> corpus, std::span<const std::size_t> idx) {
  std::vector<Session> out;
  for (std::size_t i : idx) out.push_back(corpus[i]);
  return out;
}

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

int cmd_ingest(const std::string& input, const std::string& source, const std::string& out_path, bool skip_bad,
               std::ostream& out, std::ostream& err) {
  require_file(input, "input");
  std::ifstream in(input, std::ios::binary);
  if (!in) throw MissingInput("cannot read " + input);
  std::vector<Session> sessions;
  std::set<std::string> ids;
  std::size_t skipped = 0, bad = 0, lineno = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json raw = json::parse(line);
      auto r = adapt_record(raw, source);
      if (auto* s = std::get_if<Session>(&r)) {
        if (!ids.insert(s->session_id).second) throw ValidationError("duplicate session id " + s->session_id);
        sessions.push_back(std::move(*s));
      } else {
        ++skipped;
      }
    } catch (const json::exception& e) {
      if (!skip_bad) throw ParseError("line", input + ":" + std::to_string(lineno) + ": " + e.what());
      err << "skipping line " << lineno << ": " << e.what() << "\n";
      ++bad;
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      if (!skip_bad) throw ParseError("line", input + ":" + std::to_string(lineno) + ": " + e.what());
      err << "skipping line " << lineno << ": " << e.what() << "\n";
      ++bad;
    }
  }
  write_corpus(out_path, sessions);
  out << format_stats(corpus_stats(sessions));
  out << "skipped (no tool calls): " << skipped << "\n";
  out << "skipped (bad lines): " << bad << "\n";
  out << "wrote " << sessions.size() << " sessions to " << out_path << "\n";
  return kOk;
}

int cmd_synth(const std::string& spec_path, std::optional<std::uint64_t> seed, const std::string& out_path,
              std::ostream& out) {
  synth::SyntheticSpec spec;
  if (!spec_path.empty()) spec = read_json(spec_path, "synthetic spec").get<synth::SyntheticSpec>();
  if (seed) spec.seed = *seed;
  const auto corpus = synth::generate_synthetic_corpus(spec);
  write_corpus(out_path, corpus);
  out << format_stats(corpus_stats(corpus));
  out << "wrote " << corpus.size() << " sessions to " << out_path << "\n";
  return kOk;
}

int cmd_featurize(const Overrides& o, const std::string& input, std::ostream& out) {
  RunConfig c;
  std::vector<Session> corpus;
  if (!o.config.empty()) c = resolve_config(o);
  if (!o.mode.empty()) c.feature_mode = feature_mode_from_string(o.mode);
  if (!input.empty()) {
    require_file(input, "input");
    corpus = read_corpus(input);
  } else {
    corpus = load_datasets(c);
  }
  const fs::path dest = o.out.empty() ? fs::path(c.output_dir) / "features.jsonl" : fs::path(o.out);
  auto provider = provider_for(c);
  const FeatureConfig fc = pipeline::make_feature_config(c.feature_mode, corpus, provider.get());
  const auto graphs = featurize_corpus(corpus, fc, provider.get());
  std::ostringstream ss;
  write_featurized(ss, graphs);
  write_file(dest, ss.str());
  write_json(dest.string() + ".config.json", json(fc));
  out << "featurized " << graphs.size() << " sessions (node dim " << fc.node_dim() << ") to " << dest.string()
      << "\n";
  return kOk;
}

int cmd_train(const Overrides& o, std::ostream& out) {
  const RunConfig c = resolve_config(o);
  const auto corpus = load_datasets(c);
  auto provider = provider_for(c);
  const pipeline::ModelSpec spec = model_spec(c);
  if (spec.mode != FeatureMode::metadata && !provider)
    throw ConfigError("feature mode \"" + std::string(to_string(spec.mode)) + "\" needs a provider in the config");
  const fs::path dir = c.output_dir;
  fs::create_directories(dir);

  json best = json::object();
  for (std::uint64_t seed : c.seeds) {
    const eval::SplitSpec split = eval::make_split(corpus, c.protocol, seed);
    const eval::Partition part = partition_for(split, corpus);
    const auto model = pipeline::train_model(spec, pick(corpus, part.train), pick(corpus, part.val),
                                             provider.get(), seed);
    pipeline::save_model(model, dir / seed_file("model", seed));
    write_json(dir / seed_file("split", seed), json(split));
    best[std::to_string(seed)] = model.best_val_auroc ? json(*model.best_val_auroc) : json(nullptr);
    out << "seed " << seed << ": trained " << pipeline::to_string(model.kind) << " on " << part.train.size()
        << " sessions";
    if (model.best_val_auroc) out << ", best validation AUROC " << *model.best_val_auroc;
    out << "\n";
  }
  json inputs = json::array();
  for (const DatasetRef& d : c.datasets)
    inputs.push_back({{"path", d.path}, {"source", d.source}, {"sha256", sha256_hex(read_file(d.path))}});
  const json cfg = c;
  write_json(dir / "manifest.json", json{{"config", cfg},
                                         {"config_digest", sha256_hex(canonical_json(cfg))},
                                         {"seeds", c.seeds},
                                         {"inputs", std::move(inputs)},
                                         {"best_val_auroc", std::move(best)},
                                         {"created_at", utc_timestamp()}});
  return kOk;
}

json report_json(const eval::MetricsReport& r, const RunConfig& c) {
  json j = r;
  j["model"] = std::string(pipeline::to_string(c.model));
  j["feature_mode"] = std::string(to_string(c.feature_mode));
  return j;
}

int cmd_evaluate(const Overrides& o, std::ostream& out) {
  const RunConfig c = resolve_config(o);
  const fs::path dir = c.output_dir;
  for (std::uint64_t seed : c.seeds) {
    require_file(dir / seed_file("model", seed), "model artifact");
    require_file(dir / seed_file("split", seed), "split file");
  }
  const auto corpus = load_datasets(c);
  auto provider = provider_for(c);

  std::map<std::string, std::vector<double>> values;
  const char* names[] = {"auroc", "auprc", "macro_f1", "precision", "recall", "fpr"};
  for (std::uint64_t seed : c.seeds) {
    const auto model = pipeline::load_model(dir / seed_file("model", seed));
    const auto split = read_json(dir / seed_file("split", seed), "split file").get<eval::SplitSpec>();
    const eval::Partition part = partition_for(split, corpus);
    const auto test = pick(corpus, part.test);
    const auto scores = pipeline::score_sessions(model, test, provider.get());
    std::vector<int> labels;
    std::vector<std::optional<AttackMode>> modes;
    for (const Session& s : test) {
      labels.push_back(s.label == Label::attack ? 1 : 0);
      modes.push_back(s.attack_mode);
    }
    const double thr = pipeline::decision_threshold(model);
    eval::MetricsReport r = eval::classification_metrics(scores, labels, thr);
    r.per_mode = eval::per_mode_breakdown(scores, labels, modes, thr);
    r.seed = seed;
    r.protocol = std::string(eval::to_string(split.protocol));
    write_json(dir / seed_file("metrics", seed), report_json(r, c));
    const std::optional<double>* fields[] = {&r.auroc, &r.auprc, &r.macro_f1, &r.precision, &r.recall, &r.fpr};
    for (int k = 0; k < 6; ++k)
      if (*fields[k]) values[names[k]].push_back(**fields[k]);
    out << "seed " << seed << ": AUROC " << (r.auroc ? std::to_string(*r.auroc) : "n/a") << "\n";
  }

  json agg{{"model", std::string(pipeline::to_string(c.model))},
           {"feature_mode", std::string(to_string(c.feature_mode))},
           {"protocol", std::string(eval::to_string(c.protocol))},
           {"seeds", c.seeds}};
  std::ostringstream table;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-10s %-18s %s\n", "metric", "mean +- sd", "n");
  table << buf;
  for (const char* name : names) {
    const auto& v = values[name];
    if (v.empty()) {
      agg[name] = nullptr;
      std::snprintf(buf, sizeof buf, "%-10s %-18s %d\n", name, "n/a", 0);
    } else {
      const auto [m, sd] = eval::mean_sd(v);
      agg[name] = {{"mean", m}, {"sd", sd}, {"n", v.size()}};
      std::snprintf(buf, sizeof buf, "%-10s %.4f +- %.4f    %zu\n", name, m, sd, v.size());
    }
    table << buf;
  }
  write_json(dir / "metrics_aggregate.json", agg);
  write_file(dir / "metrics_table.txt", table.str());
  out << table.str();
  return kOk;
}

int cmd_sweep(const Overrides& o, std::ostream& out) {
  const RunConfig c = resolve_config(o);
  const auto corpus = load_datasets(c);
  auto provider = provider_for(c);
  experiments::SweepOptions opt;
  opt.fractions = c.sweep.fractions;
  opt.folds = c.sweep.folds;
  opt.seed = o.seed.value_or(c.sweep.seed);
  pipeline::ModelSpec spec = model_spec(c);
  if (spec.kind != pipeline::ModelKind::ssl_sage) spec.kind = pipeline::ModelKind::sage;
  const auto rep = experiments::label_efficiency_sweep(corpus, spec, opt, provider.get());
  const fs::path dir = c.output_dir;
  write_json(dir / "sweep.json", json(rep));
  const std::string table = experiments::format_sweep_table(rep);
  write_file(dir / "sweep_table.txt", table);
  out << table;
  return kOk;
}

int cmd_report(const Overrides& o, bool leakage, bool per_mode, std::ostream& out) {
  if (!leakage && !per_mode) throw UsageError("report needs --leakage and/or --per-mode");
  const RunConfig c = resolve_config(o);
  const fs::path dir = c.output_dir;
  if (per_mode) {
    std::map<std::string, std::vector<double>> recall;
    std::map<std::string, std::size_t> count;
    for (std::uint64_t seed : c.seeds) {
      const json m = read_json(dir / seed_file("metrics", seed), "metrics file (run evaluate first)");
      for (const json& row : m.at("per_mode")) {
        recall[row.at("mode").get<std::string>()].push_back(row.at("recall").get<double>());
        count[row.at("mode").get<std::string>()] += row.at("n").get<std::size_t>();
      }
    }
    json rows = json::array();
    std::ostringstream table;
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-20s %6s %-18s %s\n", "mode", "n", "recall mean +- sd", "seeds");
    table << buf;
    for (const auto& [mode, v] : recall) {
      const auto [m, sd] = eval::mean_sd(v);
      rows.push_back({{"mode", mode}, {"n", count[mode]}, {"recall_mean", m}, {"recall_sd", sd}, {"seeds", v.size()}});
      std::snprintf(buf, sizeof buf, "%-20s %6zu %.3f +- %.3f      %zu\n", mode.c_str(), count[mode], m, sd, v.size());
      table << buf;
    }
    write_json(dir / "per_mode.json", json{{"rows", std::move(rows)}});
    write_file(dir / "per_mode_table.txt", table.str());
    out << table.str();
  }
  if (leakage) {
    const auto corpus = load_datasets(c);
    auto provider = provider_for(c);
    const auto rep = experiments::leakage_gap(corpus, model_spec(c), c.seeds, provider.get());
    write_json(dir / "leakage.json", json(rep));
    const std::string table = experiments::format_gap_table(rep);
    write_file(dir / "leakage_table.txt", table);
    out << table;
  }
  return kOk;
}

void add_common(CLI::App* sub, Overrides& o, bool with_config_required) {
  auto* opt = sub->add_option("--config", o.config, "Run config JSON file");
  if (with_config_required) opt->required();
  sub->add_option("--seed", o.seed, "Single seed overriding the config seed list");
  sub->add_option("--mode", o.mode, "Feature mode: metadata, content, combined");
  sub->add_option("--model", o.model, "Model: logreg, linear_svm, random_forest, mlp, sage, ssl_sage");
  sub->add_option("--protocol", o.protocol,
                  "Split protocol: task_stratified, label_stratified, kfold_task, kfold_label");
  sub->add_option("--out", o.out, "Output directory (file for featurize)");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"toolwatch: tool-call session attack detection"};
  app.name(args.empty() ? "toolwatch" : args.front());
  app.require_subcommand(1);

  std::string input, source, ingest_out, spec_path;
  bool skip_bad = false, leakage = false, per_mode = false;
  Overrides o;

  auto* ingest = app.add_subcommand("ingest", "Normalize a raw trajectory file");
  ingest->add_option("--input", input, "Raw JSONL file")->required();
  ingest->add_option("--source", source, "Source tag: normalized, ras_eval, atbench")->required();
  ingest->add_option("--out", ingest_out, "Normalized output file")->required();
  ingest->add_flag("--skip-bad", skip_bad, "Skip unparseable lines instead of failing");

  auto* synth_cmd = app.add_subcommand("synth", "Write a seeded synthetic corpus");
  synth_cmd->add_option("--spec", spec_path, "Synthetic spec JSON file");
  synth_cmd->add_option("--seed", o.seed, "Generator seed");
  synth_cmd->add_option("--out", ingest_out, "Normalized output file")->required();

  auto* featurize = app.add_subcommand("featurize", "Dump node features for a corpus");
  add_common(featurize, o, false);
  featurize->add_option("--input", input, "Normalized corpus (instead of the config datasets)");

  auto* train = app.add_subcommand("train", "Train one model per seed");
  add_common(train, o, true);
  auto* evaluate = app.add_subcommand("evaluate", "Score test partitions and aggregate over seeds");
  add_common(evaluate, o, true);
  auto* sweep = app.add_subcommand("sweep", "Label-efficiency sweep");
  add_common(sweep, o, true);
  auto* report = app.add_subcommand("report", "Leakage-gap and per-mode reports");
  add_common(report, o, true);
  report->add_flag("--leakage", leakage, "Random vs task-disjoint AUROC gap");
  report->add_flag("--per-mode", per_mode, "Per-attack-mode recall table from evaluate output");

  std::vector<std::string> argv_store = args.empty() ? std::vector<std::string>{"toolwatch"} : args;
  std::vector<char*> argv;
  for (std::string& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    CLI::App* active = &app;
    for (CLI::App* s : app.get_subcommands()) active = s;
    err << active->help();
    return kUsage;
  }

  try {
    if (ingest->parsed()) {
      if (!is_registered_source(source)) {
        err << "unknown source \"" << source << "\"\n" << ingest->help();
        return kUsage;
      }
      return cmd_ingest(input, source, ingest_out, skip_bad, out, err);
    }
    if (synth_cmd->parsed()) return cmd_synth(spec_path, o.seed, ingest_out, out);
    if (featurize->parsed()) return cmd_featurize(o, input, out);
    if (train->parsed()) return cmd_train(o, out);
    if (evaluate->parsed()) return cmd_evaluate(o, out);
    if (sweep->parsed()) return cmd_sweep(o, out);
    if (report->parsed()) return cmd_report(o, leakage, per_mode, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const MissingInput& e) {
    err << "error: " << e.what() << "\n";
    return kMissingInput;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace toolwatch::cli
