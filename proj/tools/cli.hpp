#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "toolwatch/embedding.hpp"
#include "toolwatch/experiments.hpp"
#include "toolwatch/features.hpp"
#include "toolwatch/nn.hpp"
#include "toolwatch/pipeline.hpp"
#include "toolwatch/splits.hpp"
#include "toolwatch/ssl.hpp"

namespace toolwatch::cli {

enum ExitCode : int { kOk = 0, kRuntime = 1, kUsage = 2, kConfig = 3, kMissingInput = 4 };

struct DatasetRef {
  std::string path;
  std::string source = "normalized";
  bool operator==(const DatasetRef&) const = default;
};

struct SweepSettings {
  std::vector<double> fractions{0.01, 0.05, 0.10, 0.25, 0.50, 1.00};
  int folds = 5;
  std::uint64_t seed = 42;
  bool operator==(const SweepSettings&) const = default;
};

// Key names match the config file.
struct RunConfig {
  std::vector<DatasetRef> datasets;
  FeatureMode feature_mode = FeatureMode::content;
  std::optional<ProviderConfig> provider;
  pipeline::ModelKind model = pipeline::ModelKind::sage;
  nn::TrainConfig train;
  ssl::SslConfig ssl;
  eval::Protocol protocol = eval::Protocol::task_stratified;
  std::vector<std::uint64_t> seeds{7, 42, 123};
  std::string output_dir = "runs";
  SweepSettings sweep;

  bool operator==(const RunConfig&) const = default;
};

void to_json(nlohmann::json& j, const RunConfig& c);
// Unknown keys raise ConfigError.
void from_json(const nlohmann::json& j, RunConfig& c);

// Relative dataset paths and output_dir resolve against the file's directory.
RunConfig load_run_config(const std::filesystem::path& path);

// Loads and concatenates every dataset of the config.
std::vector<Session> load_datasets(const RunConfig& config);

int run(int argc, char** argv);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace toolwatch::cli
