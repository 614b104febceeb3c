#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "finpilot/env.h"
#include "finpilot/params.h"
#include "finpilot/pilot.h"
#include "finpilot/policy.h"
#include "finpilot/synthetic.h"

namespace finpilot {

// Parses the TOML subset used by config files: [dotted.section] headers,
// key = value lines, strings, numbers, booleans, single-line arrays and
// '#' comments. Produces nested JSON objects.
nlohmann::json parse_toml(const std::string& text, const std::string& origin = "<string>");

enum class NormalizationMode { train, per_split };

struct DataConfig {
  std::string source = "synthetic";  // synthetic | csv
  std::string path;
  double train_fraction = 0.6;
  double valid_fraction = 0.2;
  std::string valid_start;  // date-based split when both are set
  std::string test_start;
  NormalizationMode normalization = NormalizationMode::train;
  SyntheticMarketSpec synthetic;
};

struct ForecastConfig {
  std::string model = "ridge";  // ridge | context_mean | external
  double ridge_lambda = 1.0;
  std::string external_path;
  std::size_t context_window = 30;
  std::optional<double> target_r2;          // enables the blended forecaster
  std::string cheat_base = "model";         // model | context_mean
};

struct PolicySettings {
  std::vector<std::size_t> hidden{128, 128};
  ActMode mode = ActMode::stochastic;
  bool shared_trunk = false;
  double init_log_std = -1.0;
  double init_gain = 1.0;
  double head_gain = 0.01;
};

struct SweepConfig {
  std::vector<std::size_t> horizons;
  std::vector<double> r2;
  std::vector<Variant> variants;
};

struct ExperimentConfig {
  DataConfig data;
  EnvConfig env;
  PolicySettings policy;
  PretrainConfig pretrain;
  std::string pretrain_cache_dir;
  ForecastConfig forecast;
  MpcConfig mpc;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t workers = 1;
  std::string output_dir = "results";
  bool step_reports = false;
  SweepConfig sweep;

  void validate() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& config);
// Accepts .toml or .json by extension.
ExperimentConfig load_config(const std::filesystem::path& path);

// Policy architecture for a market of `assets` assets under `settings`.
PolicyConfig make_policy_config(const PolicySettings& settings, std::size_t assets, std::uint64_t seed);

}  // namespace finpilot
