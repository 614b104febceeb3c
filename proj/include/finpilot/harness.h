#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "finpilot/config.h"
#include "finpilot/forecast.h"
#include "finpilot/metrics.h"
#include "finpilot/policy.h"

namespace finpilot {

// Series with splits assigned, normalizers and the two episodes a run needs.
struct PreparedData {
  MarketSeries series;
  Normalizer train_norm;
  Normalizer test_norm;  // equals train_norm unless normalization = per_split
  Episode train;
  Episode test;
};

MarketSeries load_market(const ExperimentConfig& config);
PreparedData prepare_data(const ExperimentConfig& config);

// The configured base forecaster (ridge fitted on the training split for
// `horizon` steps, context mean, or an external file).
std::shared_ptr<const Forecaster> make_base_forecaster(const ExperimentConfig& config,
                                                       const MarketSeries& series, std::size_t horizon);

// Forecaster and noise statistics for one (horizon, target R^2) point.
struct ForecastSetup {
  std::shared_ptr<const Forecaster> forecaster;
  NoiseCalibration noise;
  std::optional<CheatCalibration> cheat;
};

ForecastSetup make_forecast_setup(const ExperimentConfig& config, const MarketSeries& series,
                                  std::shared_ptr<const Forecaster> base, std::size_t horizon,
                                  std::optional<double> target_r2);

// Pretrains (or loads from the config-hash cache) the policy for one seed.
ActorCritic pretrained_policy(const ExperimentConfig& config, const PreparedData& data, std::uint64_t seed,
                              PretrainReport* report = nullptr);

// Stable FNV-1a digest of the parts of the config that determine pretraining.
std::string pretrain_hash(const ExperimentConfig& config, std::uint64_t seed);

struct CellSpec {
  Variant variant = Variant::noise_lambda;
  std::size_t horizon = 1;
  std::optional<double> r2;
  std::uint64_t seed = 0;

  std::string row_label() const;  // seed-free
};

// Expands seeds x variants x horizons x R^2 levels; empty axes fall back to
// the base config values. `use_sweep` = false runs the base point only.
std::vector<CellSpec> expand_cells(const ExperimentConfig& config, bool use_sweep);

// Runs every cell; failures are recorded per cell. Returns the versioned
// results document (config echo, per-seed cells with curves, aggregate rows).
nlohmann::json run_experiment(const ExperimentConfig& config, bool use_sweep = true);

// Writes results.json, config.json, table.txt and curves.svg into `dir`.
void write_outputs(const nlohmann::json& results, const std::filesystem::path& dir);

// Rendering from the results document alone.
std::string render_table(const nlohmann::json& results);
std::string render_svg(const nlohmann::json& results);

// Re-renders table.txt and curves.svg from `dir`/results.json.
void regenerate_report(const std::filesystem::path& dir);

inline constexpr const char* kResultsSchema = "finpilot.results";
inline constexpr int kResultsVersion = 1;

}  // namespace finpilot
