#include "finpilot/harness.h"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <thread>

#include "finpilot/errors.h"

namespace finpilot {

MarketSeries load_market(const ExperimentConfig& config) {
  MarketSeries series = config.data.source == "csv" ? load_csv(config.data.path)
                                                    : generate_synthetic(config.data.synthetic);
  if (!config.data.valid_start.empty()) {
    series.split_at_dates(config.data.valid_start, config.data.test_start);
  } else {
    series.split_by_fraction(config.data.train_fraction, config.data.valid_fraction);
  }
  return series;
}

PreparedData prepare_data(const ExperimentConfig& config) {
  MarketSeries series = load_market(config);
  Normalizer train_norm = fit_normalizer(series, Split::train);
  Normalizer test_norm = config.data.normalization == NormalizationMode::per_split
                             ? fit_normalizer(series, Split::test)
                             : train_norm;
  Episode train = make_episode(series, Split::train, train_norm);
  Episode test = make_episode(series, Split::test, test_norm);
  return {std::move(series), std::move(train_norm), std::move(test_norm), std::move(train), std::move(test)};
}

std::shared_ptr<const Forecaster> make_base_forecaster(const ExperimentConfig& config,
                                                       const MarketSeries& series, std::size_t horizon) {
  const auto& f = config.forecast;
  if (f.model == "ridge") {
    return std::make_shared<RidgeForecaster>(RidgeForecaster::fit(series, horizon, f.ridge_lambda));
  }
  if (f.model == "context_mean") return std::make_shared<ContextMeanForecaster>(f.context_window);
  return std::make_shared<ExternalForecaster>(ExternalForecaster::load(f.external_path));
}

ForecastSetup make_forecast_setup(const ExperimentConfig& config, const MarketSeries& series,
                                  std::shared_ptr<const Forecaster> base, std::size_t horizon,
                                  std::optional<double> target_r2) {
  ForecastSetup setup;
  setup.forecaster = base;
  if (target_r2) {
    std::shared_ptr<const Forecaster> blend_base = base;
    if (config.forecast.cheat_base == "context_mean") {
      blend_base = std::make_shared<ContextMeanForecaster>(config.forecast.context_window);
    }
    const ForecastCells cells =
        collect_cells(series, *blend_base, Split::test, horizon, config.forecast.context_window);
    CheatCalibration cal = calibrate_cheat(cells.predicted, cells.realized, cells.baseline, *target_r2);
    setup.forecaster = std::make_shared<CheatForecaster>(blend_base, cal.c);
    cal.blended.resize(0);
    setup.cheat = std::move(cal);
  }
  setup.noise = noise_stats(*setup.forecaster, series, horizon);
  return setup;
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Runs job(i) for i in [0, count) on up to `workers` threads.
void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& job) {
  const std::size_t n = std::min(std::max<std::size_t>(workers, 1), std::max<std::size_t>(count, 1));
  if (n <= 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < n; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) job(i);
    });
  }
  for (auto& t : pool) t.join();
}

nlohmann::json metrics_json(const MetricsReport& m) { return nlohmann::json::parse(m.to_json()); }

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

}  // namespace

std::string pretrain_hash(const ExperimentConfig& config, std::uint64_t seed) {
  nlohmann::json j = config_to_json(config);
  nlohmann::json key;
  key["data"] = j["data"];
  key["data"].erase("normalization");
  key["env"] = j["env"];
  key["policy"] = j["policy"];
  key["pretrain"] = j["pretrain"];
  key["pretrain"].erase("cache_dir");
  key["seed"] = seed;
  return hex64(fnv1a(key.dump()));
}

ActorCritic pretrained_policy(const ExperimentConfig& config, const PreparedData& data, std::uint64_t seed,
                              PretrainReport* report) {
  const PolicyConfig pc = make_policy_config(config.policy, data.series.asset_count(), seed);
  std::filesystem::path cached;
  if (!config.pretrain_cache_dir.empty()) {
    cached = std::filesystem::path(config.pretrain_cache_dir) / ("policy-" + pretrain_hash(config, seed) + ".fpck");
    if (std::filesystem::exists(cached)) return policy_from_snapshot(load_checkpoint(cached));
  }
  PretrainConfig pre = config.pretrain;
  pre.seed = seed;
  ActorCritic policy = pretrain(data.train, pc, config.env, pre, report);
  if (!cached.empty()) {
    std::filesystem::create_directories(cached.parent_path());
    save_checkpoint(cached, checkpoint(policy));
  }
  return policy;
}

std::string CellSpec::row_label() const {
  std::string s = std::string("finpilot/") + variant_name(variant) + " H=" + std::to_string(horizon);
  if (r2) {
    char buf[32];
    std::snprintf(buf, sizeof buf, " R2=%g", *r2);
    s += buf;
  }
  return s;
}

std::vector<CellSpec> expand_cells(const ExperimentConfig& config, bool use_sweep) {
  std::vector<Variant> variants{config.mpc.variant};
  std::vector<std::size_t> horizons{config.mpc.horizon};
  std::vector<std::optional<double>> levels{config.forecast.target_r2};
  if (use_sweep) {
    if (!config.sweep.variants.empty()) variants = config.sweep.variants;
    if (!config.sweep.horizons.empty()) horizons = config.sweep.horizons;
    if (!config.sweep.r2.empty()) levels.assign(config.sweep.r2.begin(), config.sweep.r2.end());
  }
  std::vector<CellSpec> cells;
  for (Variant v : variants) {
    for (std::size_t h : horizons) {
      for (const auto& r : levels) {
        for (std::uint64_t seed : config.seeds) cells.push_back({v, h, r, seed});
      }
    }
  }
  return cells;
}

nlohmann::json run_experiment(const ExperimentConfig& config, bool use_sweep) {
  config.validate();
  const PreparedData data = prepare_data(config);
  const std::vector<CellSpec> cells = expand_cells(config, use_sweep);
  const std::size_t n_seeds = config.seeds.size();
  EnvConfig env = config.env;
  env.asset_count = data.series.asset_count();

  // Pretraining and baselines, one job per seed.
  std::vector<std::optional<ActorCritic>> policies(n_seeds);
  std::vector<nlohmann::json> baselines(n_seeds);
  parallel_for(n_seeds, config.workers, [&](std::size_t i) {
    const std::uint64_t seed = config.seeds[i];
    nlohmann::json b;
    b["seed"] = seed;
    try {
      PretrainReport rep;
      policies[i] = pretrained_policy(config, data, seed, &rep);
      MpcConfig off = config.mpc;
      off.epochs = 0;
      StepContext ctx;
      ctx.series = &data.series;
      ctx.norm = &data.test_norm;
      const PilotRun run = run_pilot(data.test, *policies[i], ctx, off, env, seed);
      b["status"] = "ok";
      b["metrics"] = metrics_json(compute_metrics(run.trajectory.values));
      b["curve"] = run.trajectory.values;
    } catch (const Error& e) {
      b["status"] = "error";
      b["error"] = std::string(e.kind()) + ": " + e.what();
    }
    baselines[i] = std::move(b);
  });

  // Forecast setups, one per (horizon, R^2) point, built sequentially.
  std::size_t max_h = 1;
  for (const auto& c : cells) max_h = std::max(max_h, c.horizon);
  std::shared_ptr<const Forecaster> base;
  std::string base_error;
  try {
    base = make_base_forecaster(config, data.series, max_h);
  } catch (const Error& e) {
    base_error = std::string(e.kind()) + ": " + e.what();
  }
  using SetupKey = std::pair<std::size_t, std::optional<double>>;
  std::map<SetupKey, ForecastSetup> setups;
  std::map<SetupKey, std::string> setup_errors;
  for (const auto& c : cells) {
    const SetupKey key{c.horizon, c.r2};
    if (setups.count(key) || setup_errors.count(key)) continue;
    if (!base) {
      setup_errors[key] = base_error;
      continue;
    }
    try {
      setups[key] = make_forecast_setup(config, data.series, base, c.horizon, c.r2);
    } catch (const Error& e) {
      setup_errors[key] = std::string(e.kind()) + ": " + e.what();
    }
  }

  std::vector<nlohmann::json> cell_out(cells.size());
  parallel_for(cells.size(), config.workers, [&](std::size_t i) {
    const CellSpec& spec = cells[i];
    nlohmann::json c;
    c["label"] = spec.row_label();
    c["variant"] = variant_name(spec.variant);
    c["horizon"] = spec.horizon;
    c["r2"] = opt_json(spec.r2);
    c["seed"] = spec.seed;
    const SetupKey key{spec.horizon, spec.r2};
    const std::size_t seed_index =
        static_cast<std::size_t>(std::find(config.seeds.begin(), config.seeds.end(), spec.seed) - config.seeds.begin());
    try {
      if (auto it = setup_errors.find(key); it != setup_errors.end()) throw Error("forecast", it->second);
      if (!policies[seed_index]) throw Error("pretrain", baselines[seed_index].value("error", "failed"));
      const ForecastSetup& setup = setups.at(key);
      if (setup.cheat) {
        c["cheat_c"] = setup.cheat->c;
        c["base_r2"] = setup.cheat->base_r2;
        c["achieved_r2"] = setup.cheat->achieved_r2;
      }
      MpcConfig m = config.mpc.for_variant(spec.variant);
      m.horizon = spec.horizon;
      StepContext ctx;
      ctx.series = &data.series;
      ctx.norm = &data.test_norm;
      ctx.forecaster = setup.forecaster.get();
      ctx.calibration = &setup.noise;
      std::unique_ptr<std::ofstream> steps;
      if (config.step_reports) {
        const auto dir = std::filesystem::path(config.output_dir) / "steps";
        std::filesystem::create_directories(dir);
        std::string name = spec.row_label() + " seed=" + std::to_string(spec.seed);
        for (char& ch : name) {
          if (ch == ' ' || ch == '/' || ch == '=') ch = '_';
        }
        steps = std::make_unique<std::ofstream>(dir / (name + ".jsonl"));
      }
      const PilotRun run = run_pilot(data.test, *policies[seed_index], ctx, m, env, spec.seed, steps.get());
      std::size_t incidents = 0;
      for (const auto& r : run.reports) incidents += r.incident ? 1 : 0;
      c["status"] = "ok";
      c["metrics"] = metrics_json(compute_metrics(run.trajectory.values));
      c["incidents"] = incidents;
      c["curve"] = run.trajectory.values;
    } catch (const Error& e) {
      c["status"] = "error";
      c["error"] = std::string(e.kind()) + ": " + e.what();
    }
    cell_out[i] = std::move(c);
  });

  nlohmann::json out;
  out["schema"] = kResultsSchema;
  out["version"] = kResultsVersion;
  out["config"] = config_to_json(config);
  out["config"]["experiment"].erase("workers");
  out["assets"] = data.series.assets();
  out["test_dates"] = {data.series.dates()[data.test.days.empty() ? 0 : data.test.days.front()],
                       data.series.dates().back()};
  out["baselines"] = baselines;
  out["cells"] = cell_out;
  return out;
}

void write_outputs(const nlohmann::json& results, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [&](const char* name, const std::string& text) {
    std::ofstream f(dir / name, std::ios::binary);
    if (!f) throw IoError("cannot write " + (dir / name).string());
    f << text;
  };
  write("results.json", results.dump(1) + "\n");
  write("config.json", results.at("config").dump(2) + "\n");
  write("table.txt", render_table(results));
  write("curves.svg", render_svg(results));
}

void regenerate_report(const std::filesystem::path& dir) {
  std::ifstream in(dir / "results.json");
  if (!in) throw IoError("cannot open " + (dir / "results.json").string());
  nlohmann::json results;
  try {
    results = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError((dir / "results.json").string() + ": " + e.what());
  }
  if (results.value("schema", "") != kResultsSchema) throw ParseError("not a results document");
  if (results.value("version", 0) != kResultsVersion) {
    throw ParseError("unsupported results version " + std::to_string(results.value("version", 0)));
  }
  std::ofstream(dir / "table.txt", std::ios::binary) << render_table(results);
  std::ofstream(dir / "curves.svg", std::ios::binary) << render_svg(results);
}

}  // namespace finpilot
