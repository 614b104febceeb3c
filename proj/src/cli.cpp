#include "finpilot/cli.h"

#include <algorithm>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "finpilot/config.h"
#include "finpilot/errors.h"
#include "finpilot/harness.h"

namespace finpilot {

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (item.empty()) throw ConfigError("empty entry in axis list '" + s + "'");
    out.push_back(item);
  }
  return out;
}

double to_double(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::logic_error&) {
  }
  throw ConfigError("not a number: '" + s + "'");
}

std::size_t to_size(const std::string& s) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used == s.size() && v >= 0) return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
  }
  throw ConfigError("not a non-negative integer: '" + s + "'");
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> workers;
};

void add_common(CLI::App* cmd, Common& c, bool needs_config = true) {
  auto* opt = cmd->add_option("--config", c.config, "experiment config (.toml or .json)");
  if (needs_config) opt->required();
  cmd->add_option("--seed", c.seed, "run a single seed");
  cmd->add_option("--out", c.out, "output path");
  cmd->add_option("--workers", c.workers, "worker threads for sweep cells");
}

ExperimentConfig load_with_overrides(const Common& c) {
  ExperimentConfig cfg = load_config(c.config);
  if (c.seed) cfg.seeds = {*c.seed};
  if (c.workers) cfg.workers = *c.workers;
  if (!c.out.empty()) cfg.output_dir = c.out;
  cfg.validate();
  return cfg;
}

}  // namespace

void apply_axis(ExperimentConfig& config, const std::string& axis) {
  const auto eq = axis.find('=');
  if (eq == std::string::npos) throw ConfigError("axis must look like name=v1,v2: '" + axis + "'");
  const std::string name = axis.substr(0, eq);
  const auto values = split_list(axis.substr(eq + 1));
  if (name == "r2") {
    config.sweep.r2.clear();
    for (const auto& v : values) config.sweep.r2.push_back(to_double(v));
  } else if (name == "h" || name == "horizon") {
    config.sweep.horizons.clear();
    for (const auto& v : values) config.sweep.horizons.push_back(to_size(v));
  } else if (name == "variant") {
    config.sweep.variants.clear();
    for (const auto& v : values) config.sweep.variants.push_back(parse_variant(v));
  } else {
    throw ConfigError("unknown sweep axis '" + name + "' (expected r2, h or variant)");
  }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"finpilot: inference-time policy adaptation for portfolio backtests", "finpilot"};
  app.require_subcommand(1);

  Common pre_c, fit_c, cal_c, run_c, sweep_c;
  auto* pre = app.add_subcommand("pretrain", "pretrain the actor-critic on the training split");
  add_common(pre, pre_c);

  auto* fit = app.add_subcommand("forecast-fit", "fit the ridge forecaster and save it as JSON");
  add_common(fit, fit_c);
  std::optional<std::size_t> fit_h;
  fit->add_option("--horizon", fit_h, "forecast horizon (default: mpc.horizon)");

  auto* cal = app.add_subcommand("forecast-calibrate", "compute the blend coefficient for a target R^2");
  add_common(cal, cal_c);
  std::optional<double> cal_target;
  std::optional<std::size_t> cal_h;
  cal->add_option("--target", cal_target, "target R^2 (default: forecast.target_r2)");
  cal->add_option("--horizon", cal_h, "forecast horizon (default: mpc.horizon)");

  auto* run = app.add_subcommand("run", "baseline vs adapted backtest at the base config point");
  add_common(run, run_c);

  auto* sweep = app.add_subcommand("sweep", "run the configured sweep grid");
  add_common(sweep, sweep_c);
  std::vector<std::string> axes;
  sweep->add_option("--axis", axes, "override a sweep axis, e.g. r2=0.001,0.3,0.8");

  auto* report = app.add_subcommand("report", "regenerate tables and plots from results JSON");
  std::string report_in;
  report->add_option("--in", report_in, "results directory")->required();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: usage: " << msg << '\n';
    return 2;
  }

  try {
    if (*pre) {
      ExperimentConfig cfg = load_with_overrides(pre_c);
      const PreparedData data = prepare_data(cfg);
      const std::uint64_t seed = cfg.seeds.front();
      PretrainReport rep;
      PretrainConfig pc = cfg.pretrain;
      pc.seed = seed;
      ActorCritic policy =
          pretrain(data.train, make_policy_config(cfg.policy, data.series.asset_count(), seed), cfg.env, pc, &rep);
      std::filesystem::path path = pre_c.out.empty()
                                       ? std::filesystem::path(cfg.output_dir) / ("policy-seed" + std::to_string(seed) + ".fpck")
                                       : std::filesystem::path(pre_c.out);
      if (path.extension() != ".fpck") path /= "policy-seed" + std::to_string(seed) + ".fpck";
      if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
      save_checkpoint(path, checkpoint(policy));
      nlohmann::json j{{"checkpoint", path.string()},
                       {"seed", seed},
                       {"initial_reward", rep.initial_reward},
                       {"best_reward", rep.best_reward},
                       {"best_epoch", rep.best_epoch},
                       {"epoch_reward", rep.epoch_reward}};
      out << j.dump() << '\n';
    } else if (*fit) {
      ExperimentConfig cfg = load_with_overrides(fit_c);
      const MarketSeries series = load_market(cfg);
      const std::size_t h = fit_h.value_or(cfg.mpc.horizon);
      const RidgeForecaster model = RidgeForecaster::fit(series, h, cfg.forecast.ridge_lambda);
      const std::filesystem::path path =
          fit_c.out.empty() ? std::filesystem::path(cfg.output_dir) / "ridge.json" : std::filesystem::path(fit_c.out);
      write_file(path, model.to_json() + "\n");
      out << path.string() << '\n';
    } else if (*cal) {
      ExperimentConfig cfg = load_with_overrides(cal_c);
      const double target = cal_target ? *cal_target : cfg.forecast.target_r2.value_or(-1.0);
      if (!cal_target && !cfg.forecast.target_r2) throw ConfigError("no target R^2 (use --target)");
      const std::size_t h = cal_h.value_or(cfg.mpc.horizon);
      const MarketSeries series = load_market(cfg);
      cfg.forecast.target_r2 = target;
      const ForecastSetup setup =
          make_forecast_setup(cfg, series, make_base_forecaster(cfg, series, h), h, target);
      nlohmann::json j;
      j["target_r2"] = target;
      j["horizon"] = h;
      j["calibration_split"] = "test";
      j["c"] = setup.cheat->c;
      j["base_r2"] = setup.cheat->base_r2;
      nlohmann::json achieved;
      for (Split s : {Split::train, Split::valid, Split::test}) {
        try {
          const ForecastCells cells = collect_cells(series, *setup.forecaster, s, h, cfg.forecast.context_window);
          achieved[split_name(s)] = r_squared(cells.predicted, cells.realized, cells.baseline);
        } catch (const Error&) {
          achieved[split_name(s)] = nullptr;
        }
      }
      j["achieved_r2"] = achieved;
      j["noise_variance"] = setup.noise.variance;
      const std::string text = j.dump(1) + "\n";
      if (!cal_c.out.empty()) write_file(cal_c.out, text);
      out << text;
    } else if (*run || *sweep) {
      const bool is_sweep = static_cast<bool>(*sweep);
      ExperimentConfig cfg = load_with_overrides(is_sweep ? sweep_c : run_c);
      for (const auto& a : axes) apply_axis(cfg, a);
      cfg.validate();
      const nlohmann::json results = run_experiment(cfg, is_sweep);
      write_outputs(results, cfg.output_dir);
      out << render_table(results);
    } else if (*report) {
      regenerate_report(report_in);
      std::ifstream t(std::filesystem::path(report_in) / "table.txt");
      out << t.rdbuf();
    }
  } catch (const Error& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << e.kind() << ": " << msg << '\n';
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: io: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace finpilot
