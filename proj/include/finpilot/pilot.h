#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "finpilot/env.h"
#include "finpilot/forecast.h"
#include "finpilot/policy.h"
#include "finpilot/tape.h"

namespace finpilot {

enum class Variant { vanilla, noise_only, noise_lambda };
enum class ResetMode { persist, reset_each_step };

const char* variant_name(Variant v);
Variant parse_variant(const std::string& name);
const char* reset_mode_name(ResetMode m);
ResetMode parse_reset_mode(const std::string& name);

struct MpcConfig {
  std::size_t horizon = 5;     // H
  std::size_t particles = 8;   // K
  std::size_t epochs = 10;     // E
  double step_size = 0.1;      // alpha
  double gamma = 0.99;
  double lambda = 0.5;
  double sigma = 1.0;
  double eps_num = 1e-8;
  Variant variant = Variant::noise_lambda;
  ResetMode reset_mode = ResetMode::persist;
  // Imagined rollouts start from unit wealth instead of the live portfolio value.
  bool normalize_value = true;

  void validate() const;
  // Forces the fields a variant pins (vanilla: K=1, sigma=0, lambda=0; noise_only: lambda=0).
  MpcConfig for_variant(Variant v) const;
};

// r = (V - delta)(1 + rho) - V with delta = c V |w - prev|_1 and
// rho = sum_i w_i (rel_i - 1). All vectors include cash at index 0.
double imagined_reward(double value, const Eigen::VectorXd& prev_weights, const Eigen::VectorXd& weights,
                       const Eigen::VectorXd& relatives_with_cash, double fee_rate);
ad::Var record_imagined_reward(ad::Tape& tape, ad::Var value, ad::Var prev_weights, ad::Var weights,
                               const Eigen::VectorXd& relatives_with_cash, double fee_rate);

// Phase-1 cache for one particle. states[0] is the real observation s_t and
// states[h] the imagined s_{t+h}; relatives[h] moves t+h to t+h+1.
struct ParticleRollout {
  std::vector<Eigen::VectorXd> states;     // H + 1
  std::vector<Eigen::VectorXd> relatives;  // H, cash first
  std::vector<Eigen::VectorXd> noise;      // H draws for a stochastic head, else empty
  double bootstrap = 0.0;                  // detached terminal value, already scaled
};

struct ImaginedRollout {
  std::vector<ParticleRollout> particles;
  double start_value = 1.0;
  Eigen::VectorXd prev_weights;  // live weights at t, cash first
  double fee_rate = 0.0;
};

// Builds the action-independent part of the rollout: states, relatives,
// policy noise and bootstraps (critic evaluated once, at the current params).
ImaginedRollout prepare_rollout(const ActorCritic& policy, const Eigen::VectorXd& state,
                                const PortfolioState& portfolio,
                                const std::vector<ForecastTrajectory>& trajectories,
                                const MpcConfig& config, double fee_rate, std::mt19937_64& policy_rng);

// J = sum_h gamma^h r_h + gamma^H * bootstrap, recorded on the tape.
ad::Var record_particle_return(ad::Tape& tape, const ActorCritic& policy, const ImaginedRollout& rollout,
                               std::size_t k, const MpcConfig& config);
double particle_return(const ActorCritic& policy, const ImaginedRollout& rollout, std::size_t k,
                       const MpcConfig& config);

struct RiskTerms {
  double objective = 0.0;
  double mean = 0.0;
  double downside = 0.0;  // D
};

// mean - lambda * sqrt(D + eps), D = (1/K) sum min(J_k - mean, 0)^2.
RiskTerms risk_objective(std::span<const double> returns, double lambda, double eps_num);
ad::Var record_risk_objective(ad::Tape& tape, std::span<const ad::Var> returns, double lambda,
                              double eps_num);

struct StepReport {
  std::size_t t = 0;
  std::string date;
  double objective_before = 0.0;
  double objective_after = 0.0;
  double mean_return = 0.0;
  double downside = 0.0;
  std::vector<double> grad_norms;  // one per epoch
  Eigen::VectorXd executed;
  double realized_reward = 0.0;
  std::optional<std::string> incident;

  std::string to_json() const;
};

// Independent random streams so forecast noise never shifts policy draws.
struct PilotRngs {
  std::mt19937_64 forecast;
  std::mt19937_64 policy;

  static PilotRngs from_seed(std::uint64_t seed);
};

struct StepContext {
  const MarketSeries* series = nullptr;
  const Normalizer* norm = nullptr;
  const Forecaster* forecaster = nullptr;
  const NoiseCalibration* calibration = nullptr;
  double fee_rate = 0.001;
};

struct AdaptResult {
  Weights executed;
  StepReport report;
};

// One environment step of risk-aware adaptation. Runs E ascent epochs on the
// cached rollout, then executes the deterministic action on the real state.
AdaptResult adapt_step(ActorCritic& policy, const Eigen::VectorXd& state, const PortfolioState& portfolio,
                       const StepContext& ctx, const MpcConfig& config, PilotRngs& rngs);

// Single-trajectory variant without noise or risk penalty.
AdaptResult adapt_step_vanilla(ActorCritic& policy, const Eigen::VectorXd& state,
                               const PortfolioState& portfolio, const StepContext& ctx,
                               const MpcConfig& config, PilotRngs& rngs);

struct PilotRun {
  Trajectory trajectory;
  std::vector<StepReport> reports;
};

// Full backtest over an episode. With E = 0 this reproduces
// run_episode(deterministic) exactly. `policy` is copied; the caller's
// parameters are not modified. `reports_out` receives JSON lines if set.
PilotRun run_pilot(const Episode& episode, const ActorCritic& policy, const StepContext& ctx,
                   const MpcConfig& config, const EnvConfig& env, std::uint64_t seed,
                   std::ostream* reports_out = nullptr);

}  // namespace finpilot
