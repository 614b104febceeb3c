#include "finpilot/pilot.h"

#include <cmath>
#include <ostream>

#include <json.hpp>

#include "finpilot/errors.h"

namespace finpilot {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::vanilla: return "vanilla";
    case Variant::noise_only: return "noise_only";
    case Variant::noise_lambda: return "noise_lambda";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  if (name == "vanilla") return Variant::vanilla;
  if (name == "noise_only" || name == "noise-only") return Variant::noise_only;
  if (name == "noise_lambda" || name == "noise-lambda") return Variant::noise_lambda;
  throw ConfigError("unknown variant '" + name + "'");
}

const char* reset_mode_name(ResetMode m) {
  return m == ResetMode::persist ? "persist" : "reset_each_step";
}

ResetMode parse_reset_mode(const std::string& name) {
  if (name == "persist") return ResetMode::persist;
  if (name == "reset_each_step" || name == "reset-each-step") return ResetMode::reset_each_step;
  throw ConfigError("unknown reset mode '" + name + "'");
}

void MpcConfig::validate() const {
  if (horizon < 1) throw ConfigError("horizon H must be >= 1");
  if (particles < 1) throw ConfigError("particle count K must be >= 1");
  if (!(step_size >= 0.0) || !std::isfinite(step_size)) throw ConfigError("step size alpha must be >= 0");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (!(sigma >= 0.0)) throw ConfigError("sigma must be >= 0");
  if (!(eps_num > 0.0)) throw ConfigError("eps_num must be > 0");
  if (variant == Variant::vanilla && (particles != 1 || sigma != 0.0 || lambda != 0.0)) {
    throw ConfigError("vanilla variant requires K=1, sigma=0, lambda=0");
  }
  if (variant == Variant::noise_only && lambda != 0.0) {
    throw ConfigError("noise_only variant requires lambda=0");
  }
}

MpcConfig MpcConfig::for_variant(Variant v) const {
  MpcConfig out = *this;
  out.variant = v;
  if (v == Variant::vanilla) {
    out.particles = 1;
    out.sigma = 0.0;
    out.lambda = 0.0;
  } else if (v == Variant::noise_only) {
    out.lambda = 0.0;
  }
  return out;
}

// ---- reward ----------------------------------------------------------------

double imagined_reward(double value, const Eigen::VectorXd& prev_weights, const Eigen::VectorXd& weights,
                       const Eigen::VectorXd& relatives_with_cash, double fee_rate) {
  if (prev_weights.size() != weights.size() || weights.size() != relatives_with_cash.size()) {
    throw ShapeError("imagined reward: weights and relatives differ in length");
  }
  const double fee = fee_rate * value * (weights - prev_weights).cwiseAbs().sum();
  const double growth = weights.dot(relatives_with_cash.array().matrix() - Eigen::VectorXd::Ones(weights.size()));
  return (value - fee) * (1.0 + growth) - value;
}

ad::Var record_imagined_reward(ad::Tape& tape, ad::Var value, ad::Var prev_weights, ad::Var weights,
                               const Eigen::VectorXd& relatives_with_cash, double fee_rate) {
  if (weights.size() != relatives_with_cash.size() || prev_weights.size() != weights.size()) {
    throw ShapeError("imagined reward: weights and relatives differ in length");
  }
  const Eigen::VectorXd excess = relatives_with_cash.array() - 1.0;
  ad::Var turnover = tape.sum(tape.abs(tape.sub(weights, prev_weights)));
  ad::Var fee = tape.scale(tape.mul(value, turnover), fee_rate);
  ad::Var growth = tape.add_const(tape.dot_const(weights, excess), 1.0);
  return tape.sub(tape.mul(tape.sub(value, fee), growth), value);
}

// ---- rollout ---------------------------------------------------------------

ImaginedRollout prepare_rollout(const ActorCritic& policy, const Eigen::VectorXd& state,
                                const PortfolioState& portfolio,
                                const std::vector<ForecastTrajectory>& trajectories,
                                const MpcConfig& config, double fee_rate, std::mt19937_64& policy_rng) {
  if (trajectories.empty()) throw ConfigError("rollout needs at least one trajectory");
  ImaginedRollout out;
  out.start_value = config.normalize_value ? 1.0 : portfolio.value;
  out.prev_weights = portfolio.weights.values();
  out.fee_rate = fee_rate;
  const bool stochastic = policy.config().mode == ActMode::stochastic;
  const std::size_t H = config.horizon;
  for (const auto& traj : trajectories) {
    if (traj.horizon() < H) throw CoverageError("forecast shorter than the planning horizon");
    ParticleRollout p;
    p.states.push_back(state);
    for (std::size_t h = 0; h < H; ++h) p.states.push_back(traj.states[h]);
    for (std::size_t h = 0; h < H; ++h) {
      Eigen::VectorXd rel(traj.relatives[h].size() + 1);
      rel << 1.0, traj.relatives[h];
      p.relatives.push_back(std::move(rel));
    }
    if (stochastic) {
      for (std::size_t h = 0; h < H; ++h) p.noise.push_back(policy.sample_noise(policy_rng));
    }
    p.bootstrap = out.start_value * policy.value(p.states[H]);
    out.particles.push_back(std::move(p));
  }
  return out;
}

ad::Var record_particle_return(ad::Tape& tape, const ActorCritic& policy, const ImaginedRollout& rollout,
                               std::size_t k, const MpcConfig& config) {
  const ParticleRollout& p = rollout.particles.at(k);
  const std::size_t H = p.relatives.size();
  ad::Var value = tape.constant(rollout.start_value);
  ad::Var prev = tape.constant(rollout.prev_weights);
  ad::Var total = tape.constant(0.0);
  double discount = 1.0;
  static const Eigen::VectorXd kNoNoise;
  for (std::size_t h = 0; h < H; ++h) {
    ad::Var s = tape.constant(p.states[h]);
    ad::Var logits = policy.record_logits(tape, s, p.noise.empty() ? kNoNoise : p.noise[h]);
    ad::Var w = tape.softmax(logits);
    ad::Var r = record_imagined_reward(tape, value, prev, w, p.relatives[h], rollout.fee_rate);
    if (!std::isfinite(r.scalar())) {
      throw NumericError("non-finite imagined reward at particle " + std::to_string(k) + ", step " +
                         std::to_string(h));
    }
    total = tape.add(total, tape.scale(r, discount));
    value = tape.add(value, r);
    ad::Var grown = tape.mul_const(w, p.relatives[h]);
    prev = tape.div(grown, tape.sum(grown));
    discount *= config.gamma;
  }
  return tape.add_const(total, discount * p.bootstrap);
}

double particle_return(const ActorCritic& policy, const ImaginedRollout& rollout, std::size_t k,
                       const MpcConfig& config) {
  ad::Tape tape(policy.params());
  return record_particle_return(tape, policy, rollout, k, config).scalar();
}

RiskTerms risk_objective(std::span<const double> returns, double lambda, double eps_num) {
  if (returns.empty()) throw ConfigError("risk objective needs K >= 1 returns");
  RiskTerms out;
  for (double j : returns) out.mean += j;
  out.mean /= static_cast<double>(returns.size());
  for (double j : returns) {
    const double d = std::min(j - out.mean, 0.0);
    out.downside += d * d;
  }
  out.downside /= static_cast<double>(returns.size());
  out.objective = out.mean - lambda * std::sqrt(out.downside + eps_num);
  return out;
}

ad::Var record_risk_objective(ad::Tape& tape, std::span<const ad::Var> returns, double lambda,
                              double eps_num) {
  if (returns.empty()) throw ConfigError("risk objective needs K >= 1 returns");
  const double inv_k = 1.0 / static_cast<double>(returns.size());
  ad::Var sum = returns[0];
  for (std::size_t k = 1; k < returns.size(); ++k) sum = tape.add(sum, returns[k]);
  ad::Var mean = tape.scale(sum, inv_k);
  ad::Var dsum = tape.constant(0.0);
  for (const ad::Var& j : returns) {
    ad::Var d = tape.min_zero(tape.sub(j, mean));
    dsum = tape.add(dsum, tape.mul(d, d));
  }
  ad::Var penalty = tape.sqrt(tape.add_const(tape.scale(dsum, inv_k), eps_num));
  return tape.sub(mean, tape.scale(penalty, lambda));
}

// ---- adaptation ------------------------------------------------------------

std::string StepReport::to_json() const {
  nlohmann::json j;
  j["t"] = t;
  j["date"] = date;
  j["objective_before"] = objective_before;
  j["objective_after"] = objective_after;
  j["mean_return"] = mean_return;
  j["downside"] = downside;
  j["grad_norms"] = grad_norms;
  j["executed"] = std::vector<double>(executed.data(), executed.data() + executed.size());
  j["realized_reward"] = realized_reward;
  j["incident"] = incident ? nlohmann::json(*incident) : nlohmann::json(nullptr);
  return j.dump();
}

PilotRngs PilotRngs::from_seed(std::uint64_t seed) {
  const auto lo = static_cast<std::uint32_t>(seed);
  const auto hi = static_cast<std::uint32_t>(seed >> 32);
  std::seed_seq forecast_seq{lo, hi, 1u};
  std::seed_seq policy_seq{lo, hi, 2u};
  return {std::mt19937_64(forecast_seq), std::mt19937_64(policy_seq)};
}

namespace {

struct Evaluation {
  RiskTerms terms;
  PolicyParams gradient;
};

// Records all particle returns and the risk objective on one tape; returns
// the objective terms and, if requested, the gradient.
RiskTerms evaluate(ad::Tape& tape, const ActorCritic& policy, const ImaginedRollout& rollout,
                   const MpcConfig& config, PolicyParams* gradient) {
  tape.reset();
  std::vector<ad::Var> returns;
  std::vector<double> values;
  for (std::size_t k = 0; k < rollout.particles.size(); ++k) {
    returns.push_back(record_particle_return(tape, policy, rollout, k, config));
    values.push_back(returns.back().scalar());
  }
  RiskTerms terms = risk_objective(values, config.lambda, config.eps_num);
  if (gradient != nullptr) {
    ad::Var objective = record_risk_objective(tape, returns, config.lambda, config.eps_num);
    tape.backward(objective, *gradient);
  }
  return terms;
}

double evaluate_vanilla(ad::Tape& tape, const ActorCritic& policy, const ImaginedRollout& rollout,
                        const MpcConfig& config, PolicyParams* gradient) {
  tape.reset();
  ad::Var j = record_particle_return(tape, policy, rollout, 0, config);
  const double value = j.scalar();
  if (gradient != nullptr) tape.backward(j, *gradient);
  return value;
}

std::vector<ForecastTrajectory> imagine(const PortfolioState& portfolio, const StepContext& ctx,
                                        const MpcConfig& config, std::size_t particles, double sigma,
                                        PilotRngs& rngs) {
  if (ctx.series == nullptr || ctx.forecaster == nullptr || ctx.calibration == nullptr) {
    throw ConfigError("adaptation needs a series, a forecaster and a noise calibration");
  }
  const ForecastTrajectory base = forecast(*ctx.forecaster, *ctx.series, portfolio.t, config.horizon, ctx.norm);
  return perturb(base, *ctx.calibration, sigma, particles, rngs.forecast, *ctx.series, ctx.norm);
}

void fill_common(StepReport& report, const PortfolioState& portfolio, const StepContext& ctx) {
  report.t = portfolio.t;
  if (ctx.series != nullptr && portfolio.t < ctx.series->length()) report.date = ctx.series->dates()[portfolio.t];
}

template <typename Eval>
AdaptResult ascend(ActorCritic& policy, const Eigen::VectorXd& state, const PortfolioState& portfolio,
                   const StepContext& ctx, const MpcConfig& config, Eval&& eval) {
  AdaptResult result;
  fill_common(result.report, portfolio, ctx);
  const PolicySnapshot entry = checkpoint(policy);
  ad::Tape tape(policy.params());
  try {
    for (std::size_t e = 0; e < config.epochs; ++e) {
      PolicyParams g = policy.params().zeros_like();
      const RiskTerms terms = eval(tape, &g);
      if (e == 0) {
        result.report.objective_before = terms.objective;
        result.report.mean_return = terms.mean;
        result.report.downside = terms.downside;
      }
      if (!std::isfinite(terms.objective) || !g.all_finite()) {
        throw NumericError("non-finite objective gradient at epoch " + std::to_string(e));
      }
      result.report.grad_norms.push_back(std::sqrt(g.squared_norm(ParamGroup::all)));
      policy.params().add_scaled(g, config.step_size, ParamGroup::all);
      if (!policy.params().all_finite()) throw NumericError("non-finite parameters after epoch " + std::to_string(e));
    }
    result.report.objective_after = eval(tape, nullptr).objective;
    if (!std::isfinite(result.report.objective_after)) throw NumericError("non-finite objective after adaptation");
    result.executed = policy.act(state, ActMode::deterministic, nullptr).weights;
  } catch (const NumericError& e) {
    restore(policy, entry);
    result.report.incident = std::string("adaptation aborted: ") + e.what();
    result.executed = policy.act(state, ActMode::deterministic, nullptr).weights;
  }
  if (config.reset_mode == ResetMode::reset_each_step) restore(policy, entry);
  result.report.executed = result.executed.values();
  return result;
}

AdaptResult baseline_action(const ActorCritic& policy, const Eigen::VectorXd& state,
                            const PortfolioState& portfolio, const StepContext& ctx) {
  AdaptResult result;
  fill_common(result.report, portfolio, ctx);
  result.executed = policy.act(state, ActMode::deterministic, nullptr).weights;
  result.report.executed = result.executed.values();
  return result;
}

}  // namespace

AdaptResult adapt_step(ActorCritic& policy, const Eigen::VectorXd& state, const PortfolioState& portfolio,
                       const StepContext& ctx, const MpcConfig& config, PilotRngs& rngs) {
  config.validate();
  if (config.epochs == 0) return baseline_action(policy, state, portfolio, ctx);
  ImaginedRollout rollout;
  try {
    const auto trajectories = imagine(portfolio, ctx, config, config.particles, config.sigma, rngs);
    rollout = prepare_rollout(policy, state, portfolio, trajectories, config, ctx.fee_rate, rngs.policy);
  } catch (const NumericError& e) {
    AdaptResult r = baseline_action(policy, state, portfolio, ctx);
    r.report.incident = std::string("rollout failed: ") + e.what();
    return r;
  }
  return ascend(policy, state, portfolio, ctx, config,
                [&](ad::Tape& tape, PolicyParams* g) { return evaluate(tape, policy, rollout, config, g); });
}

AdaptResult adapt_step_vanilla(ActorCritic& policy, const Eigen::VectorXd& state,
                               const PortfolioState& portfolio, const StepContext& ctx,
                               const MpcConfig& config, PilotRngs& rngs) {
  MpcConfig cfg = config.for_variant(Variant::vanilla);
  cfg.validate();
  if (cfg.epochs == 0) return baseline_action(policy, state, portfolio, ctx);
  ImaginedRollout rollout;
  try {
    const auto trajectories = imagine(portfolio, ctx, cfg, 1, 0.0, rngs);
    rollout = prepare_rollout(policy, state, portfolio, trajectories, cfg, ctx.fee_rate, rngs.policy);
  } catch (const NumericError& e) {
    AdaptResult r = baseline_action(policy, state, portfolio, ctx);
    r.report.incident = std::string("rollout failed: ") + e.what();
    return r;
  }
  return ascend(policy, state, portfolio, ctx, cfg, [&](ad::Tape& tape, PolicyParams* g) {
    RiskTerms terms;
    terms.objective = evaluate_vanilla(tape, policy, rollout, cfg, g);
    terms.mean = terms.objective;
    return terms;
  });
}

PilotRun run_pilot(const Episode& episode, const ActorCritic& policy, const StepContext& ctx,
                   const MpcConfig& config, const EnvConfig& env, std::uint64_t seed,
                   std::ostream* reports_out) {
  config.validate();
  EnvConfig cfg = env;
  cfg.asset_count = episode.asset_count;
  cfg.validate();
  StepContext context = ctx;
  context.fee_rate = cfg.fee_rate;

  ActorCritic live = policy;
  PilotRngs rngs = PilotRngs::from_seed(seed);
  PortfolioState state = initial_state(cfg, episode.days.empty() ? 0 : episode.days.front());
  PilotRun run;
  run.trajectory.values.push_back(state.value);
  for (std::size_t k = 0; k < episode.steps(); ++k) {
    state.t = episode.days[k];
    AdaptResult a = config.variant == Variant::vanilla
                        ? adapt_step_vanilla(live, episode.states[k], state, context, config, rngs)
                        : adapt_step(live, episode.states[k], state, context, config, rngs);
    const StepOutcome out = step(state, a.executed, episode.relatives[k], cfg.fee_rate);
    a.report.realized_reward = out.reward;
    run.trajectory.days.push_back(episode.days[k]);
    run.trajectory.weights.push_back(a.executed);
    run.trajectory.rewards.push_back(out.reward);
    run.trajectory.values.push_back(out.next.value);
    if (reports_out != nullptr) *reports_out << a.report.to_json() << '\n';
    run.reports.push_back(std::move(a.report));
    state = out.next;
  }
  return run;
}

}  // namespace finpilot
