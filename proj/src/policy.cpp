#include "finpilot/policy.h"

#include <cmath>
#include <numbers>
#include <string>

#include "finpilot/errors.h"

namespace finpilot {

ActorCritic::ActorCritic(const PolicyConfig& config)
    : config_(config), params_(PolicyParams::initialized(config)) {}

ActorCritic::ActorCritic(const PolicyConfig& config, PolicyParams params)
    : config_(config), params_(std::move(params)) {
  const PolicyParams layout(config);
  if (layout.size() != params_.size() || layout.layers().size() != params_.layers().size()) {
    throw ShapeError("parameters do not match the policy architecture");
  }
}

void ActorCritic::check_state(const Eigen::VectorXd& state) const {
  if (static_cast<std::size_t>(state.size()) != config_.input_dim) {
    throw ShapeError("policy expects state of size " + std::to_string(config_.input_dim) +
                     ", got " + std::to_string(state.size()));
  }
}

Eigen::VectorXd ActorCritic::mean_logits(const Eigen::VectorXd& state) const {
  check_state(state);
  Eigen::VectorXd h = state;
  std::size_t index = 0;
  for (auto l : params_.actor_trunk()) {
    const auto& layer = params_.layers()[l];
    h = (layer.weight * h + layer.bias).array().tanh();
    if (!h.allFinite()) throw NumericError("non-finite activation at actor layer " + std::to_string(index));
    ++index;
  }
  const auto& head = params_.layers()[params_.actor_head()];
  Eigen::VectorXd out = head.weight * h + head.bias;
  if (!out.allFinite()) throw NumericError("non-finite activation at actor layer " + std::to_string(index));
  return out;
}

Eigen::VectorXd ActorCritic::sample_noise(std::mt19937_64& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(static_cast<Eigen::Index>(config_.action_dim));
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
  return z;
}

ActOutput ActorCritic::act(const Eigen::VectorXd& state, ActMode mode, std::mt19937_64* rng) const {
  ActOutput out;
  const Eigen::VectorXd mean = mean_logits(state);
  if (mode == ActMode::deterministic) {
    out.logits = mean;
  } else {
    if (rng == nullptr) throw ConfigError("stochastic action requires a random generator");
    const Eigen::VectorXd z = sample_noise(*rng);
    const Eigen::VectorXd std = params_.log_std().array().exp();
    out.logits = mean + std.cwiseProduct(z);
    constexpr double half_log_2pi = 0.9189385332046727;
    out.log_prob = -0.5 * z.squaredNorm() - params_.log_std().sum() -
                   half_log_2pi * static_cast<double>(z.size());
  }
  out.weights = softmax_weights(out.logits);
  return out;
}

double ActorCritic::value(const Eigen::VectorXd& state) const {
  check_state(state);
  Eigen::VectorXd h = state;
  const auto& trunk = config_.shared_trunk ? params_.actor_trunk() : params_.critic_trunk();
  std::size_t index = 0;
  for (auto l : trunk) {
    const auto& layer = params_.layers()[l];
    h = (layer.weight * h + layer.bias).array().tanh();
    if (!h.allFinite()) throw NumericError("non-finite activation at critic layer " + std::to_string(index));
    ++index;
  }
  const auto& head = params_.layers()[params_.critic_head()];
  const double v = (head.weight * h + head.bias)[0];
  if (!std::isfinite(v)) throw NumericError("non-finite activation at critic layer " + std::to_string(index));
  return v;
}

ad::Var ActorCritic::record_mean_logits(ad::Tape& tape, ad::Var state) const {
  ad::Var h = state;
  for (auto l : params_.actor_trunk()) h = tape.tanh(tape.affine(l, h));
  return tape.affine(params_.actor_head(), h);
}

ad::Var ActorCritic::record_logits(ad::Tape& tape, ad::Var state, const Eigen::VectorXd& noise) const {
  ad::Var mean = record_mean_logits(tape, state);
  if (noise.size() == 0) return mean;
  return tape.add(mean, tape.mul_const(tape.exp(tape.log_std()), noise));
}

ad::Var ActorCritic::record_value(ad::Tape& tape, ad::Var state) const {
  ad::Var h = state;
  const auto& trunk = config_.shared_trunk ? params_.actor_trunk() : params_.critic_trunk();
  for (auto l : trunk) h = tape.tanh(tape.affine(l, h));
  return tape.affine(params_.critic_head(), h);
}

ad::Var ActorCritic::record_log_prob(ad::Tape& tape, ad::Var state, const Eigen::VectorXd& logits) const {
  ad::Var mean = record_mean_logits(tape, state);
  ad::Var log_std = tape.log_std();
  // z = (a - mu) * exp(-log_std)
  ad::Var z = tape.mul(tape.sub(tape.constant(logits), mean), tape.exp(tape.scale(log_std, -1.0)));
  constexpr double half_log_2pi = 0.9189385332046727;
  ad::Var quad = tape.scale(tape.dot(z, z), -0.5);
  return tape.add_const(tape.sub(quad, tape.sum(log_std)),
                        -half_log_2pi * static_cast<double>(logits.size()));
}

PolicyParams grad(ad::Tape& tape, ad::Var objective, const PolicyParams& params) {
  PolicyParams g = params.zeros_like();
  tape.backward(objective, g);
  return g;
}

AllocationRule allocation_rule(const ActorCritic& policy, ActMode mode) {
  return [&policy, mode](const Eigen::VectorXd& state, std::size_t, std::mt19937_64& rng) {
    return policy.act(state, mode, &rng).weights;
  };
}

Trajectory run_episode(const Episode& episode, const ActorCritic& policy, ActMode mode,
                       const EnvConfig& config, std::uint64_t seed) {
  return run_episode(episode, allocation_rule(policy, mode), config, seed);
}

}  // namespace finpilot
