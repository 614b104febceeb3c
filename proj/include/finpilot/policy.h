#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "finpilot/env.h"
#include "finpilot/params.h"
#include "finpilot/tape.h"

namespace finpilot {

struct ActOutput {
  Eigen::VectorXd logits;
  Weights weights;
  std::optional<double> log_prob;  // stochastic mode only
};

// Actor-critic MLP. The actor maps a flattened state to N+1 mean logits;
// stochastic mode adds state-independent Gaussian noise in logit space
// (reparameterized) before the softmax. The critic estimates the discounted
// future return per unit of portfolio value.
class ActorCritic {
 public:
  explicit ActorCritic(const PolicyConfig& config);
  ActorCritic(const PolicyConfig& config, PolicyParams params);

  const PolicyConfig& config() const { return config_; }
  PolicyParams& params() { return params_; }
  const PolicyParams& params() const { return params_; }

  Eigen::VectorXd mean_logits(const Eigen::VectorXd& state) const;
  // `rng` is required in stochastic mode.
  ActOutput act(const Eigen::VectorXd& state, ActMode mode, std::mt19937_64* rng) const;
  ActOutput act(const Eigen::VectorXd& state, std::mt19937_64* rng = nullptr) const {
    return act(state, config_.mode, rng);
  }
  double value(const Eigen::VectorXd& state) const;

  // Tape recording. `noise` holds standard-normal draws for the stochastic
  // head; pass an empty vector for the deterministic head.
  ad::Var record_logits(ad::Tape& tape, ad::Var state, const Eigen::VectorXd& noise) const;
  ad::Var record_mean_logits(ad::Tape& tape, ad::Var state) const;
  ad::Var record_value(ad::Tape& tape, ad::Var state) const;
  // Gaussian log-density of fixed `logits` under the current head.
  ad::Var record_log_prob(ad::Tape& tape, ad::Var state, const Eigen::VectorXd& logits) const;

  Eigen::VectorXd sample_noise(std::mt19937_64& rng) const;

 private:
  void check_state(const Eigen::VectorXd& state) const;

  PolicyConfig config_;
  PolicyParams params_;
};

// Reverse-mode gradient of a recorded scalar with respect to the policy
// parameters bound to `tape`. Consumes the tape.
PolicyParams grad(ad::Tape& tape, ad::Var objective, const PolicyParams& params);

AllocationRule allocation_rule(const ActorCritic& policy, ActMode mode);
Trajectory run_episode(const Episode& episode, const ActorCritic& policy, ActMode mode,
                       const EnvConfig& config, std::uint64_t seed);

// ---- checkpoint ------------------------------------------------------------

struct PolicySnapshot {
  PolicyConfig config;
  std::vector<double> flat;
};

PolicySnapshot checkpoint(const ActorCritic& policy);
void restore(ActorCritic& policy, const PolicySnapshot& snapshot);

// Binary container: "FPCK", u32 version, u32 config-JSON length, config
// JSON bytes, u64 parameter count, little-endian IEEE-754 doubles.
void save_checkpoint(const std::filesystem::path& path, const PolicySnapshot& snapshot);
PolicySnapshot load_checkpoint(const std::filesystem::path& path);
ActorCritic policy_from_snapshot(const PolicySnapshot& snapshot);

std::string policy_config_json(const PolicyConfig& config);
PolicyConfig policy_config_from_json(const std::string& json);

// ---- pretraining -----------------------------------------------------------

enum class PretrainAlgo { stochastic_ac, deterministic_ac };

const char* pretrain_algo_name(PretrainAlgo algo);
PretrainAlgo parse_pretrain_algo(const std::string& name);

struct PretrainConfig {
  PretrainAlgo algo = PretrainAlgo::stochastic_ac;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double actor_lr = 3e-4;
  double critic_lr = 1e-3;
  double gamma = 0.99;
  std::uint64_t seed = 0;
};

struct PretrainReport {
  std::vector<double> epoch_reward;  // deterministic train-episode reward after each epoch
  double initial_reward = 0.0;
  double best_reward = 0.0;
  std::size_t best_epoch = 0;  // 0 = initial parameters kept
};

// One-step advantage actor-critic on the training episode. Never touches
// another split or any forecaster. Keeps the best deterministic-evaluation
// parameters seen, so the result never scores below the initial policy.
ActorCritic pretrain(const Episode& train, const PolicyConfig& policy_config,
                     const EnvConfig& env_config, const PretrainConfig& config,
                     PretrainReport* report = nullptr);

double episode_reward(const Episode& episode, const ActorCritic& policy, const EnvConfig& env);

}  // namespace finpilot
