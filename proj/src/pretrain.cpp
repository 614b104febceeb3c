#include <cmath>
#include <string>

#include "finpilot/errors.h"
#include "finpilot/pilot.h"
#include "finpilot/policy.h"

namespace finpilot {

const char* pretrain_algo_name(PretrainAlgo algo) {
  return algo == PretrainAlgo::stochastic_ac ? "stochastic-ac" : "deterministic-ac";
}

PretrainAlgo parse_pretrain_algo(const std::string& name) {
  if (name == "stochastic-ac") return PretrainAlgo::stochastic_ac;
  if (name == "deterministic-ac") return PretrainAlgo::deterministic_ac;
  throw ConfigError("unknown pretraining algorithm '" + name + "'");
}

double episode_reward(const Episode& episode, const ActorCritic& policy, const EnvConfig& env) {
  const Trajectory traj = run_episode(episode, policy, ActMode::deterministic, env, 0);
  return traj.values.back() - traj.values.front();
}

namespace {

// Adam on the flat parameter vector with per-group learning rates.
class Adam {
 public:
  Adam(const PolicyParams& params, double actor_lr, double critic_lr)
      : groups_(params.flat_groups()),
        m_(params.size(), 0.0),
        v_(params.size(), 0.0),
        actor_lr_(actor_lr),
        critic_lr_(critic_lr) {}

  void descend(PolicyParams& params, const std::vector<double>& g) {
    ++t_;
    std::vector<double> theta = params.flat();
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * g[i];
      v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * g[i] * g[i];
      const double lr = groups_[i] == ParamGroup::critic ? critic_lr_ : actor_lr_;
      theta[i] -= lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + kEps);
    }
    params.assign_flat(theta);
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  std::vector<ParamGroup> groups_;
  std::vector<double> m_;
  std::vector<double> v_;
  double actor_lr_;
  double critic_lr_;
  std::size_t t_ = 0;
};

}  // namespace

ActorCritic pretrain(const Episode& train, const PolicyConfig& policy_config,
                     const EnvConfig& env_config, const PretrainConfig& config,
                     PretrainReport* report) {
  if (train.steps() < 100) {
    throw ConfigError("pretraining needs at least 100 training steps, got " + std::to_string(train.steps()));
  }
  if (config.batch_size == 0) throw ConfigError("batch_size must be positive");
  EnvConfig env = env_config;
  env.asset_count = train.asset_count;
  env.validate();

  ActorCritic policy(policy_config);
  PretrainReport local;
  local.initial_reward = episode_reward(train, policy, env);
  local.best_reward = local.initial_reward;
  PolicySnapshot best = checkpoint(policy);

  std::mt19937_64 rng(config.seed);
  Adam adam(policy.params(), config.actor_lr, config.critic_lr);
  ad::Tape tape(policy.params());
  const bool stochastic = config.algo == PretrainAlgo::stochastic_ac;

  std::size_t global_step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    PortfolioState state = initial_state(env, train.days.front());
    PolicyParams batch = policy.params().zeros_like();
    std::size_t in_batch = 0;
    for (std::size_t k = 0; k < train.steps(); ++k, ++global_step) {
      const Eigen::VectorXd& s = train.states[k];
      const Eigen::VectorXd& rel = train.relatives[k];
      Eigen::VectorXd rel_cash(rel.size() + 1);
      rel_cash << 1.0, rel;

      tape.reset();
      ad::Var sv = tape.constant(s);
      ad::Var actor_loss;
      Weights target;
      double reward_scale = 1.0 / state.value;
      const double next_value = k + 1 < train.steps() ? policy.value(train.states[k + 1]) : 0.0;
      if (stochastic) {
        const ActOutput a = policy.act(s, ActMode::stochastic, &rng);
        target = a.weights;
        const StepOutcome out = step(state, target, rel, env.fee_rate);
        const double td_target = out.reward * reward_scale + config.gamma * next_value;
        const double advantage = td_target - policy.value(s);
        ad::Var log_prob = policy.record_log_prob(tape, sv, a.logits);
        actor_loss = tape.scale(log_prob, -advantage);
        ad::Var v = policy.record_value(tape, sv);
        ad::Var err = tape.add_const(v, -td_target);
        ad::Var loss = tape.add(actor_loss, tape.scale(tape.mul(err, err), 0.5));
        if (!std::isfinite(loss.scalar())) {
          throw TrainingError("non-finite loss at step " + std::to_string(global_step));
        }
        tape.backward(loss, batch);
        state = out.next;
      } else {
        ad::Var w = tape.softmax(policy.record_mean_logits(tape, sv));
        target = Weights(w.value());
        const StepOutcome out = step(state, target, rel, env.fee_rate);
        const double td_target = out.reward * reward_scale + config.gamma * next_value;
        // The next state is action-independent, so the deterministic policy
        // gradient reduces to the gradient of the closed-form step reward.
        ad::Var reward = record_imagined_reward(tape, tape.constant(1.0),
                                                tape.constant(state.weights.values()), w, rel_cash,
                                                env.fee_rate);
        actor_loss = tape.scale(reward, -1.0);
        ad::Var v = policy.record_value(tape, sv);
        ad::Var err = tape.add_const(v, -td_target);
        ad::Var loss = tape.add(actor_loss, tape.scale(tape.mul(err, err), 0.5));
        if (!std::isfinite(loss.scalar())) {
          throw TrainingError("non-finite loss at step " + std::to_string(global_step));
        }
        tape.backward(loss, batch);
        state = out.next;
      }
      if (++in_batch == config.batch_size || k + 1 == train.steps()) {
        std::vector<double> g = batch.flat();
        for (auto& x : g) x /= static_cast<double>(in_batch);
        adam.descend(policy.params(), g);
        if (!policy.params().all_finite()) {
          throw TrainingError("parameters diverged at step " + std::to_string(global_step));
        }
        batch.set_zero();
        in_batch = 0;
      }
    }
    const double r = episode_reward(train, policy, env);
    local.epoch_reward.push_back(r);
    if (r > local.best_reward) {
      local.best_reward = r;
      local.best_epoch = epoch;
      best = checkpoint(policy);
    }
  }
  restore(policy, best);
  if (report != nullptr) *report = local;
  return policy;
}

}  // namespace finpilot
