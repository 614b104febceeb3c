#include "finpilot/env.h"

#include <cmath>
#include <string>

#include "finpilot/errors.h"

namespace finpilot {

Weights::Weights(Eigen::VectorXd w) : w_(std::move(w)) {
  if (w_.size() < 1) throw InvalidActionError("empty weight vector");
  bool clamped = false;
  for (Eigen::Index i = 0; i < w_.size(); ++i) {
    if (!std::isfinite(w_[i])) throw InvalidActionError("non-finite portfolio weight");
    if (w_[i] < 0.0) {
      if (w_[i] < -kClampTolerance) {
        throw InvalidActionError("negative portfolio weight " + std::to_string(w_[i]));
      }
      w_[i] = 0.0;
      clamped = true;
    }
  }
  const double sum = w_.sum();
  if (std::abs(sum - 1.0) > kSimplexTolerance) {
    throw InvalidActionError("weights sum to " + std::to_string(sum) + ", not 1");
  }
  if (clamped) w_ /= sum;
}

Weights Weights::all_cash(std::size_t asset_count) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(asset_count + 1));
  w[0] = 1.0;
  return Weights(std::move(w));
}

Weights Weights::uniform(std::size_t asset_count) {
  const auto n = static_cast<Eigen::Index>(asset_count + 1);
  return Weights(Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n)));
}

void EnvConfig::validate() const {
  if (!(initial_value > 0.0)) throw ConfigError("initial_value must be positive");
  if (!(fee_rate >= 0.0 && fee_rate < 1.0)) throw ConfigError("fee_rate must lie in [0, 1)");
}

PortfolioState initial_state(const EnvConfig& config, std::size_t t) {
  config.validate();
  return {config.initial_value, Weights::all_cash(config.asset_count), t};
}

Weights softmax_weights(std::span<const double> logits) {
  if (logits.empty()) throw InvalidActionError("empty action vector");
  double max = logits[0];
  for (double a : logits) {
    if (std::isnan(a)) throw InvalidActionError("NaN in action vector");
    max = std::max(max, a);
  }
  if (!std::isfinite(max)) throw InvalidActionError("infinite action entry");
  Eigen::VectorXd w(static_cast<Eigen::Index>(logits.size()));
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    w[static_cast<Eigen::Index>(i)] = std::exp(logits[i] - max);
    sum += w[static_cast<Eigen::Index>(i)];
  }
  w /= sum;
  return Weights(std::move(w));
}

double turnover(const Weights& prev, const Weights& next) {
  if (prev.size() != next.size()) throw ShapeError("weight vectors differ in length");
  return (next.values() - prev.values()).cwiseAbs().sum();
}

double transaction_cost(const Weights& prev, const Weights& next, double value, double fee_rate) {
  return fee_rate * value * turnover(prev, next);
}

Weights drift(const Weights& target, const Eigen::VectorXd& asset_relatives) {
  Eigen::VectorXd grown = target.values();
  grown.tail(asset_relatives.size()).array() *= asset_relatives.array();
  grown /= grown.sum();
  return Weights(std::move(grown));
}

StepOutcome step(const PortfolioState& state, const Weights& target,
                 const Eigen::VectorXd& asset_relatives, double fee_rate) {
  if (static_cast<Eigen::Index>(target.asset_count()) != asset_relatives.size() ||
      target.size() != state.weights.size()) {
    throw ShapeError("step: weights and relatives disagree on asset count");
  }
  for (Eigen::Index i = 0; i < asset_relatives.size(); ++i) {
    if (!std::isfinite(asset_relatives[i]) || asset_relatives[i] <= 0.0) {
      throw MarketDataError("non-positive or non-finite price relative for asset " +
                            std::to_string(i));
    }
  }
  const double fee = transaction_cost(state.weights, target, state.value, fee_rate);
  double growth = 0.0;
  for (Eigen::Index i = 0; i < asset_relatives.size(); ++i) {
    growth += target[i + 1] * (asset_relatives[i] - 1.0);
  }
  StepOutcome out;
  out.next.value = (state.value - fee) * (1.0 + growth);
  out.next.weights = drift(target, asset_relatives);
  out.next.t = state.t + 1;
  out.reward = out.next.value - state.value;
  return out;
}

Eigen::VectorXd price_relatives(const MarketSeries& series, std::size_t t) {
  if (t + 1 >= series.length()) throw BoundsError("no next-day price after day " + std::to_string(t));
  Eigen::VectorXd rel(static_cast<Eigen::Index>(series.asset_count()));
  for (std::size_t i = 0; i < series.asset_count(); ++i) {
    rel[static_cast<Eigen::Index>(i)] = series.close(i, t + 1) / series.close(i, t);
  }
  return rel;
}

Episode make_episode(const MarketSeries& series, Split split, const Normalizer& norm) {
  const SplitRange r = series.range(split);
  Episode ep;
  ep.asset_count = series.asset_count();
  const std::size_t first = first_feature_day(r);
  for (std::size_t t = first; t + 1 < r.end; ++t) {
    ep.days.push_back(t);
    ep.states.push_back(apply_normalizer(norm, compute_features(series, t)).flat());
    ep.relatives.push_back(price_relatives(series, t));
  }
  if (ep.days.empty()) {
    throw BoundsError(std::string("split '") + split_name(split) + "' has no decision days");
  }
  return ep;
}

Trajectory run_episode(const Episode& episode, const AllocationRule& rule, const EnvConfig& config,
                       std::uint64_t seed) {
  EnvConfig cfg = config;
  cfg.asset_count = episode.asset_count;
  PortfolioState state = initial_state(cfg, episode.days.empty() ? 0 : episode.days.front());
  std::mt19937_64 rng(seed);
  Trajectory traj;
  traj.values.push_back(state.value);
  for (std::size_t k = 0; k < episode.steps(); ++k) {
    const Weights target = rule(episode.states[k], k, rng);
    const StepOutcome out = step(state, target, episode.relatives[k], cfg.fee_rate);
    traj.days.push_back(episode.days[k]);
    traj.weights.push_back(target);
    traj.rewards.push_back(out.reward);
    traj.values.push_back(out.next.value);
    state = out.next;
  }
  return traj;
}

}  // namespace finpilot
