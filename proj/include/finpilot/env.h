#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "finpilot/marketdata.h"

namespace finpilot {

// Portfolio allocation on the simplex; index 0 is cash.
class Weights {
 public:
  Weights() = default;
  // Validates simplex membership. Entries in [-1e-12, 0) are clamped to 0
  // and the vector renormalized; anything further off throws.
  explicit Weights(Eigen::VectorXd w);

  static Weights all_cash(std::size_t asset_count);
  static Weights uniform(std::size_t asset_count);

  const Eigen::VectorXd& values() const { return w_; }
  double operator[](Eigen::Index i) const { return w_[i]; }
  Eigen::Index size() const { return w_.size(); }
  std::size_t asset_count() const { return static_cast<std::size_t>(w_.size()) - 1; }

  friend bool operator==(const Weights& a, const Weights& b) {
    return a.w_.size() == b.w_.size() && (a.w_.array() == b.w_.array()).all();
  }

 private:
  Eigen::VectorXd w_;
};

inline constexpr double kSimplexTolerance = 1e-9;
inline constexpr double kClampTolerance = 1e-12;

struct EnvConfig {
  double initial_value = 100000.0;
  double fee_rate = 0.001;
  std::size_t asset_count = 0;

  void validate() const;
};

struct PortfolioState {
  double value = 0.0;
  Weights weights;  // post-drift, pre-rebalance
  std::size_t t = 0;
};

PortfolioState initial_state(const EnvConfig& config, std::size_t t = 0);

Weights softmax_weights(std::span<const double> logits);
inline Weights softmax_weights(const Eigen::VectorXd& logits) {
  return softmax_weights(std::span<const double>(logits.data(), static_cast<std::size_t>(logits.size())));
}

double turnover(const Weights& prev, const Weights& next);
double transaction_cost(const Weights& prev, const Weights& next, double value, double fee_rate);

// Target weights after one period of price drift, renormalized.
Weights drift(const Weights& target, const Eigen::VectorXd& asset_relatives);

struct StepOutcome {
  PortfolioState next;
  double reward = 0.0;
};

// One MDP transition. `asset_relatives` holds p_{t+1}/p_t per asset (cash is
// implicitly 1). Fee is charged on the turnover from the drifted weights.
StepOutcome step(const PortfolioState& state, const Weights& target,
                 const Eigen::VectorXd& asset_relatives, double fee_rate);

// Decision days of one split with their observations and realized relatives.
struct Episode {
  std::vector<std::size_t> days;
  std::vector<Eigen::VectorXd> states;     // flattened standardized features at each day
  std::vector<Eigen::VectorXd> relatives;  // close_{t+1}/close_t per asset
  std::size_t asset_count = 0;

  std::size_t steps() const { return days.size(); }
};

// Decision days run from the first full feature window in the split to the
// day before the split's last day.
Episode make_episode(const MarketSeries& series, Split split, const Normalizer& norm);
Eigen::VectorXd price_relatives(const MarketSeries& series, std::size_t t);

struct Trajectory {
  std::vector<std::size_t> days;
  std::vector<double> values;    // V_0 .. V_T
  std::vector<Weights> weights;  // executed targets, length T
  std::vector<double> rewards;   // length T
};

using AllocationRule =
    std::function<Weights(const Eigen::VectorXd& state, std::size_t step, std::mt19937_64& rng)>;

Trajectory run_episode(const Episode& episode, const AllocationRule& rule, const EnvConfig& config,
                       std::uint64_t seed);

}  // namespace finpilot
