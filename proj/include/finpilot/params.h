#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace finpilot {

enum class ActMode { deterministic, stochastic };

const char* act_mode_name(ActMode mode);
ActMode parse_act_mode(const std::string& name);

struct PolicyConfig {
  std::size_t input_dim = 0;   // N * 11
  std::size_t action_dim = 0;  // N + 1
  std::vector<std::size_t> hidden{128, 128};
  std::string activation = "tanh";
  ActMode mode = ActMode::deterministic;
  bool shared_trunk = false;
  std::uint64_t init_seed = 0;
  double init_log_std = -1.0;
  // Hidden layers draw N(0, gain^2 / fan_in); the mean head is scaled by
  // head_gain so the initial allocation is close to uniform.
  double init_gain = 1.0;
  double head_gain = 0.01;

  static PolicyConfig for_assets(std::size_t asset_count);
  void validate() const;
  bool same_architecture(const PolicyConfig& other) const;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

enum class ParamGroup { actor, critic, all };

// Actor trunk + actor head (+ log-std) and critic trunk + critic head. With a
// shared trunk the critic owns only its head.
class PolicyParams {
 public:
  PolicyParams() = default;
  explicit PolicyParams(const PolicyConfig& config);  // zero-initialized

  static PolicyParams initialized(const PolicyConfig& config);

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  Eigen::VectorXd& log_std() { return log_std_; }
  const Eigen::VectorXd& log_std() const { return log_std_; }

  const std::vector<std::size_t>& actor_trunk() const { return actor_trunk_; }
  std::size_t actor_head() const { return actor_head_; }
  const std::vector<std::size_t>& critic_trunk() const { return critic_trunk_; }
  std::size_t critic_head() const { return critic_head_; }
  bool is_critic_layer(std::size_t layer) const;

  std::size_t size() const;
  std::vector<double> flat() const;
  void assign_flat(const std::vector<double>& flat);

  // Per-entry group mask in flat order.
  std::vector<ParamGroup> flat_groups() const;

  void set_zero();
  PolicyParams zeros_like() const;
  // this += scale * other, restricted to `group`.
  void add_scaled(const PolicyParams& other, double scale, ParamGroup group);
  double squared_norm(ParamGroup group) const;
  bool all_finite() const;
  bool operator==(const PolicyParams& other) const;

 private:
  std::vector<DenseLayer> layers_;
  Eigen::VectorXd log_std_;
  std::vector<std::size_t> actor_trunk_;
  std::size_t actor_head_ = 0;
  std::vector<std::size_t> critic_trunk_;
  std::size_t critic_head_ = 0;
};

}  // namespace finpilot
