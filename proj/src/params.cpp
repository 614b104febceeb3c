#include "finpilot/params.h"

#include <cmath>
#include <random>

#include "finpilot/errors.h"
#include "finpilot/marketdata.h"

namespace finpilot {

const char* act_mode_name(ActMode mode) {
  return mode == ActMode::deterministic ? "deterministic" : "stochastic";
}

ActMode parse_act_mode(const std::string& name) {
  if (name == "deterministic") return ActMode::deterministic;
  if (name == "stochastic") return ActMode::stochastic;
  throw ConfigError("unknown policy mode '" + name + "'");
}

PolicyConfig PolicyConfig::for_assets(std::size_t asset_count) {
  PolicyConfig c;
  c.input_dim = asset_count * kFeatureCount;
  c.action_dim = asset_count + 1;
  return c;
}

void PolicyConfig::validate() const {
  if (input_dim == 0 || action_dim < 2) throw ConfigError("policy needs input_dim > 0 and action_dim >= 2");
  if (hidden.empty()) throw ConfigError("policy needs at least one hidden layer");
  for (auto h : hidden) {
    if (h < 1) throw ConfigError("hidden sizes must be >= 1");
  }
  if (activation != "tanh") throw ConfigError("unsupported activation '" + activation + "'");
}

bool PolicyConfig::same_architecture(const PolicyConfig& o) const {
  return input_dim == o.input_dim && action_dim == o.action_dim && hidden == o.hidden &&
         shared_trunk == o.shared_trunk && activation == o.activation;
}

namespace {

DenseLayer zero_layer(std::size_t in, std::size_t out) {
  return {Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)),
          Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out))};
}

}  // namespace

PolicyParams::PolicyParams(const PolicyConfig& config) {
  config.validate();
  std::size_t in = config.input_dim;
  for (auto h : config.hidden) {
    actor_trunk_.push_back(layers_.size());
    layers_.push_back(zero_layer(in, h));
    in = h;
  }
  actor_head_ = layers_.size();
  layers_.push_back(zero_layer(in, config.action_dim));
  if (!config.shared_trunk) {
    in = config.input_dim;
    for (auto h : config.hidden) {
      critic_trunk_.push_back(layers_.size());
      layers_.push_back(zero_layer(in, h));
      in = h;
    }
  }
  critic_head_ = layers_.size();
  layers_.push_back(zero_layer(config.hidden.back(), 1));
  log_std_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(config.action_dim));
}

PolicyParams PolicyParams::initialized(const PolicyConfig& config) {
  PolicyParams p(config);
  std::mt19937_64 rng(config.init_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t l = 0; l < p.layers_.size(); ++l) {
    auto& layer = p.layers_[l];
    const double fan_in = static_cast<double>(layer.weight.cols());
    double gain = config.init_gain;
    if (l == p.actor_head_) gain = config.head_gain;
    const double scale = gain / std::sqrt(fan_in);
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) layer.weight(r, c) = scale * normal(rng);
    }
  }
  p.log_std_.setConstant(config.init_log_std);
  return p;
}

bool PolicyParams::is_critic_layer(std::size_t layer) const {
  if (layer == critic_head_) return true;
  for (auto l : critic_trunk_) {
    if (l == layer) return true;
  }
  return false;
}

std::size_t PolicyParams::size() const {
  std::size_t n = static_cast<std::size_t>(log_std_.size());
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

std::vector<double> PolicyParams::flat() const {
  std::vector<double> out;
  out.reserve(size());
  for (const auto& l : layers_) {
    out.insert(out.end(), l.weight.data(), l.weight.data() + l.weight.size());
    out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
  }
  out.insert(out.end(), log_std_.data(), log_std_.data() + log_std_.size());
  return out;
}

void PolicyParams::assign_flat(const std::vector<double>& flat) {
  if (flat.size() != size()) {
    throw ShapeError("flat parameter vector has " + std::to_string(flat.size()) +
                     " entries, expected " + std::to_string(size()));
  }
  std::size_t k = 0;
  for (auto& l : layers_) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(k),
              flat.begin() + static_cast<std::ptrdiff_t>(k + l.weight.size()), l.weight.data());
    k += static_cast<std::size_t>(l.weight.size());
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(k),
              flat.begin() + static_cast<std::ptrdiff_t>(k + l.bias.size()), l.bias.data());
    k += static_cast<std::size_t>(l.bias.size());
  }
  std::copy(flat.begin() + static_cast<std::ptrdiff_t>(k), flat.end(), log_std_.data());
}

std::vector<ParamGroup> PolicyParams::flat_groups() const {
  std::vector<ParamGroup> out;
  out.reserve(size());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto g = is_critic_layer(l) ? ParamGroup::critic : ParamGroup::actor;
    out.insert(out.end(), static_cast<std::size_t>(layers_[l].weight.size() + layers_[l].bias.size()), g);
  }
  out.insert(out.end(), static_cast<std::size_t>(log_std_.size()), ParamGroup::actor);
  return out;
}

void PolicyParams::set_zero() {
  for (auto& l : layers_) {
    l.weight.setZero();
    l.bias.setZero();
  }
  log_std_.setZero();
}

PolicyParams PolicyParams::zeros_like() const {
  PolicyParams p = *this;
  p.set_zero();
  return p;
}

void PolicyParams::add_scaled(const PolicyParams& other, double scale, ParamGroup group) {
  if (other.layers_.size() != layers_.size()) throw ShapeError("parameter layouts differ");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const bool critic = is_critic_layer(l);
    if ((group == ParamGroup::actor && critic) || (group == ParamGroup::critic && !critic)) continue;
    layers_[l].weight += scale * other.layers_[l].weight;
    layers_[l].bias += scale * other.layers_[l].bias;
  }
  if (group != ParamGroup::critic) log_std_ += scale * other.log_std_;
}

double PolicyParams::squared_norm(ParamGroup group) const {
  double s = 0.0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const bool critic = is_critic_layer(l);
    if ((group == ParamGroup::actor && critic) || (group == ParamGroup::critic && !critic)) continue;
    s += layers_[l].weight.squaredNorm() + layers_[l].bias.squaredNorm();
  }
  if (group != ParamGroup::critic) s += log_std_.squaredNorm();
  return s;
}

bool PolicyParams::all_finite() const {
  for (const auto& l : layers_) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return log_std_.allFinite();
}

bool PolicyParams::operator==(const PolicyParams& other) const {
  return flat() == other.flat();
}

}  // namespace finpilot
