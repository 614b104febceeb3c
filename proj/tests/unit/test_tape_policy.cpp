#include <random>

#include <gtest/gtest.h>

#include "finpilot/errors.h"
#include "finpilot/policy.h"
#include "support.h"

using namespace finpilot;

namespace {

// Scalar objective exercising most tape ops: weighted softmax allocation of
// the (noisy) logits plus a nonlinear function of the critic.
ad::Var probe(ad::Tape& tape, const ActorCritic& p, const Eigen::VectorXd& state, const Eigen::VectorXd& noise,
              const Eigen::VectorXd& payoff) {
  ad::Var s = tape.constant(state);
  ad::Var w = tape.softmax(p.record_logits(tape, s, noise));
  ad::Var a = tape.dot_const(w, payoff);
  ad::Var v = p.record_value(tape, s);
  ad::Var b = tape.sqrt(tape.add_const(tape.mul(v, v), 1.0));
  ad::Var c = tape.min_zero(tape.add_const(a, -10.0));
  ad::Var d = tape.log(tape.add_const(tape.abs(v), 2.0));
  return tape.add(tape.add(tape.sub(a, tape.scale(b, 0.3)), c), tape.div(d, tape.add_const(tape.exp(v), 1.0)));
}

double probe_value(const ActorCritic& p, const Eigen::VectorXd& state, const Eigen::VectorXd& noise,
                   const Eigen::VectorXd& payoff) {
  ad::Tape tape(p.params());
  return probe(tape, p, state, noise, payoff).scalar();
}

}  // namespace

class TapeGradient : public ::testing::TestWithParam<std::tuple<ActMode, bool>> {};

TEST_P(TapeGradient, MatchesCentralDifferences) {
  const auto [mode, shared] = GetParam();
  PolicyConfig cfg = fixtures::small_policy(3, mode, 7, {6, 5});
  cfg.shared_trunk = shared;
  ActorCritic p(cfg);
  std::mt19937_64 rng(42);
  const Eigen::VectorXd state = fixtures::random_vector(33, rng);
  const Eigen::VectorXd noise = mode == ActMode::stochastic ? p.sample_noise(rng) : Eigen::VectorXd();
  const Eigen::VectorXd payoff = fixtures::random_vector(4, rng);

  ad::Tape tape(p.params());
  const PolicyParams g = grad(tape, probe(tape, p, state, noise, payoff), p.params());
  const std::vector<double> analytic = g.flat();
  std::vector<double> theta = p.params().flat();
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + h;
    p.params().assign_flat(theta);
    const double up = probe_value(p, state, noise, payoff);
    theta[i] = saved - h;
    p.params().assign_flat(theta);
    const double down = probe_value(p, state, noise, payoff);
    theta[i] = saved;
    const double fd = (up - down) / (2.0 * h);
    const double rel = std::abs(fd - analytic[i]) / std::max(1e-6, std::abs(fd) + std::abs(analytic[i]));
    worst = std::max(worst, rel);
  }
  p.params().assign_flat(theta);
  EXPECT_LT(worst, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Modes, TapeGradient,
                         ::testing::Combine(::testing::Values(ActMode::deterministic, ActMode::stochastic),
                                            ::testing::Bool()));

TEST(Tape, LifecycleIsEnforced) {
  const ActorCritic p(fixtures::small_policy(1, ActMode::deterministic, 0));
  ad::Tape tape(p.params());
  ad::Var v = p.record_value(tape, tape.constant(Eigen::VectorXd::Ones(11)));
  PolicyParams g = p.params().zeros_like();
  tape.backward(v, g);
  EXPECT_TRUE(tape.consumed());
  EXPECT_THROW(tape.backward(v, g), LifecycleError);
  EXPECT_THROW(tape.constant(1.0), LifecycleError);
  tape.reset();
  EXPECT_FALSE(tape.consumed());
  EXPECT_EQ(tape.node_count(), 0u);
  EXPECT_NO_THROW(p.record_value(tape, tape.constant(Eigen::VectorXd::Ones(11))));
}

TEST(Tape, QuadraticInLogStd) {
  ActorCritic p(fixtures::small_policy(2, ActMode::stochastic, 0));
  p.params().log_std() << 0.5, -1.0, 2.0;
  ad::Tape tape(p.params());
  ad::Var l = tape.log_std();
  const PolicyParams g = grad(tape, tape.sum(tape.mul(l, l)), p.params());
  EXPECT_TRUE(g.log_std().isApprox(2.0 * p.params().log_std(), 1e-15));
  EXPECT_EQ(g.squared_norm(ParamGroup::critic), 0.0);
}

TEST(Tape, BroadcastScalar) {
  const ActorCritic p(fixtures::small_policy(1, ActMode::deterministic, 0));
  ad::Tape tape(p.params());
  ad::Var v = tape.constant(Eigen::Vector3d(1.0, 2.0, 3.0));
  ad::Var s = tape.constant(2.0);
  EXPECT_TRUE(tape.mul(v, s).value().isApprox(Eigen::Vector3d(2.0, 4.0, 6.0)));
  EXPECT_TRUE(tape.sub(s, v).value().isApprox(Eigen::Vector3d(1.0, 0.0, -1.0)));
}

TEST(Policy, ZeroNetworkGivesUniformWeights) {
  const PolicyConfig cfg = fixtures::small_policy(4, ActMode::deterministic, 0);
  const ActorCritic p(cfg, PolicyParams(cfg));
  std::mt19937_64 rng(1);
  const Weights w = p.act(fixtures::random_vector(44, rng)).weights;
  for (Eigen::Index i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(w[i], 0.2);
  EXPECT_EQ(p.value(fixtures::random_vector(44, rng)), 0.0);
}

TEST(Policy, OutputsLieOnSimplex) {
  const ActorCritic p(fixtures::small_policy(4, ActMode::stochastic, 3));
  std::mt19937_64 rng(2);
  for (int k = 0; k < 100; ++k) {
    const ActOutput o = p.act(fixtures::random_vector(44, rng, 5.0), &rng);
    EXPECT_NEAR(o.weights.values().sum(), 1.0, 1e-12);
    EXPECT_GE(o.weights.values().minCoeff(), 0.0);
    ASSERT_TRUE(o.log_prob.has_value());
  }
}

TEST(Policy, VanishingStdRecoversDeterministicAction) {
  ActorCritic p(fixtures::small_policy(2, ActMode::stochastic, 5));
  p.params().log_std().setConstant(-40.0);
  std::mt19937_64 rng(3);
  const Eigen::VectorXd s = fixtures::random_vector(22, rng);
  const Weights det = p.act(s, ActMode::deterministic, nullptr).weights;
  const Weights sto = p.act(s, ActMode::stochastic, &rng).weights;
  EXPECT_LT((det.values() - sto.values()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Policy, ReparameterizedLogitsAverageToMean) {
  const ActorCritic p(fixtures::small_policy(2, ActMode::stochastic, 5));
  std::mt19937_64 rng(4);
  const Eigen::VectorXd s = fixtures::random_vector(22, rng);
  const Eigen::VectorXd mu = p.mean_logits(s);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(3);
  const int n = 20000;
  for (int k = 0; k < n; ++k) acc += p.act(s, ActMode::stochastic, &rng).logits;
  const double sd = std::exp(-1.0);
  EXPECT_LT((acc / n - mu).cwiseAbs().maxCoeff(), 5.0 * sd / std::sqrt(double(n)));
}

TEST(Policy, LogProbMatchesTapeRecording) {
  const ActorCritic p(fixtures::small_policy(2, ActMode::stochastic, 6));
  std::mt19937_64 rng(5);
  const Eigen::VectorXd s = fixtures::random_vector(22, rng);
  const ActOutput o = p.act(s, &rng);
  ad::Tape tape(p.params());
  EXPECT_NEAR(p.record_log_prob(tape, tape.constant(s), o.logits).scalar(), *o.log_prob, 1e-10);
}

TEST(Policy, RejectsWrongStateSize) {
  const ActorCritic p(fixtures::small_policy(2, ActMode::deterministic, 0));
  EXPECT_THROW(p.act(Eigen::VectorXd::Zero(21)), ShapeError);
}

TEST(Policy, StochasticActRequiresRng) {
  const ActorCritic p(fixtures::small_policy(2, ActMode::stochastic, 0));
  EXPECT_THROW(p.act(Eigen::VectorXd::Zero(22), nullptr), ConfigError);
}

TEST(Policy, InitializationIsSeeded) {
  const ActorCritic a(fixtures::small_policy(2, ActMode::stochastic, 9));
  const ActorCritic b(fixtures::small_policy(2, ActMode::stochastic, 9));
  const ActorCritic c(fixtures::small_policy(2, ActMode::stochastic, 10));
  EXPECT_TRUE(a.params() == b.params());
  EXPECT_FALSE(a.params() == c.params());
}
