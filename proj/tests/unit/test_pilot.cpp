#include <random>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "finpilot/errors.h"
#include "finpilot/pilot.h"
#include "support.h"

using namespace finpilot;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

class PerfectForecaster : public Forecaster {
 public:
  std::string name() const override { return "perfect"; }
  Eigen::MatrixXd predict(const MarketSeries& s, std::size_t t, std::size_t h) const override {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(Eigen::Index(s.asset_count()), Eigen::Index(h));
    for (std::size_t i = 0; i < s.asset_count(); ++i) {
      for (std::size_t k = 1; k <= h && t + k < s.length(); ++k) m(Eigen::Index(i), Eigen::Index(k - 1)) = movement(s, i, t + k);
    }
    return m;
  }
};

class NanForecaster : public Forecaster {
 public:
  std::string name() const override { return "nan"; }
  Eigen::MatrixXd predict(const MarketSeries& s, std::size_t, std::size_t h) const override {
    return Eigen::MatrixXd::Constant(Eigen::Index(s.asset_count()), Eigen::Index(h), std::nan(""));
  }
};

// Independent scalar re-implementation of one particle's discounted return.
double oracle_return(const ActorCritic& policy, const ImaginedRollout& r, std::size_t k, double gamma) {
  const ParticleRollout& p = r.particles[k];
  double value = r.start_value, total = 0.0, discount = 1.0;
  Eigen::VectorXd prev = r.prev_weights;
  for (std::size_t h = 0; h < p.relatives.size(); ++h) {
    Eigen::VectorXd logits = policy.mean_logits(p.states[h]);
    if (!p.noise.empty()) logits += policy.params().log_std().array().exp().matrix().cwiseProduct(p.noise[h]);
    const Eigen::VectorXd w = softmax_weights(logits).values();
    const double fee = r.fee_rate * value * (w - prev).cwiseAbs().sum();
    double next = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) next += (value - fee) * w[i] * p.relatives[h][i];
    total += discount * (next - value);
    const Eigen::VectorXd grown = w.cwiseProduct(p.relatives[h]);
    prev = grown / grown.sum();
    value = next;
    discount *= gamma;
  }
  return total + discount * p.bootstrap;
}

struct Scenario {
  MarketSeries series;
  Normalizer norm;
  Episode episode;
  std::shared_ptr<Forecaster> forecaster;
  NoiseCalibration noise;
  StepContext ctx;
};

std::unique_ptr<Scenario> scenario(std::uint64_t seed, std::size_t length = 160) {
  auto s = std::make_unique<Scenario>(Scenario{fixtures::random_market(2, length, seed, 0.005), {}, {}, {}, {}, {}});
  s->series.split_by_fraction(0.6, 0.0);
  s->norm = fit_normalizer(s->series, Split::train);
  s->episode = make_episode(s->series, Split::test, s->norm);
  s->forecaster = std::make_shared<ContextMeanForecaster>();
  s->noise = noise_stats(PerfectForecaster(), s->series, 5);
  s->ctx = StepContext{&s->series, &s->norm, s->forecaster.get(), &s->noise, 0.001};
  return s;
}

MpcConfig small_mpc() {
  MpcConfig c;
  c.horizon = 3;
  c.particles = 4;
  c.epochs = 3;
  c.step_size = 0.05;
  return c;
}

}  // namespace

TEST(Pilot, ImaginedRewardHandExample) {
  const double r = imagined_reward(1.0, vec({1.0, 0.0}), vec({0.0, 1.0}), vec({1.0, 1.1}), 0.001);
  EXPECT_NEAR(r, 0.998 * 1.1 - 1.0, 1e-15);
  EXPECT_EQ(imagined_reward(5.0, vec({0.5, 0.5}), vec({0.5, 0.5}), vec({1.0, 1.0}), 0.01), 0.0);
}

TEST(Pilot, RecordedRewardMatchesScalar) {
  std::mt19937_64 rng(1);
  const ActorCritic p(fixtures::small_policy(3, ActMode::deterministic, 0));
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::VectorXd prev = fixtures::random_simplex(4, rng), w = fixtures::random_simplex(4, rng);
    Eigen::VectorXd rel = Eigen::VectorXd::Ones(4);
    rel.tail(3) += fixtures::random_vector(3, rng, 0.05);
    ad::Tape tape(p.params());
    const double taped = record_imagined_reward(tape, tape.constant(7.0), tape.constant(prev), tape.constant(w), rel, 0.002).scalar();
    EXPECT_NEAR(taped, imagined_reward(7.0, prev, w, rel, 0.002), 1e-14);
  }
}

TEST(Pilot, ParticleReturnHandExample) {
  const PolicyConfig cfg = fixtures::small_policy(1, ActMode::deterministic, 0);
  const ActorCritic zero(cfg, PolicyParams(cfg));  // uniform weights (0.5, 0.5)
  ImaginedRollout r;
  r.start_value = 100.0;
  r.prev_weights = vec({0.5, 0.5});
  r.fee_rate = 0.0;
  ParticleRollout p;
  p.states.assign(3, Eigen::VectorXd::Zero(11));
  p.relatives = {vec({1.0, 1.2}), vec({1.0, 1.2})};
  p.bootstrap = 400.0;
  r.particles.push_back(p);
  MpcConfig mpc;
  mpc.gamma = 0.5;
  // r0 = 100 * 0.1 = 10, r1 = 110 * 0.1 = 11; J = 10 + 0.5 * 11 + 0.25 * 400
  EXPECT_NEAR(particle_return(zero, r, 0, mpc), 115.5, 1e-12);
  EXPECT_NEAR(oracle_return(zero, r, 0, 0.5), 115.5, 1e-12);
}

TEST(Pilot, ParticleReturnMatchesOracle) {
  const auto s = scenario(2);
  const ActorCritic p(fixtures::small_policy(2, ActMode::stochastic, 3));
  const MpcConfig mpc = small_mpc();
  PilotRngs rngs = PilotRngs::from_seed(4);
  const std::size_t t = s->episode.days[3];
  const auto base = forecast(*s->forecaster, s->series, t, 3, &s->norm);
  const auto trajs = perturb(base, s->noise, 1.0, 4, rngs.forecast, s->series, &s->norm);
  PortfolioState port{1.0, Weights(vec({0.2, 0.5, 0.3})), t};
  const ImaginedRollout r = prepare_rollout(p, s->episode.states[3], port, trajs, mpc, 0.001, rngs.policy);
  ASSERT_EQ(r.particles.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(r.particles[k].states.size(), 4u);
    EXPECT_EQ(r.particles[k].noise.size(), 3u);
    EXPECT_NEAR(r.particles[k].bootstrap, p.value(r.particles[k].states[3]), 1e-15);
    EXPECT_NEAR(particle_return(p, r, k, mpc), oracle_return(p, r, k, mpc.gamma), 1e-12);
  }
}

TEST(Pilot, RiskObjectiveHandExamples) {
  const std::vector<double> j{0.0, 4.0};
  const RiskTerms a = risk_objective(j, 1.0, 1.0);
  EXPECT_DOUBLE_EQ(a.mean, 2.0);
  EXPECT_DOUBLE_EQ(a.downside, 2.0);
  EXPECT_NEAR(a.objective, 2.0 - std::sqrt(3.0), 1e-15);
  const std::vector<double> same{3.0, 3.0, 3.0};
  EXPECT_NEAR(risk_objective(same, 2.0, 1e-8).objective, 3.0 - 2.0 * 1e-4, 1e-15);
  const std::vector<double> one{1.5};
  EXPECT_EQ(risk_objective(one, 0.0, 1e-8).objective, 1.5);
}

TEST(Pilot, RiskObjectiveDecreasesInLambda) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::VectorXd j = fixtures::random_vector(8, rng);
    const std::vector<double> js(j.data(), j.data() + j.size());
    double last = INFINITY;
    for (double lambda : {0.0, 0.1, 0.5, 1.0, 2.0}) {
      const double o = risk_objective(js, lambda, 1e-8).objective;
      EXPECT_LE(o, last);
      EXPECT_LE(o, risk_objective(js, 0.0, 1e-8).mean);
      last = o;
    }
  }
}

TEST(Pilot, RecordedRiskObjectiveMatchesScalar) {
  const ActorCritic p(fixtures::small_policy(1, ActMode::deterministic, 0));
  std::mt19937_64 rng(3);
  const Eigen::VectorXd j = fixtures::random_vector(6, rng);
  ad::Tape tape(p.params());
  std::vector<ad::Var> vars;
  for (Eigen::Index k = 0; k < j.size(); ++k) vars.push_back(tape.constant(j[k]));
  const std::vector<double> js(j.data(), j.data() + j.size());
  EXPECT_NEAR(record_risk_objective(tape, vars, 0.7, 1e-8).scalar(), risk_objective(js, 0.7, 1e-8).objective, 1e-14);
}

TEST(Pilot, ObjectiveGradientMatchesFiniteDifferences) {
  const auto s = scenario(5);
  ActorCritic p(fixtures::small_policy(2, ActMode::stochastic, 6, {6}));
  MpcConfig mpc = small_mpc();
  mpc.lambda = 0.8;
  PilotRngs rngs = PilotRngs::from_seed(1);
  const std::size_t t = s->episode.days[2];
  const auto trajs = perturb(forecast(*s->forecaster, s->series, t, 3, &s->norm), s->noise, 1.0, 4, rngs.forecast,
                             s->series, &s->norm);
  const PortfolioState port{1.0, Weights::uniform(2), t};
  const ImaginedRollout r = prepare_rollout(p, s->episode.states[2], port, trajs, mpc, 0.001, rngs.policy);

  auto objective = [&](const ActorCritic& pol) {
    std::vector<double> js;
    for (std::size_t k = 0; k < 4; ++k) js.push_back(particle_return(pol, r, k, mpc));
    return risk_objective(js, mpc.lambda, mpc.eps_num).objective;
  };
  ad::Tape tape(p.params());
  std::vector<ad::Var> js;
  for (std::size_t k = 0; k < 4; ++k) js.push_back(record_particle_return(tape, p, r, k, mpc));
  const PolicyParams g = grad(tape, record_risk_objective(tape, js, mpc.lambda, mpc.eps_num), p.params());
  EXPECT_EQ(g.squared_norm(ParamGroup::critic), 0.0);
  EXPECT_GT(g.squared_norm(ParamGroup::actor), 0.0);

  const std::vector<double> analytic = g.flat();
  const auto groups = p.params().flat_groups();
  std::vector<double> theta = p.params().flat();
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + h;
    p.params().assign_flat(theta);
    const double up = objective(p);
    theta[i] = saved - h;
    p.params().assign_flat(theta);
    const double down = objective(p);
    theta[i] = saved;
    const double fd = (up - down) / (2.0 * h);
    // The cached bootstrap makes the objective flat in the critic.
    if (groups[i] == ParamGroup::critic) EXPECT_EQ(fd, 0.0);
    worst = std::max(worst, std::abs(fd - analytic[i]) / std::max(1e-6, std::abs(fd) + std::abs(analytic[i])));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Pilot, PhaseOneCacheIsPure) {
  const auto s = scenario(6);
  ActorCritic p(fixtures::small_policy(2, ActMode::stochastic, 7));
  const MpcConfig mpc = small_mpc();
  const std::size_t t = s->episode.days[0];
  PilotRngs a = PilotRngs::from_seed(9), b = PilotRngs::from_seed(9);
  const auto ta = perturb(forecast(*s->forecaster, s->series, t, 3, &s->norm), s->noise, 1.0, 4, a.forecast, s->series, &s->norm);
  const auto tb = perturb(forecast(*s->forecaster, s->series, t, 3, &s->norm), s->noise, 1.0, 4, b.forecast, s->series, &s->norm);
  const PortfolioState port{1.0, Weights::uniform(2), t};
  const ImaginedRollout ra = prepare_rollout(p, s->episode.states[0], port, ta, mpc, 0.001, a.policy);
  const double j_before = particle_return(p, ra, 1, mpc);
  EXPECT_EQ(particle_return(p, ra, 1, mpc), j_before);
  // Changing the critic after phase 1 leaves the cached objective unchanged.
  for (auto l : p.params().critic_trunk()) p.params().layers()[l].weight.array() += 0.3;
  p.params().layers()[p.params().critic_head()].bias.array() += 5.0;
  EXPECT_EQ(particle_return(p, ra, 1, mpc), j_before);
  // Same seed, same cache.
  const ImaginedRollout rb = prepare_rollout(ActorCritic(fixtures::small_policy(2, ActMode::stochastic, 7)),
                                             s->episode.states[0], port, tb, mpc, 0.001, b.policy);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_TRUE(ra.particles[k].noise == rb.particles[k].noise);
    EXPECT_EQ(ra.particles[k].bootstrap, rb.particles[k].bootstrap);
  }
}

TEST(Pilot, ZeroEpochsReproducesUnadaptedBacktest) {
  const auto s = scenario(7);
  const ActorCritic p(fixtures::small_policy(2, ActMode::stochastic, 8));
  MpcConfig mpc = small_mpc();
  mpc.epochs = 0;
  const PilotRun run = run_pilot(s->episode, p, s->ctx, mpc, EnvConfig{}, 3);
  const Trajectory ref = run_episode(s->episode, p, ActMode::deterministic, EnvConfig{}, 0);
  EXPECT_EQ(run.trajectory.values, ref.values);
}

TEST(Pilot, ZeroStepSizeLeavesActionsUnchanged) {
  const auto s = scenario(8);
  const ActorCritic p(fixtures::small_policy(2, ActMode::stochastic, 8));
  MpcConfig mpc = small_mpc();
  mpc.step_size = 0.0;
  const PilotRun run = run_pilot(s->episode, p, s->ctx, mpc, EnvConfig{}, 3);
  const Trajectory ref = run_episode(s->episode, p, ActMode::deterministic, EnvConfig{}, 0);
  EXPECT_EQ(run.trajectory.values, ref.values);
  for (const auto& rep : run.reports) EXPECT_EQ(rep.objective_before, rep.objective_after);
}

TEST(Pilot, VanillaMatchesDegenerateRiskAwareBitForBit) {
  const auto s = scenario(9);
  for (ActMode mode : {ActMode::deterministic, ActMode::stochastic}) {
    const ActorCritic p(fixtures::small_policy(2, mode, 10));
    MpcConfig degenerate = small_mpc();
    degenerate.particles = 1;
    degenerate.sigma = 0.0;
    degenerate.lambda = 0.0;
    const MpcConfig vanilla = degenerate.for_variant(Variant::vanilla);
    const PilotRun a = run_pilot(s->episode, p, s->ctx, degenerate, EnvConfig{}, 5);
    const PilotRun b = run_pilot(s->episode, p, s->ctx, vanilla, EnvConfig{}, 5);
    EXPECT_EQ(a.trajectory.values, b.trajectory.values);
    for (std::size_t k = 0; k < a.reports.size(); ++k) EXPECT_EQ(a.reports[k].grad_norms, b.reports[k].grad_norms);
  }
}

TEST(Pilot, PerfectForesightShiftsWeightToRisingAsset) {
  std::vector<std::vector<double>> closes(2, std::vector<double>(60));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 0.01);
  for (std::size_t t = 0; t < 60; ++t) {
    closes[0][t] = 100.0 * std::exp(0.01 * double(t) + n(rng));
    closes[1][t] = 100.0 * std::exp(-0.01 * double(t) + n(rng));
  }
  const MarketSeries series = fixtures::flat_series(closes);
  const PerfectForecaster perfect;
  const NoiseCalibration noise{{0.0, 0.0, 0.0}};
  const StepContext ctx{&series, nullptr, &perfect, &noise, 0.001};
  const PolicyConfig cfg = fixtures::small_policy(2, ActMode::deterministic, 0);
  ActorCritic p(cfg, PolicyParams(cfg));
  MpcConfig mpc = small_mpc();
  mpc.step_size = 1.0;
  mpc.epochs = 20;
  PilotRngs rngs = PilotRngs::from_seed(0);
  const std::size_t t = 40;
  const PortfolioState port{1.0, Weights::uniform(2), t};
  const AdaptResult a = adapt_step(p, compute_features(series, t).flat(), port, ctx, mpc, rngs);
  ASSERT_FALSE(a.report.incident.has_value());
  EXPECT_GT(a.executed[1], 1.0 / 3.0);
  EXPECT_GT(a.executed[1], a.executed[0]);
  EXPECT_GT(a.executed[1], a.executed[2]);
  EXPECT_GT(a.report.objective_after, a.report.objective_before);
}

TEST(Pilot, NumericFailureFallsBackToBaseline) {
  const auto s = scenario(10);
  const NanForecaster nan;
  StepContext ctx = s->ctx;
  ctx.forecaster = &nan;
  const ActorCritic p(fixtures::small_policy(2, ActMode::stochastic, 11));
  ActorCritic live = p;
  PilotRngs rngs = PilotRngs::from_seed(0);
  const PortfolioState port{1.0, Weights::uniform(2), s->episode.days[0]};
  const AdaptResult a = adapt_step(live, s->episode.states[0], port, ctx, small_mpc(), rngs);
  ASSERT_TRUE(a.report.incident.has_value());
  EXPECT_TRUE(a.executed == p.act(s->episode.states[0], ActMode::deterministic, nullptr).weights);
  EXPECT_TRUE(live.params() == p.params());
}

TEST(Pilot, HugeStepLeavesFiniteState) {
  const auto s = scenario(11);
  const ActorCritic p(fixtures::small_policy(2, ActMode::stochastic, 12));
  ActorCritic live = p;
  MpcConfig mpc = small_mpc();
  mpc.step_size = 1e308;
  PilotRngs rngs = PilotRngs::from_seed(0);
  const PortfolioState port{1.0, Weights::uniform(2), s->episode.days[0]};
  const AdaptResult a = adapt_step(live, s->episode.states[0], port, s->ctx, mpc, rngs);
  EXPECT_TRUE(live.params().all_finite());
  EXPECT_TRUE(a.executed.values().allFinite());
  if (a.report.incident) EXPECT_TRUE(live.params() == p.params());
}

TEST(Pilot, ResetModes) {
  const auto s = scenario(12);
  const ActorCritic p(fixtures::small_policy(2, ActMode::stochastic, 13));
  const PortfolioState port{1.0, Weights::uniform(2), s->episode.days[0]};
  MpcConfig mpc = small_mpc();
  ActorCritic persist = p;
  PilotRngs r1 = PilotRngs::from_seed(1);
  adapt_step(persist, s->episode.states[0], port, s->ctx, mpc, r1);
  EXPECT_FALSE(persist.params() == p.params());
  mpc.reset_mode = ResetMode::reset_each_step;
  ActorCritic reset = p;
  PilotRngs r2 = PilotRngs::from_seed(1);
  const AdaptResult a = adapt_step(reset, s->episode.states[0], port, s->ctx, mpc, r2);
  EXPECT_TRUE(reset.params() == p.params());
  EXPECT_TRUE(a.executed == persist.act(s->episode.states[0], ActMode::deterministic, nullptr).weights);
}

TEST(Pilot, RunIsDeterministicAndReportsParse) {
  const auto s = scenario(13);
  const ActorCritic p(fixtures::small_policy(2, ActMode::stochastic, 14));
  std::ostringstream lines;
  const PilotRun a = run_pilot(s->episode, p, s->ctx, small_mpc(), EnvConfig{}, 21, &lines);
  const PilotRun b = run_pilot(s->episode, p, s->ctx, small_mpc(), EnvConfig{}, 21);
  const PilotRun c = run_pilot(s->episode, p, s->ctx, small_mpc(), EnvConfig{}, 22);
  EXPECT_EQ(a.trajectory.values, b.trajectory.values);
  EXPECT_NE(a.trajectory.values, c.trajectory.values);
  std::istringstream in(lines.str());
  std::string line;
  std::size_t count = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("grad_norms").size(), 3u);
    EXPECT_TRUE(j.at("incident").is_null());
    ++count;
  }
  EXPECT_EQ(count, s->episode.steps());
}

TEST(Pilot, ConfigValidation) {
  MpcConfig c;
  c.variant = Variant::vanilla;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(c.for_variant(Variant::vanilla).validate());
  c = MpcConfig{};
  c.particles = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = MpcConfig{};
  c.gamma = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(parse_variant("noise-lambda"), Variant::noise_lambda);
  EXPECT_THROW(parse_variant("bogus"), ConfigError);
}
