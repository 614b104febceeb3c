#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "finpilot/errors.h"
#include "finpilot/forecast.h"
#include "support.h"

using namespace finpilot;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

class ConstantForecaster : public Forecaster {
 public:
  explicit ConstantForecaster(double v) : v_(v) {}
  std::string name() const override { return "constant"; }
  Eigen::MatrixXd predict(const MarketSeries& s, std::size_t, std::size_t h) const override {
    return Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(s.asset_count()), static_cast<Eigen::Index>(h), v_);
  }

 private:
  double v_;
};

class RealizedForecaster : public Forecaster {
 public:
  std::string name() const override { return "realized"; }
  Eigen::MatrixXd predict(const MarketSeries& s, std::size_t t, std::size_t h) const override {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(s.asset_count()), static_cast<Eigen::Index>(h));
    for (std::size_t i = 0; i < s.asset_count(); ++i) {
      for (std::size_t k = 1; k <= h; ++k) m(Eigen::Index(i), Eigen::Index(k - 1)) = movement(s, i, t + k);
    }
    return m;
  }
};

}  // namespace

TEST(Forecast, MovementIsLogReturn) {
  const MarketSeries s = fixtures::flat_series({{100.0, 110.0, 99.0}});
  EXPECT_NEAR(movement(s, 0, 1), std::log(1.1), 1e-15);
  EXPECT_NEAR(movement(s, 0, 2), std::log(0.9), 1e-15);
  EXPECT_THROW(movement(s, 0, 0), BoundsError);
}

TEST(Forecast, ContextMeanHandExample) {
  const MarketSeries s = fixtures::flat_series({{1.0, 2.0, 4.0, 4.0, 8.0}});
  // movements at days 1..4: ln2, ln2, 0, ln2
  EXPECT_NEAR(context_mean_baseline(s, 4, 3)[0], 2.0 * std::log(2.0) / 3.0, 1e-15);
  EXPECT_NEAR(context_mean_baseline(s, 5, 2)[0], std::log(2.0) / 2.0, 1e-15);
  EXPECT_THROW(context_mean_baseline(s, 3, 3), BoundsError);
  const ContextMeanForecaster f(2);
  const Eigen::MatrixXd p = f.predict(s, 4, 3);
  EXPECT_EQ(p.cols(), 3);
  for (Eigen::Index h = 0; h < 3; ++h) EXPECT_NEAR(p(0, h), std::log(2.0) / 2.0, 1e-15);
}

TEST(Forecast, RidgeRecoversLinearModel) {
  std::mt19937_64 rng(1);
  Eigen::MatrixXd x(200, 4);
  for (Eigen::Index r = 0; r < x.rows(); ++r) x.row(r) = fixtures::random_vector(4, rng, 3.0).transpose();
  x.col(2) *= 0.01;
  x.col(3).array() += 50.0;
  const Eigen::Vector4d b(1.5, -2.0, 30.0, 0.25);
  const Eigen::VectorXd y = (x * b).array() + 2.0;
  const RidgeModel m = fit_ridge(x, y, 0.0);
  EXPECT_LT((m.coef - b).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_NEAR(m.intercept, 2.0, 1e-7);
}

TEST(Forecast, RidgeLargePenaltyShrinksToMean) {
  std::mt19937_64 rng(2);
  Eigen::MatrixXd x(100, 3);
  for (Eigen::Index r = 0; r < x.rows(); ++r) x.row(r) = fixtures::random_vector(3, rng).transpose();
  const Eigen::VectorXd y = x.col(0) * 4.0 + fixtures::random_vector(100, rng);
  const RidgeModel m = fit_ridge(x, y, 1e12);
  EXPECT_LT(m.coef.cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_NEAR(m.intercept, y.mean(), 1e-8);
}

TEST(Forecast, RidgeSingularDesignIsConditioningError) {
  std::mt19937_64 rng(3);
  Eigen::MatrixXd x(50, 3);
  for (Eigen::Index r = 0; r < x.rows(); ++r) x.row(r) = fixtures::random_vector(3, rng).transpose();
  x.col(2) = 2.0 * x.col(0);
  const Eigen::VectorXd y = fixtures::random_vector(50, rng);
  EXPECT_THROW(fit_ridge(x, y, 0.0), ConditioningError);
  EXPECT_NO_THROW(fit_ridge(x, y, 1.0));
}

TEST(Forecast, RidgeOnPureNoiseHasNoSkill) {
  MarketSeries s = fixtures::random_market(3, 2000, 4);
  s.split_by_fraction(0.6, 0.2);
  const RidgeForecaster f = RidgeForecaster::fit(s, 2, 10.0);
  const ForecastCells c = collect_cells(s, f, Split::test, 2);
  EXPECT_LT(std::abs(r_squared(c.predicted, c.realized, c.baseline)), 0.05);
}

TEST(Forecast, RidgeFindsPlantedSignal) {
  MarketSeries s = fixtures::random_market(3, 2000, 4, 0.01);
  s.split_by_fraction(0.6, 0.2);
  const RidgeForecaster f = RidgeForecaster::fit(s, 1, 10.0);
  const ForecastCells c = collect_cells(s, f, Split::test, 1);
  EXPECT_GT(r_squared(c.predicted, c.realized, c.baseline), 0.08);
}

TEST(Forecast, RidgeJsonRoundTrip) {
  MarketSeries s = fixtures::random_market(2, 300, 5);
  const RidgeForecaster f = RidgeForecaster::fit(s, 3, 1.0);
  const RidgeForecaster g = RidgeForecaster::from_json(f.to_json());
  EXPECT_TRUE(f.predict(s, 200, 3) == g.predict(s, 200, 3));
  EXPECT_THROW(f.predict(s, 200, 4), CoverageError);
  EXPECT_THROW(RidgeForecaster::from_json("{}"), ParseError);
}

TEST(Forecast, RidgeNeedsEnoughRows) {
  MarketSeries s = fixtures::random_market(1, 70, 5);
  EXPECT_THROW(fit_ridge(s, 1, 0, 1.0), BoundsError);
}

TEST(Forecast, RSquaredHandExample) {
  EXPECT_NEAR(r_squared(vec({0.5, 2.5}), vec({0.0, 2.0}), vec({1.0, 1.0})), 0.75, 1e-15);
  EXPECT_EQ(r_squared(vec({0.0, 2.0}), vec({0.0, 2.0}), vec({1.0, 1.0})), 1.0);
  EXPECT_EQ(r_squared(vec({1.0, 1.0}), vec({0.0, 2.0}), vec({1.0, 1.0})), 0.0);
  EXPECT_THROW(r_squared(vec({1.0, 1.0}), vec({1.0, 1.0}), vec({1.0, 1.0})), DegenerateError);
  EXPECT_THROW(r_squared(vec({1.0}), vec({1.0}), vec({0.0})), ShapeError);
}

TEST(Forecast, CalibrationHandExample) {
  const CheatCalibration c = calibrate_cheat(vec({1.0, 1.0}), vec({0.0, 2.0}), vec({1.0, 1.0}), 0.75);
  EXPECT_NEAR(c.c, 0.5, 1e-15);
  EXPECT_NEAR(c.achieved_r2, 0.75, 1e-15);
  EXPECT_NEAR(c.blended[0], 0.5, 1e-15);
  EXPECT_THROW(calibrate_cheat(vec({0.5, 2.5}), vec({0.0, 2.0}), vec({1.0, 1.0}), 0.5), InfeasibleTargetError);
  const CheatCalibration one = calibrate_cheat(vec({1.0, 1.0}), vec({0.0, 2.0}), vec({1.0, 1.0}), 1.0);
  EXPECT_EQ(one.c, 1.0);
  EXPECT_EQ(one.achieved_r2, 1.0);
}

TEST(Forecast, CalibrationHitsTargetsMonotonically) {
  std::mt19937_64 rng(6);
  const Eigen::VectorXd realized = fixtures::random_vector(500, rng);
  const Eigen::VectorXd baseline = Eigen::VectorXd::Constant(500, 0.1);
  const Eigen::VectorXd base = 0.3 * realized + fixtures::random_vector(500, rng);
  const double r0 = r_squared(base, realized, baseline);
  double last_c = -1.0, last_r2 = -1e9;
  for (double target : {r0, 0.0, 0.2, 0.5, 0.9, 0.999, 1.0}) {
    if (target < r0) continue;
    const CheatCalibration c = calibrate_cheat(base, realized, baseline, target);
    EXPECT_NEAR(c.achieved_r2, target, 1e-10);
    EXPECT_GE(c.c, last_c);
    EXPECT_GE(c.achieved_r2, last_r2);
    last_c = c.c;
    last_r2 = c.achieved_r2;
  }
}

TEST(Forecast, CheatBlendOnSeries) {
  MarketSeries s = fixtures::random_market(2, 200, 7);
  s.split_by_fraction(0.5, 0.25);
  auto base = std::make_shared<ContextMeanForecaster>(30);
  const CheatForecaster full(base, 1.0);
  const CheatForecaster none(base, 0.0);
  const Eigen::MatrixXd p = full.predict(s, 150, 3);
  EXPECT_TRUE(p.isApprox(RealizedForecaster().predict(s, 150, 3), 1e-15));
  EXPECT_TRUE(none.predict(s, 150, 3) == base->predict(s, 150, 3));
  // Tail: day 198 has only one realized target left.
  const Eigen::MatrixXd tail = full.predict(s, 198, 3);
  EXPECT_NEAR(tail(0, 0), movement(s, 0, 199), 1e-15);
  EXPECT_EQ(tail(0, 1), base->predict(s, 198, 3)(0, 1));
  const ForecastCells cells = collect_cells(s, CheatForecaster(base, 0.4), Split::test, 3);
  const CheatCalibration direct = calibrate_cheat(collect_cells(s, *base, Split::test, 3).predicted,
                                                  cells.realized, cells.baseline, 0.0);
  EXPECT_EQ(direct.c, 0.0);
  const double expected = 1.0 - 0.36 * (1.0 - direct.base_r2);
  EXPECT_NEAR(r_squared(cells.predicted, cells.realized, cells.baseline), expected, 1e-10);
}

TEST(Forecast, SpliceMatchesRealizedFeatures) {
  std::mt19937_64 rng(8);
  std::vector<std::vector<double>> closes(2, std::vector<double>(60));
  std::normal_distribution<double> n(0.0, 0.02);
  for (auto& c : closes) {
    c[0] = 50.0;
    for (std::size_t t = 1; t < c.size(); ++t) c[t] = c[t - 1] * std::exp(n(rng));
  }
  const MarketSeries s = fixtures::flat_series(closes);
  const RealizedForecaster f;
  const ForecastTrajectory tr = forecast(f, s, 40, 5, nullptr);
  for (std::size_t h = 1; h <= 5; ++h) {
    const StateFeatures real = compute_features(s, 40 + h);
    EXPECT_LT((tr.raw[h - 1].values - real.values).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((tr.relatives[h - 1] - price_relatives(s, 40 + h - 1)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(tr.prices(1, Eigen::Index(h - 1)), s.close(1, 40 + h), 1e-9);
  }
}

TEST(Forecast, ZeroMovementKeepsPricesFlat) {
  const MarketSeries s = fixtures::random_market(2, 60, 9);
  const ForecastTrajectory tr = forecast(ConstantForecaster(0.0), s, 45, 3, nullptr);
  for (std::size_t h = 0; h < 3; ++h) {
    EXPECT_TRUE((tr.relatives[h].array() == 1.0).all());
    EXPECT_EQ(tr.prices(0, Eigen::Index(h)), s.close(0, 45));
    EXPECT_EQ(tr.raw[h].values(0, kClose), 0.0);
  }
}

TEST(Forecast, SingleStepHorizon) {
  const MarketSeries s = fixtures::random_market(3, 60, 9);
  const Normalizer n = fit_normalizer(s, Split::train);
  const ForecastTrajectory tr = forecast(ConstantForecaster(0.01), s, 45, 1, &n);
  ASSERT_EQ(tr.horizon(), 1u);
  ASSERT_EQ(tr.states.size(), 1u);
  EXPECT_EQ(tr.states[0].size(), 33);
  EXPECT_NEAR(tr.relatives[0][2], std::exp(0.01), 1e-15);
}

TEST(Forecast, ExternalForecastsAndCoverage) {
  const MarketSeries s = fixtures::random_market(2, 60, 10);
  const auto path = std::filesystem::temp_directory_path() / "finpilot_external.csv";
  {
    std::ofstream f(path);
    f << "base_date,asset,horizon,predicted_movement\n";
    f << s.dates()[40] << ",A0,1,0.01\n" << s.dates()[40] << ",A1,1,-0.02\n";
    f << s.dates()[40] << ",A0,2,0.03\n";
  }
  const ExternalForecaster e = ExternalForecaster::load(path);
  const Eigen::MatrixXd p = e.predict(s, 40, 1);
  EXPECT_EQ(p(0, 0), 0.01);
  EXPECT_EQ(p(1, 0), -0.02);
  try {
    e.predict(s, 40, 2);
    FAIL() << "expected coverage error";
  } catch (const CoverageError& err) {
    EXPECT_NE(std::string(err.what()).find("A1"), std::string::npos) << err.what();
  }
  EXPECT_NO_THROW(e.check_coverage(s, 40, 41, 1));
  EXPECT_THROW(e.check_coverage(s, 40, 42, 1), CoverageError);
}

TEST(Forecast, NoiseCalibrationHandExample) {
  MarketSeries s = fixtures::random_market(2, 60, 11);
  s.split_by_fraction(0.6, 0.2);
  const NoiseCalibration c = noise_stats(ConstantForecaster(0.02), s, 3);
  ASSERT_EQ(c.variance.size(), 3u);
  for (double v : c.variance) EXPECT_EQ(v, 0.0);

  const NoiseCalibration r = noise_stats(RealizedForecaster(), s, 1);
  std::vector<double> xs;
  for (std::size_t t = 30; t < s.range(Split::train).end; ++t) {
    for (std::size_t i = 0; i < 2; ++i) xs.push_back(movement(s, i, t + 1));
  }
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= double(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  EXPECT_NEAR(r.variance[0], ss / double(xs.size() - 1), 1e-15);
}

TEST(Forecast, ZeroSigmaOrConstantPredictionsGiveIdenticalParticles) {
  const MarketSeries s = fixtures::random_market(2, 80, 12);
  const ForecastTrajectory tr = forecast(ContextMeanForecaster(), s, 50, 3, nullptr);
  std::mt19937_64 rng(0);
  const NoiseCalibration calib{{1e-4, 2e-4, 3e-4}};
  for (const auto& p : perturb(tr, calib, 0.0, 4, rng, s, nullptr)) EXPECT_TRUE(p.movements == tr.movements);
  for (const auto& p : perturb(tr, NoiseCalibration{{0.0, 0.0, 0.0}}, 1.0, 4, rng, s, nullptr)) {
    EXPECT_TRUE(p.movements == tr.movements);
  }
  EXPECT_THROW(perturb(tr, calib, 1.0, 0, rng, s, nullptr), ConfigError);
}

TEST(Forecast, PerturbationVarianceMatchesCalibration) {
  const MarketSeries s = fixtures::random_market(2, 80, 13);
  const ForecastTrajectory tr = forecast(ContextMeanForecaster(), s, 50, 2, nullptr);
  const NoiseCalibration calib{{1e-4, 4e-4}};
  const double sigma = 1.5;
  std::mt19937_64 rng(5);
  const auto ps = perturb(tr, calib, sigma, 20000, rng, s, nullptr);
  for (Eigen::Index h = 0; h < 2; ++h) {
    double ss = 0.0;
    for (const auto& p : ps) ss += (p.movements.col(h) - tr.movements.col(h)).squaredNorm();
    const double var = ss / double(2 * ps.size());
    const double want = sigma * sigma * calib.variance[std::size_t(h)];
    EXPECT_NEAR(var / want, 1.0, 0.05);
  }
  // Perturbed particles carry consistent prices and relatives.
  const auto& p = ps.front();
  EXPECT_NEAR(p.relatives[1][0], std::exp(p.movements(0, 1)), 1e-12);
}

TEST(Forecast, PredictionsIgnoreFutureBars) {
  MarketSeries s = fixtures::random_market(2, 300, 14);
  s.split_by_fraction(0.6, 0.2);
  const RidgeForecaster ridge = RidgeForecaster::fit(s, 3, 1.0);
  const ContextMeanForecaster cm;
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t t = 190 + rng() % 80;
    const std::size_t future = t + 1 + rng() % (s.length() - t - 1);
    Bar b = s.bar(1, future);
    b.open *= 0.7;
    b.high *= 0.7;
    b.low *= 0.7;
    b.close *= 0.7;
    b.adj_close *= 0.7;
    const MarketSeries m = s.with_bar(1, future, b);
    EXPECT_TRUE(ridge.predict(s, t, 3) == ridge.predict(m, t, 3));
    EXPECT_TRUE(cm.predict(s, t, 3) == cm.predict(m, t, 3));
    EXPECT_TRUE(forecast(ridge, s, t, 3, nullptr).prices == forecast(ridge, m, t, 3, nullptr).prices);
  }
}
