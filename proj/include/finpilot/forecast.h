#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "finpilot/marketdata.h"

namespace finpilot {

// A price movement is the one-day log return ln(close_t / close_{t-1}).
// Forecasters predict the movements of days t+1 .. t+H from information
// available at the close of day t.
double movement(const MarketSeries& series, std::size_t asset, std::size_t t);

// Mean of the h realized movements strictly before day t, per asset.
Eigen::VectorXd context_mean_baseline(const MarketSeries& series, std::size_t t, std::size_t h);

class Forecaster {
 public:
  virtual ~Forecaster() = default;
  virtual std::string name() const = 0;
  // N x H matrix of predicted movements for days t+1 .. t+H.
  virtual Eigen::MatrixXd predict(const MarketSeries& series, std::size_t t, std::size_t horizon) const = 0;
};

// Predicts the trailing context mean for every horizon.
class ContextMeanForecaster : public Forecaster {
 public:
  explicit ContextMeanForecaster(std::size_t window = kWarmupDays);
  std::string name() const override { return "context-mean"; }
  Eigen::MatrixXd predict(const MarketSeries& series, std::size_t t, std::size_t horizon) const override;

 private:
  std::size_t window_;
};

// Linear model over the 11 raw features, fitted on standardized inputs.
struct RidgeModel {
  Eigen::VectorXd coef;  // in raw-feature units
  double intercept = 0.0;

  double predict(const Eigen::VectorXd& features) const { return intercept + coef.dot(features); }
};

// Closed-form ridge with an unpenalized intercept. Columns are standardized
// internally; lambda = 0 with a singular design throws ConditioningError.
RidgeModel fit_ridge(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda);

// Per-(asset, horizon) model trained on training-split rows whose target
// day also lies inside the training split.
RidgeModel fit_ridge(const MarketSeries& series, std::size_t horizon, std::size_t asset, double lambda);

class RidgeForecaster : public Forecaster {
 public:
  RidgeForecaster(std::vector<std::vector<RidgeModel>> models);  // [asset][h-1]

  static RidgeForecaster fit(const MarketSeries& series, std::size_t horizon, double lambda);

  std::string name() const override { return "ridge"; }
  Eigen::MatrixXd predict(const MarketSeries& series, std::size_t t, std::size_t horizon) const override;
  std::size_t horizon() const { return models_.empty() ? 0 : models_.front().size(); }
  const std::vector<std::vector<RidgeModel>>& models() const { return models_; }

  std::string to_json() const;
  static RidgeForecaster from_json(const std::string& json);

 private:
  std::vector<std::vector<RidgeModel>> models_;
};

// Forecasts read from CSV: base_date, asset, horizon, predicted_movement.
class ExternalForecaster : public Forecaster {
 public:
  static ExternalForecaster load(const std::filesystem::path& path);
  std::string name() const override { return "external"; }
  Eigen::MatrixXd predict(const MarketSeries& series, std::size_t t, std::size_t horizon) const override;
  void check_coverage(const MarketSeries& series, std::size_t first, std::size_t last,
                      std::size_t horizon) const;
  void set(const std::string& date, const std::string& asset, std::size_t horizon, double value);

 private:
  std::map<std::tuple<std::string, std::string, std::size_t>, double> cells_;
};

// Blend (1 - c) * base + c * realized. Cells whose target day lies beyond
// the end of the series keep the base forecast.
class CheatForecaster : public Forecaster {
 public:
  CheatForecaster(std::shared_ptr<const Forecaster> base, double c);
  std::string name() const override { return "cheat"; }
  Eigen::MatrixXd predict(const MarketSeries& series, std::size_t t, std::size_t horizon) const override;
  double blend() const { return c_; }

 private:
  std::shared_ptr<const Forecaster> base_;
  double c_;
};

// ---- R^2 and calibration ---------------------------------------------------

// 1 - SSE(pred) / SSE(baseline), pooled over all cells.
double r_squared(const Eigen::VectorXd& predictions, const Eigen::VectorXd& realized,
                 const Eigen::VectorXd& baseline);

// Pooled (base t, asset, horizon) cells over a split with a realized target.
struct ForecastCells {
  Eigen::VectorXd predicted;
  Eigen::VectorXd realized;
  Eigen::VectorXd baseline;
};

ForecastCells collect_cells(const MarketSeries& series, const Forecaster& forecaster, Split split,
                            std::size_t horizon, std::size_t context_window = kWarmupDays);

struct CheatCalibration {
  double c = 0.0;
  double base_r2 = 0.0;
  double target_r2 = 0.0;
  double achieved_r2 = 0.0;
  Eigen::VectorXd blended;
};

// c = 1 - sqrt((1 - target) / (1 - r0)), since blending scales every error by (1 - c).
CheatCalibration calibrate_cheat(const Eigen::VectorXd& base, const Eigen::VectorXd& realized,
                                 const Eigen::VectorXd& baseline, double target_r2);

// ---- trajectories and noise -----------------------------------------------

struct ForecastTrajectory {
  std::size_t base_t = 0;
  Eigen::MatrixXd movements;  // N x H
  Eigen::MatrixXd prices;     // N x H, predicted closes of days t+1 .. t+H
  std::vector<Eigen::VectorXd> relatives;  // [h-1]: p_{t+h} / p_{t+h-1} per asset
  std::vector<StateFeatures> raw;          // [h-1]: imagined features at t+h
  std::vector<Eigen::VectorXd> states;     // [h-1]: standardized, flattened

  std::size_t horizon() const { return static_cast<std::size_t>(movements.cols()); }
};

// Splices realized history up to t with the predicted path. Imagined bars
// are flat (open = high = low = adj = close at the predicted close).
ForecastTrajectory build_trajectory(const MarketSeries& series, std::size_t t,
                                    const Eigen::MatrixXd& movements, const Normalizer* norm);

ForecastTrajectory forecast(const Forecaster& forecaster, const MarketSeries& series, std::size_t t,
                            std::size_t horizon, const Normalizer* norm);

// Per-horizon sample variance of predicted movements pooled over training
// (date, asset) pairs.
struct NoiseCalibration {
  std::vector<double> variance;  // [h-1]
};

NoiseCalibration noise_stats(const Forecaster& forecaster, const MarketSeries& series,
                             std::size_t horizon);

// K trajectories with movements perturbed by N(0, sigma^2 * variance_h).
std::vector<ForecastTrajectory> perturb(const ForecastTrajectory& trajectory,
                                        const NoiseCalibration& calibration, double sigma,
                                        std::size_t particles, std::mt19937_64& rng,
                                        const MarketSeries& series, const Normalizer* norm);

}  // namespace finpilot
