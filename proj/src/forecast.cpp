#include "finpilot/forecast.h"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "finpilot/errors.h"

namespace finpilot {

double movement(const MarketSeries& series, std::size_t asset, std::size_t t) {
  if (t < 1 || t >= series.length()) throw BoundsError("movement needs day index in [1, length)");
  return std::log(series.close(asset, t) / series.close(asset, t - 1));
}

Eigen::VectorXd context_mean_baseline(const MarketSeries& series, std::size_t t, std::size_t h) {
  if (h < 1) throw ConfigError("context window must be >= 1");
  if (t < h + 1 || t > series.length()) {
    throw BoundsError("context mean needs t >= h + 1 (t=" + std::to_string(t) + ", h=" +
                      std::to_string(h) + ")");
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(series.asset_count()));
  for (std::size_t i = 0; i < series.asset_count(); ++i) {
    double s = 0.0;
    for (std::size_t j = 1; j <= h; ++j) s += movement(series, i, t - j);
    out[static_cast<Eigen::Index>(i)] = s / static_cast<double>(h);
  }
  return out;
}

ContextMeanForecaster::ContextMeanForecaster(std::size_t window) : window_(window) {
  if (window_ < 1) throw ConfigError("context window must be >= 1");
}

Eigen::MatrixXd ContextMeanForecaster::predict(const MarketSeries& series, std::size_t t,
                                               std::size_t horizon) const {
  const Eigen::VectorXd m = context_mean_baseline(series, t + 1, window_);
  return m.replicate(1, static_cast<Eigen::Index>(horizon));
}

// ---- ridge -----------------------------------------------------------------

RidgeModel fit_ridge(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda) {
  if (x.rows() != y.size() || x.rows() < 2) throw ShapeError("ridge needs matching rows (>= 2)");
  if (lambda < 0.0) throw ConfigError("ridge penalty must be non-negative");
  const Eigen::RowVectorXd mean = x.colwise().mean();
  Eigen::MatrixXd xc = x.rowwise() - mean;
  Eigen::RowVectorXd scale = (xc.colwise().squaredNorm() / static_cast<double>(x.rows())).cwiseSqrt();
  for (Eigen::Index j = 0; j < scale.size(); ++j) {
    if (!(scale[j] > 0.0)) scale[j] = 1.0;
  }
  xc = xc.array().rowwise() / scale.array();
  const double y_mean = y.mean();
  const Eigen::VectorXd yc = y.array() - y_mean;

  Eigen::MatrixXd gram = xc.transpose() * xc;
  gram.diagonal().array() += lambda;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  const Eigen::VectorXd d = ldlt.vectorD();
  const double dmax = d.cwiseAbs().maxCoeff();
  if (ldlt.info() != Eigen::Success || !(d.cwiseAbs().minCoeff() > 1e-12 * std::max(dmax, 1.0))) {
    throw ConditioningError("ridge normal equations are singular; increase lambda");
  }
  const Eigen::VectorXd beta = ldlt.solve(xc.transpose() * yc);
  RidgeModel model;
  model.coef = beta.array() / scale.transpose().array();
  model.intercept = y_mean - mean.dot(model.coef);
  return model;
}

RidgeModel fit_ridge(const MarketSeries& series, std::size_t horizon, std::size_t asset, double lambda) {
  const SplitRange train = series.range(Split::train);
  const std::size_t first = first_feature_day(train);
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  const std::size_t last = train.end >= horizon ? train.end - horizon : 0;  // exclusive
  if (last < first + 50) {
    throw BoundsError("ridge needs >= 50 training rows, have " +
                      std::to_string(last > first ? last - first : 0));
  }
  const auto rows = static_cast<Eigen::Index>(last - first);
  Eigen::MatrixXd x(rows, static_cast<Eigen::Index>(kFeatureCount));
  Eigen::VectorXd y(rows);
  for (std::size_t t = first; t < last; ++t) {
    const auto r = static_cast<Eigen::Index>(t - first);
    x.row(r) = compute_features(series, t).values.row(static_cast<Eigen::Index>(asset));
    y[r] = movement(series, asset, t + horizon);
  }
  return fit_ridge(x, y, lambda);
}

RidgeForecaster::RidgeForecaster(std::vector<std::vector<RidgeModel>> models) : models_(std::move(models)) {
  for (const auto& per_asset : models_) {
    if (per_asset.size() != horizon()) throw ShapeError("ragged ridge model grid");
  }
}

RidgeForecaster RidgeForecaster::fit(const MarketSeries& series, std::size_t horizon, double lambda) {
  std::vector<std::vector<RidgeModel>> models(series.asset_count());
  for (std::size_t i = 0; i < series.asset_count(); ++i) {
    for (std::size_t h = 1; h <= horizon; ++h) models[i].push_back(fit_ridge(series, h, i, lambda));
  }
  return RidgeForecaster(std::move(models));
}

Eigen::MatrixXd RidgeForecaster::predict(const MarketSeries& series, std::size_t t,
                                         std::size_t horizon) const {
  if (horizon > this->horizon()) {
    throw CoverageError("ridge models cover " + std::to_string(this->horizon()) + " horizons, " +
                        std::to_string(horizon) + " requested");
  }
  if (series.asset_count() != models_.size()) throw ShapeError("ridge models and series disagree on assets");
  const StateFeatures f = compute_features(series, t);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(models_.size()), static_cast<Eigen::Index>(horizon));
  for (std::size_t i = 0; i < models_.size(); ++i) {
    const Eigen::VectorXd x = f.values.row(static_cast<Eigen::Index>(i)).transpose();
    for (std::size_t h = 0; h < horizon; ++h) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(h)) = models_[i][h].predict(x);
    }
  }
  return out;
}

std::string RidgeForecaster::to_json() const {
  nlohmann::json j;
  j["schema"] = "finpilot.ridge";
  j["version"] = 1;
  j["horizon"] = horizon();
  auto& assets = j["models"] = nlohmann::json::array();
  for (const auto& per_asset : models_) {
    nlohmann::json row = nlohmann::json::array();
    for (const auto& m : per_asset) {
      row.push_back({{"intercept", m.intercept},
                     {"coef", std::vector<double>(m.coef.data(), m.coef.data() + m.coef.size())}});
    }
    assets.push_back(row);
  }
  return j.dump(1);
}

RidgeForecaster RidgeForecaster::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    std::vector<std::vector<RidgeModel>> models;
    for (const auto& row : j.at("models")) {
      auto& per_asset = models.emplace_back();
      for (const auto& m : row) {
        RidgeModel model;
        model.intercept = m.at("intercept").get<double>();
        const auto coef = m.at("coef").get<std::vector<double>>();
        model.coef = Eigen::Map<const Eigen::VectorXd>(coef.data(), static_cast<Eigen::Index>(coef.size()));
        per_asset.push_back(std::move(model));
      }
    }
    return RidgeForecaster(std::move(models));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("ridge model file: ") + e.what());
  }
}

// ---- external --------------------------------------------------------------

ExternalForecaster ExternalForecaster::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open forecast file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": missing header row");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
      header.push_back(cell);
    }
  }
  auto col = [&](const std::string& name) {
    for (std::size_t k = 0; k < header.size(); ++k) {
      if (header[k] == name) return k;
    }
    throw ParseError(path.string() + ": missing column '" + name + "'");
  };
  const std::size_t c_date = col("base_date");
  const std::size_t c_asset = col("asset");
  const std::size_t c_h = col("horizon");
  const std::size_t c_v = col("predicted_movement");
  ExternalForecaster out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
      cells.push_back(cell);
    }
    const std::string where = path.filename().string() + " row " + std::to_string(row);
    if (cells.size() < header.size()) throw ParseError(where + ": too few fields");
    if (!is_iso_date(cells[c_date])) throw ParseError(where + ": invalid date '" + cells[c_date] + "'");
    try {
      const long h = std::stol(cells[c_h]);
      if (h < 1) throw std::invalid_argument("horizon");
      out.set(cells[c_date], cells[c_asset], static_cast<std::size_t>(h), std::stod(cells[c_v]));
    } catch (const std::logic_error&) {
      throw ParseError(where + ": cannot parse horizon or movement");
    }
  }
  return out;
}

void ExternalForecaster::set(const std::string& date, const std::string& asset, std::size_t horizon,
                             double value) {
  cells_[{date, asset, horizon}] = value;
}

Eigen::MatrixXd ExternalForecaster::predict(const MarketSeries& series, std::size_t t,
                                            std::size_t horizon) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(series.asset_count()), static_cast<Eigen::Index>(horizon));
  const std::string& date = series.dates().at(t);
  for (std::size_t i = 0; i < series.asset_count(); ++i) {
    for (std::size_t h = 1; h <= horizon; ++h) {
      auto it = cells_.find({date, series.assets()[i], h});
      if (it == cells_.end()) {
        throw CoverageError("external forecast missing cell (" + date + ", " + series.assets()[i] +
                            ", h=" + std::to_string(h) + ")");
      }
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(h - 1)) = it->second;
    }
  }
  return out;
}

void ExternalForecaster::check_coverage(const MarketSeries& series, std::size_t first, std::size_t last,
                                        std::size_t horizon) const {
  for (std::size_t t = first; t < last; ++t) predict(series, t, horizon);
}

// ---- cheat -----------------------------------------------------------------

CheatForecaster::CheatForecaster(std::shared_ptr<const Forecaster> base, double c)
    : base_(std::move(base)), c_(c) {
  if (!base_) throw ConfigError("cheat forecaster needs a base forecaster");
  if (!(c_ >= 0.0 && c_ <= 1.0)) throw ConfigError("blend coefficient must lie in [0, 1]");
}

Eigen::MatrixXd CheatForecaster::predict(const MarketSeries& series, std::size_t t,
                                         std::size_t horizon) const {
  Eigen::MatrixXd out = base_->predict(series, t, horizon);
  for (std::size_t h = 1; h <= horizon && t + h < series.length(); ++h) {
    for (std::size_t i = 0; i < series.asset_count(); ++i) {
      double& cell = out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(h - 1));
      cell = (1.0 - c_) * cell + c_ * movement(series, i, t + h);
    }
  }
  return out;
}

// ---- R^2 -------------------------------------------------------------------

double r_squared(const Eigen::VectorXd& predictions, const Eigen::VectorXd& realized,
                 const Eigen::VectorXd& baseline) {
  if (predictions.size() != realized.size() || baseline.size() != realized.size()) {
    throw ShapeError("r_squared inputs differ in length");
  }
  if (realized.size() < 2) throw ShapeError("r_squared needs at least 2 cells");
  const double sse_base = (realized - baseline).squaredNorm();
  if (!(sse_base > 0.0)) throw DegenerateError("baseline SSE is zero");
  return 1.0 - (realized - predictions).squaredNorm() / sse_base;
}

ForecastCells collect_cells(const MarketSeries& series, const Forecaster& forecaster, Split split,
                            std::size_t horizon, std::size_t context_window) {
  const SplitRange r = series.range(split);
  std::vector<double> pred, real, base;
  const std::size_t first = std::max(first_feature_day(r), context_window);
  for (std::size_t t = first; t < r.end; ++t) {
    const std::size_t h_max = std::min(horizon, series.length() - 1 - t);
    if (h_max == 0) continue;
    const Eigen::MatrixXd p = forecaster.predict(series, t, horizon);
    const Eigen::VectorXd b = context_mean_baseline(series, t + 1, context_window);
    for (std::size_t i = 0; i < series.asset_count(); ++i) {
      for (std::size_t h = 1; h <= h_max; ++h) {
        pred.push_back(p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(h - 1)));
        real.push_back(movement(series, i, t + h));
        base.push_back(b[static_cast<Eigen::Index>(i)]);
      }
    }
  }
  auto to_vec = [](const std::vector<double>& v) {
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  return {to_vec(pred), to_vec(real), to_vec(base)};
}

CheatCalibration calibrate_cheat(const Eigen::VectorXd& base, const Eigen::VectorXd& realized,
                                 const Eigen::VectorXd& baseline, double target_r2) {
  if (!(target_r2 <= 1.0)) throw InfeasibleTargetError("target R^2 must be <= 1");
  CheatCalibration out;
  out.target_r2 = target_r2;
  out.base_r2 = r_squared(base, realized, baseline);
  if (target_r2 < out.base_r2) {
    throw InfeasibleTargetError("target R^2 " + std::to_string(target_r2) +
                                " is below the base forecaster's R^2 " + std::to_string(out.base_r2));
  }
  if (target_r2 == 1.0) {
    out.c = 1.0;
  } else {
    out.c = 1.0 - std::sqrt((1.0 - target_r2) / (1.0 - out.base_r2));
  }
  out.blended = (1.0 - out.c) * base + out.c * realized;
  out.achieved_r2 = r_squared(out.blended, realized, baseline);
  return out;
}

// ---- trajectories ----------------------------------------------------------

ForecastTrajectory build_trajectory(const MarketSeries& series, std::size_t t,
                                    const Eigen::MatrixXd& movements, const Normalizer* norm) {
  if (t < kWarmupDays || t >= series.length()) throw BoundsError("forecast base day out of range");
  if (movements.rows() != static_cast<Eigen::Index>(series.asset_count()) || movements.cols() < 1) {
    throw ShapeError("movement matrix must be N x H with H >= 1");
  }
  if (!movements.allFinite()) throw NumericError("non-finite predicted movement");
  const std::size_t n = series.asset_count();
  const auto horizon = static_cast<std::size_t>(movements.cols());
  ForecastTrajectory out;
  out.base_t = t;
  out.movements = movements;
  out.prices.resize(movements.rows(), movements.cols());
  out.relatives.assign(horizon, Eigen::VectorXd(static_cast<Eigen::Index>(n)));
  out.raw.resize(horizon);

  std::vector<std::vector<double>> closes(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = t + 1 - kWarmupDays; j <= t; ++j) closes[i].push_back(series.close(i, j));
  }
  for (std::size_t h = 1; h <= horizon; ++h) {
    StateFeatures f;
    f.t = t + h;
    f.values.resize(static_cast<Eigen::Index>(n), kFeatureCount);
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      const auto hh = static_cast<Eigen::Index>(h - 1);
      const double rel = std::exp(movements(ii, hh));
      const double price = closes[i].back() * rel;
      closes[i].push_back(price);
      out.prices(ii, hh) = price;
      out.relatives[h - 1][ii] = rel;
      const std::span<const double> window(closes[i].data() + closes[i].size() - kWarmupDays, kWarmupDays);
      const FeatureRow row = features_from_closes(window, price, price, price, price);
      for (std::size_t k = 0; k < kFeatureCount; ++k) f.values(ii, static_cast<Eigen::Index>(k)) = row[k];
    }
    out.raw[h - 1] = std::move(f);
  }
  if (norm != nullptr) {
    for (const auto& f : out.raw) out.states.push_back(apply_normalizer(*norm, f).flat());
  } else {
    for (const auto& f : out.raw) out.states.push_back(f.flat());
  }
  return out;
}

ForecastTrajectory forecast(const Forecaster& forecaster, const MarketSeries& series, std::size_t t,
                            std::size_t horizon, const Normalizer* norm) {
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  return build_trajectory(series, t, forecaster.predict(series, t, horizon), norm);
}

NoiseCalibration noise_stats(const Forecaster& forecaster, const MarketSeries& series, std::size_t horizon) {
  const SplitRange train = series.range(Split::train);
  std::vector<Eigen::MatrixXd> preds;
  for (std::size_t t = first_feature_day(train); t < train.end; ++t) {
    preds.push_back(forecaster.predict(series, t, horizon));
  }
  NoiseCalibration out;
  out.variance.assign(horizon, 0.0);
  if (preds.empty()) throw BoundsError("training split has no forecast dates");
  const std::size_t count = preds.size() * series.asset_count();
  if (count < 2) return out;
  for (std::size_t h = 0; h < horizon; ++h) {
    double mean = 0.0;
    for (const auto& p : preds) mean += p.col(static_cast<Eigen::Index>(h)).sum();
    mean /= static_cast<double>(count);
    double ss = 0.0;
    for (const auto& p : preds) ss += (p.col(static_cast<Eigen::Index>(h)).array() - mean).square().sum();
    out.variance[h] = ss / static_cast<double>(count - 1);
  }
  return out;
}

std::vector<ForecastTrajectory> perturb(const ForecastTrajectory& trajectory,
                                        const NoiseCalibration& calibration, double sigma,
                                        std::size_t particles, std::mt19937_64& rng,
                                        const MarketSeries& series, const Normalizer* norm) {
  if (particles < 1) throw ConfigError("particle count K must be >= 1");
  if (sigma < 0.0) throw ConfigError("noise scale sigma must be >= 0");
  const std::size_t horizon = trajectory.horizon();
  if (calibration.variance.size() < horizon) throw ShapeError("noise calibration shorter than horizon");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<ForecastTrajectory> out;
  out.reserve(particles);
  for (std::size_t k = 0; k < particles; ++k) {
    Eigen::MatrixXd m = trajectory.movements;
    for (Eigen::Index h = 0; h < m.cols(); ++h) {
      const double scale = sigma * std::sqrt(calibration.variance[static_cast<std::size_t>(h)]);
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, h) += scale * normal(rng);
    }
    if (sigma == 0.0 || m == trajectory.movements) {
      out.push_back(trajectory);
    } else {
      out.push_back(build_trajectory(series, trajectory.base_t, m, norm));
    }
  }
  return out;
}

}  // namespace finpilot
