#include "finpilot/metrics.h"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "finpilot/errors.h"

namespace finpilot {

std::vector<double> curve_returns(std::span<const double> values) {
  if (values.size() < 2) throw ValidationError("value curve needs at least two points");
  std::vector<double> out;
  out.reserve(values.size() - 1);
  for (std::size_t t = 0; t < values.size(); ++t) {
    if (!(values[t] > 0.0) || !std::isfinite(values[t])) {
      throw ValidationError("portfolio value must be positive and finite at t=" + std::to_string(t));
    }
    if (t > 0) out.push_back(values[t] / values[t - 1] - 1.0);
  }
  return out;
}

double total_return(std::span<const double> values) {
  curve_returns(values);
  return (values.back() - values.front()) / values.front();
}

std::optional<double> sharpe(std::span<const double> values) {
  const auto r = curve_returns(values);
  if (r.size() < 2) return std::nullopt;
  const double n = static_cast<double>(r.size());
  double mean = 0.0;
  for (double x : r) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : r) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  if (!(sd > 0.0)) return std::nullopt;
  return std::sqrt(kTradingDaysPerYear) * mean / sd;
}

std::optional<double> sortino(std::span<const double> values) {
  const auto r = curve_returns(values);
  const double n = static_cast<double>(r.size());
  double mean = 0.0, down = 0.0;
  for (double x : r) {
    mean += x;
    const double m = std::min(x, 0.0);
    down += m * m;
  }
  mean /= n;
  const double sd = std::sqrt(down / n);
  if (!(sd > 0.0)) return std::nullopt;
  return std::sqrt(kTradingDaysPerYear) * mean / sd;
}

double max_drawdown(std::span<const double> values) {
  curve_returns(values);
  double peak = values.front();
  double worst = 0.0;
  for (double v : values) {
    peak = std::max(peak, v);
    worst = std::max(worst, (peak - v) / peak);
  }
  return worst;
}

std::optional<double> calmar(std::span<const double> values) {
  const double mdd = max_drawdown(values);
  if (!(mdd > 0.0)) return std::nullopt;
  const double periods = static_cast<double>(values.size() - 1);
  const double annual = std::pow(1.0 + total_return(values), kTradingDaysPerYear / periods) - 1.0;
  return annual / mdd;
}

MetricsReport compute_metrics(std::span<const double> values) {
  MetricsReport m;
  m.total_return = total_return(values);
  m.sharpe = sharpe(values);
  m.sortino = sortino(values);
  m.max_drawdown = max_drawdown(values);
  m.calmar = calmar(values);
  return m;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> opt_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["total_return"] = total_return;
  j["sharpe"] = opt(sharpe);
  j["sortino"] = opt(sortino);
  j["max_drawdown"] = max_drawdown;
  j["calmar"] = opt(calmar);
  return j.dump();
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    MetricsReport m;
    m.total_return = j.at("total_return").get<double>();
    m.sharpe = opt_from(j.at("sharpe"));
    m.sortino = opt_from(j.at("sortino"));
    m.max_drawdown = j.at("max_drawdown").get<double>();
    m.calmar = opt_from(j.at("calmar"));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("metrics report: ") + e.what());
  }
}

}  // namespace finpilot
