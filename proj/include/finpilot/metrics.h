#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace finpilot {

inline constexpr double kTradingDaysPerYear = 252.0;

// Simple returns V_t / V_{t-1} - 1. Requires at least two positive values.
std::vector<double> curve_returns(std::span<const double> values);

double total_return(std::span<const double> values);
// Undefined (nullopt) when the sample std of returns is zero or T < 2.
std::optional<double> sharpe(std::span<const double> values);
// Undefined when no return is negative.
std::optional<double> sortino(std::span<const double> values);
// Running peak starts at V_0.
double max_drawdown(std::span<const double> values);
// Undefined when the drawdown is zero.
std::optional<double> calmar(std::span<const double> values);

struct MetricsReport {
  double total_return = 0.0;
  std::optional<double> sharpe;
  std::optional<double> sortino;
  double max_drawdown = 0.0;
  std::optional<double> calmar;

  std::string to_json() const;
  static MetricsReport from_json(const std::string& json);
};

MetricsReport compute_metrics(std::span<const double> values);

}  // namespace finpilot
