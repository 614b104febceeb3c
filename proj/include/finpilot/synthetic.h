#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "finpilot/marketdata.h"

namespace finpilot {

// Geometric random walk with an optional AR(1) drift component per asset:
//   ln(p_t / p_{t-1}) = ln(1 + drift) + signal * x_t + vol * e_t
//   x_t = persistence * x_{t-1} + sqrt(1 - persistence^2) * u_t
// Drift and vol are per-asset; a single entry is broadcast to all assets.
struct SyntheticMarketSpec {
  std::size_t assets = 5;
  std::vector<double> drift{0.0003};
  std::vector<double> vol{0.01};
  double signal = 0.0;
  double persistence = 0.9;
  double intraday_vol = 0.5;   // high/low spread as a fraction of daily vol
  double dividend_yield = 0.02;  // annual; adj_close = close * exp(-q (L-1-t) / 252)
  double initial_price = 100.0;
  std::size_t length = 750;
  std::uint64_t seed = 0;
  std::string start_date = "2012-01-02";

  void validate() const;
};

MarketSeries generate_synthetic(const SyntheticMarketSpec& spec);

// Consecutive weekdays starting at `start` (ISO date).
std::vector<std::string> business_days(const std::string& start, std::size_t count);

}  // namespace finpilot
