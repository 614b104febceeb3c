#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "finpilot/marketdata.h"
#include "finpilot/policy.h"
#include "finpilot/synthetic.h"

namespace finpilot::fixtures {

// Bars with open = high = low = adj = close, built from per-asset closes.
inline MarketSeries flat_series(const std::vector<std::vector<double>>& closes) {
  const std::size_t len = closes.front().size();
  const auto dates = business_days("2015-01-01", len);
  std::vector<std::string> names;
  std::vector<std::vector<Bar>> bars;
  for (std::size_t i = 0; i < closes.size(); ++i) {
    names.push_back("S" + std::to_string(i));
    auto& row = bars.emplace_back();
    for (std::size_t t = 0; t < len; ++t) {
      const double p = closes[i][t];
      row.push_back(Bar{dates[t], p, p, p, p, p});
    }
  }
  return MarketSeries(names, dates, bars);
}

// Random OHLC market with non-trivial intraday features.
inline MarketSeries random_market(std::size_t assets, std::size_t length, std::uint64_t seed,
                                  double signal = 0.0) {
  SyntheticMarketSpec spec;
  spec.assets = assets;
  spec.length = std::max<std::size_t>(length, 100);
  spec.seed = seed;
  spec.signal = signal;
  spec.vol = {0.015};
  const MarketSeries full = generate_synthetic(spec);
  if (full.length() == length) return full;
  const std::vector<std::string> dates(full.dates().begin(), full.dates().begin() + std::ptrdiff_t(length));
  std::vector<std::vector<Bar>> bars(assets);
  for (std::size_t i = 0; i < assets; ++i)
    for (std::size_t t = 0; t < length; ++t) bars[i].push_back(full.bar(i, t));
  return MarketSeries(full.assets(), dates, bars);
}

inline PolicyConfig small_policy(std::size_t assets, ActMode mode, std::uint64_t seed,
                                 std::vector<std::size_t> hidden = {8, 8}) {
  PolicyConfig c = PolicyConfig::for_assets(assets);
  c.hidden = std::move(hidden);
  c.mode = mode;
  c.init_seed = seed;
  c.head_gain = 1.0;
  return c;
}

inline Eigen::VectorXd random_vector(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = d(rng);
  return v;
}

inline Eigen::VectorXd random_simplex(Eigen::Index n, std::mt19937_64& rng) {
  std::exponential_distribution<double> d(1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = d(rng);
  return v / v.sum();
}

}  // namespace finpilot::fixtures
