#include "finpilot/synthetic.h"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>

#include "finpilot/errors.h"

namespace finpilot {

void SyntheticMarketSpec::validate() const {
  if (assets < 1) throw ConfigError("synthetic market needs at least one asset");
  if (length < 100) throw ConfigError("synthetic market length must be >= 100");
  auto check_size = [&](const std::vector<double>& v, const char* name) {
    if (v.size() != 1 && v.size() != assets) {
      throw ConfigError(std::string("synthetic ") + name + " must have 1 or N entries");
    }
  };
  check_size(drift, "drift");
  check_size(vol, "vol");
  for (double d : drift) {
    if (!(d > -1.0)) throw ConfigError("synthetic drift must exceed -1");
  }
  for (double v : vol) {
    if (!(v >= 0.0)) throw ConfigError("synthetic volatility must be >= 0");
  }
  if (!(signal >= 0.0)) throw ConfigError("signal strength must be >= 0");
  if (!(persistence > -1.0 && persistence < 1.0)) throw ConfigError("signal persistence must lie in (-1, 1)");
  if (!(intraday_vol >= 0.0)) throw ConfigError("intraday volatility must be >= 0");
  if (!(initial_price > 0.0)) throw ConfigError("initial price must be positive");
  if (!is_iso_date(start_date)) throw ConfigError("invalid start date '" + start_date + "'");
}

std::vector<std::string> business_days(const std::string& start, std::size_t count) {
  using namespace std::chrono;
  int y = 0;
  unsigned m = 0, d = 0;
  if (std::sscanf(start.c_str(), "%d-%u-%u", &y, &m, &d) != 3) throw ConfigError("invalid date '" + start + "'");
  sys_days day{year{y} / month{m} / std::chrono::day{d}};
  std::vector<std::string> out;
  out.reserve(count);
  while (out.size() < count) {
    const weekday wd{day};
    if (wd != Saturday && wd != Sunday) {
      const year_month_day ymd{day};
      char buf[16];
      std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                    static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
      out.emplace_back(buf);
    }
    day += days{1};
  }
  return out;
}

MarketSeries generate_synthetic(const SyntheticMarketSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n = spec.assets;
  const std::size_t len = spec.length;
  const double innov = std::sqrt(1.0 - spec.persistence * spec.persistence);

  std::vector<std::string> names;
  for (std::size_t i = 0; i < n; ++i) names.push_back("A" + std::to_string(i));
  const auto dates = business_days(spec.start_date, len);

  std::vector<std::vector<Bar>> bars(n, std::vector<Bar>(len));
  std::vector<double> close(n, spec.initial_price);
  std::vector<double> state(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) state[i] = normal(rng);

  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const double mu = std::log1p(spec.drift.size() == 1 ? spec.drift[0] : spec.drift[i]);
      const double vol = spec.vol.size() == 1 ? spec.vol[0] : spec.vol[i];
      const double e = normal(rng);
      const double u_hi = std::abs(normal(rng));
      const double u_lo = std::abs(normal(rng));
      const double gap = normal(rng);
      const double prev = close[i];
      if (t > 0) {
        state[i] = spec.persistence * state[i] + innov * normal(rng);
        close[i] = prev * std::exp(mu + spec.signal * state[i] + vol * e);
      }
      Bar& b = bars[i][t];
      b.date = dates[t];
      b.close = close[i];
      b.open = t == 0 ? close[i] : prev * std::exp(0.25 * vol * gap);
      const double spread = spec.intraday_vol * vol;
      b.high = std::max(b.open, b.close) * std::exp(spread * u_hi);
      b.low = std::min(b.open, b.close) * std::exp(-spread * u_lo);
      b.adj_close = b.close * std::exp(-spec.dividend_yield * static_cast<double>(len - 1 - t) / 252.0);
    }
  }
  return MarketSeries(names, dates, bars);
}

}  // namespace finpilot
