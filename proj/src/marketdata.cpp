#include "finpilot/marketdata.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "finpilot/errors.h"

namespace finpilot {

namespace fs = std::filesystem;

void validate_bar(const Bar& bar, const std::string& where) {
  const double prices[] = {bar.open, bar.high, bar.low, bar.close, bar.adj_close};
  for (double p : prices) {
    if (!std::isfinite(p) || p <= 0.0) {
      throw ValidationError(where + ": non-positive or non-finite price");
    }
  }
  const double lo = std::min(bar.open, bar.close);
  const double hi = std::max(bar.open, bar.close);
  if (bar.low > lo || hi > bar.high) {
    throw ValidationError(where + ": OHLC ordering violated (need low <= open/close <= high)");
  }
}

bool is_iso_date(const std::string& text) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') return false;
  for (std::size_t i : {0, 1, 2, 3, 5, 6, 8, 9}) {
    if (text[i] < '0' || text[i] > '9') return false;
  }
  const int y = std::stoi(text.substr(0, 4));
  const unsigned m = static_cast<unsigned>(std::stoi(text.substr(5, 2)));
  const unsigned d = static_cast<unsigned>(std::stoi(text.substr(8, 2)));
  return std::chrono::year_month_day{std::chrono::year{y}, std::chrono::month{m},
                                     std::chrono::day{d}}
      .ok();
}

const char* split_name(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "valid" || name == "validation") return Split::valid;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split '" + name + "'");
}

MarketSeries::MarketSeries(std::vector<std::string> assets, std::vector<std::string> dates,
                           std::vector<std::vector<Bar>> bars)
    : assets_(std::move(assets)), dates_(std::move(dates)), bars_(std::move(bars)) {
  if (assets_.empty()) throw ValidationError("market series has no assets");
  if (bars_.size() != assets_.size()) {
    throw ShapeError("bar table has " + std::to_string(bars_.size()) + " assets, expected " +
                     std::to_string(assets_.size()));
  }
  for (std::size_t t = 0; t < dates_.size(); ++t) {
    if (!is_iso_date(dates_[t])) throw ParseError("invalid date '" + dates_[t] + "'");
    if (t > 0 && !(dates_[t - 1] < dates_[t])) {
      throw ValidationError("dates not strictly increasing at " + dates_[t]);
    }
  }
  std::vector<std::string> misaligned;
  for (std::size_t i = 0; i < assets_.size(); ++i) {
    bool ok = bars_[i].size() == dates_.size();
    for (std::size_t t = 0; ok && t < dates_.size(); ++t) ok = bars_[i][t].date == dates_[t];
    if (!ok) misaligned.push_back(assets_[i]);
  }
  if (!misaligned.empty()) {
    std::string list;
    for (const auto& a : misaligned) list += (list.empty() ? "" : ",") + a;
    throw AlignmentError("assets not aligned to the shared date index: " + list);
  }
  for (std::size_t i = 0; i < assets_.size(); ++i) {
    for (std::size_t t = 0; t < dates_.size(); ++t) {
      validate_bar(bars_[i][t], assets_[i] + " " + dates_[t]);
    }
  }
  splits_.train = {0, dates_.size()};
  splits_.valid = {dates_.size(), dates_.size()};
  splits_.test = {dates_.size(), dates_.size()};
}

SplitRange MarketSeries::range(Split split) const {
  switch (split) {
    case Split::train: return splits_.train;
    case Split::valid: return splits_.valid;
    case Split::test: return splits_.test;
  }
  return {};
}

void MarketSeries::set_split_bounds(const SplitBounds& b) {
  if (b.train.begin != 0 || b.train.end != b.valid.begin || b.valid.end != b.test.begin ||
      b.test.end != length() || b.train.begin > b.train.end || b.valid.begin > b.valid.end ||
      b.test.begin > b.test.end) {
    throw ConfigError("split ranges must be contiguous, ordered and cover the index");
  }
  splits_ = b;
}

std::size_t MarketSeries::index_of(const std::string& date) const {
  auto it = std::lower_bound(dates_.begin(), dates_.end(), date);
  return static_cast<std::size_t>(it - dates_.begin());
}

void MarketSeries::split_at_dates(const std::string& valid_start, const std::string& test_start) {
  if (!is_iso_date(valid_start) || !is_iso_date(test_start)) {
    throw ConfigError("split boundaries must be ISO dates");
  }
  if (test_start < valid_start) throw ConfigError("test split starts before validation split");
  const std::size_t v = index_of(valid_start);
  const std::size_t s = index_of(test_start);
  set_split_bounds({{0, v}, {v, s}, {s, length()}});
}

void MarketSeries::split_by_fraction(double train_fraction, double valid_fraction) {
  if (train_fraction < 0 || valid_fraction < 0 || train_fraction + valid_fraction > 1.0) {
    throw ConfigError("split fractions must be non-negative and sum to at most 1");
  }
  const auto n = static_cast<double>(length());
  const auto v = static_cast<std::size_t>(std::floor(n * train_fraction));
  const auto s = static_cast<std::size_t>(std::floor(n * (train_fraction + valid_fraction)));
  set_split_bounds({{0, v}, {v, s}, {s, length()}});
}

MarketSeries MarketSeries::with_bar(std::size_t asset, std::size_t t, const Bar& bar) const {
  auto bars = bars_;
  bars.at(asset).at(t) = bar;
  bars[asset][t].date = dates_[t];
  MarketSeries copy(assets_, dates_, std::move(bars));
  copy.splits_ = splits_;
  return copy;
}

// ---- CSV ------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
    } else if (ch == ',' && !quoted) {
      out.push_back(cell);
      cell.clear();
    } else if (ch != '\r') {
      cell.push_back(ch);
    }
  }
  out.push_back(cell);
  for (auto& c : out) {
    const auto b = c.find_first_not_of(" \t");
    const auto e = c.find_last_not_of(" \t");
    c = b == std::string::npos ? std::string() : c.substr(b, e - b + 1);
  }
  return out;
}

double parse_price(const std::string& cell, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ParseError(where + ": cannot parse number '" + cell + "'");
  }
}

struct RawTable {
  std::map<std::string, std::vector<Bar>> by_asset;  // ordered by asset id
};

void read_table(const fs::path& path, const CsvSchema& schema, bool long_format,
                const std::string& default_asset, RawTable& out) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": missing header row");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);
  const auto header = split_csv_line(line);
  auto column = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw ParseError(path.string() + ": missing column '" + name + "'");
    }
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_date = column(schema.date);
  const std::size_t c_open = column(schema.open);
  const std::size_t c_high = column(schema.high);
  const std::size_t c_low = column(schema.low);
  const std::size_t c_close = column(schema.close);
  const std::size_t c_adj = column(schema.adj_close);
  const std::size_t c_tic = long_format ? column(schema.ticker) : 0;

  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    const std::string where = path.filename().string() + " row " + std::to_string(row);
    if (cells.size() < header.size()) {
      throw ParseError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                       std::to_string(cells.size()));
    }
    Bar bar;
    bar.date = cells[c_date];
    if (!is_iso_date(bar.date)) throw ParseError(where + ": invalid date '" + bar.date + "'");
    bar.open = parse_price(cells[c_open], where);
    bar.high = parse_price(cells[c_high], where);
    bar.low = parse_price(cells[c_low], where);
    bar.close = parse_price(cells[c_close], where);
    bar.adj_close = parse_price(cells[c_adj], where);
    validate_bar(bar, where);
    const std::string asset = long_format ? cells[c_tic] : default_asset;
    out.by_asset[asset].push_back(std::move(bar));
  }
}

MarketSeries assemble(RawTable table) {
  std::vector<std::string> assets;
  std::map<std::string, std::size_t> date_count;
  for (auto& [asset, bars] : table.by_asset) {
    std::sort(bars.begin(), bars.end(),
              [](const Bar& a, const Bar& b) { return a.date < b.date; });
    for (std::size_t k = 1; k < bars.size(); ++k) {
      if (bars[k].date == bars[k - 1].date) {
        throw ValidationError(asset + ": duplicate date " + bars[k].date);
      }
    }
    for (const auto& b : bars) ++date_count[b.date];
    assets.push_back(asset);
  }
  if (assets.empty()) throw ParseError("no data rows found");
  std::vector<std::string> dates;
  for (const auto& [d, _] : date_count) dates.push_back(d);
  std::vector<std::string> offending;
  for (const auto& [asset, bars] : table.by_asset) {
    if (bars.size() != dates.size()) offending.push_back(asset);
  }
  if (!offending.empty()) {
    std::string list;
    for (const auto& a : offending) list += (list.empty() ? "" : ",") + a;
    throw AlignmentError("assets missing shared dates: " + list);
  }
  std::vector<std::vector<Bar>> bars;
  for (auto& [_, b] : table.by_asset) bars.push_back(std::move(b));
  return MarketSeries(std::move(assets), std::move(dates), std::move(bars));
}

bool header_has(const fs::path& path, const std::string& column) {
  std::ifstream in(path);
  std::string line;
  if (!in || !std::getline(in, line)) return false;
  const auto header = split_csv_line(line);
  return std::find(header.begin(), header.end(), column) != header.end();
}

}  // namespace

MarketSeries load_csv(const fs::path& path, const CsvSchema& schema) {
  if (!fs::exists(path)) throw IoError("no such file or directory: " + path.string());
  RawTable table;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.is_regular_file() && entry.path().extension() == ".csv") {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("no .csv files in " + path.string());
    for (const auto& f : files) read_table(f, schema, false, f.stem().string(), table);
    return assemble(std::move(table));
  }
  bool long_format = schema.layout == CsvLayout::long_format;
  if (schema.layout == CsvLayout::auto_detect) long_format = header_has(path, schema.ticker);
  read_table(path, schema, long_format, path.stem().string(), table);
  return assemble(std::move(table));
}

// ---- features -------------------------------------------------------------

const std::array<const char*, kFeatureCount>& feature_names() {
  static const std::array<const char*, kFeatureCount> names{
      "z_open", "z_high", "z_low", "z_adj", "z_close", "z_d_5",
      "z_d_10", "z_d_15", "z_d_20", "z_d_25", "z_d_30"};
  return names;
}

FeatureRow features_from_closes(std::span<const double> closes, double open, double high,
                                double low, double adj_close) {
  if (closes.size() < kWarmupDays) {
    throw BoundsError("feature window needs " + std::to_string(kWarmupDays) +
                      " closes, got " + std::to_string(closes.size()));
  }
  const std::size_t t = closes.size() - 1;
  const double close = closes[t];
  FeatureRow f{};
  f[kOpen] = open / close - 1.0;
  f[kHigh] = high / close - 1.0;
  f[kLow] = low / close - 1.0;
  f[kAdj] = adj_close / close - 1.0;
  f[kClose] = close / closes[t - 1] - 1.0;
  // Running sum over the trailing window, checkpointed at each k.
  double sum = 0.0;
  std::size_t j = 0;
  for (std::size_t w = 0; w < kMovingAverageWindows.size(); ++w) {
    const std::size_t k = kMovingAverageWindows[w];
    for (; j < k; ++j) sum += closes[t - j];
    f[kMa5 + w] = (sum / static_cast<double>(k)) / close - 1.0;
  }
  return f;
}

Eigen::VectorXd StateFeatures::flat() const {
  Eigen::VectorXd out(values.size());
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index j = 0; j < values.cols(); ++j) out[k++] = values(i, j);
  }
  return out;
}

StateFeatures compute_features(const MarketSeries& series, std::size_t t) {
  if (t < kWarmupDays || t >= series.length()) {
    throw BoundsError("features need day index in [" + std::to_string(kWarmupDays) + ", " +
                      std::to_string(series.length()) + "), got " + std::to_string(t));
  }
  StateFeatures out;
  out.t = t;
  out.date = series.dates()[t];
  out.values.resize(static_cast<Eigen::Index>(series.asset_count()), kFeatureCount);
  std::vector<double> closes(kWarmupDays);
  for (std::size_t i = 0; i < series.asset_count(); ++i) {
    for (std::size_t j = 0; j < kWarmupDays; ++j) {
      closes[j] = series.close(i, t + 1 - kWarmupDays + j);
    }
    const Bar& b = series.bar(i, t);
    const FeatureRow f = features_from_closes(closes, b.open, b.high, b.low, b.adj_close);
    for (std::size_t k = 0; k < kFeatureCount; ++k) {
      out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = f[k];
    }
  }
  return out;
}

std::size_t first_feature_day(SplitRange range) {
  return std::max(range.begin, kWarmupDays);
}

Normalizer fit_normalizer(std::span<const StateFeatures> rows,
                          const std::vector<std::string>& asset_names) {
  if (rows.size() < 2) {
    throw DegenerateError("normalizer needs at least 2 feature rows, got " +
                          std::to_string(rows.size()));
  }
  const Eigen::Index n = rows.front().values.rows();
  const Eigen::Index m = rows.front().values.cols();
  Normalizer norm;
  norm.mean = Eigen::MatrixXd::Zero(n, m);
  for (const auto& r : rows) {
    if (r.values.rows() != n || r.values.cols() != m) throw ShapeError("ragged feature rows");
    norm.mean += r.values;
  }
  norm.mean /= static_cast<double>(rows.size());
  Eigen::MatrixXd ss = Eigen::MatrixXd::Zero(n, m);
  for (const auto& r : rows) ss += (r.values - norm.mean).cwiseAbs2();
  norm.std = (ss / static_cast<double>(rows.size() - 1)).cwiseSqrt();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      if (!(norm.std(i, j) > 0.0)) {
        const std::string asset = static_cast<std::size_t>(i) < asset_names.size()
                                      ? asset_names[static_cast<std::size_t>(i)]
                                      : "#" + std::to_string(i);
        const std::string feature = static_cast<std::size_t>(j) < kFeatureCount
                                        ? feature_names()[static_cast<std::size_t>(j)]
                                        : "#" + std::to_string(j);
        throw DegenerateError("zero-variance feature (" + asset + ", " + feature + ")");
      }
    }
  }
  return norm;
}

Normalizer fit_normalizer(const MarketSeries& series, Split split) {
  const SplitRange r = series.range(split);
  std::vector<StateFeatures> rows;
  for (std::size_t t = first_feature_day(r); t < r.end; ++t) {
    rows.push_back(compute_features(series, t));
  }
  return fit_normalizer(rows, series.assets());
}

StateFeatures apply_normalizer(const Normalizer& norm, const StateFeatures& raw) {
  if (raw.values.rows() != norm.mean.rows() || raw.values.cols() != norm.mean.cols()) {
    throw ShapeError("normalizer shape does not match features");
  }
  StateFeatures out = raw;
  out.values = (raw.values - norm.mean).cwiseQuotient(norm.std);
  return out;
}

StateFeatures invert_normalizer(const Normalizer& norm, const StateFeatures& standardized) {
  if (standardized.values.rows() != norm.mean.rows() ||
      standardized.values.cols() != norm.mean.cols()) {
    throw ShapeError("normalizer shape does not match features");
  }
  StateFeatures out = standardized;
  out.values = standardized.values.cwiseProduct(norm.std) + norm.mean;
  return out;
}

}  // namespace finpilot
