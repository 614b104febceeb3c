#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace finpilot {

struct Bar {
  std::string date;  // ISO-8601 YYYY-MM-DD
  double open = 0.0;
  double high = 0.0;
  double low = 0.0;
  double close = 0.0;
  double adj_close = 0.0;
};

// Throws ValidationError when prices are non-positive or the OHLC ordering
// low <= min(open, close) <= max(open, close) <= high is violated.
void validate_bar(const Bar& bar, const std::string& where);

bool is_iso_date(const std::string& text);

enum class Split { train, valid, test };

const char* split_name(Split split);
Split parse_split(const std::string& name);

// Half-open row range [begin, end) into the date index.
struct SplitRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool contains(std::size_t t) const { return t >= begin && t < end; }
};

struct SplitBounds {
  SplitRange train;
  SplitRange valid;
  SplitRange test;
};

// Date-aligned daily bars for a fixed asset universe. Immutable after
// construction apart from split assignment.
class MarketSeries {
 public:
  MarketSeries(std::vector<std::string> assets, std::vector<std::string> dates,
               std::vector<std::vector<Bar>> bars);

  std::size_t asset_count() const { return assets_.size(); }
  std::size_t length() const { return dates_.size(); }
  const std::vector<std::string>& assets() const { return assets_; }
  const std::vector<std::string>& dates() const { return dates_; }

  const Bar& bar(std::size_t asset, std::size_t t) const { return bars_[asset][t]; }
  double close(std::size_t asset, std::size_t t) const { return bars_[asset][t].close; }
  std::span<const Bar> bars(std::size_t asset) const { return bars_[asset]; }

  const SplitBounds& split_bounds() const { return splits_; }
  SplitRange range(Split split) const;
  void set_split_bounds(const SplitBounds& bounds);
  // Train is [0, valid_start), valid is [valid_start, test_start), test the rest.
  void split_at_dates(const std::string& valid_start, const std::string& test_start);
  void split_by_fraction(double train_fraction, double valid_fraction);

  std::size_t index_of(const std::string& date) const;

  // Copy with one bar replaced; used for lookahead mutation audits.
  MarketSeries with_bar(std::size_t asset, std::size_t t, const Bar& bar) const;

 private:
  std::vector<std::string> assets_;
  std::vector<std::string> dates_;
  std::vector<std::vector<Bar>> bars_;
  SplitBounds splits_;
};

enum class CsvLayout { auto_detect, per_asset, long_format };

// Explicit column mapping. `ticker` is only consulted for the long layout.
struct CsvSchema {
  std::string date = "date";
  std::string open = "open";
  std::string high = "high";
  std::string low = "low";
  std::string close = "close";
  std::string adj_close = "adj_close";
  std::string ticker = "tic";
  CsvLayout layout = CsvLayout::auto_detect;
};

// Loads a directory of per-asset CSV files (asset id = file stem), a single
// per-asset file, or a long-format file with a ticker column.
MarketSeries load_csv(const std::filesystem::path& path, const CsvSchema& schema = {});

// ---- temporal features ----------------------------------------------------

inline constexpr std::size_t kFeatureCount = 11;
inline constexpr std::size_t kWarmupDays = 30;
inline constexpr std::array<std::size_t, 6> kMovingAverageWindows{5, 10, 15, 20, 25, 30};

enum Feature : std::size_t {
  kOpen = 0,
  kHigh,
  kLow,
  kAdj,
  kClose,
  kMa5,
  kMa10,
  kMa15,
  kMa20,
  kMa25,
  kMa30,
};

const std::array<const char*, kFeatureCount>& feature_names();

using FeatureRow = std::array<double, kFeatureCount>;

// Features of one asset at day t. `closes` ends at day t inclusive and holds
// at least kWarmupDays entries; the intraday prices belong to day t.
FeatureRow features_from_closes(std::span<const double> closes, double open, double high,
                                double low, double adj_close);

// N x 11 observation at day t (raw or standardized depending on producer).
struct StateFeatures {
  Eigen::MatrixXd values;
  std::size_t t = 0;
  std::string date;

  // Asset-major flattening used as policy input.
  Eigen::VectorXd flat() const;
};

StateFeatures compute_features(const MarketSeries& series, std::size_t t);

// First day index with a complete feature window inside `range`.
std::size_t first_feature_day(SplitRange range);

struct Normalizer {
  Eigen::MatrixXd mean;  // N x 11
  Eigen::MatrixXd std;   // N x 11, sample (ddof = 1)
};

Normalizer fit_normalizer(std::span<const StateFeatures> rows,
                          const std::vector<std::string>& asset_names = {});
Normalizer fit_normalizer(const MarketSeries& series, Split split);
StateFeatures apply_normalizer(const Normalizer& norm, const StateFeatures& raw);
StateFeatures invert_normalizer(const Normalizer& norm, const StateFeatures& standardized);

}  // namespace finpilot
