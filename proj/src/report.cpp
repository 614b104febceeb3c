#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "finpilot/harness.h"

namespace finpilot {

namespace {

struct Stat {
  double mean = 0.0;
  std::optional<double> std;
  std::size_t n = 0;
};

Stat summarize(const std::vector<double>& xs) {
  Stat s;
  s.n = xs.size();
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() >= 2) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

struct Row {
  std::string label;
  std::vector<const nlohmann::json*> ok;
  std::size_t failed = 0;
  std::string first_error;
};

// Baseline row first, then one row per label in order of first appearance.
std::vector<Row> collect_rows(const nlohmann::json& results) {
  std::vector<Row> rows;
  Row base{"baseline (E=0)", {}, 0, ""};
  for (const auto& b : results.at("baselines")) {
    if (b.value("status", "") == "ok") base.ok.push_back(&b);
    else if (base.failed++ == 0) base.first_error = b.value("error", "");
  }
  rows.push_back(std::move(base));
  std::map<std::string, std::size_t> index;
  for (const auto& c : results.at("cells")) {
    const std::string label = c.at("label").get<std::string>();
    auto [it, fresh] = index.emplace(label, rows.size());
    if (fresh) rows.push_back(Row{label, {}, 0, ""});
    Row& r = rows[it->second];
    if (c.value("status", "") == "ok") r.ok.push_back(&c);
    else if (r.failed++ == 0) r.first_error = c.value("error", "");
  }
  return rows;
}

std::string fmt(double v, double scale) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v * scale);
  return buf;
}

std::string cell_text(const Row& row, const char* metric, double scale) {
  std::vector<double> xs;
  for (const auto* c : row.ok) {
    const auto& v = c->at("metrics").at(metric);
    if (!v.is_null()) xs.push_back(v.get<double>());
  }
  if (xs.empty()) return "n/a";
  const Stat s = summarize(xs);
  std::string out = fmt(s.mean, scale);
  if (s.std) out += " ± " + fmt(*s.std, scale);
  if (xs.size() < row.ok.size()) out += " (" + std::to_string(xs.size()) + "/" + std::to_string(row.ok.size()) + ")";
  return out;
}

// Display width, counting multi-byte UTF-8 sequences once.
std::size_t width(const std::string& s) {
  std::size_t w = 0;
  for (unsigned char c : s) w += (c & 0xC0) != 0x80;
  return w;
}

std::string pad(const std::string& s, std::size_t w, bool left) {
  const std::string fill(w > width(s) ? w - width(s) : 0, ' ');
  return left ? s + fill : fill + s;
}

}  // namespace

std::string render_table(const nlohmann::json& results) {
  const std::vector<Row> rows = collect_rows(results);
  const std::vector<std::string> header{"Algorithm", "TR(%)", "SR", "SoR", "CR", "MDD(%)", "seeds"};
  std::vector<std::vector<std::string>> body;
  for (const auto& r : rows) {
    std::string seeds = std::to_string(r.ok.size());
    if (r.failed > 0) seeds += " (" + std::to_string(r.failed) + " failed)";
    body.push_back({r.label, cell_text(r, "total_return", 100.0), cell_text(r, "sharpe", 1.0),
                    cell_text(r, "sortino", 1.0), cell_text(r, "calmar", 1.0),
                    cell_text(r, "max_drawdown", 100.0), seeds});
  }
  std::vector<std::size_t> w(header.size());
  for (std::size_t k = 0; k < header.size(); ++k) {
    w[k] = width(header[k]);
    for (const auto& b : body) w[k] = std::max(w[k], width(b[k]));
  }
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t k = 0; k < cells.size(); ++k) {
      if (k > 0) out << "  ";
      out << pad(cells[k], w[k], k == 0 || k + 1 == cells.size());
    }
    out << '\n';
  };
  line(header);
  std::size_t total = 0;
  for (auto x : w) total += x;
  out << std::string(total + 2 * (w.size() - 1), '-') << '\n';
  for (const auto& b : body) line(b);
  bool any_error = false;
  for (const auto& r : rows) {
    if (r.failed == 0) continue;
    if (!any_error) out << "\nfailures:\n";
    any_error = true;
    out << "  " << r.label << ": " << r.first_error << '\n';
  }
  return out.str();
}

std::string render_svg(const nlohmann::json& results) {
  const std::vector<Row> rows = collect_rows(results);
  struct Band {
    std::string label;
    std::vector<double> mean, lo, hi;
  };
  std::vector<Band> bands;
  for (const auto& r : rows) {
    if (r.ok.empty()) continue;
    const auto& first = r.ok.front()->at("curve");
    const std::size_t len = first.size();
    Band b{r.label, {}, {}, {}};
    for (std::size_t t = 0; t < len; ++t) {
      std::vector<double> xs;
      for (const auto* c : r.ok) xs.push_back(c->at("curve").at(t).get<double>());
      const Stat s = summarize(xs);
      const double sd = s.std.value_or(0.0);
      b.mean.push_back(s.mean);
      b.lo.push_back(s.mean - sd);
      b.hi.push_back(s.mean + sd);
    }
    bands.push_back(std::move(b));
  }
  const double W = 800, Hh = 450, ml = 70, mr = 220, mt = 20, mb = 40;
  double ymin = INFINITY, ymax = -INFINITY;
  std::size_t len = 0;
  for (const auto& b : bands) {
    ymin = std::min(ymin, *std::min_element(b.lo.begin(), b.lo.end()));
    ymax = std::max(ymax, *std::max_element(b.hi.begin(), b.hi.end()));
    len = std::max(len, b.mean.size());
  }
  if (bands.empty()) {
    ymin = 0.0;
    ymax = 1.0;
  }
  if (!(ymax > ymin)) ymax = ymin + 1.0;
  auto X = [&](std::size_t t) { return ml + (W - ml - mr) * (len > 1 ? double(t) / double(len - 1) : 0.0); };
  auto Y = [&](double v) { return mt + (Hh - mt - mb) * (1.0 - (v - ymin) / (ymax - ymin)); };
  static const char* colors[] = {"#444444", "#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                 "#ff7f0e", "#8c564b", "#e377c2", "#17becf", "#bcbd22"};
  std::ostringstream out;
  char buf[128];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << Hh
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", ml,
                Hh - mb, W - mr, Hh - mb);
  out << buf;
  std::snprintf(buf, sizeof buf, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", ml, mt,
                ml, Hh - mb);
  out << buf;
  for (int k = 0; k <= 4; ++k) {
    const double v = ymin + (ymax - ymin) * k / 4.0;
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%.0f</text>\n", ml - 5, Y(v) + 4, v);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">test day</text>\n",
                (ml + W - mr) / 2, Hh - 10);
  out << buf;
  for (std::size_t i = 0; i < bands.size(); ++i) {
    const auto& b = bands[i];
    const char* color = colors[i % 10];
    out << "<polygon fill=\"" << color << "\" fill-opacity=\"0.15\" stroke=\"none\" points=\"";
    for (std::size_t t = 0; t < b.hi.size(); ++t) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", X(t), Y(b.hi[t]));
      out << buf;
    }
    for (std::size_t t = b.lo.size(); t-- > 0;) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", X(t), Y(b.lo[t]));
      out << buf;
    }
    out << "\"/>\n<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t t = 0; t < b.mean.size(); ++t) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", X(t), Y(b.mean[t]));
      out << buf;
    }
    out << "\"/>\n";
    std::snprintf(buf, sizeof buf, "<rect x=\"%.1f\" y=\"%.1f\" width=\"12\" height=\"3\" fill=\"%s\"/>\n",
                  W - mr + 10, mt + 16.0 * double(i) + 4, color);
    out << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\">", W - mr + 26, mt + 16.0 * double(i) + 9);
    out << buf << b.label << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace finpilot
