#pragma once

// Metrics CSV -> SVG line charts. The SVG is written by hand so output is byte-stable.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gridfed/checkpoint.hpp"
#include "gridfed/csv.hpp"
#include "gridfed/error.hpp"
#include "gridfed/experiment.hpp"

namespace gridfed {

class CsvError : public std::runtime_error {
 public:
  CsvError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

namespace plot_detail {

inline double parse_number(const std::string& s, const std::string& source, std::size_t line, const char* col) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(col);
    return v;
  } catch (const std::exception&) {
    throw CsvError(source, line, std::string("bad ") + col + " value '" + s + "'");
  }
}

inline long long parse_integer(const std::string& s, const std::string& source, std::size_t line, const char* col) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size() || v < 0) throw std::invalid_argument(col);
    return v;
  } catch (const std::exception&) {
    throw CsvError(source, line, std::string("bad ") + col + " value '" + s + "'");
  }
}

}  // namespace plot_detail

// Parses a metrics CSV. Requires the exact header and at least one data row.
inline std::vector<MetricsRow> parse_metrics_csv(const std::string& text, const std::string& source = "<csv>") {
  using namespace plot_detail;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<MetricsRow> rows;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!header_seen) {
      if (line != kMetricsHeader) throw CsvError(source, line_no, std::string("expected header '") + kMetricsHeader + "'");
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 7) {
      throw CsvError(source, line_no, "expected 7 fields, found " + std::to_string(f.size()));
    }
    MetricsRow r;
    try {
      r.variant = parse_variant(f[0]);
    } catch (const ConfigError&) {
      throw CsvError(source, line_no, "unknown variant '" + f[0] + "'");
    }
    r.seed = static_cast<std::uint64_t>(parse_integer(f[1], source, line_no, "seed"));
    r.round = static_cast<int>(parse_integer(f[2], source, line_no, "round"));
    r.building = static_cast<int>(parse_integer(f[3], source, line_no, "building"));
    r.metrics.reward = parse_number(f[4], source, line_no, "reward");
    r.metrics.emission = parse_number(f[5], source, line_no, "emission");
    r.metrics.cost = parse_number(f[6], source, line_no, "cost");
    rows.push_back(r);
  }
  if (rows.empty()) throw CsvError(source, line_no, "no data rows");
  return rows;
}

enum class Metric { Reward, Emission, Cost };

inline const char* to_string(Metric m) {
  switch (m) {
    case Metric::Reward:
      return "reward";
    case Metric::Emission:
      return "emission";
    case Metric::Cost:
      return "cost";
  }
  return "?";
}

inline double metric_of(const EvalMetrics& e, Metric m) {
  return m == Metric::Reward ? e.reward : m == Metric::Emission ? e.emission : e.cost;
}

struct SeriesPoint {
  int round = 0;
  double mean = 0.0;  // over seeds of the building-averaged value
  double lo = 0.0;
  double hi = 0.0;
};

struct PlotSeries {
  Variant variant;
  std::vector<SeriesPoint> points;
};

// Building-average per (seed, round), then mean/min/max across seeds. Variants in legend order.
inline std::vector<PlotSeries> build_series(const std::vector<MetricsRow>& rows, Metric metric) {
  std::vector<PlotSeries> out;
  for (Variant v : kAllVariants) {
    std::map<int, std::map<std::uint64_t, std::pair<double, int>>> acc;  // round -> seed -> (sum, count)
    for (const auto& r : rows) {
      if (r.variant != v) continue;
      auto& cell = acc[r.round][r.seed];
      cell.first += metric_of(r.metrics, metric);
      cell.second += 1;
    }
    if (acc.empty()) continue;
    PlotSeries s{v, {}};
    for (const auto& [round, seeds] : acc) {
      SeriesPoint p{round, 0.0, INFINITY, -INFINITY};
      for (const auto& [seed, sc] : seeds) {
        const double avg = sc.first / sc.second;
        p.mean += avg;
        p.lo = std::min(p.lo, avg);
        p.hi = std::max(p.hi, avg);
      }
      p.mean /= static_cast<double>(seeds.size());
      s.points.push_back(p);
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline const char* variant_color(Variant v) {
  switch (v) {
    case Variant::Upperbound:
      return "#1f77b4";
    case Variant::FL:
      return "#ff7f0e";
    case Variant::IndAgent:
      return "#2ca02c";
    case Variant::FLPersonalization:
      return "#d62728";
  }
  return "#000000";
}

inline std::string render_svg(const std::vector<PlotSeries>& series, Metric metric) {
  require(!series.empty(), "nothing to plot");
  constexpr double W = 720, H = 440, L = 70, R = 190, T = 30, B = 50;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    for (const auto& p : s.points) {
      x0 = std::min(x0, double(p.round));
      x1 = std::max(x1, double(p.round));
      y0 = std::min(y0, p.lo);
      y1 = std::max(y1, p.hi);
    }
  }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto sx = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto sy = [&](double y) { return T + (y1 - y) / (y1 - y0) * (H - T - B); };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << num(L) << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">Mean test " << to_string(metric)
     << " (buildings averaged, seed min/max band)</text>\n";
  // Axes and ticks.
  os << "<g stroke=\"#444\" stroke-width=\"1\">\n";
  os << "<line x1=\"" << num(L) << "\" y1=\"" << num(H - B) << "\" x2=\"" << num(W - R) << "\" y2=\"" << num(H - B)
     << "\"/>\n";
  os << "<line x1=\"" << num(L) << "\" y1=\"" << num(T) << "\" x2=\"" << num(L) << "\" y2=\"" << num(H - B) << "\"/>\n";
  os << "</g>\n<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#222\">\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5.0;
    const double yv = y0 + (y1 - y0) * i / 5.0;
    os << "<text x=\"" << num(sx(xv)) << "\" y=\"" << num(H - B + 16) << "\" text-anchor=\"middle\">" << num(xv)
       << "</text>\n";
    os << "<text x=\"" << num(L - 6) << "\" y=\"" << num(sy(yv) + 4) << "\" text-anchor=\"end\">" << num(yv)
       << "</text>\n";
  }
  os << "<text x=\"" << num((L + W - R) / 2) << "\" y=\"" << num(H - 12) << "\" text-anchor=\"middle\">round</text>\n";
  os << "</g>\n";

  int legend_row = 0;
  for (const auto& s : series) {
    const char* color = variant_color(s.variant);
    const std::string name = to_string(s.variant);
    std::ostringstream band;
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      band << (i == 0 ? "M" : " L") << num(sx(s.points[i].round)) << ',' << num(sy(s.points[i].hi));
    }
    for (std::size_t i = s.points.size(); i-- > 0;) {
      band << " L" << num(sx(s.points[i].round)) << ',' << num(sy(s.points[i].lo));
    }
    band << " Z";
    std::ostringstream line;
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      line << (i == 0 ? "M" : " L") << num(sx(s.points[i].round)) << ',' << num(sy(s.points[i].mean));
    }
    os << "<path class=\"band\" data-variant=\"" << name << "\" d=\"" << band.str() << "\" fill=\"" << color
       << "\" fill-opacity=\"0.18\" stroke=\"none\"/>\n";
    os << "<path class=\"series\" data-variant=\"" << name << "\" d=\"" << line.str() << "\" fill=\"none\" stroke=\""
       << color << "\" stroke-width=\"2\"/>\n";
    const double ly = T + 10 + 20 * legend_row++;
    os << "<line x1=\"" << num(W - R + 15) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(W - R + 40) << "\" y2=\""
       << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << num(W - R + 46) << "\" y=\"" << num(ly + 4)
       << "\" font-family=\"sans-serif\" font-size=\"12\">" << name << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// Reads every CSV first; nothing is written unless all inputs parse. Returns the written paths.
inline std::vector<std::filesystem::path> plot_metrics(const std::vector<std::filesystem::path>& inputs,
                                                       const std::filesystem::path& out_dir) {
  require(!inputs.empty(), "plot needs at least one metrics CSV");
  std::vector<MetricsRow> rows;
  for (const auto& p : inputs) {
    const auto bytes = read_file_bytes(p);
    auto part = parse_metrics_csv(std::string(bytes.begin(), bytes.end()), p.string());
    rows.insert(rows.end(), part.begin(), part.end());
  }
  std::vector<std::pair<std::filesystem::path, std::string>> files;
  for (Metric m : {Metric::Reward, Metric::Emission, Metric::Cost}) {
    files.emplace_back(out_dir / (std::string(to_string(m)) + ".svg"), render_svg(build_series(rows, m), m));
  }
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  for (const auto& [path, text] : files) {
    write_text_atomic(path, text);
    written.push_back(path);
  }
  return written;
}

}  // namespace gridfed
