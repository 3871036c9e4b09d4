#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "epo/metrics.hpp"
#include "epo/sweep.hpp"

namespace epo {

struct MetricsTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t column_index(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (columns[i] == name) return i;
    }
    throw std::runtime_error("unknown metric '" + name + "'; available: " +
                             [this] {
                               std::string all;
                               for (const auto& c : columns) {
                                 if (!all.empty()) all += ", ";
                                 all += c;
                               }
                               return all;
                             }());
  }
};

inline MetricsTable read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics csv: " + path);
  MetricsTable table;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty metrics csv: " + path);
  std::stringstream header(line);
  std::string cell;
  while (std::getline(header, cell, ',')) table.columns.push_back(cell);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) {
      row.push_back(cell == "nan" ? std::nan("") : std::stod(cell));
    }
    if (row.size() != table.columns.size()) {
      throw std::runtime_error("ragged metrics csv row in " + path);
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

struct PlotSeries {
  std::string run_name;
  std::string label;
  std::vector<double> x;  // env_steps
  std::vector<double> y;
};

/// Runs named <label>_s<digits> share a label (the sweep's layout); anything
/// else is its own label.
inline std::string label_from_run_name(const std::string& name) {
  const auto pos = name.rfind("_s");
  if (pos == std::string::npos) return name;
  if (pos + 2 >= name.size()) return name;
  for (std::size_t i = pos + 2; i < name.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(name[i]))) return name;
  }
  return name.substr(0, pos);
}

inline PlotSeries load_series(const std::string& run_dir, const std::string& metric) {
  const MetricsTable table = read_metrics_csv(run_dir + "/metrics.csv");
  const std::size_t xi = table.column_index("env_steps");
  const std::size_t yi = table.column_index(metric);
  PlotSeries series;
  series.run_name = std::filesystem::path(run_dir).filename().string();
  series.label = label_from_run_name(series.run_name);
  for (const auto& row : table.rows) {
    series.x.push_back(row[xi]);
    series.y.push_back(row[yi]);
  }
  return series;
}

struct LabelBand {
  std::string label;
  std::vector<double> x;
  std::vector<double> mean;
  std::vector<double> stderr_half;  // band half-width
};

/// Mean +- stderr across runs sharing a label, on the common x prefix.
inline LabelBand aggregate_label(const std::vector<const PlotSeries*>& group) {
  LabelBand band;
  band.label = group.front()->label;
  std::size_t common = group.front()->x.size();
  for (const auto* s : group) common = std::min(common, s->x.size());
  for (std::size_t i = 0; i < common; ++i) {
    std::vector<double> ys;
    for (const auto* s : group) {
      if (!std::isnan(s->y[i])) ys.push_back(s->y[i]);
    }
    if (ys.empty()) continue;
    band.x.push_back(group.front()->x[i]);
    band.mean.push_back(mean_of(ys));
    band.stderr_half.push_back(stderr_of(ys));
  }
  return band;
}

namespace plot_detail {

inline constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c",
                                           "#9467bd", "#ff7f0e", "#8c564b",
                                           "#17becf", "#7f7f7f"};

struct Axis {
  double lo = 0.0, hi = 1.0;
  double px0 = 0.0, px1 = 1.0;
  double map(double v) const {
    const double t = (v - lo) / (hi - lo == 0.0 ? 1.0 : hi - lo);
    return px0 + t * (px1 - px0);
  }
};

inline std::string fmt_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

}  // namespace plot_detail

/// Self-contained SVG learning-curve figure: one polyline per run, plus a
/// mean line and translucent stderr band per label with two or more runs.
inline void write_plot_svg(const std::string& out_path,
                           const std::vector<PlotSeries>& series,
                           const std::string& metric) {
  using namespace plot_detail;
  if (series.empty()) throw std::invalid_argument("write_plot_svg: no series");
  const int width = 860, height = 560;
  const double ml = 80, mr = 200, mt = 40, mb = 60;

  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isnan(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  if (ymin == ymax) {
    ymin -= 1;
    ymax += 1;
  }
  const double ypad = 0.05 * (ymax - ymin);
  Axis xaxis{xmin, xmax, ml, width - mr};
  Axis yaxis{ymin - ypad, ymax + ypad, height - mb, mt};

  std::map<std::string, std::vector<const PlotSeries*>> groups;
  for (const auto& s : series) groups[s.label].push_back(&s);

  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='"
      << height << "' viewBox='0 0 " << width << " " << height << "'>\n";
  svg << "<rect width='100%' height='100%' fill='white'/>\n";

  // axes and ticks
  svg << "<line x1='" << ml << "' y1='" << height - mb << "' x2='" << width - mr
      << "' y2='" << height - mb << "' stroke='black'/>\n";
  svg << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='"
      << height - mb << "' stroke='black'/>\n";
  for (int t = 0; t <= 5; ++t) {
    const double xv = xaxis.lo + (xaxis.hi - xaxis.lo) * t / 5.0;
    const double px = xaxis.map(xv);
    svg << "<line x1='" << px << "' y1='" << height - mb << "' x2='" << px << "' y2='"
        << height - mb + 5 << "' stroke='black'/>\n";
    svg << "<text x='" << px << "' y='" << height - mb + 20
        << "' font-size='11' text-anchor='middle' font-family='sans-serif'>"
        << fmt_tick(xv) << "</text>\n";
    const double yv = yaxis.lo + (yaxis.hi - yaxis.lo) * t / 5.0;
    const double py = yaxis.map(yv);
    svg << "<line x1='" << ml - 5 << "' y1='" << py << "' x2='" << ml << "' y2='" << py
        << "' stroke='black'/>\n";
    svg << "<text x='" << ml - 9 << "' y='" << py + 4
        << "' font-size='11' text-anchor='end' font-family='sans-serif'>"
        << fmt_tick(yv) << "</text>\n";
  }
  svg << "<text x='" << (ml + width - mr) / 2 << "' y='" << height - 18
      << "' font-size='13' text-anchor='middle' font-family='sans-serif'>env_steps"
      << "</text>\n";
  svg << "<text x='20' y='" << (mt + height - mb) / 2
      << "' font-size='13' text-anchor='middle' font-family='sans-serif' "
      << "transform='rotate(-90 20 " << (mt + height - mb) / 2 << ")'>" << metric
      << "</text>\n";

  int color_idx = 0;
  double legend_y = mt + 10;
  for (const auto& [label, group] : groups) {
    const std::string color = kPalette[color_idx % 8];
    ++color_idx;
    if (group.size() > 1) {
      const LabelBand band = aggregate_label(group);
      // stderr band polygon
      svg << "<polygon fill='" << color << "' fill-opacity='0.15' stroke='none' points='";
      for (std::size_t i = 0; i < band.x.size(); ++i) {
        svg << xaxis.map(band.x[i]) << "," << yaxis.map(band.mean[i] + band.stderr_half[i])
            << " ";
      }
      for (std::size_t i = band.x.size(); i-- > 0;) {
        svg << xaxis.map(band.x[i]) << "," << yaxis.map(band.mean[i] - band.stderr_half[i])
            << " ";
      }
      svg << "'/>\n";
      svg << "<polyline fill='none' stroke='" << color << "' stroke-width='2' points='";
      for (std::size_t i = 0; i < band.x.size(); ++i) {
        svg << xaxis.map(band.x[i]) << "," << yaxis.map(band.mean[i]) << " ";
      }
      svg << "'/>\n";
    }
    for (const auto* s : group) {
      svg << "<polyline fill='none' stroke='" << color << "' stroke-width='1' "
          << "stroke-opacity='" << (group.size() > 1 ? 0.35 : 1.0) << "' points='";
      for (std::size_t i = 0; i < s->x.size(); ++i) {
        if (std::isnan(s->y[i])) continue;
        svg << xaxis.map(s->x[i]) << "," << yaxis.map(s->y[i]) << " ";
      }
      svg << "'/>\n";
    }
    svg << "<rect x='" << width - mr + 14 << "' y='" << legend_y - 9
        << "' width='12' height='12' fill='" << color << "'/>\n";
    svg << "<text x='" << width - mr + 32 << "' y='" << legend_y + 2
        << "' font-size='12' font-family='sans-serif'>" << label << " (n="
        << group.size() << ")</text>\n";
    legend_y += 20;
  }
  svg << "</svg>\n";

  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write plot: " + out_path);
  out << svg.str();
}

/// CSV fallback: aggregated mean/stderr per label on the common grid.
inline void write_plot_csv(const std::string& out_path,
                           const std::vector<PlotSeries>& series) {
  std::map<std::string, std::vector<const PlotSeries*>> groups;
  for (const auto& s : series) groups[s.label].push_back(&s);
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write plot csv: " + out_path);
  out << "label,env_steps,mean,stderr\n";
  for (const auto& [label, group] : groups) {
    const LabelBand band = aggregate_label(group);
    for (std::size_t i = 0; i < band.x.size(); ++i) {
      out << label << ',' << format_double(band.x[i]) << ','
          << format_double(band.mean[i]) << ',' << format_double(band.stderr_half[i])
          << '\n';
    }
  }
}

}  // namespace epo
