#include "deltarec/chart.hpp"

#include "deltarec/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace deltarec {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b"};
constexpr int kPaletteSize = 6;

constexpr double kWidth = 720, kHeight = 460;
constexpr double kLeft = 70, kRight = 160, kTop = 40, kBottom = 55;

std::string f2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string fg(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(line);
  while (std::getline(ss, item, ',')) out.push_back(item);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

}  // namespace

void render_chart(const std::vector<ChartSeries>& series,
                  const ChartSpec& spec, const std::string& path) {
  std::size_t points = 0;
  std::vector<double> all_x;
  double y_max = 0.0;
  for (const auto& s : series) {
    if (s.x.size() != s.mean.size() || s.x.size() != s.std_dev.size())
      throw DimensionError("chart: series arrays disagree in length");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!(s.x[i] > 0))
        throw DataError("chart: log axis needs positive x values");
      if (!std::isfinite(s.mean[i]) || !std::isfinite(s.std_dev[i]))
        throw DataError("chart: non-finite series value");
      all_x.push_back(s.x[i]);
      y_max = std::max(y_max, s.mean[i] + s.std_dev[i]);
      ++points;
    }
  }
  if (points == 0) throw DataError("chart: empty series");

  std::sort(all_x.begin(), all_x.end());
  all_x.erase(std::unique(all_x.begin(), all_x.end()), all_x.end());

  double lx_min = std::log10(all_x.front());
  double lx_max = std::log10(all_x.back());
  if (lx_max - lx_min < 1e-12) {
    lx_min -= 0.5;
    lx_max += 0.5;
  }
  if (y_max <= 0.0) y_max = 1.0;
  y_max *= 1.08;

  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  auto px = [&](double x) {
    return kLeft + (std::log10(x) - lx_min) / (lx_max - lx_min) * plot_w;
  };
  auto py = [&](double y) { return kTop + plot_h - y / y_max * plot_h; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
      << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << " "
      << kHeight << "\">\n";
  svg << "<rect width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << f2(kLeft + plot_w / 2) << "\" y=\"24\" "
      << "text-anchor=\"middle\" font-family=\"monospace\" font-size=\"15\">"
      << spec.title << "</text>\n";

  for (int t = 0; t <= 4; ++t) {
    double y = y_max * t / 4.0;
    double yy = py(y);
    svg << "<line x1=\"" << f2(kLeft) << "\" y1=\"" << f2(yy) << "\" x2=\""
        << f2(kLeft + plot_w) << "\" y2=\"" << f2(yy)
        << "\" stroke=\"#dddddd\"/>\n";
    svg << "<text x=\"" << f2(kLeft - 8) << "\" y=\"" << f2(yy + 4)
        << "\" text-anchor=\"end\" font-family=\"monospace\" "
        << "font-size=\"11\">" << fg(y) << "</text>\n";
  }

  std::size_t stride = 1 + (all_x.size() - 1) / 12;
  for (std::size_t i = 0; i < all_x.size(); i += stride) {
    double xx = px(all_x[i]);
    svg << "<line x1=\"" << f2(xx) << "\" y1=\"" << f2(kTop + plot_h)
        << "\" x2=\"" << f2(xx) << "\" y2=\"" << f2(kTop + plot_h + 5)
        << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << f2(xx) << "\" y=\"" << f2(kTop + plot_h + 20)
        << "\" text-anchor=\"middle\" font-family=\"monospace\" "
        << "font-size=\"11\">" << fg(all_x[i]) << "</text>\n";
  }

  svg << "<line x1=\"" << f2(kLeft) << "\" y1=\"" << f2(kTop) << "\" x2=\""
      << f2(kLeft) << "\" y2=\"" << f2(kTop + plot_h)
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << f2(kLeft) << "\" y1=\"" << f2(kTop + plot_h)
      << "\" x2=\"" << f2(kLeft + plot_w) << "\" y2=\"" << f2(kTop + plot_h)
      << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << f2(kLeft + plot_w / 2) << "\" y=\""
      << f2(kHeight - 14)
      << "\" text-anchor=\"middle\" font-family=\"monospace\" "
      << "font-size=\"12\">" << spec.x_label << " (log scale)</text>\n";
  svg << "<text x=\"18\" y=\"" << f2(kTop + plot_h / 2)
      << "\" text-anchor=\"middle\" font-family=\"monospace\" "
      << "font-size=\"12\" transform=\"rotate(-90 18 " << f2(kTop + plot_h / 2)
      << ")\">" << spec.y_label << "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kPalette[si % kPaletteSize];
    if (s.x.empty()) continue;

    svg << "<polygon fill=\"" << color
        << "\" fill-opacity=\"0.18\" stroke=\"none\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      svg << f2(px(s.x[i])) << ","
          << f2(py(std::min(s.mean[i] + s.std_dev[i], y_max))) << " ";
    }
    for (std::size_t i = s.x.size(); i-- > 0;) {
      svg << f2(px(s.x[i])) << ","
          << f2(py(std::max(s.mean[i] - s.std_dev[i], 0.0)))
          << (i == 0 ? "" : " ");
    }
    svg << "\"/>\n";

    svg << "<polyline fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      svg << f2(px(s.x[i])) << "," << f2(py(s.mean[i]))
          << (i + 1 == s.x.size() ? "" : " ");
    }
    svg << "\"/>\n";

    for (std::size_t i = 0; i < s.x.size(); ++i) {
      svg << "<circle cx=\"" << f2(px(s.x[i])) << "\" cy=\""
          << f2(py(s.mean[i])) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }

    double ly = kTop + 10 + 18.0 * static_cast<double>(si);
    svg << "<rect x=\"" << f2(kLeft + plot_w + 16) << "\" y=\"" << f2(ly - 9)
        << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n";
    svg << "<text x=\"" << f2(kLeft + plot_w + 31) << "\" y=\"" << f2(ly)
        << "\" font-family=\"monospace\" font-size=\"11\">" << s.label
        << "</text>\n";
  }
  svg << "</svg>\n";

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("chart: cannot open " + path);
  out << svg.str();
  if (!out) throw DataError("chart: write failed for " + path);
}

std::vector<ChartSeries> aggregate_results_csv(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw DataError("chart: cannot open " + csv_path);
  std::string line;
  if (!std::getline(in, line))
    throw DataError("chart: empty results file " + csv_path);

  auto header = split_csv_line(line);
  auto col = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw DataError("chart: results file lacks column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  std::size_t c_width = col("width");
  std::size_t c_method = col("method");
  std::size_t c_rho = col("rho");

  std::vector<std::string> order;
  std::map<std::string, std::map<double, std::vector<double>>> grouped;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError("chart: ragged row in " + csv_path);
    double width = std::strtod(cells[c_width].c_str(), nullptr);
    double rho_value = std::strtod(cells[c_rho].c_str(), nullptr);
    const std::string& method = cells[c_method];
    if (!grouped.count(method)) order.push_back(method);
    if (std::isfinite(rho_value)) grouped[method][width].push_back(rho_value);
    else grouped[method];  // keep the series even if every row failed
  }

  std::vector<ChartSeries> out;
  for (const auto& method : order) {
    ChartSeries s;
    s.label = method;
    for (const auto& [width, values] : grouped[method]) {
      double mean = 0.0;
      for (double v : values) mean += v;
      mean /= static_cast<double>(values.size());
      double var = 0.0;
      for (double v : values) var += (v - mean) * (v - mean);
      double stddev = values.size() > 1
                          ? std::sqrt(var / static_cast<double>(
                                                values.size() - 1))
                          : 0.0;
      s.x.push_back(width);
      s.mean.push_back(mean);
      s.std_dev.push_back(stddev);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace deltarec
