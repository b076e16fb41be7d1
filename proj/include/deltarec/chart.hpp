#pragma once

#include <string>
#include <vector>

namespace deltarec {

struct ChartSeries {
  std::string label;
  std::vector<double> x;     // widths, ascending
  std::vector<double> mean;
  std::vector<double> std_dev;
};

struct ChartSpec {
  std::string title = "reconstruction error vs width";
  std::string x_label = "width p";
  std::string y_label = "rho";
};

// Mean line with a +-1 std band per series on a log-scaled x axis.
// Output is plain SVG with fixed float formatting, so re-rendering the same
// input is byte-identical.
void render_chart(const std::vector<ChartSeries>& series,
                  const ChartSpec& spec, const std::string& path);

// Groups results.csv rows by method, one point per width. Sample standard
// deviation across seed pairs; rows with non-finite rho are skipped.
std::vector<ChartSeries> aggregate_results_csv(const std::string& csv_path);

}  // namespace deltarec
