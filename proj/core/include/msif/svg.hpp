#pragma once

#include <string>
#include <vector>

namespace msif {

struct SvgSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

// Multi-series line chart as a standalone SVG document string.
std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<SvgSeries>& series);

// Fixed-bin histogram of the values; bin count is clamped to the data.
std::string svg_histogram(const std::string& title, const std::string& x_label,
                          const std::vector<double>& values, int bins = 24);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace msif
