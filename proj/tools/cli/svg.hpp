#pragma once

#include <string>
#include <vector>

namespace shapeguide::cli {

/// values[i][g] is the bar for label i in group g; NaN bars are left out.
struct BarChart {
  std::string title;
  std::string y_label;
  std::vector<std::string> labels;
  std::vector<std::string> groups;
  std::vector<std::vector<double>> values;
};

/// Grouped vertical bar chart as a standalone SVG document.
std::string render_svg(const BarChart& chart);

}  // namespace shapeguide::cli
