#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace shapeguide::cli {

namespace {

constexpr const char* kColors[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"};

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace

std::string render_svg(const BarChart& chart) {
  const double bar = 14, gap = 18, left = 70, right = 20, top = 40, plot_h = 260, bottom = 110;
  const std::size_t ng = std::max<std::size_t>(1, chart.groups.size());
  const double slot = static_cast<double>(ng) * bar + gap;
  const double plot_w = std::max(200.0, slot * static_cast<double>(chart.labels.size()));
  const double width = left + plot_w + right, height = top + plot_h + bottom;

  double lo = 0, hi = 0;
  for (const auto& row : chart.values)
    for (double v : row)
      if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
  if (hi == lo) hi = lo + 1;
  hi += 0.05 * (hi - lo);
  auto y_of = [&](double v) { return top + plot_h * (hi - v) / (hi - lo); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << esc(chart.title)
    << "</text>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0, y = y_of(v);
    s << "<line x1=\"" << left << "\" x2=\"" << left + plot_w << "\" y1=\"" << y << "\" y2=\"" << y
      << "\" stroke=\"#ddd\"/>\n";
    s << "<text x=\"" << left - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << fmt(v) << "</text>\n";
  }
  s << "<line x1=\"" << left << "\" x2=\"" << left + plot_w << "\" y1=\"" << y_of(0) << "\" y2=\"" << y_of(0)
    << "\" stroke=\"black\"/>\n";
  s << "<text transform=\"translate(16," << top + plot_h / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << esc(chart.y_label) << "</text>\n";

  for (std::size_t i = 0; i < chart.labels.size(); ++i) {
    const double x0 = left + gap / 2 + slot * static_cast<double>(i);
    for (std::size_t g = 0; g < chart.groups.size() && g < chart.values[i].size(); ++g) {
      const double v = chart.values[i][g];
      if (!std::isfinite(v)) continue;
      const double y = std::min(y_of(v), y_of(0)), h = std::abs(y_of(v) - y_of(0));
      s << "<rect x=\"" << x0 + bar * static_cast<double>(g) << "\" y=\"" << y << "\" width=\"" << bar - 1
        << "\" height=\"" << h << "\" fill=\"" << kColors[g % std::size(kColors)] << "\"><title>"
        << esc(chart.labels[i] + " / " + chart.groups[g] + ": " + fmt(v)) << "</title></rect>\n";
    }
    const double cx = x0 + bar * static_cast<double>(ng) / 2;
    s << "<text transform=\"translate(" << cx << "," << top + plot_h + 12
      << ") rotate(40)\" text-anchor=\"start\">" << esc(chart.labels[i]) << "</text>\n";
  }
  for (std::size_t g = 0; g < chart.groups.size(); ++g) {
    const double x = left + 90.0 * static_cast<double>(g), y = height - 14;
    s << "<rect x=\"" << x << "\" y=\"" << y - 9 << "\" width=\"10\" height=\"10\" fill=\""
      << kColors[g % std::size(kColors)] << "\"/>\n";
    s << "<text x=\"" << x + 14 << "\" y=\"" << y << "\">" << esc(chart.groups[g]) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace shapeguide::cli
