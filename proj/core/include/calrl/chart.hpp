#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace calrl {

struct ChartSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;  // (x, y)
  std::string color;   // empty: assigned from the palette
  bool emphasized = false;  // thicker stroke (e.g. the seed mean)
};

struct ChartSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<ChartSeries> series;
  int width = 820;
  int height = 500;
};

/// Self-contained SVG line chart: axes with tick labels, one polyline per
/// series, legend. Throws std::invalid_argument when no series has points.
void write_svg_chart(const ChartSpec& spec, std::ostream& out);
void write_svg_chart(const ChartSpec& spec, const std::string& path);

}  // namespace calrl
