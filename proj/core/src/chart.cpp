#include "calrl/chart.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace calrl {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

struct Bounds {
  double lo = 0.0;
  double hi = 1.0;
};

Bounds pad(double lo, double hi) {
  if (lo > hi) std::swap(lo, hi);
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double margin = (hi - lo) * 0.05;
  return {lo - margin, hi + margin};
}

// Tick spacing snapped to 1/2/5 * 10^k.
double nice_step(double range, int target_ticks) {
  const double raw = range / std::max(1, target_ticks);
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double norm = raw / mag;
  double snapped = 10.0;
  if (norm <= 1.0) snapped = 1.0;
  else if (norm <= 2.0) snapped = 2.0;
  else if (norm <= 5.0) snapped = 5.0;
  return snapped * mag;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

std::string escape_xml(const std::string& s) {
  std::string out;
  out.reserve(s.size());
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

}  // namespace

void write_svg_chart(const ChartSpec& spec, std::ostream& out) {
  bool any_points = false;
  double xlo = 0, xhi = 0, ylo = 0, yhi = 0;
  for (const ChartSeries& s : spec.series) {
    for (const auto& [x, y] : s.points) {
      if (!any_points) {
        xlo = xhi = x;
        ylo = yhi = y;
        any_points = true;
      }
      xlo = std::min(xlo, x);
      xhi = std::max(xhi, x);
      ylo = std::min(ylo, y);
      yhi = std::max(yhi, y);
    }
  }
  if (!any_points) throw std::invalid_argument("write_svg_chart: no data points");

  const Bounds xb = pad(xlo, xhi);
  const Bounds yb = pad(ylo, yhi);
  const double ml = 70, mr = 20, mt = 40, mb = 55;  // margins
  const double pw = spec.width - ml - mr;
  const double ph = spec.height - mt - mb;
  auto px = [&](double x) { return ml + (x - xb.lo) / (xb.hi - xb.lo) * pw; };
  auto py = [&](double y) { return mt + ph - (y - yb.lo) / (yb.hi - yb.lo) * ph; };

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\""
      << spec.height << "\" viewBox=\"0 0 " << spec.width << ' ' << spec.height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << spec.width / 2 << "\" y=\"22\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"15\">" << escape_xml(spec.title) << "</text>\n";

  // Axes.
  out << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\"" << mt + ph
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
      << "\" stroke=\"black\"/>\n";

  const double xstep = nice_step(xb.hi - xb.lo, 6);
  for (double t = std::ceil(xb.lo / xstep) * xstep; t <= xb.hi + 1e-12; t += xstep) {
    out << "<line x1=\"" << px(t) << "\" y1=\"" << mt + ph << "\" x2=\"" << px(t) << "\" y2=\""
        << mt + ph + 5 << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << px(t) << "\" y=\"" << mt + ph + 20
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(t)
        << "</text>\n";
  }
  const double ystep = nice_step(yb.hi - yb.lo, 6);
  for (double t = std::ceil(yb.lo / ystep) * ystep; t <= yb.hi + 1e-12; t += ystep) {
    out << "<line x1=\"" << ml - 5 << "\" y1=\"" << py(t) << "\" x2=\"" << ml << "\" y2=\"" << py(t)
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << py(t) << "\" x2=\"" << ml + pw << "\" y2=\"" << py(t)
        << "\" stroke=\"#dddddd\" stroke-width=\"0.5\"/>\n";
    out << "<text x=\"" << ml - 8 << "\" y=\"" << py(t) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(t)
        << "</text>\n";
  }

  out << "<text x=\"" << ml + pw / 2 << "\" y=\"" << spec.height - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
      << escape_xml(spec.x_label) << "</text>\n";
  out << "<text x=\"18\" y=\"" << mt + ph / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
      << "transform=\"rotate(-90 18 " << mt + ph / 2 << ")\">" << escape_xml(spec.y_label)
      << "</text>\n";

  // Series.
  for (size_t i = 0; i < spec.series.size(); ++i) {
    const ChartSeries& s = spec.series[i];
    if (s.points.empty()) continue;
    const std::string color = s.color.empty() ? kPalette[i % 8] : s.color;
    const double stroke = s.emphasized ? 2.5 : 1.2;
    if (s.points.size() == 1) {
      out << "<circle cx=\"" << px(s.points[0].first) << "\" cy=\"" << py(s.points[0].second)
          << "\" r=\"3.5\" fill=\"" << color << "\"/>\n";
    } else {
      out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << stroke
          << "\" points=\"";
      for (const auto& [x, y] : s.points) out << px(x) << ',' << py(y) << ' ';
      out << "\"/>\n";
    }
  }

  // Legend.
  double ly = mt + 8;
  for (size_t i = 0; i < spec.series.size(); ++i) {
    const ChartSeries& s = spec.series[i];
    const std::string color = s.color.empty() ? kPalette[i % 8] : s.color;
    out << "<line x1=\"" << ml + pw - 150 << "\" y1=\"" << ly << "\" x2=\"" << ml + pw - 125
        << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\""
        << (s.emphasized ? 2.5 : 1.2) << "\"/>\n";
    out << "<text x=\"" << ml + pw - 118 << "\" y=\"" << ly + 4
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << escape_xml(s.name) << "</text>\n";
    ly += 16;
  }

  out << "</svg>\n";
  if (!out) throw std::runtime_error("write_svg_chart: write failed");
}

void write_svg_chart(const ChartSpec& spec, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_svg_chart: cannot open " + path);
  write_svg_chart(spec, f);
}

}  // namespace calrl
