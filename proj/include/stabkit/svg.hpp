#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace stabkit {

// Minimal SVG writers for the two plots the CLI emits: contour maps of the
// unified-loss landscape and accuracy-stability frontier scatters.

struct SvgPoint {
  double x, y;
  std::string label;
};

inline void write_svg_scatter(const std::filesystem::path& path, const std::vector<SvgPoint>& pts,
                              const std::string& x_label, const std::string& y_label,
                              const std::string& title) {
  const double W = 640, H = 480, m = 60;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& p : pts) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  if (pts.empty()) xmin = ymin = 0, xmax = ymax = 1;
  double xpad = (xmax - xmin) * 0.1 + 1e-12, ypad = (ymax - ymin) * 0.1 + 1e-12;
  xmin -= xpad, xmax += xpad, ymin -= ypad, ymax += ypad;
  auto sx = [&](double x) { return m + (x - xmin) / (xmax - xmin) * (W - 2 * m); };
  auto sy = [&](double y) { return H - m - (y - ymin) / (ymax - ymin) * (H - 2 * m); };

  std::ofstream out(path, std::ios::trunc);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
  out << "<rect width='100%' height='100%' fill='white'/>\n";
  out << "<text x='" << W / 2 << "' y='24' text-anchor='middle' font-size='16'>" << title
      << "</text>\n";
  out << "<line x1='" << m << "' y1='" << H - m << "' x2='" << W - m << "' y2='" << H - m
      << "' stroke='black'/>\n";
  out << "<line x1='" << m << "' y1='" << m << "' x2='" << m << "' y2='" << H - m
      << "' stroke='black'/>\n";
  out << "<text x='" << W / 2 << "' y='" << H - 16 << "' text-anchor='middle' font-size='12'>"
      << x_label << "</text>\n";
  out << "<text x='18' y='" << H / 2 << "' text-anchor='middle' font-size='12' transform='rotate(-90 18 "
      << H / 2 << ")'>" << y_label << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    double fx = xmin + (xmax - xmin) * i / 4.0, fy = ymin + (ymax - ymin) * i / 4.0;
    out << "<text x='" << sx(fx) << "' y='" << H - m + 16
        << "' text-anchor='middle' font-size='10'>" << fx << "</text>\n";
    out << "<text x='" << m - 6 << "' y='" << sy(fy) + 3
        << "' text-anchor='end' font-size='10'>" << fy << "</text>\n";
  }
  for (const auto& p : pts) {
    out << "<circle cx='" << sx(p.x) << "' cy='" << sy(p.y) << "' r='4' fill='steelblue'/>\n";
    if (!p.label.empty())
      out << "<text x='" << sx(p.x) + 6 << "' y='" << sy(p.y) - 6 << "' font-size='10'>" << p.label
          << "</text>\n";
  }
  out << "</svg>\n";
}

// Marching-squares contour plot of a square scalar field. values are
// row-major with v = values[iy*n + ix], x axis = lo..hi, y axis = lo..hi.
inline void write_svg_contour(const std::filesystem::path& path, const std::vector<double>& values,
                              int n, double lo, double hi, const std::string& title,
                              double mark_x = NAN, double mark_y = NAN) {
  const double W = 560, H = 560, m = 50;
  double vmin = 1e300, vmax = -1e300;
  for (double v : values) {
    vmin = std::min(vmin, v);
    vmax = std::max(vmax, v);
  }
  auto sx = [&](double x) { return m + (x - lo) / (hi - lo) * (W - 2 * m); };
  auto sy = [&](double y) { return H - m - (y - lo) / (hi - lo) * (H - 2 * m); };

  std::ofstream out(path, std::ios::trunc);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
  out << "<rect width='100%' height='100%' fill='white'/>\n";
  out << "<text x='" << W / 2 << "' y='22' text-anchor='middle' font-size='14'>" << title
      << "</text>\n";
  const int levels = 14;
  const double step = (hi - lo) / (n - 1);
  for (int li = 1; li <= levels; ++li) {
    // square-root spacing concentrates contours near the minimum
    double f = static_cast<double>(li) / (levels + 1);
    double level = vmin + f * f * (vmax - vmin);
    out << "<path fill='none' stroke='steelblue' stroke-width='1' d='";
    for (int iy = 0; iy + 1 < n; ++iy)
      for (int ix = 0; ix + 1 < n; ++ix) {
        double v00 = values[iy * n + ix], v10 = values[iy * n + ix + 1];
        double v01 = values[(iy + 1) * n + ix], v11 = values[(iy + 1) * n + ix + 1];
        double x0 = lo + ix * step, y0 = lo + iy * step;
        struct P {
          double x, y;
        };
        P crossings[4];
        int c = 0;
        auto edge = [&](double va, double vb, double xa, double ya, double xb, double yb) {
          if ((va < level) == (vb < level)) return;
          double t = (level - va) / (vb - va);
          crossings[c++] = {xa + t * (xb - xa), ya + t * (yb - ya)};
        };
        edge(v00, v10, x0, y0, x0 + step, y0);
        edge(v10, v11, x0 + step, y0, x0 + step, y0 + step);
        edge(v01, v11, x0, y0 + step, x0 + step, y0 + step);
        edge(v00, v01, x0, y0, x0, y0 + step);
        if (c == 2)
          out << "M" << sx(crossings[0].x) << " " << sy(crossings[0].y) << "L"
              << sx(crossings[1].x) << " " << sy(crossings[1].y);
      }
    out << "'/>\n";
  }
  out << "<rect x='" << m << "' y='" << m << "' width='" << W - 2 * m << "' height='" << H - 2 * m
      << "' fill='none' stroke='black'/>\n";
  for (int i = 0; i <= 4; ++i) {
    double f = lo + (hi - lo) * i / 4.0;
    out << "<text x='" << sx(f) << "' y='" << H - m + 16
        << "' text-anchor='middle' font-size='10'>" << f << "</text>\n";
    out << "<text x='" << m - 6 << "' y='" << sy(f) + 3 << "' text-anchor='end' font-size='10'>"
        << f << "</text>\n";
  }
  if (!std::isnan(mark_x))
    out << "<circle cx='" << sx(mark_x) << "' cy='" << sy(mark_y)
        << "' r='5' fill='crimson'/>\n";
  out << "</svg>\n";
}

}  // namespace stabkit
