#pragma once

// Self-contained SVG emission for the evaluation plots: line charts on fixed
// axes and confusion-matrix heatmaps. No raster dependencies.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace btn {

struct SvgSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

namespace detail {

inline const char* series_color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                  "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  return palette[i % 8];
}

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else out += c;
  }
  return out;
}

}  // namespace detail

// Line chart on the axis box [xmin,xmax] x [ymin,ymax]. Pass identical min
// and max to autoscale that axis from the data.
inline void write_svg_line_chart(const std::string& path, const std::string& title,
                                 const std::string& xlabel, const std::string& ylabel,
                                 const std::vector<SvgSeries>& series,
                                 double xmin = 0, double xmax = 0, double ymin = 0, double ymax = 0) {
  const int width = 640, height = 480;
  const int left = 70, right = 20, top = 40, bottom = 60;
  if (xmin == xmax || ymin == ymax) {
    double dx0 = 1e300, dx1 = -1e300, dy0 = 1e300, dy1 = -1e300;
    for (const auto& s : series)
      for (const auto& [x, y] : s.points) {
        dx0 = std::min(dx0, x);
        dx1 = std::max(dx1, x);
        dy0 = std::min(dy0, y);
        dy1 = std::max(dy1, y);
      }
    if (xmin == xmax) {
      xmin = dx0;
      xmax = dx1 > dx0 ? dx1 : dx0 + 1;
    }
    if (ymin == ymax) {
      ymin = dy0;
      ymax = dy1 > dy0 ? dy1 : dy0 + 1;
    }
  }
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (width - left - right); };
  auto py = [&](double y) { return height - bottom - (y - ymin) / (ymax - ymin) * (height - top - bottom); };

  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_svg_line_chart: cannot write " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << detail::svg_escape(title) << "</text>\n";
  // axes box and ticks
  out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << (width - left - right)
      << "\" height=\"" << (height - top - bottom) << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 5.0;
    const double yv = ymin + (ymax - ymin) * i / 5.0;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", xv);
    out << "<text x=\"" << px(xv) << "\" y=\"" << height - bottom + 18 << "\" text-anchor=\"middle\" font-size=\"11\">" << buf << "</text>\n";
    std::snprintf(buf, sizeof(buf), "%.3g", yv);
    out << "<text x=\"" << left - 8 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << buf << "</text>\n";
    out << "<line x1=\"" << px(xv) << "\" y1=\"" << height - bottom << "\" x2=\"" << px(xv) << "\" y2=\"" << height - bottom + 4 << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << left - 4 << "\" y1=\"" << py(yv) << "\" x2=\"" << left << "\" y2=\"" << py(yv) << "\" stroke=\"black\"/>\n";
  }
  out << "<text x=\"" << width / 2 << "\" y=\"" << height - 16 << "\" text-anchor=\"middle\" font-size=\"13\">" << detail::svg_escape(xlabel) << "</text>\n";
  out << "<text x=\"18\" y=\"" << height / 2 << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 " << height / 2 << ")\">"
      << detail::svg_escape(ylabel) << "</text>\n";
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    out << "<polyline fill=\"none\" stroke=\"" << detail::series_color(si) << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : s.points) out << px(x) << "," << py(y) << " ";
    out << "\"/>\n";
    out << "<text x=\"" << width - right - 8 << "\" y=\"" << top + 16 + 16 * static_cast<int>(si)
        << "\" text-anchor=\"end\" font-size=\"12\" fill=\"" << detail::series_color(si) << "\">" << detail::svg_escape(s.name) << "</text>\n";
  }
  out << "</svg>\n";
}

// Heatmap of a k x k count matrix; rows are true classes, columns predicted.
inline void write_svg_heatmap(const std::string& path, const std::string& title,
                              const std::vector<std::vector<double>>& matrix,
                              const std::vector<std::string>& labels) {
  const int k = static_cast<int>(matrix.size());
  const int cell = std::max(28, 320 / std::max(k, 1));
  const int left = 90, top = 70;
  const int width = left + k * cell + 30, height = top + k * cell + 30;
  double peak = 1e-12;
  for (const auto& row : matrix)
    for (double v : row) peak = std::max(peak, v);

  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_svg_heatmap: cannot write " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << detail::svg_escape(title) << "</text>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"44\" text-anchor=\"middle\" font-size=\"11\">rows: actual class, columns: predicted class</text>\n";
  for (int i = 0; i < k; ++i) {
    out << "<text x=\"" << left - 6 << "\" y=\"" << top + i * cell + cell / 2 + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
        << detail::svg_escape(labels[static_cast<std::size_t>(i)]) << "</text>\n";
    out << "<text x=\"" << left + i * cell + cell / 2 << "\" y=\"" << top - 8 << "\" text-anchor=\"middle\" font-size=\"11\">"
        << detail::svg_escape(labels[static_cast<std::size_t>(i)]) << "</text>\n";
    for (int j = 0; j < k; ++j) {
      const double frac = matrix[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] / peak;
      const int shade = static_cast<int>(std::lround(255 - 200 * frac));
      out << "<rect x=\"" << left + j * cell << "\" y=\"" << top + i * cell << "\" width=\"" << cell << "\" height=\"" << cell
          << "\" fill=\"rgb(" << shade << "," << shade << ",255)\" stroke=\"#ccc\"/>\n";
      out << "<text x=\"" << left + j * cell + cell / 2 << "\" y=\"" << top + i * cell + cell / 2 + 4
          << "\" text-anchor=\"middle\" font-size=\"11\">" << matrix[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] << "</text>\n";
    }
  }
  out << "</svg>\n";
}

}  // namespace btn
