#pragma once

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

namespace qcmp {

/// Minimal SVG chart emission for report plots. No styling knobs; these are
/// diagnostic artifacts, not publication figures.
namespace svg {

inline void write_bar_chart(const std::string& path, const std::vector<std::string>& labels,
                            const std::vector<double>& values, const std::string& title) {
  const int w = 640, h = 400, margin = 60;
  double vmax = 1e-12;
  for (double v : values) vmax = std::max(vmax, v);
  std::ofstream out(path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
  out << "<rect width='100%' height='100%' fill='white'/>\n";
  out << "<text x='" << w / 2 << "' y='24' text-anchor='middle' font-size='16'>" << title
      << "</text>\n";
  int n = static_cast<int>(values.size());
  double slot = static_cast<double>(w - 2 * margin) / std::max(1, n);
  for (int i = 0; i < n; ++i) {
    double bh = (h - 2 * margin) * values[i] / vmax;
    double x = margin + i * slot + slot * 0.15;
    double y = h - margin - bh;
    out << "<rect x='" << x << "' y='" << y << "' width='" << slot * 0.7 << "' height='" << bh
        << "' fill='#4878a8'/>\n";
    out << "<text x='" << margin + i * slot + slot / 2 << "' y='" << h - margin + 18
        << "' text-anchor='middle' font-size='12'>" << labels[i] << "</text>\n";
    out << "<text x='" << margin + i * slot + slot / 2 << "' y='" << y - 6
        << "' text-anchor='middle' font-size='11'>" << values[i] << "</text>\n";
  }
  out << "<line x1='" << margin << "' y1='" << h - margin << "' x2='" << w - margin << "' y2='"
      << h - margin << "' stroke='black'/>\n";
  out << "</svg>\n";
}

inline void write_line_chart(const std::string& path, const std::vector<double>& xs,
                             const std::vector<double>& ys, const std::string& title,
                             const std::string& xlabel, const std::string& ylabel) {
  const int w = 640, h = 400, margin = 60;
  double xmin = xs.empty() ? 0 : *std::min_element(xs.begin(), xs.end());
  double xmax = xs.empty() ? 1 : *std::max_element(xs.begin(), xs.end());
  double ymin = ys.empty() ? 0 : *std::min_element(ys.begin(), ys.end());
  double ymax = ys.empty() ? 1 : *std::max_element(ys.begin(), ys.end());
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  auto px = [&](double x) { return margin + (x - xmin) / (xmax - xmin) * (w - 2 * margin); };
  auto py = [&](double y) { return h - margin - (y - ymin) / (ymax - ymin) * (h - 2 * margin); };

  std::ofstream out(path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
  out << "<rect width='100%' height='100%' fill='white'/>\n";
  out << "<text x='" << w / 2 << "' y='24' text-anchor='middle' font-size='16'>" << title
      << "</text>\n";
  out << "<line x1='" << margin << "' y1='" << h - margin << "' x2='" << w - margin << "' y2='"
      << h - margin << "' stroke='black'/>\n";
  out << "<line x1='" << margin << "' y1='" << margin << "' x2='" << margin << "' y2='"
      << h - margin << "' stroke='black'/>\n";
  out << "<text x='" << w / 2 << "' y='" << h - 16 << "' text-anchor='middle' font-size='12'>"
      << xlabel << "</text>\n";
  out << "<text x='16' y='" << h / 2 << "' font-size='12' transform='rotate(-90 16 " << h / 2
      << ")' text-anchor='middle'>" << ylabel << "</text>\n";
  out << "<polyline fill='none' stroke='#4878a8' stroke-width='2' points='";
  for (size_t i = 0; i < xs.size(); ++i) out << px(xs[i]) << ',' << py(ys[i]) << ' ';
  out << "'/>\n";
  for (size_t i = 0; i < xs.size(); ++i) {
    out << "<circle cx='" << px(xs[i]) << "' cy='" << py(ys[i]) << "' r='3' fill='#4878a8'/>\n";
    out << "<text x='" << px(xs[i]) << "' y='" << h - margin + 18
        << "' text-anchor='middle' font-size='11'>" << xs[i] << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace svg
}  // namespace qcmp
