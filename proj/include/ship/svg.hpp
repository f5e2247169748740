#pragma once

// Small deterministic SVG writers: line chart and scatter plot.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

namespace ship::svg {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

struct Series {
  std::string label;
  std::string color;
  std::vector<double> x, y;
};

struct Frame {
  double w = 720, h = 420, left = 70, right = 170, top = 40, bottom = 50;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  double px(double x) const { return left + (x - x0) / (x1 - x0) * (w - left - right); }
  double py(double y) const { return h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom); }
};

inline void fit(Frame& f, const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.empty()) return;
  f.x0 = *std::min_element(xs.begin(), xs.end());
  f.x1 = *std::max_element(xs.begin(), xs.end());
  f.y0 = *std::min_element(ys.begin(), ys.end());
  f.y1 = *std::max_element(ys.begin(), ys.end());
  if (f.x1 == f.x0) f.x1 = f.x0 + 1;
  if (f.y1 == f.y0) f.y1 = f.y0 + 1;
  const double pad = 0.05 * (f.y1 - f.y0);
  f.y0 -= pad;
  f.y1 += pad;
}

inline std::string header(const Frame& f, const std::string& title, const std::string& xlabel, const std::string& ylabel) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(f.w) + "\" height=\"" + num(f.h) +
                  "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(f.w / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + escape(title) + "</text>\n";
  const double xa = f.left, xb = f.w - f.right, ya = f.top, yb = f.h - f.bottom;
  s += "<rect x=\"" + num(xa) + "\" y=\"" + num(ya) + "\" width=\"" + num(xb - xa) + "\" height=\"" + num(yb - ya) +
       "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = f.y0 + (f.y1 - f.y0) * i / 4.0, xv = f.x0 + (f.x1 - f.x0) * i / 4.0;
    s += "<text x=\"" + num(xa - 6) + "\" y=\"" + num(f.py(yv) + 4) + "\" text-anchor=\"end\">" + num(yv) + "</text>\n";
    s += "<text x=\"" + num(f.px(xv)) + "\" y=\"" + num(yb + 16) + "\" text-anchor=\"middle\">" + num(xv) + "</text>\n";
  }
  s += "<text x=\"" + num((xa + xb) / 2) + "\" y=\"" + num(f.h - 12) + "\" text-anchor=\"middle\">" + escape(xlabel) + "</text>\n";
  s += "<text x=\"16\" y=\"" + num((ya + yb) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
       num((ya + yb) / 2) + ")\">" + escape(ylabel) + "</text>\n";
  return s;
}

inline std::string line_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                              const std::vector<Series>& series) {
  Frame f;
  std::vector<double> xs, ys;
  for (const auto& s : series) {
    xs.insert(xs.end(), s.x.begin(), s.x.end());
    ys.insert(ys.end(), s.y.begin(), s.y.end());
  }
  fit(f, xs, ys);
  std::string out = header(f, title, xlabel, ylabel);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    std::string pts;
    for (std::size_t j = 0; j < s.x.size(); ++j) pts += (j ? " " : "") + num(f.px(s.x[j])) + "," + num(f.py(s.y[j]));
    out += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    const double ly = f.top + 16 + 20.0 * static_cast<double>(i), lx = f.w - f.right + 14;
    out += "<line x1=\"" + num(lx) + "\" y1=\"" + num(ly) + "\" x2=\"" + num(lx + 22) + "\" y2=\"" + num(ly) +
           "\" stroke=\"" + s.color + "\" stroke-width=\"2\"/>\n";
    out += "<text x=\"" + num(lx + 28) + "\" y=\"" + num(ly + 4) + "\">" + escape(s.label) + "</text>\n";
  }
  return out + "</svg>\n";
}

enum class Marker { circle, square, triangle };

struct PointSet {
  std::string label;
  std::string color;
  Marker marker = Marker::circle;
  std::vector<double> x, y;
};

inline std::string marker_svg(Marker m, double x, double y, const std::string& color) {
  switch (m) {
    case Marker::circle:
      return "<circle cx=\"" + num(x) + "\" cy=\"" + num(y) + "\" r=\"4\" fill=\"" + color + "\"/>\n";
    case Marker::square:
      return "<rect x=\"" + num(x - 4) + "\" y=\"" + num(y - 4) + "\" width=\"8\" height=\"8\" fill=\"" + color + "\"/>\n";
    case Marker::triangle:
      return "<polygon points=\"" + num(x) + "," + num(y - 5) + " " + num(x - 5) + "," + num(y + 4) + " " + num(x + 5) +
             "," + num(y + 4) + "\" fill=\"" + color + "\"/>\n";
  }
  return {};
}

inline std::string scatter(const std::string& title, const std::vector<PointSet>& sets) {
  Frame f;
  std::vector<double> xs, ys;
  for (const auto& s : sets) {
    xs.insert(xs.end(), s.x.begin(), s.x.end());
    ys.insert(ys.end(), s.y.begin(), s.y.end());
  }
  fit(f, xs, ys);
  const double xpad = 0.05 * (f.x1 - f.x0);
  f.x0 -= xpad;
  f.x1 += xpad;
  std::string out = header(f, title, "PC1", "PC2");
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const auto& s = sets[i];
    for (std::size_t j = 0; j < s.x.size(); ++j) out += marker_svg(s.marker, f.px(s.x[j]), f.py(s.y[j]), s.color);
    const double ly = f.top + 16 + 20.0 * static_cast<double>(i), lx = f.w - f.right + 20;
    out += marker_svg(s.marker, lx, ly, s.color);
    out += "<text x=\"" + num(lx + 12) + "\" y=\"" + num(ly + 4) + "\">" + escape(s.label) + "</text>\n";
  }
  return out + "</svg>\n";
}

}  // namespace ship::svg
