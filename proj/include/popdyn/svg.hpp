#pragma once

// Minimal SVG writer for line panels and scatter plots. Coordinates are printed with fixed
// precision so identical inputs give identical files.

#include <charconv>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

namespace popdyn::svg {

inline std::string num(double x) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::fixed, 2);
  return std::string(buf, r.ptr);
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Box {
  double x = 0, y = 0, w = 0, h = 0;
};

class Document {
 public:
  Document(double width, double height) : width_(width), height_(height) {}

  void rect(const Box& b, const std::string& stroke, const std::string& fill = "none") {
    body_ << "<rect x=\"" << num(b.x) << "\" y=\"" << num(b.y) << "\" width=\"" << num(b.w) << "\" height=\""
          << num(b.h) << "\" stroke=\"" << stroke << "\" fill=\"" << fill << "\"/>\n";
  }

  // Polyline of (x, y) data mapped into `box` with data ranges [x0, x1] x [y0, y1].
  void polyline(const Box& box, const std::vector<double>& xs, const std::vector<double>& ys, double x0, double x1,
                double y0, double y1, const std::string& stroke, double width, double opacity = 1.0) {
    body_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"" << num(width) << "\"";
    if (opacity < 1.0) body_ << " stroke-opacity=\"" << num(opacity) << "\"";
    body_ << " points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (i) body_ << ' ';
      body_ << num(map_x(box, xs[i], x0, x1)) << ',' << num(map_y(box, ys[i], y0, y1));
    }
    body_ << "\"/>\n";
  }

  void circle(double cx, double cy, double r, const std::string& fill) {
    body_ << "<circle cx=\"" << num(cx) << "\" cy=\"" << num(cy) << "\" r=\"" << num(r) << "\" fill=\"" << fill
          << "\"/>\n";
  }

  void text(double x, double y, const std::string& s, double size = 11.0, const std::string& anchor = "start") {
    body_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-size=\"" << num(size)
          << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\">" << escape(s) << "</text>\n";
  }

  static double map_x(const Box& b, double x, double x0, double x1) {
    return b.x + (x1 > x0 ? (x - x0) / (x1 - x0) : 0.5) * b.w;
  }
  static double map_y(const Box& b, double y, double y0, double y1) {
    return b.y + b.h - (y1 > y0 ? (y - y0) / (y1 - y0) : 0.5) * b.h;
  }

  std::string str() const {
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width_) << "\" height=\"" << num(height_)
        << "\" viewBox=\"0 0 " << num(width_) << ' ' << num(height_) << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << body_.str() << "</svg>\n";
    return out.str();
  }

 private:
  double width_, height_;
  std::ostringstream body_;
};

}  // namespace popdyn::svg
