#include "comet/svg.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "comet/io.hpp"

namespace comet::svg {

namespace {
std::string num(double v) { return io::fmt(v, 2); }
}

Canvas::Canvas(double width, double height) : width_(width), height_(height) {}

void Canvas::rect(double x, double y, double w, double h, const std::string& fill,
                  double opacity) {
    body_ += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) + "\" height=\"" +
             num(h) + "\" fill=\"" + fill + "\"";
    if (opacity < 1.0) body_ += " fill-opacity=\"" + num(opacity) + "\"";
    body_ += "/>\n";
}

void Canvas::line(double x1, double y1, double x2, double y2, const std::string& stroke,
                  double width, bool dashed) {
    body_ += "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) + "\" y2=\"" +
             num(y2) + "\" stroke=\"" + stroke + "\" stroke-width=\"" + num(width) + "\"";
    if (dashed) body_ += " stroke-dasharray=\"4 3\"";
    body_ += "/>\n";
}

void Canvas::polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke,
                      double width, bool dashed, const std::string& extra) {
    if (pts.size() < 2) return;
    body_ += "<polyline points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (i) body_ += " ";
        body_ += num(pts[i].first) + "," + num(pts[i].second);
    }
    body_ += "\" fill=\"none\" stroke=\"" + stroke + "\" stroke-width=\"" + num(width) + "\"";
    if (dashed) body_ += " stroke-dasharray=\"4 3\"";
    if (!extra.empty()) body_ += " " + extra;
    body_ += "/>\n";
}

void Canvas::circle(double cx, double cy, double r, const std::string& fill) {
    body_ += "<circle cx=\"" + num(cx) + "\" cy=\"" + num(cy) + "\" r=\"" + num(r) + "\" fill=\"" +
             fill + "\"/>\n";
}

void Canvas::text(double x, double y, const std::string& s, double size,
                  const std::string& anchor) {
    body_ += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-size=\"" + num(size) +
             "\" font-family=\"sans-serif\" text-anchor=\"" + anchor + "\">" + s + "</text>\n";
}

std::string Canvas::str() const {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width_) + "\" height=\"" +
           num(height_) + "\" viewBox=\"0 0 " + num(width_) + " " + num(height_) + "\">\n" + body_ +
           "</svg>\n";
}

void Canvas::save(const std::string& path) const { io::write_text(path, str()); }

std::string heat_color(double v) {
    v = std::clamp(v, 0.0, 1.0);
    // small viridis-ish ramp, linearly interpolated
    static const std::array<std::array<double, 3>, 5> stops{{{68, 1, 84},
                                                             {59, 82, 139},
                                                             {33, 145, 140},
                                                             {94, 201, 98},
                                                             {253, 231, 37}}};
    const double x = v * (stops.size() - 1);
    const int i = std::min(static_cast<int>(x), static_cast<int>(stops.size()) - 2);
    const double f = x - i;
    char buf[8];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x",
                  static_cast<int>(std::lround(stops[i][0] + f * (stops[i + 1][0] - stops[i][0]))),
                  static_cast<int>(std::lround(stops[i][1] + f * (stops[i + 1][1] - stops[i][1]))),
                  static_cast<int>(std::lround(stops[i][2] + f * (stops[i + 1][2] - stops[i][2]))));
    return buf;
}

std::string module_color(int z) {
    static const std::array<const char*, 8> palette{"#4c72b0", "#dd8452", "#55a868", "#c44e52",
                                                    "#8172b3", "#937860", "#da8bc3", "#8c8c8c"};
    return palette[static_cast<std::size_t>(z) % palette.size()];
}

}  // namespace comet::svg
