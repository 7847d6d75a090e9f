#pragma once

#include <string>
#include <vector>

namespace comet::svg {

// Minimal deterministic SVG builder: fixed-precision coordinates so the same
// data always serializes to the same bytes.
class Canvas {
public:
    Canvas(double width, double height);

    void rect(double x, double y, double w, double h, const std::string& fill,
              double opacity = 1.0);
    void line(double x1, double y1, double x2, double y2, const std::string& stroke,
              double width = 1.0, bool dashed = false);
    void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke,
                  double width = 1.0, bool dashed = false, const std::string& extra = "");
    void circle(double cx, double cy, double r, const std::string& fill);
    void text(double x, double y, const std::string& s, double size = 10.0,
              const std::string& anchor = "start");

    std::string str() const;
    void save(const std::string& path) const;

private:
    double width_, height_;
    std::string body_;
};

// value in [0,1] -> viridis-like hex color
std::string heat_color(double v);
// categorical palette for module ids
std::string module_color(int z);

}  // namespace comet::svg
