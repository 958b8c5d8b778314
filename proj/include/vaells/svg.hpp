#pragma once

// Minimal SVG 1.1 emission for 2-D scatter and path figures. No dependency;
// the figures the library produces are points, polylines, axes, and a legend.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "vaells/common.hpp"

namespace vaells {

struct SvgSeries {
    std::vector<std::pair<double, double>> points;
    std::string color = "#1f6fb2";
    std::string label;
    bool connect = false;   // also draw a polyline through the points in order
    double radius = 2.5;    // 0 suppresses the point markers
};

// Fixed qualitative palette, cycled by index.
inline std::string class_color(std::size_t index) {
    static const char* palette[] = {"#1f6fb2", "#d1495b", "#3a9d5d", "#e0a100",
                                    "#7d5ba6", "#14b8a6", "#8a5a44", "#5b6470"};
    return palette[index % (sizeof(palette) / sizeof(palette[0]))];
}

// Smooth blue-to-red gradient for a unit parameter.
inline std::string gradient_color(double t) {
    t = std::clamp(t, 0.0, 1.0);
    const int r = static_cast<int>(std::lround(40.0 + t * 190.0));
    const int g = static_cast<int>(std::lround(90.0 + (1.0 - std::abs(2.0 * t - 1.0)) * 80.0));
    const int b = static_cast<int>(std::lround(210.0 - t * 160.0));
    char buf[8];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
    return buf;
}

namespace detail {

inline std::string svg_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

inline std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

}  // namespace detail

// Writes a self-contained scatter/path figure with axes, tick labels, and a
// legend for labeled series. Bounds cover all points with a margin; the
// vertical axis points up.
inline void write_scatter_svg(const std::string& path,
                              const std::vector<SvgSeries>& series,
                              const std::string& title = "") {
    const double width = 640.0, height = 480.0;
    const double ml = 60.0, mr = 20.0, mt = title.empty() ? 20.0 : 40.0, mb = 45.0;

    double xmin = 0.0, xmax = 0.0, ymin = 0.0, ymax = 0.0;
    bool any = false;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            if (!std::isfinite(x) || !std::isfinite(y))
                throw numeric_error("svg: non-finite point");
            if (!any) {
                xmin = xmax = x;
                ymin = ymax = y;
                any = true;
            }
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (!any) {
        xmin = ymin = -1.0;
        xmax = ymax = 1.0;
    }
    const double xpad = (xmax - xmin) < 1e-12 ? 1.0 : 0.08 * (xmax - xmin);
    const double ypad = (ymax - ymin) < 1e-12 ? 1.0 : 0.08 * (ymax - ymin);
    xmin -= xpad;
    xmax += xpad;
    ymin -= ypad;
    ymax += ypad;

    auto sx = [&](double x) {
        return ml + (x - xmin) / (xmax - xmin) * (width - ml - mr);
    };
    auto sy = [&](double y) {
        return height - mb - (y - ymin) / (ymax - ymin) * (height - mt - mb);
    };

    std::ofstream out(path);
    if (!out) throw config_error("cannot open svg for writing: " + path);
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\""
        << width << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
        << height << "\">\n"
        << "<rect width=\"" << width << "\" height=\"" << height
        << "\" fill=\"#ffffff\"/>\n";
    if (!title.empty())
        out << "<text x=\"" << width / 2.0
            << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
               "font-size=\"15\" fill=\"#222222\">"
            << title << "</text>\n";

    // Frame and ticks.
    out << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << width - ml - mr
        << "\" height=\"" << height - mt - mb
        << "\" fill=\"none\" stroke=\"#444444\" stroke-width=\"1\"/>\n";
    const int ticks = 5;
    for (int k = 0; k < ticks; ++k) {
        const double fx = xmin + (xmax - xmin) * k / (ticks - 1);
        const double fy = ymin + (ymax - ymin) * k / (ticks - 1);
        const double px = sx(fx), py = sy(fy);
        out << "<line x1=\"" << detail::svg_num(px) << "\" y1=\"" << height - mb
            << "\" x2=\"" << detail::svg_num(px) << "\" y2=\"" << height - mb + 5
            << "\" stroke=\"#444444\"/>\n"
            << "<text x=\"" << detail::svg_num(px) << "\" y=\"" << height - mb + 18
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
               "font-size=\"11\" fill=\"#333333\">"
            << detail::tick_label(fx) << "</text>\n"
            << "<line x1=\"" << ml - 5 << "\" y1=\"" << detail::svg_num(py)
            << "\" x2=\"" << ml << "\" y2=\"" << detail::svg_num(py)
            << "\" stroke=\"#444444\"/>\n"
            << "<text x=\"" << ml - 8 << "\" y=\"" << detail::svg_num(py + 4)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" "
               "fill=\"#333333\">"
            << detail::tick_label(fy) << "</text>\n";
    }

    for (const auto& s : series) {
        if (s.connect && s.points.size() > 1) {
            out << "<polyline fill=\"none\" stroke=\"" << s.color
                << "\" stroke-width=\"1.5\" points=\"";
            for (const auto& [x, y] : s.points)
                out << detail::svg_num(sx(x)) << "," << detail::svg_num(sy(y)) << " ";
            out << "\"/>\n";
        }
        if (s.radius > 0.0)
            for (const auto& [x, y] : s.points)
                out << "<circle cx=\"" << detail::svg_num(sx(x)) << "\" cy=\""
                    << detail::svg_num(sy(y)) << "\" r=\"" << s.radius
                    << "\" fill=\"" << s.color << "\" fill-opacity=\"0.8\"/>\n";
    }

    // Legend for labeled series.
    double ly = mt + 14.0;
    for (const auto& s : series) {
        if (s.label.empty()) continue;
        const double lx = width - mr - 130.0;
        out << "<circle cx=\"" << lx << "\" cy=\"" << ly - 4 << "\" r=\"4\" fill=\""
            << s.color << "\"/>\n"
            << "<text x=\"" << lx + 10 << "\" y=\"" << ly
            << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#333333\">"
            << s.label << "</text>\n";
        ly += 16.0;
    }
    out << "</svg>\n";
    if (!out) throw config_error("failed writing svg: " + path);
}

}  // namespace vaells
