#include "derl/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace derl {

namespace {

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                          "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace

void write_line_chart(const std::vector<SvgSeries>& series, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::string& path) {
    const double w = 640, h = 420, ml = 70, mr = 150, mt = 45, mb = 55;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series)
        for (size_t i = 0; i < s.x.size(); ++i) {
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    if (xmax <= xmin) xmax = xmin + 1;
    if (ymax <= ymin) ymax = ymin + 1;
    double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
    auto py = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };

    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write svg: " + path);
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" font-family=\"sans-serif\">\n";
    f << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    f << "<text x=\"" << w / 2 << "\" y=\"25\" text-anchor=\"middle\" font-size=\"16\">" << title
      << "</text>\n";
    // axes
    f << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\""
      << h - mb << "\" stroke=\"black\"/>\n";
    f << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb
      << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        double xv = xmin + (xmax - xmin) * i / 5.0;
        double yv = ymin + (ymax - ymin) * i / 5.0;
        f << "<text x=\"" << px(xv) << "\" y=\"" << h - mb + 18
          << "\" text-anchor=\"middle\" font-size=\"11\">" << fmt(xv) << "</text>\n";
        f << "<text x=\"" << ml - 8 << "\" y=\"" << py(yv) + 4
          << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(yv) << "</text>\n";
        f << "<line x1=\"" << ml << "\" y1=\"" << py(yv) << "\" x2=\"" << w - mr << "\" y2=\""
          << py(yv) << "\" stroke=\"#dddddd\"/>\n";
    }
    f << "<text x=\"" << (ml + w - mr) / 2 << "\" y=\"" << h - 12
      << "\" text-anchor=\"middle\" font-size=\"13\">" << x_label << "</text>\n";
    f << "<text x=\"18\" y=\"" << (mt + h - mb) / 2 << "\" text-anchor=\"middle\" font-size=\"13\""
      << " transform=\"rotate(-90 18 " << (mt + h - mb) / 2 << ")\">" << y_label << "</text>\n";

    for (size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = kPalette[si % 8];
        f << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (size_t i = 0; i < s.x.size(); ++i)
            f << fmt(px(s.x[i])) << "," << fmt(py(s.y[i])) << " ";
        f << "\"/>\n";
        for (size_t i = 0; i < s.x.size(); ++i)
            f << "<circle cx=\"" << fmt(px(s.x[i])) << "\" cy=\"" << fmt(py(s.y[i]))
              << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        f << "<rect x=\"" << w - mr + 12 << "\" y=\"" << mt + 20 * si << "\" width=\"12\""
          << " height=\"12\" fill=\"" << color << "\"/>\n";
        f << "<text x=\"" << w - mr + 30 << "\" y=\"" << mt + 20 * si + 10
          << "\" font-size=\"12\">" << s.label << "</text>\n";
    }
    f << "</svg>\n";
}

void write_heatmap(const std::array<std::array<long, 7>, 7>& matrix, const std::string& title,
                   const std::string& path) {
    const double cell = 48, ml = 60, mt = 60;
    const double w = ml + 7 * cell + 30, h = mt + 7 * cell + 30;
    long mx = 1;
    for (const auto& row : matrix)
        for (long v : row) mx = std::max(mx, v);

    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write svg: " + path);
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" font-family=\"sans-serif\">\n";
    f << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    f << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << title
      << "</text>\n";
    for (int i = 0; i < 7; ++i) {
        f << "<text x=\"" << ml - 10 << "\" y=\"" << mt + i * cell + cell / 2 + 4
          << "\" text-anchor=\"end\" font-size=\"12\">" << (i - 3) << "</text>\n";
        f << "<text x=\"" << ml + i * cell + cell / 2 << "\" y=\"" << mt - 8
          << "\" text-anchor=\"middle\" font-size=\"12\">" << (i - 3) << "</text>\n";
    }
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 7; ++j) {
            double frac = static_cast<double>(matrix[i][j]) / static_cast<double>(mx);
            int shade = static_cast<int>(std::lround(255.0 * (1.0 - frac)));
            char color[16];
            std::snprintf(color, sizeof color, "#%02x%02xff", shade, shade);
            f << "<rect x=\"" << ml + j * cell << "\" y=\"" << mt + i * cell << "\" width=\""
              << cell << "\" height=\"" << cell << "\" fill=\"" << color
              << "\" stroke=\"#999999\"/>\n";
            f << "<text x=\"" << ml + j * cell + cell / 2 << "\" y=\""
              << mt + i * cell + cell / 2 + 4 << "\" text-anchor=\"middle\" font-size=\"11\""
              << (frac > 0.6 ? " fill=\"white\"" : "") << ">" << matrix[i][j] << "</text>\n";
        }
    f << "</svg>\n";
}

}  // namespace derl
