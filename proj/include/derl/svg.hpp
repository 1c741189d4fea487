#pragma once

#include <array>
#include <string>
#include <vector>

namespace derl {

struct SvgSeries {
    std::string label;
    std::vector<double> x, y;
};

// Minimal hand-rolled SVG emission. No timestamps or other run-varying
// content, so identical inputs give byte-identical files.
void write_line_chart(const std::vector<SvgSeries>& series, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::string& path);

void write_heatmap(const std::array<std::array<long, 7>, 7>& matrix, const std::string& title,
                   const std::string& path);

}  // namespace derl
