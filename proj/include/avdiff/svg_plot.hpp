#pragma once

#include <string>
#include <vector>

namespace avdiff {

struct PlotSeries {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

struct PlotSpec {
    std::string title;
    std::string x_label;
    std::string y_label;
    bool log_y = false;
};

/// Line chart with one <circle> marker per point and a legend. Output bytes
/// depend only on the inputs. With no points the axes are drawn with a
/// "no data" annotation.
std::string render_svg(const PlotSpec& spec, const std::vector<PlotSeries>& series);

}  // namespace avdiff
