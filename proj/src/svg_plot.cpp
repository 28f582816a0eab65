#include "avdiff/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace avdiff {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 400.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 150.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 50.0;

const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string escape(const std::string& s) {
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

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    void add(double v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    void pad() {
        if (!(hi > lo)) {
            const double half = std::max(std::abs(lo) * 0.05, 0.5);
            lo -= half;
            hi += half;
        }
    }
};

}  // namespace

std::string render_svg(const PlotSpec& spec, const std::vector<PlotSeries>& series) {
    Range xr;
    Range yr;
    std::size_t points = 0;
    for (const PlotSeries& s : series) {
        if (s.x.size() != s.y.size()) throw std::invalid_argument("plot: series '" + s.name + "' has ragged x/y");
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
                throw std::invalid_argument("plot: non-finite value in series '" + s.name + "'");
            }
            if (spec.log_y && !(s.y[i] > 0.0)) throw std::invalid_argument("plot: log axis needs positive values");
            xr.add(s.x[i]);
            yr.add(spec.log_y ? std::log10(s.y[i]) : s.y[i]);
            ++points;
        }
    }
    if (points == 0) {
        xr = Range{0.0, 1.0};
        yr = Range{0.0, 1.0};
    }
    xr.pad();
    yr.pad();

    const double pw = kWidth - kLeft - kRight;
    const double ph = kHeight - kTop - kBottom;
    const auto px = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
    const auto py = [&](double y) {
        const double v = spec.log_y ? std::log10(y) : y;
        return kTop + ph - (v - yr.lo) / (yr.hi - yr.lo) * ph;
    };

    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" + num(kHeight) +
           "\" viewBox=\"0 0 " + num(kWidth) + " " + num(kHeight) + "\">\n";
    out += "<rect x=\"0\" y=\"0\" width=\"" + num(kWidth) + "\" height=\"" + num(kHeight) + "\" fill=\"white\"/>\n";
    out += "<text x=\"" + num(kWidth / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" +
           escape(spec.title) + "</text>\n";
    // Axes
    out += "<line class=\"axis\" x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop + ph) + "\" x2=\"" + num(kLeft + pw) +
           "\" y2=\"" + num(kTop + ph) + "\" stroke=\"black\"/>\n";
    out += "<line class=\"axis\" x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop) + "\" x2=\"" + num(kLeft) + "\" y2=\"" +
           num(kTop + ph) + "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = xr.lo + (xr.hi - xr.lo) * i / 4.0;
        const double fy = yr.lo + (yr.hi - yr.lo) * i / 4.0;
        const double x = kLeft + pw * i / 4.0;
        const double y = kTop + ph - ph * i / 4.0;
        out += "<text x=\"" + num(x) + "\" y=\"" + num(kTop + ph + 18) + "\" text-anchor=\"middle\" font-size=\"11\">" +
               tick(fx) + "</text>\n";
        out += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(y + 4) + "\" text-anchor=\"end\" font-size=\"11\">" +
               tick(spec.log_y ? std::pow(10.0, fy) : fy) + "</text>\n";
    }
    out += "<text x=\"" + num(kLeft + pw / 2) + "\" y=\"" + num(kHeight - 10) +
           "\" text-anchor=\"middle\" font-size=\"12\">" + escape(spec.x_label) + "</text>\n";
    out += "<text x=\"16\" y=\"" + num(kTop + ph / 2) + "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 " +
           num(kTop + ph / 2) + ")\">" + escape(spec.y_label) + (spec.log_y ? " (log)" : "") + "</text>\n";

    if (points == 0) {
        out += "<text x=\"" + num(kLeft + pw / 2) + "\" y=\"" + num(kTop + ph / 2) +
               "\" text-anchor=\"middle\" font-size=\"14\" fill=\"gray\">no data</text>\n";
    }

    for (std::size_t k = 0; k < series.size(); ++k) {
        const PlotSeries& s = series[k];
        const char* color = kColors[k % (sizeof kColors / sizeof kColors[0])];
        if (s.x.size() > 1) {
            out += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" points=\"";
            for (std::size_t i = 0; i < s.x.size(); ++i) {
                if (i > 0) out += ' ';
                out += num(px(s.x[i])) + "," + num(py(s.y[i]));
            }
            out += "\"/>\n";
        }
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            out += "<circle cx=\"" + num(px(s.x[i])) + "\" cy=\"" + num(py(s.y[i])) + "\" r=\"2.5\" fill=\"" + color +
                   "\"/>\n";
        }
        const double ly = kTop + 16.0 * static_cast<double>(k);
        out += "<line x1=\"" + num(kLeft + pw + 12) + "\" y1=\"" + num(ly) + "\" x2=\"" + num(kLeft + pw + 32) +
               "\" y2=\"" + num(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
        out += "<text x=\"" + num(kLeft + pw + 38) + "\" y=\"" + num(ly + 4) + "\" font-size=\"11\">" + escape(s.name) +
               "</text>\n";
    }
    out += "</svg>\n";
    return out;
}

}  // namespace avdiff
