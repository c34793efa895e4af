#pragma once

#include "folkvae/error.hpp"
#include "folkvae/tensor.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

namespace folkvae::eval {

// Minimal dependency-free scatter plot writer. Points colored by class id;
// output bytes are a pure function of the inputs.
inline void write_scatter_svg(const std::string& path, const Mat& points,
                              const std::vector<int>& labels,
                              const std::vector<std::string>& label_names,
                              const std::string& title) {
    if (points.cols != 2 || points.rows != int(labels.size()))
        throw data_error("write_scatter_svg: points must be Nx2 with one label per row");
    static const char* kPalette[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e",
                                     "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    constexpr int kW = 640, kH = 640, kPad = 48;

    double xmin = points.at(0, 0), xmax = xmin, ymin = points.at(0, 1), ymax = ymin;
    for (int i = 0; i < points.rows; ++i) {
        xmin = std::min(xmin, points.at(i, 0)); xmax = std::max(xmax, points.at(i, 0));
        ymin = std::min(ymin, points.at(i, 1)); ymax = std::max(ymax, points.at(i, 1));
    }
    const double xr = xmax - xmin > 0 ? xmax - xmin : 1.0;
    const double yr = ymax - ymin > 0 ? ymax - ymin : 1.0;

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot write " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
        << "\" viewBox=\"0 0 " << kW << " " << kH << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" "
           "font-family=\"sans-serif\" font-size=\"16\">" << title << "</text>\n";

    char buf[160];
    for (int i = 0; i < points.rows; ++i) {
        const double px = kPad + (points.at(i, 0) - xmin) / xr * (kW - 2 * kPad);
        const double py = kH - kPad - (points.at(i, 1) - ymin) / yr * (kH - 2 * kPad);
        const char* color = kPalette[size_t(labels[size_t(i)]) % 10];
        std::snprintf(buf, sizeof buf,
                      "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"2.5\" fill=\"%s\" "
                      "fill-opacity=\"0.7\"/>\n",
                      px, py, color);
        out << buf;
    }
    for (size_t c = 0; c < label_names.size(); ++c) {
        const int ly = 40 + int(c) * 18;
        std::snprintf(buf, sizeof buf,
                      "<circle cx=\"%d\" cy=\"%d\" r=\"5\" fill=\"%s\"/>"
                      "<text x=\"%d\" y=\"%d\" font-family=\"sans-serif\" "
                      "font-size=\"12\">%s</text>\n",
                      kW - 130, ly, kPalette[c % 10], kW - 118, ly + 4,
                      label_names[c].c_str());
        out << buf;
    }
    out << "</svg>\n";
    if (!out) throw io_error("short write to " + path);
}

} // namespace folkvae::eval
