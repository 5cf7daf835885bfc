// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "editflow/tensor.hpp"

#include <string>
#include <vector>

namespace editflow::plot {

// Minimal raster plotting for static PNG outputs: polylines, bar groups and
// image grids. Labels ship in a sidecar legend.txt next to each plot.
class Canvas {
public:
    Canvas(int width, int height);

    void clear(float r, float g, float b);
    void set_pixel(int x, int y, float r, float g, float b);
    void line(float x0, float y0, float x1, float y1, float r, float g, float b);
    void rect_fill(int x0, int y0, int x1, int y1, float r, float g, float b);
    const Tensor& image() const { return img_; }
    void save(const std::string& path) const;

private:
    int w_, h_;
    Tensor img_;
};

struct Series {
    std::string label;
    std::vector<double> values; // y per index
};

// Line chart of one or more series over their index; writes <path>.png and
// <path>.legend.txt with the color/label mapping.
void line_chart(const std::vector<Series>& series, const std::string& path_no_ext);

// Grouped bar chart: one group per category, one bar per series.
void bar_chart(const std::vector<std::string>& categories, const std::vector<Series>& series,
               const std::string& path_no_ext);

// Grid of [3,H,W] images, row-major, with 2px separators.
void image_grid(const std::vector<Tensor>& images, int columns, const std::string& path);

} // namespace editflow::plot
