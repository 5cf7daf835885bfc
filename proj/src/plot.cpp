// SPDX-License-Identifier: Apache-2.0
#include "editflow/plot.hpp"

#include "editflow/errors.hpp"
#include "editflow/io.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace editflow::plot {

namespace {

struct Color {
    float r, g, b;
};

const Color kPalette[8] = {{0.12F, 0.47F, 0.71F}, {0.84F, 0.15F, 0.16F}, {0.17F, 0.63F, 0.17F},
                           {0.58F, 0.40F, 0.74F}, {0.89F, 0.47F, 0.76F}, {0.55F, 0.34F, 0.29F},
                           {0.74F, 0.74F, 0.13F}, {0.09F, 0.75F, 0.81F}};

} // namespace

Canvas::Canvas(int width, int height) : w_(width), h_(height), img_({3, height, width}) {
    clear(1.0F, 1.0F, 1.0F);
}

void Canvas::clear(float r, float g, float b) {
    for (int y = 0; y < h_; ++y)
        for (int x = 0; x < w_; ++x) set_pixel(x, y, r, g, b);
}

void Canvas::set_pixel(int x, int y, float r, float g, float b) {
    if (x < 0 || x >= w_ || y < 0 || y >= h_) return;
    img_[0 * h_ * w_ + y * w_ + x] = r;
    img_[1 * h_ * w_ + y * w_ + x] = g;
    img_[2 * h_ * w_ + y * w_ + x] = b;
}

void Canvas::line(float x0, float y0, float x1, float y1, float r, float g, float b) {
    float dx = x1 - x0, dy = y1 - y0;
    int steps = static_cast<int>(std::max(std::abs(dx), std::abs(dy))) * 2 + 1;
    for (int i = 0; i <= steps; ++i) {
        float t = static_cast<float>(i) / static_cast<float>(steps);
        set_pixel(static_cast<int>(std::lround(x0 + t * dx)),
                  static_cast<int>(std::lround(y0 + t * dy)), r, g, b);
    }
}

void Canvas::rect_fill(int x0, int y0, int x1, int y1, float r, float g, float b) {
    for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
        for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set_pixel(x, y, r, g, b);
}

void Canvas::save(const std::string& path) const { io::write_file(path, io::encode_png(img_)); }

namespace {

void write_legend(const std::vector<Series>& series, const std::string& path) {
    std::ostringstream os;
    for (size_t i = 0; i < series.size(); ++i) {
        const Color& c = kPalette[i % 8];
        os << series[i].label << " rgb(" << c.r << "," << c.g << "," << c.b << ")\n";
    }
    io::write_file(path, os.str());
}

} // namespace

void line_chart(const std::vector<Series>& series, const std::string& path_no_ext) {
    const int W = 640, H = 400, pad = 40;
    Canvas cv(W, H);
    double ymin = 1e300, ymax = -1e300;
    size_t nmax = 1;
    for (const auto& s : series) {
        nmax = std::max(nmax, s.values.size());
        for (double v : s.values) {
            ymin = std::min(ymin, v);
            ymax = std::max(ymax, v);
        }
    }
    if (ymin > ymax) {
        ymin = 0;
        ymax = 1;
    }
    if (ymax - ymin < 1e-12) ymax = ymin + 1;
    // Axes.
    cv.line(pad, H - pad, W - 10, H - pad, 0, 0, 0);
    cv.line(pad, H - pad, pad, 10, 0, 0, 0);
    for (int tick = 0; tick <= 4; ++tick) {
        int y = H - pad - tick * (H - pad - 10) / 4;
        cv.line(pad - 4, y, pad, y, 0, 0, 0);
    }
    for (size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const Color& c = kPalette[si % 8];
        if (s.values.size() < 2) continue;
        for (size_t i = 1; i < s.values.size(); ++i) {
            auto px = [&](size_t idx) {
                return pad + static_cast<float>(idx) / static_cast<float>(nmax - 1) *
                                 static_cast<float>(W - pad - 10);
            };
            auto py = [&](double v) {
                return static_cast<float>(H - pad) -
                       static_cast<float>((v - ymin) / (ymax - ymin)) *
                           static_cast<float>(H - pad - 10);
            };
            cv.line(px(i - 1), py(s.values[i - 1]), px(i), py(s.values[i]), c.r, c.g, c.b);
        }
    }
    cv.save(path_no_ext + ".png");
    write_legend(series, path_no_ext + ".legend.txt");
}

void bar_chart(const std::vector<std::string>& categories, const std::vector<Series>& series,
               const std::string& path_no_ext) {
    const int W = 640, H = 400, pad = 40;
    Canvas cv(W, H);
    double ymax = 1e-12;
    for (const auto& s : series)
        for (double v : s.values) ymax = std::max(ymax, v);
    cv.line(pad, H - pad, W - 10, H - pad, 0, 0, 0);
    cv.line(pad, H - pad, pad, 10, 0, 0, 0);
    size_t ncat = categories.size();
    size_t nser = series.size();
    float group_w = static_cast<float>(W - pad - 20) / static_cast<float>(ncat);
    float bar_w = group_w / static_cast<float>(nser + 1);
    for (size_t ci = 0; ci < ncat; ++ci) {
        for (size_t si = 0; si < nser; ++si) {
            if (ci >= series[si].values.size()) continue;
            double v = series[si].values[ci];
            int x0 = static_cast<int>(pad + group_w * static_cast<float>(ci) +
                                      bar_w * static_cast<float>(si) + 2);
            int x1 = static_cast<int>(static_cast<float>(x0) + bar_w - 3);
            int y1 = H - pad - 1;
            int y0 = y1 - static_cast<int>(v / ymax * (H - pad - 20));
            const Color& c = kPalette[si % 8];
            cv.rect_fill(x0, y0, x1, y1, c.r, c.g, c.b);
        }
    }
    cv.save(path_no_ext + ".png");
    std::ostringstream os;
    for (size_t i = 0; i < categories.size(); ++i) os << "category " << i << ": " << categories[i] << "\n";
    std::string legend = os.str();
    for (size_t i = 0; i < series.size(); ++i) {
        const Color& c = kPalette[i % 8];
        legend += series[i].label + " rgb(" + std::to_string(c.r) + "," + std::to_string(c.g) +
                  "," + std::to_string(c.b) + ")\n";
    }
    io::write_file(path_no_ext + ".legend.txt", legend);
}

void image_grid(const std::vector<Tensor>& images, int columns, const std::string& path) {
    if (images.empty()) throw InputError("image_grid: no images");
    int ih = images[0].dim(1), iw = images[0].dim(2);
    int rows = (static_cast<int>(images.size()) + columns - 1) / columns;
    const int sep = 2;
    Canvas cv(columns * (iw + sep) + sep, rows * (ih + sep) + sep);
    cv.clear(0.2F, 0.2F, 0.2F);
    for (size_t i = 0; i < images.size(); ++i) {
        int r = static_cast<int>(i) / columns;
        int c = static_cast<int>(i) % columns;
        int ox = sep + c * (iw + sep);
        int oy = sep + r * (ih + sep);
        const Tensor& img = images[i];
        for (int y = 0; y < ih; ++y)
            for (int x = 0; x < iw; ++x)
                cv.set_pixel(ox + x, oy + y, img[0 * ih * iw + y * iw + x],
                             img[1 * ih * iw + y * iw + x], img[2 * ih * iw + y * iw + x]);
    }
    cv.save(path);
}

} // namespace editflow::plot
