#include "plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>

namespace vidiff::plot {

Canvas::Canvas(int height, int width, Color background) : h_(height), w_(width), img_({3, height, width}) {
    for (int ch = 0; ch < 3; ++ch) std::fill_n(img_.data() + ch * h_ * w_, h_ * w_, background[ch]);
}

void Canvas::pixel(int row, int col, Color c) {
    if (row < 0 || row >= h_ || col < 0 || col >= w_) return;
    for (int ch = 0; ch < 3; ++ch) img_[(ch * h_ + row) * w_ + col] = c[ch];
}

void Canvas::line(int r0, int c0, int r1, int c1, Color c) {
    const int dr = std::abs(r1 - r0), dc = std::abs(c1 - c0);
    const int sr = r0 < r1 ? 1 : -1, sc = c0 < c1 ? 1 : -1;
    int err = dc - dr;
    for (;;) {
        pixel(r0, c0, c);
        if (r0 == r1 && c0 == c1) break;
        const int e2 = 2 * err;
        if (e2 > -dr) err -= dr, c0 += sc;
        if (e2 < dc) err += dc, r0 += sr;
    }
}

void Canvas::rect(int r0, int c0, int r1, int c1, Color c) {
    line(r0, c0, r0, c1, c);
    line(r1, c0, r1, c1, c);
    line(r0, c0, r1, c0, c);
    line(r0, c1, r1, c1, c);
}

void Canvas::dot(int row, int col, int radius, Color c) {
    for (int dr = -radius; dr <= radius; ++dr)
        for (int dc = -radius; dc <= radius; ++dc)
            if (dr * dr + dc * dc <= radius * radius) pixel(row + dr, col + dc, c);
}

void Canvas::blit(const TensorF& chw, int row, int col) {
    const int C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
    for (int r = 0; r < H; ++r)
        for (int q = 0; q < W; ++q) {
            Color c;
            for (int ch = 0; ch < 3; ++ch) c[ch] = chw[((C == 1 ? 0 : ch) * H + r) * W + q];
            pixel(row + r, col + q, c);
        }
}

namespace {

struct Frame {
    double x0, x1, y0, y1;
    int top, left, bottom, right;

    int col(double x) const { return left + static_cast<int>(std::lround((x - x0) / (x1 - x0) * (right - left))); }
    int row(double y) const { return bottom - static_cast<int>(std::lround((y - y0) / (y1 - y0) * (bottom - top))); }
};

Frame frame_for(const std::vector<Series>& series, int height, int width) {
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series) {
        for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
        for (double v : s.y) y0 = std::min(y0, v), y1 = std::max(y1, v);
    }
    if (!(x1 >= x0)) x0 = 0, x1 = 1;
    if (!(y1 >= y0)) y0 = 0, y1 = 1;
    const double px = std::max(1e-9, (x1 - x0) * 0.05), py = std::max(1e-9, (y1 - y0) * 0.05);
    return {x0 - px, x1 + px, y0 - py, y1 + py, 8, 8, height - 9, width - 9};
}

}  // namespace

Canvas scatter(const std::vector<Series>& series, int height, int width) {
    Canvas cv(height, width);
    const Frame f = frame_for(series, height, width);
    cv.rect(f.top, f.left, f.bottom, f.right, kBlack);
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) cv.dot(f.row(s.y[i]), f.col(s.x[i]), 2, s.color);
    return cv;
}

Canvas line_plot(const std::vector<Series>& series, int height, int width) {
    Canvas cv(height, width);
    const Frame f = frame_for(series, height, width);
    cv.rect(f.top, f.left, f.bottom, f.right, kBlack);
    for (const auto& s : series)
        for (std::size_t i = 1; i < s.x.size() && i < s.y.size(); ++i)
            cv.line(f.row(s.y[i - 1]), f.col(s.x[i - 1]), f.row(s.y[i]), f.col(s.x[i]), s.color);
    return cv;
}

Canvas hstack(const std::vector<Canvas>& panels, int gap) {
    int h = 0, w = 0;
    for (const auto& p : panels) h = std::max(h, p.height()), w += p.width();
    w += gap * std::max(0, static_cast<int>(panels.size()) - 1);
    Canvas out(std::max(1, h), std::max(1, w));
    int col = 0;
    for (const auto& p : panels) {
        out.blit(p.image(), 0, col);
        col += p.width() + gap;
    }
    return out;
}

Canvas tile_grid(const std::vector<TensorF>& tiles, int cols, int gap) {
    if (tiles.empty()) return Canvas(1, 1);
    const int th = tiles.front().dim(1), tw = tiles.front().dim(2);
    const int n = static_cast<int>(tiles.size()), rows = (n + cols - 1) / cols;
    Canvas out(rows * th + (rows + 1) * gap, cols * tw + (cols + 1) * gap, kGray);
    for (int i = 0; i < n; ++i) out.blit(tiles[i], gap + (i / cols) * (th + gap), gap + (i % cols) * (tw + gap));
    return out;
}

}  // namespace vidiff::plot
