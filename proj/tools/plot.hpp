#pragma once

#include <array>
#include <string>
#include <vector>

#include "vidiff/tensor.hpp"

namespace vidiff::plot {

using Color = std::array<float, 3>;

inline constexpr Color kBlack{-1.f, -1.f, -1.f};
inline constexpr Color kWhite{1.f, 1.f, 1.f};
inline constexpr Color kGray{0.5f, 0.5f, 0.5f};
inline constexpr Color kRed{0.8f, -0.8f, -0.8f};
inline constexpr Color kBlue{-0.8f, -0.5f, 0.9f};
inline constexpr Color kGreen{-0.7f, 0.5f, -0.7f};

/// RGB drawing surface in [-1, 1], row 0 at the top.
class Canvas {
public:
    Canvas(int height, int width, Color background = kWhite);

    int height() const noexcept { return h_; }
    int width() const noexcept { return w_; }
    const TensorF& image() const noexcept { return img_; }

    void pixel(int row, int col, Color c);
    void line(int r0, int c0, int r1, int c1, Color c);
    void rect(int r0, int c0, int r1, int c1, Color c);
    void dot(int row, int col, int radius, Color c);
    /// Copies a [C, H, W] image (C = 1 or 3) with its top-left corner at
    /// (row, col).
    void blit(const TensorF& chw, int row, int col);

private:
    int h_, w_;
    TensorF img_;
};

struct Series {
    std::vector<double> x, y;
    Color color = kBlue;
};

/// Axis-aligned panel with a frame; data ranges are padded by 5%.
Canvas scatter(const std::vector<Series>& series, int height = 240, int width = 240);
Canvas line_plot(const std::vector<Series>& series, int height = 200, int width = 320);

/// Panels placed left to right with a small gap.
Canvas hstack(const std::vector<Canvas>& panels, int gap = 8);

/// Grid of equally sized [C, H, W] tiles, `cols` per row.
Canvas tile_grid(const std::vector<TensorF>& tiles, int cols, int gap = 2);

}  // namespace vidiff::plot
