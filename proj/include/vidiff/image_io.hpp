#pragma once

#include <filesystem>

#include "vidiff/tensor.hpp"

namespace vidiff {

/// Writes a [C, H, W] image in [-1, 1] (C = 1 or 3) as an 8-bit PNG.
void write_png(const std::filesystem::path& path, const TensorF& chw);

/// Reads a PNG as a 3-channel [3, H, W] image in [-1, 1]. Gray inputs are
/// replicated, alpha is dropped. Throws IoError on failure.
TensorF read_png(const std::filesystem::path& path);

/// Bilinear resize of a [C, H, W] image (half-pixel centres).
TensorF resize_bilinear(const TensorF& chw, int height, int width);

/// 8-bit quantization used by the PNG writer, exposed for tests.
inline unsigned char quantize_unit(float v) {
    const float u = (v + 1.f) * 0.5f * 255.f;
    return static_cast<unsigned char>(u < 0.f ? 0.f : (u > 255.f ? 255.f : u + 0.5f));
}

}  // namespace vidiff
