#pragma once

#include <vector>

#include "vidiff/types.hpp"

namespace vidiff {

enum class FilterKind { HighpassGaussian, EdgeGradient, LowpassGaussian };

FilterKind parse_filter_kind(std::string_view s);
std::string_view to_string(FilterKind k);

struct FilterConfig {
    FilterKind kind = FilterKind::HighpassGaussian;
    double sigma = 2.0;  ///< blur scale in pixels at the reference height
    bool normalize = false;

    void validate() const;
};

/// Reference image height for which FilterConfig::sigma is specified.
inline constexpr int kReferenceHeight = 64;

/// Sigma scaled proportionally with image height.
double scaled_sigma(double sigma, int height);

/// Single-channel identity carrier, shape [N, 1, H, W], values in [-1, 1].
struct ConditionBatch {
    TensorF data;
    std::vector<Modality> source_modality;

    int size() const { return data.empty() ? 0 : data.dim(0); }
};

/// Channel mean for 3-channel input, identity for 1-channel. Shape [N,1,H,W].
TensorF luminance(const ImageBatch& x);

/// Separable Gaussian blur applied independently to every (item, channel)
/// plane with reflect padding. Kernel radius is ceil(3 sigma).
TensorF gaussian_blur(const TensorF& x, double sigma);

/// c = L(x) - blur(L(x)), optionally rescaled to unit max-abs, clipped to [-1,1].
ConditionBatch high_pass_condition(const ImageBatch& x, const FilterConfig& cfg);

/// Central-difference gradient magnitude of L(x), normalized per image to
/// [0,1] then mapped to [-1,1].
ConditionBatch edge_condition(const ImageBatch& x, const FilterConfig& cfg);

/// Per-channel Gaussian blur; keeps colour and intensity statistics.
ImageBatch low_pass_reference(const ImageBatch& x, const FilterConfig& cfg);

/// Dispatches on cfg.kind to the high-pass or edge operator.
ConditionBatch make_condition(const ImageBatch& x, const FilterConfig& cfg);

}  // namespace vidiff
