#include "vidiff/conditioning.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace vidiff {

FilterKind parse_filter_kind(std::string_view s) {
    if (s == "highpass_gaussian") return FilterKind::HighpassGaussian;
    if (s == "edge_gradient") return FilterKind::EdgeGradient;
    if (s == "lowpass_gaussian") return FilterKind::LowpassGaussian;
    throw ConfigError("unknown filter kind '" + std::string(s) + "'", "filter.kind");
}

std::string_view to_string(FilterKind k) {
    switch (k) {
        case FilterKind::HighpassGaussian: return "highpass_gaussian";
        case FilterKind::EdgeGradient: return "edge_gradient";
        case FilterKind::LowpassGaussian: return "lowpass_gaussian";
    }
    return "highpass_gaussian";
}

void FilterConfig::validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma))
        throw ConfigError("filter sigma must be finite and positive", "filter.sigma");
}

double scaled_sigma(double sigma, int height) { return sigma * height / kReferenceHeight; }

namespace {

// Mirror index into [0, n) without repeating the edge sample.
int reflect(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

std::vector<double> gaussian_kernel(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[i + radius];
    }
    for (auto& v : k) v /= sum;
    return k;
}

void require_kind(const FilterConfig& cfg, FilterKind kind) {
    cfg.validate();
    if (cfg.kind != kind)
        throw ConfigError("filter kind must be " + std::string(to_string(kind)), "filter.kind");
}

}  // namespace

TensorF luminance(const ImageBatch& x) {
    if (x.data.rank() != 4) throw ContractError("luminance expects NCHW input");
    const int n = x.size(), c = x.channels(), h = x.height(), w = x.width();
    TensorF out({n, 1, h, w});
    for (int b = 0; b < n; ++b)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                double s = 0.0;
                for (int ch = 0; ch < c; ++ch) s += x.data.at(b, ch, i, j);
                out.at(b, 0, i, j) = static_cast<float>(s / c);
            }
    return out;
}

TensorF gaussian_blur(const TensorF& x, double sigma) {
    if (!(sigma > 0.0)) throw ConfigError("blur sigma must be positive", "filter.sigma");
    const auto k = gaussian_kernel(sigma);
    const int radius = static_cast<int>(k.size() / 2);
    const int planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    TensorF out(x.shape());
    std::vector<double> tmp(static_cast<std::size_t>(h) * w);
    for (int p = 0; p < planes; ++p) {
        const float* src = x.data() + static_cast<std::size_t>(p) * h * w;
        float* dst = out.data() + static_cast<std::size_t>(p) * h * w;
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                double s = 0.0;
                for (int d = -radius; d <= radius; ++d) s += k[d + radius] * src[i * w + reflect(j + d, w)];
                tmp[i * w + j] = s;
            }
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                double s = 0.0;
                for (int d = -radius; d <= radius; ++d) s += k[d + radius] * tmp[reflect(i + d, h) * w + j];
                dst[i * w + j] = static_cast<float>(s);
            }
    }
    return out;
}

ConditionBatch high_pass_condition(const ImageBatch& x, const FilterConfig& cfg) {
    require_kind(cfg, FilterKind::HighpassGaussian);
    TensorF lum = luminance(x);
    TensorF low = gaussian_blur(lum, scaled_sigma(cfg.sigma, x.height()));
    const std::size_t per = lum.size() / std::max(1, x.size());
    for (int b = 0; b < x.size(); ++b) {
        float* p = lum.data() + b * per;
        const float* q = low.data() + b * per;
        float peak = 0.f;
        for (std::size_t i = 0; i < per; ++i) {
            p[i] -= q[i];
            peak = std::max(peak, std::abs(p[i]));
        }
        const float scale = (cfg.normalize && peak > 0.f) ? 1.f / peak : 1.f;
        for (std::size_t i = 0; i < per; ++i) p[i] = std::clamp(p[i] * scale, -1.f, 1.f);
    }
    return {std::move(lum), x.modality};
}

ConditionBatch edge_condition(const ImageBatch& x, const FilterConfig& cfg) {
    require_kind(cfg, FilterKind::EdgeGradient);
    const TensorF lum = luminance(x);
    const int n = x.size(), h = x.height(), w = x.width();
    TensorF out({n, 1, h, w});
    for (int b = 0; b < n; ++b) {
        float peak = 0.f;
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                const float gx = 0.5f * (lum.at(b, 0, i, reflect(j + 1, w)) - lum.at(b, 0, i, reflect(j - 1, w)));
                const float gy = 0.5f * (lum.at(b, 0, reflect(i + 1, h), j) - lum.at(b, 0, reflect(i - 1, h), j));
                const float g = std::sqrt(gx * gx + gy * gy);
                out.at(b, 0, i, j) = g;
                peak = std::max(peak, g);
            }
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                float& v = out.at(b, 0, i, j);
                v = 2.f * (peak > 0.f ? v / peak : 0.f) - 1.f;
            }
    }
    return {std::move(out), x.modality};
}

ImageBatch low_pass_reference(const ImageBatch& x, const FilterConfig& cfg) {
    require_kind(cfg, FilterKind::LowpassGaussian);
    return {gaussian_blur(x.data, scaled_sigma(cfg.sigma, x.height())), x.modality};
}

ConditionBatch make_condition(const ImageBatch& x, const FilterConfig& cfg) {
    switch (cfg.kind) {
        case FilterKind::HighpassGaussian: return high_pass_condition(x, cfg);
        case FilterKind::EdgeGradient: return edge_condition(x, cfg);
        case FilterKind::LowpassGaussian: break;
    }
    throw ConfigError("low-pass filter cannot be used as a denoiser condition", "filter.kind");
}

}  // namespace vidiff
