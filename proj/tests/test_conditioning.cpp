#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "vidiff/conditioning.hpp"
#include "vidiff/evalkit.hpp"
#include "vidiff/synthdata.hpp"

using namespace vidiff;

namespace {

ImageBatch step_image(int h, int w, int k, int channels = 1) {
    TensorF t({1, channels, h, w});
    for (int c = 0; c < channels; ++c)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) t.at(0, c, i, j) = j < k ? -0.5f : 0.5f;
    return {t, {Modality::Visible}};
}

// Direct 1-D convolution with a mirrored profile.
std::vector<double> blur_profile(const std::vector<double>& p, double sigma) {
    const int r = static_cast<int>(std::ceil(3 * sigma));
    const int n = static_cast<int>(p.size());
    std::vector<double> out(p.size());
    double norm = 0.0;
    for (int d = -r; d <= r; ++d) norm += std::exp(-d * d / (2 * sigma * sigma));
    for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int d = -r; d <= r; ++d) {
            int q = j + d;
            if (q < 0) q = -q;
            if (q >= n) q = 2 * (n - 1) - q;
            s += std::exp(-d * d / (2 * sigma * sigma)) * p[q];
        }
        out[j] = s / norm;
    }
    return out;
}

FilterConfig cfg_of(FilterKind k, double sigma = 2.0) {
    FilterConfig c;
    c.kind = k;
    c.sigma = sigma;
    return c;
}

}  // namespace

TEST_CASE("constant image gives an all-zero high-pass condition") {
    TensorF t({2, 3, 64, 32});
    t.fill(0.37f);
    const auto c = high_pass_condition({t, {Modality::Visible, Modality::Infrared}}, cfg_of(FilterKind::HighpassGaussian));
    CHECK(c.data.shape() == Shape{2, 1, 64, 32});
    for (float v : c.data.vec()) CHECK(std::abs(v) < 1e-6f);
    CHECK(c.source_modality == std::vector<Modality>{Modality::Visible, Modality::Infrared});
}

TEST_CASE("step edge response matches a direct convolution of the profile") {
    const int h = 64, w = 32, k = 16;
    const auto x = step_image(h, w, k);
    const auto c = high_pass_condition(x, cfg_of(FilterKind::HighpassGaussian));
    std::vector<double> profile(w);
    for (int j = 0; j < w; ++j) profile[j] = j < k ? -0.5 : 0.5;
    const auto low = blur_profile(profile, 2.0);
    const int r = 6;
    for (int i : {0, 31, 63})
        for (int j = 0; j < w; ++j) {
            const double expect = profile[j] - low[j];
            CHECK(c.data.at(0, 0, i, j) == doctest::Approx(expect).epsilon(1e-5).scale(1.0));
            if (j < k - r || j >= k + r) CHECK(std::abs(c.data.at(0, 0, i, j)) < 1e-6f);
        }
    for (int d = 0; d < r; ++d)
        CHECK(c.data.at(0, 0, 10, k - 1 - d) == doctest::Approx(-c.data.at(0, 0, 10, k + d)).epsilon(1e-5));
}

TEST_CASE("sigma scales with image height") {
    CHECK(scaled_sigma(2.0, 64) == 2.0);
    CHECK(scaled_sigma(2.0, 32) == 1.0);
    CHECK(scaled_sigma(2.0, 128) == 4.0);
}

TEST_CASE("normalize rescales the condition to unit max-abs") {
    auto cfg = cfg_of(FilterKind::HighpassGaussian);
    cfg.normalize = true;
    const auto c = high_pass_condition(step_image(64, 32, 16), cfg);
    float peak = 0.f;
    for (float v : c.data.vec()) peak = std::max(peak, std::abs(v));
    CHECK(peak == doctest::Approx(1.f));
}

TEST_CASE("filter configuration errors") {
    const auto x = step_image(8, 8, 4);
    CHECK_THROWS_AS(high_pass_condition(x, cfg_of(FilterKind::HighpassGaussian, 0.0)), ConfigError);
    CHECK_THROWS_AS(high_pass_condition(x, cfg_of(FilterKind::HighpassGaussian, -1.0)), ConfigError);
    CHECK_THROWS_AS(edge_condition(x, cfg_of(FilterKind::HighpassGaussian)), ConfigError);
    CHECK_THROWS_AS(low_pass_reference(x, cfg_of(FilterKind::EdgeGradient)), ConfigError);
    CHECK_THROWS_AS(make_condition(x, cfg_of(FilterKind::LowpassGaussian)), ConfigError);
    CHECK_THROWS_AS(parse_filter_kind("sobel"), ConfigError);
    CHECK(parse_filter_kind("edge_gradient") == FilterKind::EdgeGradient);
}

TEST_CASE("edge map of a constant image is all -1") {
    TensorF t({1, 3, 16, 16});
    t.fill(-0.2f);
    const auto c = edge_condition({t, {Modality::Infrared}}, cfg_of(FilterKind::EdgeGradient));
    for (float v : c.data.vec()) CHECK(v == -1.f);
}

TEST_CASE("edge map of a unit step peaks on the edge columns only") {
    const int k = 8;
    const auto c = edge_condition(step_image(16, 16, k), cfg_of(FilterKind::EdgeGradient));
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) {
            // Central differences see the step at columns k-1 and k.
            const float expect = (j == k - 1 || j == k) ? 1.f : -1.f;
            CHECK(c.data.at(0, 0, i, j) == expect);
        }
}

TEST_CASE("edge map rotates with the input") {
    Rng rng(4);
    TensorF a = rng.normal_like<float>({1, 1, 12, 12});
    TensorF b({1, 1, 12, 12});
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 12; ++j) b.at(0, 0, j, 11 - i) = a.at(0, 0, i, j);
    const auto ea = edge_condition({a, {Modality::Visible}}, cfg_of(FilterKind::EdgeGradient));
    const auto eb = edge_condition({b, {Modality::Visible}}, cfg_of(FilterKind::EdgeGradient));
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 12; ++j)
            CHECK(eb.data.at(0, 0, j, 11 - i) == doctest::Approx(ea.data.at(0, 0, i, j)).epsilon(1e-5));
}

TEST_CASE("low-pass reference keeps constants and complements the high-pass") {
    TensorF t({1, 3, 16, 8});
    t.fill(0.25f);
    const auto lp = low_pass_reference({t, {Modality::Visible}}, cfg_of(FilterKind::LowpassGaussian));
    for (float v : lp.data.vec()) CHECK(v == doctest::Approx(0.25f));

    Rng rng(8);
    TensorF g = rng.normal_like<float>({2, 1, 64, 32});
    // Bounded by 0.5 so the high-pass never reaches its clipping range.
    for (auto& v : g.vec()) v = std::clamp(v * 0.2f, -0.5f, 0.5f);
    const ImageBatch x{g, {Modality::Visible, Modality::Infrared}};
    const auto hp = high_pass_condition(x, cfg_of(FilterKind::HighpassGaussian));
    const auto low = low_pass_reference(x, cfg_of(FilterKind::LowpassGaussian));
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(hp.data[i] + low.data[i] == doctest::Approx(g[i]).epsilon(1e-5));
}

TEST_CASE("low-pass reduces white-noise variance") {
    Rng rng(9);
    TensorF g = rng.normal_like<float>({1, 3, 64, 32});
    const auto lp = low_pass_reference({g, {Modality::Visible}}, cfg_of(FilterKind::LowpassGaussian));
    auto var = [](const TensorF& t) {
        const double m = std::accumulate(t.vec().begin(), t.vec().end(), 0.0) / t.size();
        double s = 0.0;
        for (float v : t.vec()) s += (v - m) * (v - m);
        return s / t.size();
    };
    CHECK(var(lp.data) < var(g));
}

TEST_CASE("high-pass condition is shift equivariant away from the borders") {
    Rng rng(12);
    TensorF a = rng.normal_like<float>({1, 1, 64, 32});
    for (auto& v : a.vec()) v *= 0.2f;
    TensorF b({1, 1, 64, 32});
    for (int i = 0; i < 64; ++i)
        for (int j = 1; j < 32; ++j) b.at(0, 0, i, j) = a.at(0, 0, i, j - 1);
    const auto ca = high_pass_condition({a, {Modality::Visible}}, cfg_of(FilterKind::HighpassGaussian));
    const auto cb = high_pass_condition({b, {Modality::Visible}}, cfg_of(FilterKind::HighpassGaussian));
    for (int i = 8; i < 56; ++i)
        for (int j = 9; j < 24; ++j)
            CHECK(cb.data.at(0, 0, i, j) == doctest::Approx(ca.data.at(0, 0, i, j - 1)).epsilon(1e-5));
}

TEST_CASE("renders of one identity share their condition across modalities") {
    const auto cfg = cfg_of(FilterKind::HighpassGaussian);
    double same_min = 1.0, diff_max = -1.0;
    for (int s = 0; s < 20; ++s) {
        const auto a = generate_identity(100 + s), b = generate_identity(200 + s);
        Rng rng(s);
        const auto va = render_batch(a, Modality::Visible, rng);
        const auto ia = render_batch(a, Modality::Infrared, rng);
        const auto ib = render_batch(b, Modality::Infrared, rng);
        const auto cva = high_pass_condition(va, cfg).data, cia = high_pass_condition(ia, cfg).data,
                   cib = high_pass_condition(ib, cfg).data;
        same_min = std::min(same_min, pearson(cva.span(), cia.span()));
        diff_max = std::max(diff_max, pearson(cva.span(), cib.span()));
    }
    CHECK(same_min >= 0.8);
    CHECK(diff_max <= 0.3);
}
