#pragma once

// Finite-difference check of the denoiser's analytic gradients, shared by the
// unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "vidiff/denoiser.hpp"

namespace vidiff::testing {

inline DenoiserConfig small_denoiser_config() {
    DenoiserConfig c;
    c.base_channels = 8;
    c.channel_multipliers = {1, 2};
    c.attention_levels = {1};
    c.num_res_blocks = 1;
    c.height = 8;
    c.width = 4;
    c.embedding_dim = 16;
    c.norm_groups = 4;
    return c;
}

struct GradCheckResult {
    double worst_relative = 0.0;
    std::string worst_param;
    int checked = 0;
};

// Loss is the mean squared network output. For every parameter tensor the
// directional derivative along a random unit direction is compared with a
// central difference of step h.
inline GradCheckResult gradient_check(std::uint64_t seed, double h = 1e-4) {
    const DenoiserConfig cfg = small_denoiser_config();
    Rng rng(seed);
    ParamStore<double> params = cast_params<double>(init_params(cfg, seed));
    // Break the zero output layer and the unit norm scales so every path carries gradient.
    for (auto& [name, t] : params)
        for (auto& v : t.vec()) v += 0.1 * rng.normal();

    const int n = 2;
    const TensorD x = rng.normal_like<double>({n, 3, cfg.height, cfg.width});
    const TensorD c = rng.normal_like<double>({n, 1, cfg.height, cfg.width});
    const std::vector<int> t{3, 700};
    const std::vector<Modality> e{Modality::Infrared, Modality::None};
    const TensorD zero({n, 3, cfg.height, cfg.width});

    auto loss = [&](const ParamStore<double>& p) {
        ParamStore<double> g = zeros_like(p);
        return eps_loss_and_grad<double>(cfg, p, g, x, t, c, e, zero);
    };
    ParamStore<double> grads = zeros_like(params);
    eps_loss_and_grad<double>(cfg, params, grads, x, t, c, e, zero);

    GradCheckResult r;
    for (auto& [name, tensor] : params) {
        TensorD dir(tensor.shape());
        double norm = 0.0;
        for (auto& v : dir.vec()) {
            v = rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        double analytic = 0.0;
        for (std::size_t i = 0; i < dir.size(); ++i) {
            dir[i] /= norm;
            analytic += dir[i] * grads.at(name)[i];
        }

        const TensorD saved = tensor;
        for (std::size_t i = 0; i < dir.size(); ++i) tensor[i] = saved[i] + h * dir[i];
        const double up = loss(params);
        for (std::size_t i = 0; i < dir.size(); ++i) tensor[i] = saved[i] - h * dir[i];
        const double down = loss(params);
        tensor = saved;

        const double numeric = (up - down) / (2 * h);
        const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        if (rel > r.worst_relative) {
            r.worst_relative = rel;
            r.worst_param = name;
        }
        ++r.checked;
    }
    return r;
}

}  // namespace vidiff::testing
