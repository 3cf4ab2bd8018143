#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "vidiff/conditioning.hpp"
#include "vidiff/denoiser.hpp"
#include "vidiff/schedule.hpp"

namespace vidiff {

/// Reverse-step noise scale: sqrt(beta_t), or the posterior value
/// sqrt((1 - abar_{t-1}) / (1 - abar_t) * beta_t).
enum class SigmaMode { Beta, BetaTilde };

SigmaMode parse_sigma_mode(std::string_view s);
std::string_view to_string(SigmaMode m);

struct SamplerConfig {
    double guidance_weight = 1.0;
    SigmaMode sigma_mode = SigmaMode::BetaTilde;
    /// Deterministic DDIM steps; unset runs ancestral DDPM over all T steps.
    std::optional<int> ddim_steps = 25;
    /// Clamp each DDIM clean-image estimate to [-1, 1] and re-derive the
    /// noise direction from it.
    bool clip_x0 = true;
    std::uint64_t seed = 0;

    void validate(int T) const;
};

/// (1 + w) * eps(x_t, t, c, e_target) - w * eps(x_t, t, c, none).
/// With w = 0 only the conditional branch is evaluated.
TensorF guided_eps(const NoisePredictor& model, const TensorF& x_t, std::span<const int> t, const TensorF& c,
                   Modality e_target, double w);

/// Noise scale of one ancestral step.
double ddpm_sigma(const NoiseSchedule& sched, int t, SigmaMode mode);

/// x_{t-1} = mu + sigma_t * z; no noise is added at t = 1.
TensorF ddpm_step(const NoisePredictor& model, const TensorF& x_t, int t, const TensorF& c, Modality e_target,
                  const NoiseSchedule& sched, const SamplerConfig& cfg, Rng& rng);

/// Evenly spaced increasing timesteps floor(i * t_max / steps), i = 1..steps,
/// so the last entry is t_max. Requires 1 <= steps <= t_max.
std::vector<int> ddim_timesteps(int t_max, int steps);

/// Runs the reverse process from `x_start` at timestep `t_start` down to a
/// clean sample, using DDIM (eta = 0) when cfg.ddim_steps is set and
/// ancestral DDPM otherwise. The result is clipped to [-1, 1].
TensorF denoise_from(const NoisePredictor& model, TensorF x_start, int t_start, const TensorF& c,
                     Modality e_target, const NoiseSchedule& sched, const SamplerConfig& cfg, Rng& rng);

/// Draws x_T ~ N(0, I) from cfg.seed and runs deterministic DDIM.
ImageBatch ddim_sample(const NoisePredictor& model, const Shape& shape, const TensorF& c, Modality e_target,
                       const NoiseSchedule& sched, const SamplerConfig& cfg);

/// Generated images plus the identity each one inherits from its source.
struct Translation {
    ImageBatch images;
    ConditionBatch condition;
    std::vector<int> source_labels;
};

/// Cross-modality translation: c = F(x_src), fresh Gaussian x_T, and the
/// reverse process run with the indicator set to `target`.
Translation translate(const NoisePredictor& model, const ImageBatch& x_src, std::span<const int> labels,
                      Modality target, const NoiseSchedule& sched, const SamplerConfig& cfg,
                      const FilterConfig& filter);

/// Condition-free baseline: noise the source to `t_start` (T/2 by default)
/// and denoise with the target indicator. The model must have been built
/// without a condition channel.
ImageBatch partial_noise_translate(const NoisePredictor& model_no_c, const ImageBatch& x_src, Modality target,
                                   const NoiseSchedule& sched, const SamplerConfig& cfg,
                                   std::optional<int> t_start = std::nullopt);

}  // namespace vidiff
