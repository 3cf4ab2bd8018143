#pragma once

#include <span>
#include <vector>

#include "vidiff/types.hpp"

namespace vidiff {

/// Diffusion noise schedule. Timesteps are 1-based: valid t is in [1, T].
/// alpha_bar(0) is defined as 1 for convenience in samplers.
class NoiseSchedule {
public:
    /// Builds from explicit per-step alphas (each strictly inside (0,1]).
    /// alpha = 1 is accepted only for synthetic test schedules.
    static NoiseSchedule from_alphas(std::vector<double> alphas, bool allow_unit_alpha = false);

    int T() const noexcept { return static_cast<int>(alphas_.size()); }
    double alpha(int t) const { return alphas_[index(t)]; }
    double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars_[index(t)]; }
    double beta(int t) const { return 1.0 - alpha(t); }

    std::span<const double> alphas() const noexcept { return alphas_; }
    std::span<const double> alpha_bars() const noexcept { return alpha_bars_; }

    /// Throws RangeError unless 1 <= t <= T.
    void check_timestep(int t) const;

private:
    std::size_t index(int t) const {
        check_timestep(t);
        return static_cast<std::size_t>(t - 1);
    }
    std::vector<double> alphas_;
    std::vector<double> alpha_bars_;
};

/// alpha_t interpolated linearly (in alpha, not beta) from alpha_start at
/// t = 1 to alpha_end at t = T.
NoiseSchedule build_linear_schedule(int T, double alpha_start, double alpha_end);

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, with one timestep per batch item.
ImageBatch forward_noise(const ImageBatch& x0, std::span<const int> t, const TensorF& eps,
                         const NoiseSchedule& sched);

/// Posterior mean from a noise estimate:
/// (x_t - (1 - alpha_t) / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t).
TensorF mean_from_eps(const TensorF& x_t, std::span<const int> t, const TensorF& eps_hat,
                      const NoiseSchedule& sched);

}  // namespace vidiff
