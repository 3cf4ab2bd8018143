#include "vidiff/schedule.hpp"

#include <cmath>
#include <string>

namespace vidiff {

void ImageBatch::validate() const {
    if (data.rank() != 4) throw ContractError("image batch must be rank 4, got " + shape_str(data.shape()));
    if (channels() != 1 && channels() != 3)
        throw ContractError("image batch must have 1 or 3 channels, got " + std::to_string(channels()));
    if (modality.size() != static_cast<std::size_t>(size()))
        throw ContractError("image batch needs one modality tag per item");
    for (float v : data.vec())
        if (!std::isfinite(v)) throw ContractError("image batch contains non-finite values");
}

NoiseSchedule NoiseSchedule::from_alphas(std::vector<double> alphas, bool allow_unit_alpha) {
    if (alphas.empty()) throw ConfigError("schedule needs T >= 1", "schedule.T");
    NoiseSchedule s;
    double acc = 1.0;
    for (double a : alphas) {
        bool ok = a > 0.0 && (a < 1.0 || (allow_unit_alpha && a == 1.0));
        if (!ok || !std::isfinite(a))
            throw ConfigError("schedule alpha " + std::to_string(a) + " outside (0,1)", "schedule");
        acc *= a;
        s.alpha_bars_.push_back(acc);
    }
    s.alphas_ = std::move(alphas);
    return s;
}

void NoiseSchedule::check_timestep(int t) const {
    if (t < 1 || t > T())
        throw RangeError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(T()) + "]");
}

NoiseSchedule build_linear_schedule(int T, double alpha_start, double alpha_end) {
    if (T < 1) throw ConfigError("schedule needs T >= 1", "schedule.T");
    if (!(alpha_end > 0.0 && alpha_end <= alpha_start && alpha_start < 1.0))
        throw ConfigError("schedule requires 0 < alpha_end <= alpha_start < 1", "schedule.alpha_start");
    std::vector<double> alphas(static_cast<std::size_t>(T));
    for (int i = 0; i < T; ++i) {
        double frac = T == 1 ? 0.0 : static_cast<double>(i) / (T - 1);
        alphas[i] = alpha_start + (alpha_end - alpha_start) * frac;
    }
    // Pin the endpoints so they are exact regardless of rounding in the lerp.
    alphas.front() = alpha_start;
    alphas.back() = T == 1 ? alpha_start : alpha_end;
    return NoiseSchedule::from_alphas(std::move(alphas));
}

namespace {

void check_per_item(const TensorF& x, std::span<const int> t, const TensorF& other, const NoiseSchedule& sched) {
    if (x.shape() != other.shape())
        throw ContractError("shape mismatch: " + shape_str(x.shape()) + " vs " + shape_str(other.shape()));
    if (x.rank() == 0 || t.size() != static_cast<std::size_t>(x.dim(0)))
        throw ContractError("need one timestep per batch item");
    for (int ti : t) sched.check_timestep(ti);
}

}  // namespace

ImageBatch forward_noise(const ImageBatch& x0, std::span<const int> t, const TensorF& eps,
                         const NoiseSchedule& sched) {
    check_per_item(x0.data, t, eps, sched);
    ImageBatch out{TensorF(x0.data.shape()), x0.modality};
    const std::size_t per = x0.data.size() / t.size();
    for (std::size_t n = 0; n < t.size(); ++n) {
        const double ab = sched.alpha_bar(t[n]);
        const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
        for (std::size_t i = n * per; i < (n + 1) * per; ++i)
            out.data[i] = static_cast<float>(a * x0.data[i] + b * eps[i]);
    }
    return out;
}

TensorF mean_from_eps(const TensorF& x_t, std::span<const int> t, const TensorF& eps_hat,
                      const NoiseSchedule& sched) {
    check_per_item(x_t, t, eps_hat, sched);
    TensorF out(x_t.shape());
    const std::size_t per = x_t.size() / t.size();
    for (std::size_t n = 0; n < t.size(); ++n) {
        const double a = sched.alpha(t[n]);
        const double ab = sched.alpha_bar(t[n]);
        // 1 - abar = 0 only when every alpha up to t is 1; the eps term then vanishes.
        const double coef = ab < 1.0 ? (1.0 - a) / std::sqrt(1.0 - ab) : 0.0;
        const double inv = 1.0 / std::sqrt(a);
        for (std::size_t i = n * per; i < (n + 1) * per; ++i)
            out[i] = static_cast<float>(inv * (x_t[i] - coef * eps_hat[i]));
    }
    return out;
}

}  // namespace vidiff
