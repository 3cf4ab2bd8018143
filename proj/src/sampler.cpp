#include "vidiff/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace vidiff {

SigmaMode parse_sigma_mode(std::string_view s) {
    if (s == "beta") return SigmaMode::Beta;
    if (s == "beta_tilde") return SigmaMode::BetaTilde;
    throw ConfigError("unknown sigma mode '" + std::string(s) + "'", "sampler.sigma_mode");
}

std::string_view to_string(SigmaMode m) { return m == SigmaMode::Beta ? "beta" : "beta_tilde"; }

void SamplerConfig::validate(int T) const {
    if (!(guidance_weight >= 0.0) || !std::isfinite(guidance_weight))
        throw ConfigError("guidance weight must be finite and >= 0", "sampler.guidance_weight");
    if (ddim_steps && (*ddim_steps < 1 || *ddim_steps > T))
        throw ConfigError("ddim_steps " + std::to_string(*ddim_steps) + " outside [1, " + std::to_string(T) + "]",
                          "sampler.ddim_steps");
}

TensorF guided_eps(const NoisePredictor& model, const TensorF& x_t, std::span<const int> t, const TensorF& c,
                   Modality e_target, double w) {
    if (e_target == Modality::None) throw ContractError("guided_eps needs a concrete target modality");
    const std::size_t n = static_cast<std::size_t>(x_t.dim(0));
    const std::vector<Modality> cond_tags(n, e_target);
    TensorF eps = model.predict(x_t, t, c, cond_tags);
    if (w == 0.0) return eps;
    const std::vector<Modality> null_tags(n, Modality::None);
    const TensorF unc = model.predict(x_t, t, c, null_tags);
    for (std::size_t i = 0; i < eps.size(); ++i)
        eps[i] = static_cast<float>((1.0 + w) * eps[i] - w * unc[i]);
    return eps;
}

double ddpm_sigma(const NoiseSchedule& sched, int t, SigmaMode mode) {
    sched.check_timestep(t);
    const double beta = sched.beta(t);
    if (mode == SigmaMode::Beta) return std::sqrt(beta);
    const double denom = 1.0 - sched.alpha_bar(t);
    if (denom <= 0.0) return 0.0;
    return std::sqrt((1.0 - sched.alpha_bar(t - 1)) / denom * beta);
}

TensorF ddpm_step(const NoisePredictor& model, const TensorF& x_t, int t, const TensorF& c, Modality e_target,
                  const NoiseSchedule& sched, const SamplerConfig& cfg, Rng& rng) {
    sched.check_timestep(t);
    const std::vector<int> ts(static_cast<std::size_t>(x_t.dim(0)), t);
    const TensorF eps = guided_eps(model, x_t, ts, c, e_target, cfg.guidance_weight);
    TensorF mu = mean_from_eps(x_t, ts, eps, sched);
    if (t == 1) return mu;
    const double sigma = ddpm_sigma(sched, t, cfg.sigma_mode);
    for (auto& v : mu.vec()) v = static_cast<float>(v + sigma * rng.normal());
    return mu;
}

std::vector<int> ddim_timesteps(int t_max, int steps) {
    if (steps < 1 || steps > t_max)
        throw ConfigError("ddim steps " + std::to_string(steps) + " outside [1, " + std::to_string(t_max) + "]",
                          "sampler.ddim_steps");
    std::vector<int> ts(static_cast<std::size_t>(steps));
    for (int i = 1; i <= steps; ++i)
        ts[i - 1] = static_cast<int>((static_cast<long long>(i) * t_max) / steps);
    return ts;
}

namespace {

TensorD guided_eps_double(const NoisePredictor& model, const TensorD& x_t, std::span<const int> t,
                          const TensorF& c, Modality e_target, double w) {
    if (e_target == Modality::None) throw ContractError("guided_eps needs a concrete target modality");
    const std::size_t n = static_cast<std::size_t>(x_t.dim(0));
    TensorD eps = model.predict_double(x_t, t, c, std::vector<Modality>(n, e_target));
    if (w == 0.0) return eps;
    const TensorD unc = model.predict_double(x_t, t, c, std::vector<Modality>(n, Modality::None));
    for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = (1.0 + w) * eps[i] - w * unc[i];
    return eps;
}

TensorF ddim_loop(const NoisePredictor& model, const TensorF& x_start, const std::vector<int>& ts,
                  const TensorF& c, Modality e_target, const NoiseSchedule& sched, double w, bool clip_x0) {
    TensorD x = x_start.cast<double>();
    const std::size_t n = static_cast<std::size_t>(x.dim(0));
    const std::size_t per = x.size() / n;
    for (std::size_t k = ts.size(); k-- > 0;) {
        const int t = ts[k];
        const int t_prev = k == 0 ? 0 : ts[k - 1];
        const std::vector<int> tv(n, t);
        const TensorD eps = guided_eps_double(model, x, tv, c, e_target, w);
        const double ab = sched.alpha_bar(t), ab_prev = sched.alpha_bar(t_prev);
        const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
        const double sa_prev = std::sqrt(ab_prev), sb_prev = std::sqrt(1.0 - ab_prev);
        for (std::size_t i = 0; i < n * per; ++i) {
            double x0 = (x[i] - sb * eps[i]) / sa;
            double e = eps[i];
            if (clip_x0 && std::abs(x0) > 1.0) {
                x0 = std::clamp(x0, -1.0, 1.0);
                e = (x[i] - sa * x0) / sb;
            }
            x[i] = sa_prev * x0 + sb_prev * e;
        }
    }
    return x.cast<float>();
}

void clip_unit(TensorF& x) {
    for (auto& v : x.vec()) v = std::clamp(v, -1.f, 1.f);
}

}  // namespace

TensorF denoise_from(const NoisePredictor& model, TensorF x_start, int t_start, const TensorF& c,
                     Modality e_target, const NoiseSchedule& sched, const SamplerConfig& cfg, Rng& rng) {
    cfg.validate(sched.T());
    if (t_start == 0) return x_start;
    sched.check_timestep(t_start);
    TensorF x = std::move(x_start);
    if (cfg.ddim_steps) {
        // Keep the step density of the full-length schedule when starting partway.
        const int steps = std::clamp(static_cast<int>(std::ceil(static_cast<double>(*cfg.ddim_steps) * t_start /
                                                                sched.T())),
                                     1, t_start);
        x = ddim_loop(model, x, ddim_timesteps(t_start, steps), c, e_target, sched, cfg.guidance_weight,
                      cfg.clip_x0);
    } else {
        for (int t = t_start; t >= 1; --t) x = ddpm_step(model, x, t, c, e_target, sched, cfg, rng);
    }
    clip_unit(x);
    return x;
}

ImageBatch ddim_sample(const NoisePredictor& model, const Shape& shape, const TensorF& c, Modality e_target,
                       const NoiseSchedule& sched, const SamplerConfig& cfg) {
    if (!cfg.ddim_steps) throw ConfigError("ddim_sample requires ddim_steps", "sampler.ddim_steps");
    Rng rng(cfg.seed);
    TensorF x = rng.normal_like<float>(shape);
    x = denoise_from(model, std::move(x), sched.T(), c, e_target, sched, cfg, rng);
    return {std::move(x), std::vector<Modality>(static_cast<std::size_t>(shape.at(0)), e_target)};
}

Translation translate(const NoisePredictor& model, const ImageBatch& x_src, std::span<const int> labels,
                      Modality target, const NoiseSchedule& sched, const SamplerConfig& cfg,
                      const FilterConfig& filter) {
    if (target == Modality::None) throw ContractError("translation target must be visible or infrared");
    x_src.validate();
    for (Modality m : x_src.modality)
        if (m == target) throw ContractError("source image already has the target modality");
    if (!labels.empty() && labels.size() != static_cast<std::size_t>(x_src.size()))
        throw ContractError("need one source label per image");
    if (!model.uses_condition()) throw ConfigError("translate needs a condition-aware model", "model.use_condition");

    Translation out;
    out.condition = make_condition(x_src, filter);
    Rng rng(cfg.seed);
    TensorF x = rng.normal_like<float>(x_src.data.shape());
    x = denoise_from(model, std::move(x), sched.T(), out.condition.data, target, sched, cfg, rng);
    out.images = {std::move(x), std::vector<Modality>(static_cast<std::size_t>(x_src.size()), target)};
    out.source_labels.assign(labels.begin(), labels.end());
    if (out.source_labels.empty()) out.source_labels.assign(static_cast<std::size_t>(x_src.size()), -1);
    return out;
}

ImageBatch partial_noise_translate(const NoisePredictor& model_no_c, const ImageBatch& x_src, Modality target,
                                   const NoiseSchedule& sched, const SamplerConfig& cfg,
                                   std::optional<int> t_start) {
    if (model_no_c.uses_condition())
        throw ConfigError("partial-noise translation needs a model trained without the condition channel",
                          "model.use_condition");
    if (target == Modality::None) throw ContractError("translation target must be visible or infrared");
    x_src.validate();
    const int start = t_start.value_or(sched.T() / 2);
    if (start < 0 || start > sched.T()) throw RangeError("start timestep outside [0, T]");
    std::vector<Modality> tags(static_cast<std::size_t>(x_src.size()), target);
    if (start == 0) return {x_src.data, std::move(tags)};
    Rng rng(cfg.seed);
    const TensorF eps = rng.normal_like<float>(x_src.data.shape());
    const std::vector<int> ts(static_cast<std::size_t>(x_src.size()), start);
    TensorF x = forward_noise(x_src, ts, eps, sched).data;
    x = denoise_from(model_no_c, std::move(x), start, TensorF{}, target, sched, cfg, rng);
    return {std::move(x), std::move(tags)};
}

}  // namespace vidiff
