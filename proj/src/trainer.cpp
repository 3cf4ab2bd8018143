#include "vidiff/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>

#include "vidiff/checkpoint.hpp"

namespace vidiff {

void TrainConfig::validate() const {
    if (steps < 0) throw ConfigError("steps must be >= 0", "train.steps");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1", "train.batch_size");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive", "train.learning_rate");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0", "train.weight_decay");
    if (!(p_uncond >= 0.0 && p_uncond < 1.0)) throw ConfigError("p_uncond must lie in [0,1)", "train.p_uncond");
    if (lr_schedule != "constant" && lr_schedule != "cosine")
        throw ConfigError("lr_schedule must be constant or cosine", "train.lr_schedule");
    if (warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0", "train.warmup_steps");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("ema_decay must lie in [0,1)", "train.ema_decay");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0", "train.checkpoint_every");
    filter.validate();
}

double TrainConfig::lr_at(long step) const {
    if (warmup_steps > 0 && step <= warmup_steps) return learning_rate * static_cast<double>(step) / warmup_steps;
    if (lr_schedule == "constant") return learning_rate;
    const double span = std::max(1L, static_cast<long>(steps) - warmup_steps - 1);
    const double progress = std::clamp(static_cast<double>(step - warmup_steps - 1) / span, 0.0, 1.0);
    return 0.5 * learning_rate * (1.0 + std::cos(std::numbers::pi * progress));
}

int DiffusionDataset::count(Modality m) const {
    return static_cast<int>(std::count(images.modality.begin(), images.modality.end(), m));
}

TrainingDraw draw_training_inputs(const ImageBatch& batch, const NoiseSchedule& sched, const TrainConfig& cfg,
                                  bool with_condition, Rng& rng) {
    batch.validate();
    TrainingDraw d;
    const int n = batch.size();
    d.t.resize(static_cast<std::size_t>(n));
    for (auto& t : d.t) t = rng.uniform_int(1, sched.T());
    d.eps = rng.normal_like<float>(batch.data.shape());
    d.x_t = forward_noise(batch, d.t, d.eps, sched).data;
    if (with_condition) d.cond = make_condition(batch, cfg.filter).data;
    d.e = batch.modality;
    for (auto& e : d.e) {
        if (e == Modality::None) throw ContractError("training items must carry their true modality");
        if (rng.bernoulli(cfg.p_uncond)) e = Modality::None;
    }
    return d;
}

double draw_loss(const NoisePredictor& predictor, const TrainingDraw& draw) {
    const TensorF pred = predictor.predict(draw.x_t, draw.t, draw.cond, draw.e);
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += static_cast<double>(pred[i] - draw.eps[i]) * (pred[i] - draw.eps[i]);
    return s / static_cast<double>(pred.size());
}

AdamW::AdamW(const DenoiserParams& like, const TrainConfig& cfg)
    : m_(zeros_like(like)),
      v_(zeros_like(like)),
      lr_(cfg.learning_rate),
      wd_(cfg.weight_decay),
      b1_(cfg.beta1),
      b2_(cfg.beta2),
      eps_(cfg.adam_eps) {}

void AdamW::step(DenoiserParams& params, const DenoiserParams& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (auto& [name, p] : params) {
        const TensorF& g = grads.at(name);
        TensorF& m = m_.at(name);
        TensorF& v = v_.at(name);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g[i];
            m[i] = static_cast<float>(b1_ * m[i] + (1.0 - b1_) * gi);
            v[i] = static_cast<float>(b2_ * v[i] + (1.0 - b2_) * gi * gi);
            const double mh = m[i] / c1, vh = v[i] / c2;
            double pi = p[i];
            pi -= lr_ * wd_ * pi;
            pi -= lr_ * mh / (std::sqrt(vh) + eps_);
            p[i] = static_cast<float>(pi);
        }
    }
}

double clip_grad_norm(DenoiserParams& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& [name, g] : grads)
        for (float v : g.vec()) sq += static_cast<double>(v) * v;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const float s = static_cast<float>(max_norm / norm);
        for (auto& [name, g] : grads)
            for (float& v : g.vec()) v *= s;
    }
    return norm;
}

StepResult training_step(const DenoiserConfig& model_cfg, DenoiserParams& params, AdamW& opt,
                         const ImageBatch& batch, const NoiseSchedule& sched, const TrainConfig& cfg, Rng& rng,
                         long step_index) {
    TrainingDraw d = draw_training_inputs(batch, sched, cfg, model_cfg.use_condition, rng);
    DenoiserParams grads = zeros_like(params);
    const float loss = eps_loss_and_grad<float>(model_cfg, params, grads, d.x_t, d.t, d.cond, d.e, d.eps);
    if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "non-finite loss " << loss << " at step " << step_index << ", t = [";
        for (std::size_t i = 0; i < d.t.size(); ++i) os << (i ? "," : "") << d.t[i];
        os << "]";
        throw NumericError(os.str());
    }
    clip_grad_norm(grads, cfg.grad_clip);
    opt.step(params, grads);
    return {loss, std::move(d.t)};
}

namespace {

ImageBatch gather(const ImageBatch& src, std::span<const int> idx) {
    Shape s = src.data.shape();
    const std::size_t per = src.data.size() / static_cast<std::size_t>(s[0]);
    s[0] = static_cast<int>(idx.size());
    ImageBatch out{TensorF(s), {}};
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy_n(src.data.data() + idx[i] * per, per, out.data.data() + i * per);
        out.modality.push_back(src.modality[idx[i]]);
    }
    return out;
}

std::string step_name(long step) {
    std::ostringstream os;
    os << "step_" << std::setw(6) << std::setfill('0') << step << ".vdck";
    return os.str();
}

}  // namespace

TrainResult train(const DiffusionDataset& dataset, const DenoiserConfig& model_cfg, const TrainConfig& cfg,
                  const TrainOutputs& outputs) {
    cfg.validate();
    model_cfg.validate();
    const int n = dataset.images.size();
    if (n == 0) throw ContractError("training dataset is empty");
    if (dataset.count(Modality::Visible) == 0 || dataset.count(Modality::Infrared) == 0)
        spdlog::warn("training dataset has a single modality; the indicator embedding will not learn a contrast");

    const NoiseSchedule sched = cfg.schedule.build();
    TrainResult result{init_params(model_cfg, cfg.seed), {}};
    AdamW opt(result.params, cfg);
    DenoiserParams params = result.params;
    const bool use_ema = cfg.ema_decay > 0.0;
    Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

    std::ofstream csv;
    if (outputs.loss_csv) {
        if (outputs.loss_csv->has_parent_path()) std::filesystem::create_directories(outputs.loss_csv->parent_path());
        csv.open(*outputs.loss_csv);
        if (!csv) throw IoError("cannot open loss log " + outputs.loss_csv->string());
        csv << "step,loss,lr\n";
    }
    auto save = [&](long step, const std::string& name) {
        if (!outputs.checkpoint_dir) return;
        std::filesystem::create_directories(*outputs.checkpoint_dir);
        save_checkpoint(*outputs.checkpoint_dir / name,
                        Checkpoint{model_cfg, use_ema ? result.params : params, {model_cfg.hash(), step, cfg.seed}});
    };

    std::vector<int> order(static_cast<std::size_t>(n));
    std::size_t cursor = order.size();
    std::vector<int> idx;
    for (long step = 1; step <= cfg.steps; ++step) {
        idx.clear();
        while (static_cast<int>(idx.size()) < cfg.batch_size) {
            if (cursor == order.size()) {
                std::iota(order.begin(), order.end(), 0);
                std::shuffle(order.begin(), order.end(), rng.engine());
                cursor = 0;
            }
            idx.push_back(order[cursor++]);
        }
        const ImageBatch batch = gather(dataset.images, idx);
        const double lr = cfg.lr_at(step);
        opt.set_learning_rate(lr);
        const StepResult r = training_step(model_cfg, params, opt, batch, sched, cfg, rng, step);
        if (use_ema) {
            const float d = static_cast<float>(cfg.ema_decay), e = 1.f - d;
            for (auto& [name, avg] : result.params) {
                const TensorF& cur = params.at(name);
                for (std::size_t i = 0; i < avg.size(); ++i) avg[i] = d * avg[i] + e * cur[i];
            }
        }
        result.log.push_back({step, r.loss, lr});
        if (csv) csv << step << ',' << std::setprecision(9) << r.loss << ',' << lr << '\n';
        if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.steps)
            save(step, step_name(step));
    }
    save(cfg.steps, "final.vdck");
    if (!use_ema) result.params = std::move(params);
    return result;
}

std::vector<double> smooth_losses(const std::vector<LossRecord>& log, double decay) {
    std::vector<double> out;
    out.reserve(log.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < log.size(); ++i) {
        acc = i == 0 ? log[i].loss : decay * acc + (1.0 - decay) * log[i].loss;
        out.push_back(acc);
    }
    return out;
}

}  // namespace vidiff
