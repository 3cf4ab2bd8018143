#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vidiff/conditioning.hpp"
#include "vidiff/denoiser.hpp"
#include "vidiff/schedule.hpp"

namespace vidiff {

struct ScheduleConfig {
    int T = 1000;
    double alpha_start = 1.0 - 1e-4;
    double alpha_end = 1.0 - 2e-2;

    NoiseSchedule build() const { return build_linear_schedule(T, alpha_start, alpha_end); }
};

struct TrainConfig {
    int steps = 500;
    int batch_size = 8;
    double learning_rate = 2e-3;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    /// Global gradient-norm clip; <= 0 disables clipping.
    double grad_clip = 1.0;
    /// Probability of replacing an item's modality tag with `none`.
    double p_uncond = 0.1;
    std::uint64_t seed = 0;
    ScheduleConfig schedule;
    FilterConfig filter;
    /// "constant" or "cosine" (half-cosine decay from learning_rate to 0).
    std::string lr_schedule = "cosine";
    /// Linear warm-up steps applied before the schedule.
    int warmup_steps = 0;
    /// Exponential moving average of the weights; 0 disables it. When set,
    /// the returned and checkpointed parameters are the averaged ones.
    double ema_decay = 0.0;
    /// Write a checkpoint every N steps (0: only the final one).
    int checkpoint_every = 0;

    void validate() const;
    /// Learning rate at 1-based step `step`.
    double lr_at(long step) const;
};

/// Unpaired two-modality training set. Holds no labels and no
/// cross-modality pairing.
struct DiffusionDataset {
    ImageBatch images;

    int count(Modality m) const;
};

/// Randomness drawn for one training step.
struct TrainingDraw {
    std::vector<int> t;
    TensorF eps;
    TensorF x_t;
    TensorF cond;  ///< empty when the model has no condition channel
    std::vector<Modality> e;
};

/// Samples t uniformly in [1,T], eps ~ N(0,I), forms x_t, computes
/// c = F(x0) and drops each tag to `none` with probability p_uncond.
TrainingDraw draw_training_inputs(const ImageBatch& batch, const NoiseSchedule& sched, const TrainConfig& cfg,
                                  bool with_condition, Rng& rng);

/// L_simple for an arbitrary predictor on a prepared draw.
double draw_loss(const NoisePredictor& predictor, const TrainingDraw& draw);

/// Decoupled-weight-decay Adam state.
class AdamW {
public:
    AdamW(const DenoiserParams& like, const TrainConfig& cfg);
    void step(DenoiserParams& params, const DenoiserParams& grads);
    long steps_taken() const noexcept { return t_; }
    void set_learning_rate(double lr) noexcept { lr_ = lr; }

private:
    DenoiserParams m_, v_;
    double lr_, wd_, b1_, b2_, eps_;
    long t_ = 0;
};

/// Rescales grads in place so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(DenoiserParams& grads, double max_norm);

struct StepResult {
    double loss = 0.0;
    std::vector<int> t;
};

/// One optimizer step on `batch`. Throws NumericError on a non-finite loss.
StepResult training_step(const DenoiserConfig& model_cfg, DenoiserParams& params, AdamW& opt,
                         const ImageBatch& batch, const NoiseSchedule& sched, const TrainConfig& cfg, Rng& rng,
                         long step_index = 0);

struct LossRecord {
    long step;
    double loss;
    double lr;
};

struct TrainResult {
    DenoiserParams params;
    std::vector<LossRecord> log;
};

struct TrainOutputs {
    /// Directory for periodic and final checkpoints; unset disables them.
    std::optional<std::filesystem::path> checkpoint_dir;
    /// `step,loss,lr` CSV; unset disables it.
    std::optional<std::filesystem::path> loss_csv;
};

/// Full training loop with shuffled mini-batches drawn from `dataset`.
TrainResult train(const DiffusionDataset& dataset, const DenoiserConfig& model_cfg, const TrainConfig& cfg,
                  const TrainOutputs& outputs = {});

/// Forward exponential moving average of the logged losses.
std::vector<double> smooth_losses(const std::vector<LossRecord>& log, double decay);

}  // namespace vidiff
