#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vidiff/autograd.hpp"
#include "vidiff/types.hpp"

namespace vidiff {

/// Architecture of the noise-prediction U-Net.
///
/// Levels run from full resolution (0) to the coarsest. Each level holds
/// `num_res_blocks` residual blocks on the way down and one more on the way
/// up; 2x average pooling between levels going down, nearest upsampling
/// plus a 3x3 convolution going up. A residual/attention/residual block
/// sits at the coarsest level. The condition image is concatenated to the
/// noisy input as an extra channel; the sum of the timestep embedding and
/// the modality-indicator embedding is projected into every residual block.
struct DenoiserConfig {
    int base_channels = 32;
    std::vector<int> channel_multipliers{1, 2};
    std::vector<int> attention_levels{};
    int num_res_blocks = 1;
    int height = 64;
    int width = 32;
    int image_channels = 3;
    /// False only for the indicator-only ablation model (no condition channel).
    bool use_condition = true;
    int embedding_dim = 64;
    int norm_groups = 8;

    int levels() const { return static_cast<int>(channel_multipliers.size()); }
    int in_channels() const { return image_channels + (use_condition ? 1 : 0); }
    bool has_attention(int level) const;

    /// Throws ConfigError on indivisible sizes or channel/group mismatches.
    void validate() const;
    /// Stable hex digest of every field, recorded in checkpoint manifests.
    std::string hash() const;
};

/// Named parameter arrays. Ordered by name so iteration is deterministic.
template <typename T>
using ParamStore = std::map<std::string, Tensor<T>>;

using DenoiserParams = ParamStore<float>;

template <typename T>
std::size_t parameter_count(const ParamStore<T>& p) {
    std::size_t n = 0;
    for (const auto& [name, t] : p) n += t.size();
    return n;
}

template <typename T>
ParamStore<T> zeros_like(const ParamStore<T>& p) {
    ParamStore<T> out;
    for (const auto& [name, t] : p) out.emplace(name, Tensor<T>(t.shape()));
    return out;
}

template <typename U, typename T>
ParamStore<U> cast_params(const ParamStore<T>& p) {
    ParamStore<U> out;
    for (const auto& [name, t] : p) out.emplace(name, t.template cast<U>());
    return out;
}

/// Deterministic fan-in-scaled Gaussian init. Group-norm scales start at 1,
/// biases at 0, and the output convolution at exactly 0 so a fresh network
/// predicts zero noise.
DenoiserParams init_params(const DenoiserConfig& cfg, std::uint64_t seed);

/// Embedding row of a modality tag: visible 0, infrared 1, none 2.
int indicator_row(Modality m);

/// Sinusoidal features of integer timesteps, shape [N, dim].
template <typename T>
Tensor<T> timestep_features(std::span<const int> t, int dim);

/// Builds the U-Net on `graph` and returns the output node ([N, C, H, W]).
/// `grads`, when given, receives parameter gradients on backward.
/// `cond` must be empty when cfg.use_condition is false.
template <typename T>
ag::Var build_unet(ag::Graph<T>& graph, const DenoiserConfig& cfg, const ParamStore<T>& params,
                   ParamStore<T>* grads, const Tensor<T>& x_t, std::span<const int> t, const Tensor<T>& cond,
                   std::span<const Modality> e);

/// Mean-squared error between the network output and `target`, with
/// parameter gradients accumulated into `grads`.
template <typename T>
T eps_loss_and_grad(const DenoiserConfig& cfg, const ParamStore<T>& params, ParamStore<T>& grads,
                    const Tensor<T>& x_t, std::span<const int> t, const Tensor<T>& cond,
                    std::span<const Modality> e, const Tensor<T>& target);

/// Anything that estimates the noise in x_t. Samplers depend only on this.
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;
    /// x_t: [N, C, H, W]; c: [N, 1, H, W] or empty; one t and one tag per item.
    virtual TensorF predict(const TensorF& x_t, std::span<const int> t, const TensorF& c,
                            std::span<const Modality> e) const = 0;
    /// Double-precision variant used by the DDIM loop, which keeps its state
    /// in float64. The default evaluates predict() in float32.
    virtual TensorD predict_double(const TensorD& x_t, std::span<const int> t, const TensorF& c,
                                   std::span<const Modality> e) const {
        return predict(x_t.cast<float>(), t, c, e).cast<double>();
    }
    virtual bool uses_condition() const { return true; }
};

/// The trained network: configuration plus an immutable parameter snapshot.
class Denoiser final : public NoisePredictor {
public:
    Denoiser(DenoiserConfig cfg, DenoiserParams params);

    const DenoiserConfig& config() const noexcept { return cfg_; }
    const DenoiserParams& params() const noexcept { return params_; }
    DenoiserParams& mutable_params() noexcept { return params_; }

    TensorF predict(const TensorF& x_t, std::span<const int> t, const TensorF& c,
                    std::span<const Modality> e) const override;
    bool uses_condition() const override { return cfg_.use_condition; }

    /// Items evaluated per forward pass inside predict().
    static constexpr int kChunk = 16;

private:
    DenoiserConfig cfg_;
    DenoiserParams params_;
};

/// Convenience wrapper matching the operation contract: checks shapes and
/// timesteps against the model, then predicts.
TensorF predict_eps(const Denoiser& model, const ImageBatch& x_t, std::span<const int> t, const TensorF& cond,
                    std::span<const Modality> e);

}  // namespace vidiff
