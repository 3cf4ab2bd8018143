#include "vidiff/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace vidiff {

bool DenoiserConfig::has_attention(int level) const {
    return std::find(attention_levels.begin(), attention_levels.end(), level) != attention_levels.end();
}

void DenoiserConfig::validate() const {
    if (base_channels <= 0 || base_channels % 2 != 0)
        throw ConfigError("base_channels must be positive and even", "denoiser.base_channels");
    if (channel_multipliers.empty())
        throw ConfigError("need at least one resolution level", "denoiser.channel_multipliers");
    for (int m : channel_multipliers)
        if (m <= 0) throw ConfigError("channel multipliers must be positive", "denoiser.channel_multipliers");
    for (int l : attention_levels)
        if (l < 0 || l >= levels()) throw ConfigError("attention level out of range", "denoiser.attention_levels");
    if (num_res_blocks < 1) throw ConfigError("num_res_blocks must be >= 1", "denoiser.num_res_blocks");
    if (image_channels != 1 && image_channels != 3)
        throw ConfigError("image_channels must be 1 or 3", "denoiser.image_channels");
    if (embedding_dim <= 0) throw ConfigError("embedding_dim must be positive", "denoiser.embedding_dim");
    const int div = 1 << (levels() - 1);
    if (height <= 0 || width <= 0 || height % div != 0 || width % div != 0)
        throw ConfigError("image size " + std::to_string(height) + "x" + std::to_string(width) +
                              " not divisible by 2^(levels-1) = " + std::to_string(div),
                          "denoiser.image_size");
    if (norm_groups <= 0) throw ConfigError("norm_groups must be positive", "denoiser.norm_groups");
    for (int m : channel_multipliers)
        if ((base_channels * m) % norm_groups != 0)
            throw ConfigError("channel count " + std::to_string(base_channels * m) + " not divisible by norm_groups",
                              "denoiser.norm_groups");
}

std::string DenoiserConfig::hash() const {
    std::ostringstream os;
    os << base_channels << '|';
    for (int m : channel_multipliers) os << m << ',';
    os << '|';
    for (int l : attention_levels) os << l << ',';
    os << '|' << num_res_blocks << '|' << height << 'x' << width << '|' << image_channels << '|' << use_condition
       << '|' << embedding_dim << '|' << norm_groups;
    // 64-bit FNV-1a
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : os.str()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

int indicator_row(Modality m) { return static_cast<int>(m); }

template <typename T>
Tensor<T> timestep_features(std::span<const int> t, int dim) {
    const int half = dim / 2;
    Tensor<T> out({static_cast<int>(t.size()), dim});
    for (std::size_t n = 0; n < t.size(); ++n)
        for (int i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * i / half);
            const double arg = t[n] * freq;
            out[n * dim + i] = static_cast<T>(std::cos(arg));
            out[n * dim + half + i] = static_cast<T>(std::sin(arg));
        }
    return out;
}

namespace {

// Walks the architecture once, either declaring parameter shapes or
// building the graph. Keeping both in one traversal guarantees that the
// parameter inventory always matches what forward() consumes.
template <typename T>
class Builder {
public:
    Builder(const DenoiserConfig& cfg, ag::Graph<T>* g, const ParamStore<T>* params, ParamStore<T>* grads,
            ParamStore<T>* declared)
        : cfg_(cfg), g_(g), params_(params), grads_(grads), declared_(declared) {}

    ag::Var p(const std::string& name, Shape shape) {
        if (declared_) {
            declared_->emplace(name, Tensor<T>(std::move(shape)));
            return {};
        }
        auto it = params_->find(name);
        if (it == params_->end()) throw ContractError("missing parameter '" + name + "'");
        if (it->second.shape() != shape)
            throw ContractError("parameter '" + name + "' has shape " + shape_str(it->second.shape()) +
                                ", expected " + shape_str(shape));
        Tensor<T>* sink = nullptr;
        if (grads_) sink = &grads_->at(name);
        return g_->param(it->second, sink);
    }

    bool declaring() const { return declared_ != nullptr; }

    ag::Var conv(const std::string& name, ag::Var x, int in, int out, int k) {
        ag::Var w = p(name + ".w", {out, in, k, k});
        ag::Var b = p(name + ".b", {out});
        return declaring() ? ag::Var{} : g_->conv2d(x, w, b, k / 2);
    }

    ag::Var norm(const std::string& name, ag::Var x, int ch) {
        ag::Var gm = p(name + ".g", {ch});
        ag::Var bt = p(name + ".b", {ch});
        return declaring() ? ag::Var{} : g_->group_norm(x, gm, bt, cfg_.norm_groups);
    }

    ag::Var linear(const std::string& name, ag::Var x, int in, int out) {
        ag::Var w = p(name + ".w", {out, in});
        ag::Var b = p(name + ".b", {out});
        return declaring() ? ag::Var{} : g_->linear(x, w, b);
    }

    ag::Var silu(ag::Var x) { return declaring() ? ag::Var{} : g_->silu(x); }

    ag::Var res_block(const std::string& name, ag::Var x, ag::Var emb_act, int in, int out) {
        ag::Var h = norm(name + ".norm1", x, in);
        h = silu(h);
        h = conv(name + ".conv1", h, in, out, 3);
        ag::Var e = linear(name + ".emb", emb_act, cfg_.embedding_dim, out);
        if (!declaring()) h = g_->add_channel(h, e);
        h = norm(name + ".norm2", h, out);
        h = silu(h);
        h = conv(name + ".conv2", h, out, out, 3);
        ag::Var skip = x;
        if (in != out) skip = conv(name + ".skip", x, in, out, 1);
        return declaring() ? ag::Var{} : g_->add(h, skip);
    }

    ag::Var attn_block(const std::string& name, ag::Var x, int ch) {
        ag::Var h = norm(name + ".norm", x, ch);
        h = conv(name + ".qkv", h, ch, 3 * ch, 1);
        if (!declaring()) h = g_->attention(h);
        h = conv(name + ".proj", h, ch, ch, 1);
        return declaring() ? ag::Var{} : g_->add(h, x);
    }

    ag::Var run(ag::Var image, ag::Var input, ag::Var tfeat, const std::vector<int>& ind_rows) {
        const int base = cfg_.base_channels, E = cfg_.embedding_dim;
        ag::Var temb = linear("time.fc1", tfeat, base, E);
        temb = silu(temb);
        temb = linear("time.fc2", temb, E, E);
        ag::Var table = p("indicator.table", {3, E});
        ag::Var emb_act;
        if (!declaring()) emb_act = g_->silu(g_->add(temb, g_->embedding(table, ind_rows)));

        ag::Var h = conv("conv_in", input, cfg_.in_channels(), base, 3);
        std::vector<std::pair<ag::Var, int>> skips{{h, base}};
        int ch = base;
        for (int l = 0; l < cfg_.levels(); ++l) {
            const int out = base * cfg_.channel_multipliers[l];
            for (int r = 0; r < cfg_.num_res_blocks; ++r) {
                const std::string name = "down." + std::to_string(l) + "." + std::to_string(r);
                h = res_block(name + ".res", h, emb_act, ch, out);
                ch = out;
                if (cfg_.has_attention(l)) h = attn_block(name + ".attn", h, ch);
                skips.emplace_back(h, ch);
            }
            if (l + 1 < cfg_.levels()) {
                if (!declaring()) h = g_->avg_pool2(h);
                skips.emplace_back(h, ch);
            }
        }
        h = res_block("mid.res1", h, emb_act, ch, ch);
        h = attn_block("mid.attn", h, ch);
        h = res_block("mid.res2", h, emb_act, ch, ch);
        for (int l = cfg_.levels() - 1; l >= 0; --l) {
            const int out = base * cfg_.channel_multipliers[l];
            for (int r = 0; r <= cfg_.num_res_blocks; ++r) {
                const auto [skip, skip_ch] = skips.back();
                skips.pop_back();
                if (!declaring()) h = g_->concat_channels(h, skip);
                const std::string name = "up." + std::to_string(l) + "." + std::to_string(r);
                h = res_block(name + ".res", h, emb_act, ch + skip_ch, out);
                ch = out;
                if (cfg_.has_attention(l)) h = attn_block(name + ".attn", h, ch);
            }
            if (l > 0) {
                if (!declaring()) h = g_->upsample2(h);
                h = conv("up." + std::to_string(l) + ".upconv", h, ch, ch, 3);
            }
        }
        h = norm("out.norm", h, ch);
        h = silu(h);
        ag::Var out = conv("out.conv", h, ch, cfg_.image_channels, 3);
        // Timestep-gated pass-through of x_t. Near t = T the target is almost
        // x_t itself, and a per-channel scale gets its mean exactly right where
        // the convolutional path would leave a residual colour cast.
        ag::Var gate = linear("out.skip", silu(temb), E, cfg_.image_channels);
        return declaring() ? ag::Var{} : g_->add(out, g_->mul_channel(image, gate));
    }

private:
    const DenoiserConfig& cfg_;
    ag::Graph<T>* g_;
    const ParamStore<T>* params_;
    ParamStore<T>* grads_;
    ParamStore<T>* declared_;
};

}  // namespace

namespace {

DenoiserParams declare_params(const DenoiserConfig& cfg) {
    cfg.validate();
    DenoiserParams params;
    Builder<float>(cfg, nullptr, nullptr, nullptr, &params).run({}, {}, {}, {});
    return params;
}

}  // namespace

DenoiserParams init_params(const DenoiserConfig& cfg, std::uint64_t seed) {
    DenoiserParams params = declare_params(cfg);
    Rng rng(seed);
    // std::map iteration order is the sorted name order, so the draw
    // sequence is a pure function of (cfg, seed).
    for (auto& [name, t] : params) {
        const bool is_bias = name.ends_with(".b");
        const bool is_gain = name.ends_with(".g");
        if (name.starts_with("out.conv") || name.starts_with("out.skip")) {
            t.fill(0.f);
        } else if (is_gain) {
            t.fill(1.f);
        } else if (is_bias) {
            t.fill(0.f);
        } else if (name == "indicator.table") {
            rng.fill_normal(t);
        } else {
            std::size_t fan_in = t.size() / static_cast<std::size_t>(t.dim(0));
            const double std = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (auto& v : t.vec()) v = static_cast<float>(rng.normal() * std);
        }
    }
    return params;
}

template <typename T>
ag::Var build_unet(ag::Graph<T>& graph, const DenoiserConfig& cfg, const ParamStore<T>& params,
                   ParamStore<T>* grads, const Tensor<T>& x_t, std::span<const int> t, const Tensor<T>& cond,
                   std::span<const Modality> e) {
    if (x_t.rank() != 4 || x_t.dim(1) != cfg.image_channels)
        throw ContractError("denoiser input must be [N, " + std::to_string(cfg.image_channels) + ", H, W], got " +
                            shape_str(x_t.shape()));
    const int n = x_t.dim(0);
    const int div = 1 << (cfg.levels() - 1);
    if (x_t.dim(2) % div != 0 || x_t.dim(3) % div != 0)
        throw ContractError("spatial size " + shape_str(x_t.shape()) + " not divisible by " + std::to_string(div));
    if (t.size() != static_cast<std::size_t>(n) || e.size() != static_cast<std::size_t>(n))
        throw ContractError("denoiser needs one timestep and one indicator per item");
    for (int ti : t)
        if (ti < 1) throw RangeError("timestep " + std::to_string(ti) + " must be >= 1");

    ag::Var image = graph.constant(x_t);
    ag::Var input;
    if (cfg.use_condition) {
        if (cond.rank() != 4 || cond.dim(0) != n || cond.dim(1) != 1 || cond.dim(2) != x_t.dim(2) ||
            cond.dim(3) != x_t.dim(3))
            throw ContractError("condition shape " + shape_str(cond.shape()) + " does not match input " +
                                shape_str(x_t.shape()));
        input = graph.concat_channels(image, graph.constant(cond));
    } else {
        if (!cond.empty()) throw ContractError("model was built without a condition channel");
        input = image;
    }
    std::vector<int> rows(e.size());
    std::transform(e.begin(), e.end(), rows.begin(), indicator_row);
    ag::Var tfeat = graph.constant(timestep_features<T>(t, cfg.base_channels));
    return Builder<T>(cfg, &graph, &params, grads, nullptr).run(image, input, tfeat, rows);
}

template <typename T>
T eps_loss_and_grad(const DenoiserConfig& cfg, const ParamStore<T>& params, ParamStore<T>& grads,
                    const Tensor<T>& x_t, std::span<const int> t, const Tensor<T>& cond,
                    std::span<const Modality> e, const Tensor<T>& target) {
    ag::Graph<T> g(true);
    ag::Var out = build_unet(g, cfg, params, &grads, x_t, t, cond, e);
    ag::Var loss = g.mse(out, target);
    g.backward(loss, Tensor<T>({1}, T(1)));
    return g.value(loss)[0];
}

template Tensor<float> timestep_features<float>(std::span<const int>, int);
template Tensor<double> timestep_features<double>(std::span<const int>, int);
template ag::Var build_unet<float>(ag::Graph<float>&, const DenoiserConfig&, const ParamStore<float>&,
                                   ParamStore<float>*, const Tensor<float>&, std::span<const int>,
                                   const Tensor<float>&, std::span<const Modality>);
template ag::Var build_unet<double>(ag::Graph<double>&, const DenoiserConfig&, const ParamStore<double>&,
                                    ParamStore<double>*, const Tensor<double>&, std::span<const int>,
                                    const Tensor<double>&, std::span<const Modality>);
template float eps_loss_and_grad<float>(const DenoiserConfig&, const ParamStore<float>&, ParamStore<float>&,
                                        const Tensor<float>&, std::span<const int>, const Tensor<float>&,
                                        std::span<const Modality>, const Tensor<float>&);
template double eps_loss_and_grad<double>(const DenoiserConfig&, const ParamStore<double>&, ParamStore<double>&,
                                          const Tensor<double>&, std::span<const int>, const Tensor<double>&,
                                          std::span<const Modality>, const Tensor<double>&);

Denoiser::Denoiser(DenoiserConfig cfg, DenoiserParams params) : cfg_(std::move(cfg)), params_(std::move(params)) {
    cfg_.validate();
    const DenoiserParams expected = declare_params(cfg_);
    if (expected.size() != params_.size())
        throw ContractError("parameter set does not match the denoiser configuration");
    for (const auto& [name, t] : expected) {
        auto it = params_.find(name);
        if (it == params_.end() || it->second.shape() != t.shape())
            throw ContractError("parameter '" + name + "' missing or misshapen for this configuration");
    }
}

TensorF Denoiser::predict(const TensorF& x_t, std::span<const int> t, const TensorF& c,
                          std::span<const Modality> e) const {
    const int n = x_t.dim(0);
    if (n <= kChunk) {
        ag::Graph<float> g(false);
        ag::Var out = build_unet<float>(g, cfg_, params_, nullptr, x_t, t, c, e);
        return g.value(out);
    }
    std::vector<TensorF> parts;
    for (int b = 0; b < n; b += kChunk) {
        const int end = std::min(n, b + kChunk);
        const TensorF cs = c.empty() ? TensorF{} : c.slice_batch(b, end);
        parts.push_back(predict(x_t.slice_batch(b, end), t.subspan(b, end - b), cs, e.subspan(b, end - b)));
    }
    return concat_batch<float>(parts);
}

TensorF predict_eps(const Denoiser& model, const ImageBatch& x_t, std::span<const int> t, const TensorF& cond,
                    std::span<const Modality> e) {
    if (x_t.height() != model.config().height || x_t.width() != model.config().width)
        throw ContractError("input size does not match the denoiser configuration");
    return model.predict(x_t.data, t, cond, e);
}

}  // namespace vidiff
