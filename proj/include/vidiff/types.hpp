#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "vidiff/tensor.hpp"

namespace vidiff {

/// Modality tag. `None` selects the unconditional guidance branch and is
/// never attached to an image.
enum class Modality : std::uint8_t { Visible = 0, Infrared = 1, None = 2 };

inline std::string_view to_string(Modality m) {
    switch (m) {
        case Modality::Visible: return "visible";
        case Modality::Infrared: return "infrared";
        case Modality::None: return "none";
    }
    return "none";
}

inline Modality parse_modality(std::string_view s) {
    if (s == "visible" || s == "v" || s == "0") return Modality::Visible;
    if (s == "infrared" || s == "i" || s == "1") return Modality::Infrared;
    if (s == "none") return Modality::None;
    throw ConfigError("unknown modality '" + std::string(s) + "'", "modality");
}

inline Modality flip(Modality m) {
    if (m == Modality::None) throw ContractError("cannot flip the 'none' indicator");
    return m == Modality::Visible ? Modality::Infrared : Modality::Visible;
}

/// Images in [-1, 1], NCHW, with one modality tag per item.
struct ImageBatch {
    TensorF data;
    std::vector<Modality> modality;

    int size() const { return data.empty() ? 0 : data.dim(0); }
    int channels() const { return data.dim(1); }
    int height() const { return data.dim(2); }
    int width() const { return data.dim(3); }

    /// Throws ContractError unless the batch is rank 4, has 1 or 3 channels,
    /// one tag per item and finite values.
    void validate() const;
};

/// SplitMix64 finalizer; derives independent child seeds from (seed, salt).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Seeded generator shared by every stochastic path.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    /// Uniform integer in [lo, hi].
    int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
    bool bernoulli(double p) { return uniform() < p; }
    std::uint64_t next() { return engine_(); }

    template <typename T>
    void fill_normal(Tensor<T>& t) {
        for (auto& v : t.vec()) v = static_cast<T>(normal());
    }
    template <typename T>
    Tensor<T> normal_like(const Shape& s) {
        Tensor<T> t(s);
        fill_normal(t);
        return t;
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace vidiff
