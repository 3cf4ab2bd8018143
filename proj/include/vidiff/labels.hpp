#pragma once

#include <span>
#include <string_view>
#include <vector>

namespace vidiff {

/// Floor applied to probabilities before powers and logarithms.
inline constexpr double kProbFloor = 1e-12;

struct GceConfig {
    double q = 0.7;

    void validate() const;
};

struct LsrConfig {
    double alpha = 0.1;
    int K = 0;

    void validate() const;
};

/// (1 - p_y^q) / q with p_y clamped at kProbFloor.
double gce_loss(std::span<const double> probs, int y_index, double q);

/// Smoothed target: alpha/K everywhere plus 1 - alpha on the true class.
std::vector<double> lsr_smooth(int y_index, const LsrConfig& cfg);

/// -log p_y with the probability floor.
double cross_entropy(std::span<const double> probs, int y_index);

/// Cross entropy against an arbitrary target distribution.
double soft_cross_entropy(std::span<const double> probs, std::span<const double> target);

/// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

enum class LabelMode { CeOnly, Gce, Lsr, GceLsr };
LabelMode parse_label_mode(std::string_view s);
std::string_view to_string(LabelMode m);

enum class Provenance { Unset, Real, Generated };

struct LabeledItem {
    std::vector<double> logits;
    int label = 0;
    Provenance provenance = Provenance::Unset;
};

struct ObjectiveResult {
    double loss = 0.0;
    /// d loss / d logits per item, already divided by the batch size.
    std::vector<std::vector<double>> dlogits;
};

/// Batch-mean mixed objective on logits: real items use cross entropy;
/// generated items use the mode's term(s). Throws ContractError on an
/// unflagged item.
ObjectiveResult mixed_objective(std::span<const LabeledItem> batch, LabelMode mode, const GceConfig& gce,
                                const LsrConfig& lsr);

/// Same objective evaluated on probabilities (no gradient).
double mixed_objective_probs(std::span<const std::vector<double>> probs, std::span<const int> labels,
                             std::span<const Provenance> provenance, LabelMode mode, const GceConfig& gce,
                             const LsrConfig& lsr);

}  // namespace vidiff
