#include "vidiff/labels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "vidiff/error.hpp"

namespace vidiff {

void GceConfig::validate() const {
    if (!(q > 0.0 && q <= 1.0)) throw ConfigError("gce q must lie in (0, 1]", "labels.gce.q");
}

void LsrConfig::validate() const {
    if (K <= 0) throw ConfigError("lsr needs at least one class", "labels.lsr.K");
    if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("lsr alpha must lie in [0, 1)", "labels.lsr.alpha");
}

namespace {

void check_index(std::size_t k, int y) {
    if (y < 0 || static_cast<std::size_t>(y) >= k)
        throw ContractError("label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
}

}  // namespace

double gce_loss(std::span<const double> probs, int y_index, double q) {
    check_index(probs.size(), y_index);
    GceConfig{q}.validate();
    const double p = std::max(probs[y_index], kProbFloor);
    return (1.0 - std::pow(p, q)) / q;
}

std::vector<double> lsr_smooth(int y_index, const LsrConfig& cfg) {
    cfg.validate();
    check_index(static_cast<std::size_t>(cfg.K), y_index);
    std::vector<double> out(static_cast<std::size_t>(cfg.K), cfg.alpha / cfg.K);
    out[y_index] = (1.0 - cfg.alpha) + cfg.alpha / cfg.K;
    // Absorb the rounding residual of a left-to-right sum into the true class
    // so the target is a distribution to the last bit.
    for (int pass = 0; pass < 4; ++pass) {
        const double sum = std::accumulate(out.begin(), out.end(), 0.0);
        if (sum == 1.0) break;
        out[y_index] += 1.0 - sum;
    }
    return out;
}

double cross_entropy(std::span<const double> probs, int y_index) {
    check_index(probs.size(), y_index);
    return -std::log(std::max(probs[y_index], kProbFloor));
}

double soft_cross_entropy(std::span<const double> probs, std::span<const double> target) {
    if (probs.size() != target.size()) throw ContractError("soft_cross_entropy: size mismatch");
    double s = 0.0;
    for (std::size_t j = 0; j < probs.size(); ++j) s -= target[j] * std::log(std::max(probs[j], kProbFloor));
    return s;
}

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw ContractError("softmax of an empty vector");
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) z += p[j] = std::exp(logits[j] - m);
    for (auto& v : p) v /= z;
    return p;
}

LabelMode parse_label_mode(std::string_view s) {
    if (s == "ce_only" || s == "ce") return LabelMode::CeOnly;
    if (s == "gce") return LabelMode::Gce;
    if (s == "lsr") return LabelMode::Lsr;
    if (s == "gce+lsr" || s == "gce_lsr") return LabelMode::GceLsr;
    throw ConfigError("unknown label mode '" + std::string(s) + "'", "labels.mode");
}

std::string_view to_string(LabelMode m) {
    switch (m) {
        case LabelMode::CeOnly: return "ce_only";
        case LabelMode::Gce: return "gce";
        case LabelMode::Lsr: return "lsr";
        case LabelMode::GceLsr: return "gce+lsr";
    }
    return "ce_only";
}

namespace {

bool uses_gce(LabelMode m) { return m == LabelMode::Gce || m == LabelMode::GceLsr; }
bool uses_lsr(LabelMode m) { return m == LabelMode::Lsr || m == LabelMode::GceLsr; }

// Loss of one item and its logit gradient (unscaled).
double item_term(const std::vector<double>& p, int y, Provenance prov, LabelMode mode, const GceConfig& gce,
                 const LsrConfig& lsr, std::vector<double>* grad) {
    const std::size_t k = p.size();
    if (grad) grad->assign(k, 0.0);
    double loss = 0.0;
    if (prov == Provenance::Real || mode == LabelMode::CeOnly) {
        loss = cross_entropy(p, y);
        if (grad) {
            for (std::size_t j = 0; j < k; ++j) (*grad)[j] = p[j];
            (*grad)[y] -= 1.0;
        }
        return loss;
    }
    if (uses_gce(mode)) {
        loss += gce_loss(p, y, gce.q);
        if (grad) {
            const double pq = std::pow(std::max(p[y], kProbFloor), gce.q);
            for (std::size_t j = 0; j < k; ++j) (*grad)[j] += pq * p[j];
            (*grad)[y] -= pq;
        }
    }
    if (uses_lsr(mode)) {
        LsrConfig l = lsr;
        l.K = static_cast<int>(k);
        const auto target = lsr_smooth(y, l);
        loss += soft_cross_entropy(p, target);
        if (grad)
            for (std::size_t j = 0; j < k; ++j) (*grad)[j] += p[j] - target[j];
    }
    return loss;
}

void check_provenance(Provenance p) {
    if (p == Provenance::Unset) throw ContractError("batch item is not flagged real or generated");
}

}  // namespace

ObjectiveResult mixed_objective(std::span<const LabeledItem> batch, LabelMode mode, const GceConfig& gce,
                                const LsrConfig& lsr) {
    if (batch.empty()) throw ContractError("mixed_objective on an empty batch");
    ObjectiveResult r;
    r.dlogits.resize(batch.size());
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        check_provenance(batch[i].provenance);
        const auto p = softmax(batch[i].logits);
        r.loss += item_term(p, batch[i].label, batch[i].provenance, mode, gce, lsr, &r.dlogits[i]);
        for (auto& g : r.dlogits[i]) g *= inv;
    }
    r.loss *= inv;
    return r;
}

double mixed_objective_probs(std::span<const std::vector<double>> probs, std::span<const int> labels,
                             std::span<const Provenance> provenance, LabelMode mode, const GceConfig& gce,
                             const LsrConfig& lsr) {
    if (probs.empty() || probs.size() != labels.size() || probs.size() != provenance.size())
        throw ContractError("mixed_objective_probs: batch size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        check_provenance(provenance[i]);
        s += item_term(probs[i], labels[i], provenance[i], mode, gce, lsr, nullptr);
    }
    return s / static_cast<double>(probs.size());
}

}  // namespace vidiff
