#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "vidiff/conditioning.hpp"
#include "vidiff/denoiser.hpp"
#include "vidiff/labels.hpp"
#include "vidiff/types.hpp"

namespace vidiff {

// --- retrieval ---------------------------------------------------------------

/// Feature vectors with identity labels and modality tags.
struct EmbeddingSet {
    std::vector<std::vector<double>> vectors;
    std::vector<int> labels;
    std::vector<Modality> modality;

    std::size_t size() const { return vectors.size(); }
    std::size_t dim() const { return vectors.empty() ? 0 : vectors.front().size(); }
    /// Throws ContractError on ragged, non-finite or mislabeled content.
    void validate() const;
};

struct RetrievalMetrics {
    std::map<int, double> rank;  ///< k -> CMC rank-k accuracy
    double mAP = 0.0;
    int evaluated = 0;
    /// Queries without any positive gallery item.
    int excluded = 0;
};

/// CMC and mAP from a query x gallery distance matrix. Equal distances are
/// ordered with negatives first, so results never depend on gallery order.
RetrievalMetrics cmc_map_from_distances(const std::vector<std::vector<double>>& dist,
                                        std::span<const int> query_labels, std::span<const int> gallery_labels,
                                        std::span<const int> ks);

/// Cosine distance on L2-normalized embeddings.
RetrievalMetrics cmc_map(const EmbeddingSet& queries, const EmbeddingSet& gallery, std::span<const int> ks);

// --- modality gap ------------------------------------------------------------

/// Fixed handcrafted features: mean and standard deviation of luminance in
/// each cell of an 8x8 grid (128 values). Single-channel inputs are used
/// directly.
std::vector<std::vector<double>> gap_features(const TensorF& images, int grid = 8);

/// Euclidean distance between the two mean feature vectors.
double modality_gap(const EmbeddingSet& a, const EmbeddingSet& b);
double modality_gap(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b);

/// Projection onto the two leading principal directions of the pooled sets.
std::vector<std::array<double, 2>> pca_2d(const std::vector<std::vector<double>>& x);

// --- translation quality -----------------------------------------------------

/// Pearson correlation; 0 when either side has zero variance.
double pearson(std::span<const float> a, std::span<const float> b);

/// Correlation between the high-pass condition of each generated image and
/// the source condition ([N, 1, H, W]).
std::vector<double> identity_preservation(const ImageBatch& x_gen, const TensorF& c_src, const FilterConfig& filter);

/// Mean over pixels of the channel range (max - min), per item, in [0, 2].
std::vector<double> saturation_statistic(const TensorF& images);

/// Threshold on the saturation statistic separating visible from infrared.
struct ModalityScorer {
    double threshold = 0.05;

    /// Visible when the statistic exceeds the threshold; single-channel
    /// inputs are always infrared.
    std::vector<Modality> classify(const TensorF& images) const;

    /// Midpoint between the largest infrared and the smallest visible
    /// statistic when the two are separable, otherwise the midpoint of the
    /// class means.
    static ModalityScorer calibrate(const TensorF& visible, const TensorF& infrared);
};

// --- re-identification classifier --------------------------------------------

struct ReidConfig {
    int steps = 300;
    int batch_size = 32;
    double learning_rate = 3e-3;
    double weight_decay = 5e-4;
    int embedding_dim = 64;
    int width = 16;
    /// Number of identities; 0 infers max(label) + 1.
    int num_classes = 0;
    LabelMode mode = LabelMode::CeOnly;
    GceConfig gce;
    LsrConfig lsr;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Small convolutional embedding network with a linear identity head.
/// Three conv/SiLU/pool stages, a flattened linear embedding and the head.
class ToyClassifier {
public:
    ToyClassifier(ReidConfig cfg, int channels, int height, int width, std::uint64_t seed);

    const ReidConfig& config() const noexcept { return cfg_; }
    int num_classes() const noexcept { return cfg_.num_classes; }
    ParamStore<float>& params() noexcept { return params_; }
    const ParamStore<float>& params() const noexcept { return params_; }

    /// Builds embedding and logits nodes on a graph.
    std::pair<ag::Var, ag::Var> forward(ag::Graph<float>& g, ParamStore<float>* grads, const TensorF& x) const;

    std::vector<std::vector<double>> embed(const TensorF& x) const;
    std::vector<std::vector<double>> predict_proba(const TensorF& x) const;
    double accuracy(const TensorF& x, std::span<const int> labels) const;

private:
    ReidConfig cfg_;
    int channels_, height_, width_;
    ParamStore<float> params_;
};

struct LabeledImages {
    TensorF images;  ///< [N, C, H, W]
    std::vector<int> labels;
};

struct ReidResult {
    ToyClassifier model;
    std::vector<double> loss_log;
};

/// Trains on the union of the real and generated streams with the mixed
/// objective. An empty generated stream reduces to plain CE training.
ReidResult train_reid(const LabeledImages& real, const LabeledImages& generated, const ReidConfig& cfg);

/// Replaces each label, with probability `rate`, by a different label drawn
/// uniformly from the other K - 1 classes.
std::vector<int> symmetric_label_noise(std::span<const int> labels, int K, double rate, Rng& rng);

}  // namespace vidiff
