#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vidiff/trainer.hpp"
#include "vidiff/types.hpp"

namespace vidiff {

/// A round patch. Row and column are fractions of image height and width,
/// radius a fraction of the width.
struct Blob {
    double row;
    double col;
    double radius;
    bool bright;

    bool operator==(const Blob&) const = default;
};

/// Appearance parameters of one synthetic pedestrian. Everything is
/// resolution independent.
struct IdentitySpec {
    int id = 0;
    int stripe_count = 3;
    double stripe_phase = 0.0;
    std::vector<Blob> blob_positions;
    double base_hue = 0.0;
    double texture_frequency = 1.0;

    /// True when every blob lies fully inside the unit frame.
    bool contained(double aspect_h_over_w = 2.0) const;
    bool operator==(const IdentitySpec&) const = default;
};

struct RenderConfig {
    int height = 64;
    int width = 32;
    /// Visible brightness jitter: multiplicative factor in [1-a, 1+a].
    double illumination_jitter = 0.1;
    /// Infrared sensor noise std in [-1, 1] units, truncated at 4 sigma.
    double ir_noise_std = 0.03;
    double ir_gamma = 0.6;
};

IdentitySpec generate_identity(std::uint64_t seed, int id = 0);

/// One [3, H, W] image in [-1, 1]. The same spec yields the same geometry in
/// both modalities; infrared has identical channels.
TensorF render(const IdentitySpec& spec, Modality modality, Rng& rng, const RenderConfig& cfg = {});

/// Renders into a single-item batch.
ImageBatch render_batch(const IdentitySpec& spec, Modality modality, Rng& rng, const RenderConfig& cfg = {});

struct ManifestEntry {
    std::string source;        ///< file path or "gen:<seed>"
    std::optional<int> label;  ///< empty means the missing label (phi)
    Modality modality = Modality::Visible;

    bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;

    int count(Modality m) const;
    /// `path,label,modality` lines, label `unknown` for phi.
    std::string to_csv() const;
    void write(const std::filesystem::path& path) const;
};

/// Synthetic single-modality-labeled dataset. `identity` records the true
/// identity of every image and exists for evaluation only; the diffusion
/// dataset and manifest never expose it for the unlabeled modality.
struct SynthDataset {
    DiffusionDataset diffusion;
    DatasetManifest manifest;
    std::vector<int> identity;
    std::vector<IdentitySpec> specs;
};

struct SynthConfig {
    int n_ids = 10;
    int per_id = 8;
    Modality labeled_modality = Modality::Visible;
    /// Fraction of identities present in both modalities.
    double id_overlap = 1.0;
    std::uint64_t seed = 0;
    RenderConfig render;

    void validate() const;
};

/// Identity split used for a given overlap: shared ids appear in both
/// modalities, the remainder is divided between labeled-only (ceil half)
/// and unlabeled-only ids.
struct IdentitySplit {
    std::vector<int> shared;
    std::vector<int> labeled_only;
    std::vector<int> unlabeled_only;
};
IdentitySplit split_identities(int n_ids, double id_overlap, std::uint64_t seed);

SynthDataset build_single_modality_dataset(const SynthConfig& cfg);

/// Writes `<root>/<modality>/<identity|unknown>/<index>.png` plus
/// `manifest.csv` (labels as seen by training) and `eval_manifest.csv`
/// (true identities). Returns the on-disk manifest.
DatasetManifest write_directory_dataset(const std::filesystem::path& root, const SynthDataset& data);

struct LoadedDataset {
    DiffusionDataset diffusion;
    DatasetManifest manifest;
};

/// Reads `<root>/{visible,infrared}/<identity_id|unknown>/<image>.png`,
/// resizing to the requested size. Unreadable files are skipped with a
/// warning; a missing or empty modality directory is an IoError naming it.
LoadedDataset load_directory_dataset(const std::filesystem::path& root, int height = 64, int width = 32);

}  // namespace vidiff
