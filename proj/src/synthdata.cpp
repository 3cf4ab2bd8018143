#include "vidiff/synthdata.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <numeric>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "vidiff/image_io.hpp"

namespace vidiff {

namespace {

constexpr double kBodyTop = 0.18, kBodyBottom = 0.96;
constexpr double kBodyLeft = 0.18, kBodyRight = 0.82;
constexpr double kLight = 0.62, kDark = 0.38, kBackground = 0.45;
constexpr double kChroma = 0.22, kBackgroundChroma = 0.12;

// Zero-mean RGB direction for a hue; channel mean of the result is 0.
std::array<double, 3> hue_direction(double hue) {
    const double a = 2.0 * std::numbers::pi * hue;
    return {std::cos(a), std::cos(a - 2.0 * std::numbers::pi / 3.0), std::cos(a + 2.0 * std::numbers::pi / 3.0)};
}

double truncated_normal(Rng& rng, double limit) {
    return std::clamp(rng.normal(), -limit, limit);
}

}  // namespace

bool IdentitySpec::contained(double aspect) const {
    return std::all_of(blob_positions.begin(), blob_positions.end(), [&](const Blob& b) {
        const double rr = b.radius / aspect;
        return b.radius > 0 && b.col - b.radius >= 0 && b.col + b.radius <= 1 && b.row - rr >= 0 && b.row + rr <= 1;
    });
}

IdentitySpec generate_identity(std::uint64_t seed, int id) {
    Rng rng(derive_seed(seed, 0x1d));
    IdentitySpec s;
    s.id = id;
    s.stripe_count = rng.uniform_int(3, 8);
    s.stripe_phase = rng.uniform();
    const int blobs = rng.uniform_int(3, 5);
    for (int i = 0; i < blobs; ++i) {
        Blob b;
        b.radius = 0.12 + 0.10 * rng.uniform();
        const double rr = b.radius / 2.0;
        b.row = rr + (1.0 - 2.0 * rr) * rng.uniform();
        b.col = b.radius + (1.0 - 2.0 * b.radius) * rng.uniform();
        b.bright = rng.bernoulli(0.5);
        s.blob_positions.push_back(b);
    }
    s.base_hue = rng.uniform();
    s.texture_frequency = 0.5 + 1.5 * rng.uniform();
    return s;
}

TensorF render(const IdentitySpec& spec, Modality modality, Rng& rng, const RenderConfig& cfg) {
    if (modality == Modality::None) throw ContractError("render needs a concrete modality");
    const int h = cfg.height, w = cfg.width;
    const double aspect = static_cast<double>(h) / w;
    TensorF out({3, h, w});

    // Intensity in [0,1] and a chroma weight per pixel (0 for neutral blobs).
    std::vector<double> inten(static_cast<std::size_t>(h) * w), chroma(inten.size());
    std::vector<int> region(inten.size());  // 0 background, 1 light stripe, 2 dark stripe, 3 blob
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const double y = (i + 0.5) / h, x = (j + 0.5) / w;
            const std::size_t k = static_cast<std::size_t>(i) * w + j;
            double v = kBackground + 0.05 * y;
            int reg = 0;
            if (y >= kBodyTop && y <= kBodyBottom && x >= kBodyLeft && x <= kBodyRight) {
                const double u = (y - kBodyTop) / (kBodyBottom - kBodyTop);
                const int band = static_cast<int>(std::floor(u * spec.stripe_count + spec.stripe_phase));
                const bool light = band % 2 == 0;
                v = light ? kLight : kDark;
                v += 0.08 * std::sin(2.0 * std::numbers::pi * spec.texture_frequency * (8.0 * y + 4.0 * x));
                reg = light ? 1 : 2;
            }
            for (const Blob& b : spec.blob_positions) {
                const double dy = (y - b.row) * aspect, dx = x - b.col;
                if (dx * dx + dy * dy <= b.radius * b.radius) {
                    v = b.bright ? 0.92 : 0.08;
                    reg = 3;
                }
            }
            inten[k] = v;
            region[k] = reg;
        }

    if (modality == Modality::Visible) {
        const double gain = 1.0 + cfg.illumination_jitter * (2.0 * rng.uniform() - 1.0);
        const auto light = hue_direction(spec.base_hue);
        const auto dark = hue_direction(spec.base_hue + 1.0 / 3.0);
        const auto back = hue_direction(spec.base_hue + 0.5);
        for (std::size_t k = 0; k < inten.size(); ++k) {
            std::array<double, 3> dir{0, 0, 0};
            double amp = 0.0;
            switch (region[k]) {
                case 0: dir = back, amp = kBackgroundChroma; break;
                case 1: dir = light, amp = kChroma; break;
                case 2: dir = dark, amp = kChroma; break;
                default: break;
            }
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(gain * (inten[k] + amp * dir[c]), 0.0, 1.0);
                out[static_cast<std::size_t>(c) * h * w + k] = static_cast<float>(2.0 * v - 1.0);
            }
        }
    } else {
        for (std::size_t k = 0; k < inten.size(); ++k) {
            double v = 2.0 * std::pow(inten[k], cfg.ir_gamma) - 1.0;
            v += cfg.ir_noise_std * truncated_normal(rng, 4.0);
            const float f = static_cast<float>(std::clamp(v, -1.0, 1.0));
            for (int c = 0; c < 3; ++c) out[static_cast<std::size_t>(c) * h * w + k] = f;
        }
    }
    return out;
}

ImageBatch render_batch(const IdentitySpec& spec, Modality modality, Rng& rng, const RenderConfig& cfg) {
    TensorF img = render(spec, modality, rng, cfg);
    return {img.reshaped({1, 3, cfg.height, cfg.width}), {modality}};
}

int DatasetManifest::count(Modality m) const {
    return static_cast<int>(std::count_if(entries.begin(), entries.end(), [m](const auto& e) { return e.modality == m; }));
}

std::string DatasetManifest::to_csv() const {
    std::ostringstream os;
    os << "path,label,modality\n";
    for (const auto& e : entries)
        os << e.source << ',' << (e.label ? std::to_string(*e.label) : std::string("unknown")) << ','
           << to_string(e.modality) << '\n';
    return os.str();
}

void DatasetManifest::write(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write manifest " + path.string());
    f << to_csv();
}

void SynthConfig::validate() const {
    if (n_ids < 2) throw ConfigError("n_ids must be >= 2", "dataset.n_ids");
    if (per_id < 1) throw ConfigError("per_id must be >= 1", "dataset.per_id");
    if (!(id_overlap >= 0.0 && id_overlap <= 1.0)) throw ConfigError("id_overlap must lie in [0,1]", "dataset.id_overlap");
    if (labeled_modality == Modality::None)
        throw ConfigError("labeled modality must be visible or infrared", "dataset.labeled_modality");
}

IdentitySplit split_identities(int n_ids, double id_overlap, std::uint64_t seed) {
    std::vector<int> ids(static_cast<std::size_t>(n_ids));
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(derive_seed(seed, 0x5b));
    std::shuffle(ids.begin(), ids.end(), rng.engine());
    const int shared = static_cast<int>(std::lround(id_overlap * n_ids));
    const int rest = n_ids - shared;
    const int labeled_only = (rest + 1) / 2;
    IdentitySplit s;
    s.shared.assign(ids.begin(), ids.begin() + shared);
    s.labeled_only.assign(ids.begin() + shared, ids.begin() + shared + labeled_only);
    s.unlabeled_only.assign(ids.begin() + shared + labeled_only, ids.end());
    for (auto* v : {&s.shared, &s.labeled_only, &s.unlabeled_only}) std::sort(v->begin(), v->end());
    return s;
}

SynthDataset build_single_modality_dataset(const SynthConfig& cfg) {
    cfg.validate();
    const Modality lab = cfg.labeled_modality, unl = flip(lab);
    const IdentitySplit split = split_identities(cfg.n_ids, cfg.id_overlap, cfg.seed);

    SynthDataset ds;
    for (int id = 0; id < cfg.n_ids; ++id) ds.specs.push_back(generate_identity(derive_seed(cfg.seed, 1000 + id), id));

    std::vector<int> lab_ids = split.shared, unl_ids = split.shared;
    lab_ids.insert(lab_ids.end(), split.labeled_only.begin(), split.labeled_only.end());
    unl_ids.insert(unl_ids.end(), split.unlabeled_only.begin(), split.unlabeled_only.end());
    std::sort(lab_ids.begin(), lab_ids.end());
    std::sort(unl_ids.begin(), unl_ids.end());

    std::vector<TensorF> images;
    auto emit = [&](const std::vector<int>& ids, Modality m, bool labeled) {
        for (int id : ids)
            for (int k = 0; k < cfg.per_id; ++k) {
                const std::uint64_t s = derive_seed(derive_seed(cfg.seed, 2000 + id), k * 2 + static_cast<int>(m));
                Rng rng(s);
                images.push_back(render(ds.specs[id], m, rng, cfg.render));
                ds.diffusion.images.modality.push_back(m);
                ds.identity.push_back(id);
                ds.manifest.entries.push_back(
                    {"gen:" + std::to_string(s), labeled ? std::optional<int>(id) : std::nullopt, m});
            }
    };
    emit(lab_ids, lab, true);
    emit(unl_ids, unl, false);

    std::vector<float> flat;
    for (const auto& im : images) flat.insert(flat.end(), im.vec().begin(), im.vec().end());
    ds.diffusion.images.data =
        TensorF({static_cast<int>(images.size()), 3, cfg.render.height, cfg.render.width}, std::move(flat));
    return ds;
}

DatasetManifest write_directory_dataset(const std::filesystem::path& root, const SynthDataset& data) {
    namespace fs = std::filesystem;
    DatasetManifest train_manifest, eval_manifest;
    std::map<std::string, int> counters;
    const auto& imgs = data.diffusion.images;
    const std::size_t per = imgs.data.size() / std::max(1, imgs.size());
    for (std::size_t i = 0; i < data.manifest.entries.size(); ++i) {
        const auto& e = data.manifest.entries[i];
        const std::string ident = e.label ? std::to_string(*e.label) : "unknown";
        const fs::path dir = root / std::string(to_string(e.modality)) / ident;
        fs::create_directories(dir);
        const std::string key = dir.string();
        char name[32];
        std::snprintf(name, sizeof name, "%05d.png", counters[key]++);
        const fs::path file = dir / name;
        TensorF img({3, imgs.height(), imgs.width()},
                    std::vector<float>(imgs.data.data() + i * per, imgs.data.data() + (i + 1) * per));
        write_png(file, img);
        const std::string rel = fs::relative(file, root).generic_string();
        train_manifest.entries.push_back({rel, e.label, e.modality});
        eval_manifest.entries.push_back({rel, data.identity[i], e.modality});
    }
    train_manifest.write(root / "manifest.csv");
    eval_manifest.write(root / "eval_manifest.csv");
    return train_manifest;
}

LoadedDataset load_directory_dataset(const std::filesystem::path& root, int height, int width) {
    namespace fs = std::filesystem;
    LoadedDataset out;
    std::vector<float> flat;
    for (Modality m : {Modality::Visible, Modality::Infrared}) {
        const fs::path mdir = root / std::string(to_string(m));
        if (!fs::is_directory(mdir)) throw IoError("missing modality directory " + mdir.string());
        std::vector<fs::path> id_dirs;
        for (const auto& d : fs::directory_iterator(mdir))
            if (d.is_directory()) id_dirs.push_back(d.path());
        std::sort(id_dirs.begin(), id_dirs.end());
        int loaded = 0;
        for (const auto& idir : id_dirs) {
            const std::string name = idir.filename().string();
            std::optional<int> label;
            if (name != "unknown") {
                try {
                    std::size_t pos = 0;
                    label = std::stoi(name, &pos);
                    if (pos != name.size()) throw std::invalid_argument(name);
                } catch (const std::exception&) {
                    spdlog::warn("skipping identity directory with non-numeric name {}", idir.string());
                    continue;
                }
            }
            std::vector<fs::path> files;
            for (const auto& f : fs::directory_iterator(idir))
                if (f.is_regular_file() && f.path().extension() == ".png") files.push_back(f.path());
            std::sort(files.begin(), files.end());
            for (const auto& f : files) {
                TensorF img;
                try {
                    img = resize_bilinear(read_png(f), height, width);
                } catch (const IoError& e) {
                    spdlog::warn("skipping unreadable image {}: {}", f.string(), e.what());
                    continue;
                }
                flat.insert(flat.end(), img.vec().begin(), img.vec().end());
                out.diffusion.images.modality.push_back(m);
                out.manifest.entries.push_back({fs::relative(f, root).generic_string(), label, m});
                ++loaded;
            }
        }
        if (loaded == 0) throw IoError("modality directory " + mdir.string() + " contains no readable images");
    }
    const int n = static_cast<int>(out.diffusion.images.modality.size());
    out.diffusion.images.data = TensorF({n, 3, height, width}, std::move(flat));
    return out;
}

}  // namespace vidiff
