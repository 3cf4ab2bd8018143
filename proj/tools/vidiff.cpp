// vidiff: synthetic data, diffusion training, translation, ReID and evaluation.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "plot.hpp"
#include "vidiff/checkpoint.hpp"
#include "vidiff/conditioning.hpp"
#include "vidiff/config.hpp"
#include "vidiff/error.hpp"
#include "vidiff/evalkit.hpp"
#include "vidiff/image_io.hpp"
#include "vidiff/sampler.hpp"
#include "vidiff/synthdata.hpp"
#include "vidiff/trainer.hpp"

namespace fs = std::filesystem;
using namespace vidiff;

namespace {

constexpr const char* kOutputRootEnv = "VIDIFF_OUTPUT_ROOT";

/// Raised when a required checkpoint or upstream artifact is absent.
struct MissingArtifact : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// --- options and run directory ------------------------------------------------

struct Common {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::string> name;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("-c,--config", c.config_path, "JSON config file")->check(CLI::ExistingFile);
    app->add_option("--set", c.overrides, "Override a config key, e.g. --set train.steps=100");
    app->add_option("-n,--name", c.name, "Run name (directory under the output root)");
    app->add_option("-s,--seed", c.seed, "Global seed");
    app->add_option("-o,--out", c.out, std::string("Output root (default: $") + kOutputRootEnv + " or runs)");
}

template <typename T>
void set_key(json& tree, const std::string& dotted, const T& value) {
    json* node = &tree;
    std::size_t start = 0;
    for (std::size_t dot; (dot = dotted.find('.', start)) != std::string::npos; start = dot + 1) {
        node = &(*node)[dotted.substr(start, dot - start)];
    }
    (*node)[dotted.substr(start)] = value;
}

/// Defaults, then the config file, then --set, then dedicated flags.
RunConfig resolve_config(const Common& c, const std::vector<std::pair<std::string, json>>& flags) {
    json tree = json::object();
    if (!c.config_path.empty()) {
        std::ifstream f(c.config_path);
        if (!f) throw IoError("cannot open config " + c.config_path);
        try {
            tree = json::parse(f, nullptr, true, true);
        } catch (const json::parse_error& e) {
            throw ConfigError(std::string("cannot parse config: ") + e.what(), "<root>");
        }
    }
    for (const auto& o : c.overrides) apply_override(tree, o);
    for (const auto& [key, value] : flags) set_key(tree, key, value);
    if (c.name) tree["name"] = *c.name;
    if (c.seed) tree["seed"] = *c.seed;
    if (c.out) {
        tree["output_dir"] = *c.out;
    } else if (!tree.contains("output_dir")) {
        if (const char* env = std::getenv(kOutputRootEnv); env && *env) tree["output_dir"] = env;
    }
    return parse_run_config(tree);
}

struct Run {
    RunConfig cfg;
    fs::path dir;

    fs::path config() const { return dir / "config"; }
    fs::path logs() const { return dir / "logs"; }
    fs::path ckpt() const { return dir / "ckpt"; }
    fs::path images() const { return dir / "images"; }
    fs::path metrics() const { return dir / "metrics"; }
    fs::path data() const { return dir / "data"; }
    fs::path translated() const { return images() / "translated"; }
};

std::string timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

/// Creates the run layout, snapshots the config and routes logs to
/// `logs/<command>.log` as well as stderr.
Run open_run(const std::string& command, RunConfig cfg) {
    Run run{std::move(cfg), {}};
    run.dir = fs::path(run.cfg.output_dir) / run.cfg.name;
    for (const auto& d : {run.config(), run.logs(), run.ckpt(), run.images(), run.metrics()}) fs::create_directories(d);
    save_run_config(run.config() / (command + ".json"), run.cfg);

    auto console = std::make_shared<spdlog::sinks::stderr_color_sink_mt>();
    auto file = std::make_shared<spdlog::sinks::basic_file_sink_mt>((run.logs() / (command + ".log")).string(), true);
    auto logger = std::make_shared<spdlog::logger>("vidiff", spdlog::sinks_init_list{console, file});
    logger->set_pattern("[%H:%M:%S] [%l] %v");
    logger->flush_on(spdlog::level::info);
    spdlog::set_default_logger(logger);
    spdlog::info("{} started {} in {}", command, timestamp(), run.dir.string());
    return run;
}

void write_metrics(const fs::path& path, const std::vector<std::pair<std::string, double>>& rows) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << "metric,value\n" << std::setprecision(8);
    for (const auto& [k, v] : rows) f << k << ',' << v << '\n';
    spdlog::info("wrote {}", path.string());
}

void save_canvas(const fs::path& path, const plot::Canvas& cv) {
    fs::create_directories(path.parent_path());
    write_png(path, cv.image());
    spdlog::info("wrote {}", path.string());
}

double mean_of(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// --- image sets ------------------------------------------------------------

TensorF item(const TensorF& batch, int i) {
    const Shape& s = batch.shape();
    return batch.slice_batch(i, i + 1).reshaped({s[1], s[2], s[3]});
}

TensorF gather(const TensorF& batch, const std::vector<int>& idx) {
    std::vector<TensorF> parts;
    parts.reserve(idx.size());
    for (int i : idx) parts.push_back(batch.slice_batch(i, i + 1));
    return concat_batch<float>(parts);
}

/// Rescales a condition map to [-1, 1] for display.
TensorF display_condition(TensorF c) {
    float m = 1e-6f;
    for (float v : c.vec()) m = std::max(m, std::abs(v));
    for (float& v : c.vec()) v /= m;
    return c;
}

fs::path default_data(const Run& run, const std::string& flag) { return flag.empty() ? run.data() : fs::path(flag); }

LoadedDataset load_data(const Run& run, const fs::path& dir) {
    if (!fs::exists(dir / "visible") && !fs::exists(dir / "infrared"))
        throw MissingArtifact("dataset not found at " + dir.string() + " (run `vidiff synth` first)");
    auto d = load_directory_dataset(dir, run.cfg.model.height, run.cfg.model.width);
    spdlog::info("loaded {} visible and {} infrared images from {}", d.diffusion.count(Modality::Visible),
                 d.diffusion.count(Modality::Infrared), dir.string());
    return d;
}

/// Labeled items of one modality from a loaded dataset.
LabeledImages labeled_subset(const LoadedDataset& d, Modality m) {
    std::vector<int> idx;
    LabeledImages out;
    for (std::size_t i = 0; i < d.manifest.entries.size(); ++i) {
        const auto& e = d.manifest.entries[i];
        if (e.modality == m && e.label) idx.push_back(static_cast<int>(i)), out.labels.push_back(*e.label);
    }
    if (!idx.empty()) out.images = gather(d.diffusion.images.data, idx);
    return out;
}

/// Reads a `path,label,modality` manifest whose paths are relative to its
/// directory. Entries with an unknown label are skipped.
LabeledImages load_manifest_images(const fs::path& manifest, int height, int width) {
    std::ifstream f(manifest);
    if (!f) throw MissingArtifact("manifest not found: " + manifest.string());
    LabeledImages out;
    std::vector<TensorF> parts;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line.rfind("path,", 0) == 0) continue;
        const auto a = line.find(','), b = line.rfind(',');
        if (a == std::string::npos || a == b) throw IoError("malformed manifest line: " + line);
        const std::string label = line.substr(a + 1, b - a - 1);
        if (label == "unknown") continue;
        const TensorF img = resize_bilinear(read_png(manifest.parent_path() / line.substr(0, a)), height, width);
        parts.push_back(img.reshaped({1, img.dim(0), height, width}));
        out.labels.push_back(std::stoi(label));
    }
    if (!parts.empty()) out.images = concat_batch<float>(parts);
    return out;
}

/// Fresh renders of every identity, disjoint from the training renders.
LabeledImages held_out(const RunConfig& cfg, Modality m, int per_id, std::uint64_t salt) {
    SynthConfig sc = cfg.dataset;
    const auto specs = build_single_modality_dataset(sc).specs;
    LabeledImages out;
    std::vector<TensorF> parts;
    for (const auto& spec : specs)
        for (int k = 0; k < per_id; ++k) {
            Rng rng(derive_seed(derive_seed(sc.seed, salt + static_cast<std::uint64_t>(spec.id)),
                                static_cast<std::uint64_t>(k * 2 + static_cast<int>(m))));
            parts.push_back(render(spec, m, rng, sc.render).reshaped({1, 3, sc.render.height, sc.render.width}));
            out.labels.push_back(spec.id);
        }
    out.images = concat_batch<float>(parts);
    return out;
}

ModalityScorer calibrated_scorer(const RunConfig& cfg) {
    const auto v = held_out(cfg, Modality::Visible, 4, 7000), i = held_out(cfg, Modality::Infrared, 4, 7000);
    return ModalityScorer::calibrate(v.images, i.images);
}

// --- ReID checkpoint -------------------------------------------------------

void save_reid(const fs::path& path, const RunConfig& cfg, const ToyClassifier& model, const Shape& input) {
    json arrays = json::object();
    for (const auto& [name, t] : model.params()) arrays[name] = {{"shape", t.shape()}, {"data", t.vec()}};
    const json j{{"run", to_json(cfg)},
                 {"num_classes", model.num_classes()},
                 {"input", {input[1], input[2], input[3]}},
                 {"params", arrays}};
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << j.dump();
    spdlog::info("wrote {}", path.string());
}

ToyClassifier load_reid(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw MissingArtifact("ReID checkpoint not found: " + path.string() + " (run `vidiff train-reid` first)");
    const json j = json::parse(f);
    ReidConfig rc = parse_run_config(j.at("run")).reid;
    rc.num_classes = j.at("num_classes").get<int>();
    rc.lsr.K = rc.num_classes;
    const auto in = j.at("input").get<std::vector<int>>();
    ToyClassifier model(rc, in.at(0), in.at(1), in.at(2), rc.seed);
    for (auto& [name, t] : model.params()) {
        const json& a = j.at("params").at(name);
        if (a.at("shape").get<Shape>() != t.shape()) throw IoError(path.string() + ": shape mismatch for " + name);
        const auto data = a.at("data").get<std::vector<float>>();
        std::copy(data.begin(), data.end(), t.vec().begin());
    }
    return model;
}

Checkpoint load_diffusion(const fs::path& path) {
    if (!fs::exists(path)) throw MissingArtifact("checkpoint not found: " + path.string());
    return load_checkpoint(path);
}

// --- commands --------------------------------------------------------------

void cmd_synth(const Run& run) {
    const auto ds = build_single_modality_dataset(run.cfg.dataset);
    fs::remove_all(run.data());
    const auto manifest = write_directory_dataset(run.data(), ds);
    spdlog::info("wrote {} visible and {} infrared images to {}", manifest.count(Modality::Visible),
                 manifest.count(Modality::Infrared), run.data().string());

    std::vector<TensorF> tiles;
    for (Modality m : {Modality::Visible, Modality::Infrared}) {
        int shown = 0;
        for (int i = 0; i < ds.diffusion.images.size() && shown < 8; ++i)
            if (ds.diffusion.images.modality[i] == m) tiles.push_back(item(ds.diffusion.images.data, i)), ++shown;
        while (shown++ < 8) tiles.push_back(TensorF({3, ds.diffusion.images.height(), ds.diffusion.images.width()}));
    }
    save_canvas(run.images() / "synth_grid.png", plot::tile_grid(tiles, 8));
    write_metrics(run.metrics() / "synth.csv", {{"visible_images", manifest.count(Modality::Visible)},
                                                {"infrared_images", manifest.count(Modality::Infrared)},
                                                {"identities", run.cfg.dataset.n_ids}});
}

void cmd_train_diff(const Run& run, const std::string& data_flag) {
    const auto data = load_data(run, default_data(run, data_flag));
    const auto t0 = std::chrono::steady_clock::now();
    const auto res = train(data.diffusion, run.cfg.model, run.cfg.train,
                           {run.ckpt(), run.metrics() / "loss.csv"});
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    spdlog::info("trained {} steps in {:.1f}s, final checkpoint {}", run.cfg.train.steps, secs,
                 (run.ckpt() / "final.vdck").string());

    plot::Series raw{{}, {}, plot::kGray}, smooth{{}, {}, plot::kBlue};
    const auto sm = smooth_losses(res.log, 0.95);
    for (std::size_t i = 0; i < res.log.size(); ++i) {
        raw.x.push_back(static_cast<double>(res.log[i].step));
        raw.y.push_back(res.log[i].loss);
        smooth.x.push_back(static_cast<double>(res.log[i].step));
        smooth.y.push_back(sm[i]);
    }
    save_canvas(run.images() / "loss.png", plot::line_plot({raw, smooth}));
    write_metrics(run.metrics() / "train_diff.csv",
                  {{"steps", run.cfg.train.steps}, {"final_loss_smoothed", sm.empty() ? 0.0 : sm.back()},
                   {"seconds", secs}});
}

struct TranslateFlags {
    std::string data, ckpt, target;
};

void cmd_translate(const Run& run, const TranslateFlags& fl) {
    const auto ck = load_diffusion(fl.ckpt.empty() ? run.ckpt() / "final.vdck" : fs::path(fl.ckpt));
    const Denoiser model(ck.config, ck.params);
    const auto data = load_data(run, default_data(run, fl.data));
    const Modality target = fl.target.empty() ? flip(run.cfg.dataset.labeled_modality) : parse_modality(fl.target);
    const Modality source = flip(target);

    std::vector<int> idx;
    std::vector<std::optional<int>> labels;
    for (std::size_t i = 0; i < data.manifest.entries.size(); ++i)
        if (data.manifest.entries[i].modality == source)
            idx.push_back(static_cast<int>(i)), labels.push_back(data.manifest.entries[i].label);
    const int limit = run.cfg.eval.translate_count;
    if (limit > 0 && limit < static_cast<int>(idx.size())) idx.resize(limit), labels.resize(limit);
    if (idx.empty()) throw MissingArtifact("no " + std::string(to_string(source)) + " images to translate");

    const auto sched = run.cfg.schedule.build();
    constexpr int kChunk = 16;
    std::vector<TensorF> gen_parts, cond_parts;
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t start = 0; start < idx.size(); start += kChunk) {
        const std::size_t stop = std::min(idx.size(), start + kChunk);
        const std::vector<int> sub(idx.begin() + start, idx.begin() + stop);
        std::vector<int> lab;
        for (std::size_t k = start; k < stop; ++k) lab.push_back(labels[k].value_or(-1));
        const ImageBatch x{gather(data.diffusion.images.data, sub), std::vector<Modality>(sub.size(), source)};
        SamplerConfig sc = run.cfg.sampler;
        sc.seed = derive_seed(run.cfg.sampler.seed, start / kChunk);
        const auto tr = translate(model, x, lab, target, sched, sc, run.cfg.filter);
        gen_parts.push_back(tr.images.data);
        cond_parts.push_back(tr.condition.data);
        spdlog::info("translated {}/{}", stop, idx.size());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const ImageBatch gen{concat_batch<float>(gen_parts), std::vector<Modality>(idx.size(), target)};
    const TensorF cond = concat_batch<float>(cond_parts);

    const fs::path out = run.translated();
    fs::remove_all(out);
    DatasetManifest manifest;
    std::map<std::string, int> counters;
    for (int i = 0; i < gen.size(); ++i) {
        const std::string ident = labels[i] ? std::to_string(*labels[i]) : "unknown";
        const fs::path dir = out / std::string(to_string(target)) / ident;
        fs::create_directories(dir);
        std::ostringstream name;
        name << std::setw(5) << std::setfill('0') << counters[ident]++ << ".png";
        write_png(dir / name.str(), item(gen.data, i));
        manifest.entries.push_back({fs::relative(dir / name.str(), out).generic_string(), labels[i], target});
    }
    manifest.write(out / "manifest.csv");
    spdlog::info("wrote {} translated images to {}", gen.size(), out.string());

    std::vector<TensorF> tiles;
    for (int i = 0; i < std::min(8, gen.size()); ++i) {
        tiles.push_back(item(data.diffusion.images.data, idx[i]));
        tiles.push_back(display_condition(item(cond, i)));
        tiles.push_back(item(gen.data, i));
    }
    save_canvas(run.images() / "translate_grid.png", plot::tile_grid(tiles, 3));

    const auto cls = calibrated_scorer(run.cfg).classify(gen.data);
    const double hit = static_cast<double>(std::count(cls.begin(), cls.end(), target)) / gen.size();
    const double ip = mean_of(identity_preservation(gen, cond, run.cfg.filter));
    // Null: the same outputs scored against a cyclically shifted condition.
    const int n = gen.size();
    std::vector<int> shifted(n);
    for (int i = 0; i < n; ++i) shifted[i] = (i + std::max(1, n / 2)) % n;
    const double null_ip = n > 1 ? mean_of(identity_preservation(gen, gather(cond, shifted), run.cfg.filter)) : 0.0;
    spdlog::info("target modality {:.3f}, identity preservation {:.3f} (null {:.3f}), {:.1f}s", hit, ip, null_ip, secs);
    write_metrics(run.metrics() / "translate.csv", {{"count", n},
                                                    {"target_modality_fraction", hit},
                                                    {"identity_preservation", ip},
                                                    {"identity_preservation_null", null_ip},
                                                    {"seconds", secs}});
}

struct ReidFlags {
    std::string data, generated, mode;
    bool no_generated = false;
};

LabeledImages load_generated(const Run& run, const std::string& flag, bool required) {
    const fs::path dir = flag.empty() ? run.translated() : fs::path(flag);
    if (!fs::exists(dir / "manifest.csv")) {
        if (required || !flag.empty())
            throw MissingArtifact("generated images not found at " + dir.string() + " (run `vidiff translate` first)");
        spdlog::warn("no generated images at {}, training on real images only", dir.string());
        return {};
    }
    auto g = load_manifest_images(dir / "manifest.csv", run.cfg.model.height, run.cfg.model.width);
    spdlog::info("loaded {} generated images from {}", g.labels.size(), dir.string());
    return g;
}

void cmd_train_reid(Run run, const ReidFlags& fl) {
    const auto data = load_data(run, default_data(run, fl.data));
    const auto real = labeled_subset(data, run.cfg.dataset.labeled_modality);
    const auto gen = fl.no_generated ? LabeledImages{} : load_generated(run, fl.generated, false);
    if (run.cfg.reid.num_classes == 0) run.cfg.reid.num_classes = run.cfg.dataset.n_ids;
    const auto res = train_reid(real, gen, run.cfg.reid);
    save_reid(run.ckpt() / "reid.json", run.cfg, res.model, real.images.empty() ? gen.images.shape() : real.images.shape());

    std::ofstream csv(run.metrics() / "reid_loss.csv");
    csv << "step,loss\n" << std::setprecision(8);
    plot::Series s{{}, {}, plot::kRed};
    for (std::size_t i = 0; i < res.loss_log.size(); ++i) {
        csv << i + 1 << ',' << res.loss_log[i] << '\n';
        s.x.push_back(static_cast<double>(i + 1));
        s.y.push_back(res.loss_log[i]);
    }
    save_canvas(run.images() / "reid_loss.png", plot::line_plot({s}));
    spdlog::info("ReID ({}) trained on {} real + {} generated images", to_string(run.cfg.reid.mode), real.labels.size(),
                 gen.labels.size());
}

constexpr std::uint64_t kTestSalt = 5000;

void cmd_eval(const Run& run, const std::string& ckpt_flag, int per_id) {
    const auto model = load_reid(ckpt_flag.empty() ? run.ckpt() / "reid.json" : fs::path(ckpt_flag));
    const auto q = held_out(run.cfg, Modality::Infrared, per_id, kTestSalt);
    const auto g = held_out(run.cfg, Modality::Visible, per_id, kTestSalt);
    EmbeddingSet qs{model.embed(q.images), q.labels, std::vector<Modality>(q.labels.size(), Modality::Infrared)};
    EmbeddingSet gs{model.embed(g.images), g.labels, std::vector<Modality>(g.labels.size(), Modality::Visible)};
    const auto m = cmc_map(qs, gs, run.cfg.eval.ranks);

    std::vector<std::pair<std::string, double>> rows;
    for (const auto& [k, v] : m.rank) rows.emplace_back("rank" + std::to_string(k), v);
    rows.emplace_back("mAP", m.mAP);
    rows.emplace_back("infrared_accuracy", model.accuracy(q.images, q.labels));
    rows.emplace_back("visible_accuracy", model.accuracy(g.images, g.labels));
    rows.emplace_back("queries", m.evaluated);
    write_metrics(run.metrics() / "eval.csv", rows);
    spdlog::info("infrared->visible rank1 {:.3f} mAP {:.3f}", m.rank.count(1) ? m.rank.at(1) : 0.0, m.mAP);

    std::vector<std::vector<double>> pooled = qs.vectors;
    pooled.insert(pooled.end(), gs.vectors.begin(), gs.vectors.end());
    const auto p = pca_2d(pooled);
    plot::Series ir{{}, {}, plot::kRed}, vis{{}, {}, plot::kBlue};
    for (std::size_t i = 0; i < p.size(); ++i) {
        auto& s = i < qs.size() ? ir : vis;
        s.x.push_back(p[i][0]);
        s.y.push_back(p[i][1]);
    }
    save_canvas(run.images() / "eval_projection.png", plot::scatter({vis, ir}));
}

void cmd_gap_plot(const Run& run, const std::string& data_flag, int count) {
    ImageBatch x;
    if (!data_flag.empty()) {
        x = load_data(run, data_flag).diffusion.images;
    } else {
        const int per_id = (count + run.cfg.dataset.n_ids - 1) / run.cfg.dataset.n_ids;
        std::vector<TensorF> parts;
        for (Modality m : {Modality::Visible, Modality::Infrared}) {
            const auto h = held_out(run.cfg, m, per_id, 6000);
            parts.push_back(h.images.slice_batch(0, std::min(count, h.images.dim(0))));
            x.modality.insert(x.modality.end(), parts.back().dim(0), m);
        }
        x.data = concat_batch<float>(parts);
    }
    FilterConfig low = run.cfg.filter;
    low.kind = FilterKind::LowpassGaussian;
    const auto hp = gap_features(make_condition(x, run.cfg.filter).data);
    const auto lp = gap_features(low_pass_reference(x, low).data);

    auto split = [&](const std::vector<std::vector<double>>& f, Modality m) {
        std::vector<std::vector<double>> out;
        for (std::size_t i = 0; i < f.size(); ++i)
            if (x.modality[i] == m) out.push_back(f[i]);
        return out;
    };
    const double g_hp = modality_gap(split(hp, Modality::Visible), split(hp, Modality::Infrared));
    const double g_lp = modality_gap(split(lp, Modality::Visible), split(lp, Modality::Infrared));
    spdlog::info("modality gap: condition {:.4f}, low-pass {:.4f}", g_hp, g_lp);
    write_metrics(run.metrics() / "gap.csv", {{"condition_gap", g_hp}, {"lowpass_gap", g_lp}});

    auto panel = [&](const std::vector<std::vector<double>>& f) {
        const auto p = pca_2d(f);
        plot::Series v{{}, {}, plot::kBlue}, i{{}, {}, plot::kRed};
        for (std::size_t k = 0; k < p.size(); ++k) {
            auto& s = x.modality[k] == Modality::Visible ? v : i;
            s.x.push_back(p[k][0]);
            s.y.push_back(p[k][1]);
        }
        return plot::scatter({v, i});
    };
    save_canvas(run.images() / "gap_plot.png", plot::hstack({panel(hp), panel(lp)}));
}

void cmd_ablate(const Run& run, const std::string& data_flag, const std::string& generated, const std::string& no_cond) {
    const auto data = load_data(run, default_data(run, data_flag));
    const auto real = labeled_subset(data, run.cfg.dataset.labeled_modality);
    auto gen = load_generated(run, generated, true);
    const int K = run.cfg.dataset.n_ids;
    Rng noise_rng(derive_seed(run.cfg.seed, 0xab1a));
    gen.labels = symmetric_label_noise(gen.labels, K, run.cfg.eval.label_noise, noise_rng);
    const Modality target = flip(run.cfg.dataset.labeled_modality);
    const auto test = held_out(run.cfg, target, std::max(1, run.cfg.dataset.per_id), kTestSalt);

    std::ofstream csv(run.metrics() / "ablation.csv");
    csv << "GCE,LSR,accuracy\n" << std::setprecision(6);
    const std::pair<bool, bool> grid[] = {{false, false}, {true, false}, {false, true}, {true, true}};
    for (const auto& [gce, lsr] : grid) {
        ReidConfig rc = run.cfg.reid;
        rc.num_classes = K;
        rc.mode = gce ? (lsr ? LabelMode::GceLsr : LabelMode::Gce) : (lsr ? LabelMode::Lsr : LabelMode::CeOnly);
        const auto res = train_reid(real, gen, rc);
        const double acc = res.model.accuracy(test.images, test.labels);
        csv << int(gce) << ',' << int(lsr) << ',' << acc << '\n';
        spdlog::info("GCE {} LSR {}: clean {} accuracy {:.3f}", gce, lsr, to_string(target), acc);
    }
    spdlog::info("wrote {}", (run.metrics() / "ablation.csv").string());

    if (no_cond.empty()) return;
    const auto ck = load_diffusion(run.ckpt() / "final.vdck");
    const auto ck0 = load_diffusion(no_cond);
    if (ck0.config.use_condition) throw ConfigError("the baseline checkpoint must be built without a condition", "model.use_condition");
    const Denoiser with_c(ck.config, ck.params), without_c(ck0.config, ck0.params);
    const int n = std::min(16, static_cast<int>(real.labels.size()));
    std::vector<int> first(n);
    std::iota(first.begin(), first.end(), 0);
    const ImageBatch x{gather(real.images, first), std::vector<Modality>(n, run.cfg.dataset.labeled_modality)};
    const std::vector<int> lab(real.labels.begin(), real.labels.begin() + n);
    const auto sched = run.cfg.schedule.build();
    const auto tr = translate(with_c, x, lab, target, sched, run.cfg.sampler, run.cfg.filter);
    const auto pn = partial_noise_translate(without_c, x, target, sched, run.cfg.sampler);
    const double ip_c = mean_of(identity_preservation(tr.images, tr.condition.data, run.cfg.filter));
    const double ip_p = mean_of(identity_preservation(pn, tr.condition.data, run.cfg.filter));
    std::ofstream f(run.metrics() / "condition_ablation.csv");
    f << "method,identity_preservation\n" << std::setprecision(6) << "condition," << ip_c << "\npartial_noise," << ip_p << '\n';
    spdlog::info("identity preservation: with condition {:.3f}, partial noise {:.3f}", ip_c, ip_p);

    std::vector<TensorF> tiles;
    for (int i = 0; i < std::min(8, n); ++i) {
        tiles.push_back(item(x.data, i));
        tiles.push_back(item(tr.images.data, i));
        tiles.push_back(item(pn.data, i));
    }
    save_canvas(run.images() / "condition_ablation.png", plot::tile_grid(tiles, 3));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vidiff: visible-infrared diffusion toolkit"};
    app.require_subcommand(1);
    Common common;

    auto* synth = app.add_subcommand("synth", "Render a synthetic single-modality-labeled dataset");
    add_common(synth, common);
    std::optional<int> n_ids, per_id;
    std::optional<double> overlap;
    synth->add_option("--n-ids", n_ids, "Number of identities");
    synth->add_option("--per-id", per_id, "Images per identity and modality");
    synth->add_option("--id-overlap", overlap, "Fraction of identities present in both modalities");

    std::string data_flag;
    auto* train_diff = app.add_subcommand("train-diff", "Train the diffusion model");
    add_common(train_diff, common);
    std::optional<int> steps;
    train_diff->add_option("--data", data_flag, "Dataset directory (default: <run>/data)");
    train_diff->add_option("--steps", steps, "Training steps");

    TranslateFlags tfl;
    std::optional<double> guidance;
    std::optional<int> ddim_steps, count;
    auto* translate_cmd = app.add_subcommand("translate", "Translate source images to the other modality");
    add_common(translate_cmd, common);
    translate_cmd->add_option("--data", tfl.data, "Dataset directory (default: <run>/data)");
    translate_cmd->add_option("--ckpt", tfl.ckpt, "Diffusion checkpoint (default: <run>/ckpt/final.vdck)");
    translate_cmd->add_option("--target", tfl.target, "Target modality (default: the unlabeled one)");
    translate_cmd->add_option("-w,--guidance", guidance, "Guidance weight");
    translate_cmd->add_option("--ddim-steps", ddim_steps, "DDIM steps");
    translate_cmd->add_option("--count", count, "Number of source images (0: all)");

    ReidFlags rfl;
    auto* train_reid_cmd = app.add_subcommand("train-reid", "Train the ReID classifier on real and generated images");
    add_common(train_reid_cmd, common);
    train_reid_cmd->add_option("--data", rfl.data, "Dataset directory (default: <run>/data)");
    train_reid_cmd->add_option("--generated", rfl.generated, "Generated image directory (default: <run>/images/translated)");
    train_reid_cmd->add_flag("--no-generated", rfl.no_generated, "Train on real images only");
    train_reid_cmd->add_option("--mode", rfl.mode, "Label mode: ce, gce, lsr or gce+lsr");

    std::string reid_ckpt;
    int test_per_id = 4;
    auto* eval_cmd = app.add_subcommand("eval", "Cross-modality retrieval on held-out renders");
    add_common(eval_cmd, common);
    eval_cmd->add_option("--ckpt", reid_ckpt, "ReID checkpoint (default: <run>/ckpt/reid.json)");
    eval_cmd->add_option("--per-id", test_per_id, "Held-out images per identity and modality")->check(CLI::PositiveNumber);

    int gap_count = 500;
    auto* gap_cmd = app.add_subcommand("gap-plot", "Modality gap of condition images against low-pass references");
    add_common(gap_cmd, common);
    gap_cmd->add_option("--data", data_flag, "Dataset directory (default: fresh renders)");
    gap_cmd->add_option("--count", gap_count, "Images per modality when rendering")->check(CLI::PositiveNumber);

    std::string generated_flag, no_cond_ckpt;
    auto* ablate_cmd = app.add_subcommand("ablate", "GCE/LSR grid and the condition ablation");
    add_common(ablate_cmd, common);
    ablate_cmd->add_option("--data", data_flag, "Dataset directory (default: <run>/data)");
    ablate_cmd->add_option("--generated", generated_flag, "Generated image directory (default: <run>/images/translated)");
    ablate_cmd->add_option("--no-cond-ckpt", no_cond_ckpt, "Checkpoint of a model trained without the condition");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        std::vector<std::pair<std::string, json>> flags;
        if (n_ids) flags.emplace_back("dataset.n_ids", *n_ids);
        if (per_id) flags.emplace_back("dataset.per_id", *per_id);
        if (overlap) flags.emplace_back("dataset.id_overlap", *overlap);
        if (steps) flags.emplace_back("train.steps", *steps);
        if (guidance) flags.emplace_back("sampler.guidance_weight", *guidance);
        if (ddim_steps) flags.emplace_back("sampler.ddim_steps", *ddim_steps);
        if (count) flags.emplace_back("eval.translate_count", *count);
        if (!rfl.mode.empty()) flags.emplace_back("labels.mode", rfl.mode);

        CLI::App* cmd = app.get_subcommands().front();
        const std::string name = cmd->get_name();
        Run run = open_run(name, resolve_config(common, flags));

        if (name == "synth") cmd_synth(run);
        else if (name == "train-diff") cmd_train_diff(run, data_flag);
        else if (name == "translate") cmd_translate(run, tfl);
        else if (name == "train-reid") cmd_train_reid(run, rfl);
        else if (name == "eval") cmd_eval(run, reid_ckpt, test_per_id);
        else if (name == "gap-plot") cmd_gap_plot(run, data_flag, gap_count);
        else if (name == "ablate") cmd_ablate(run, data_flag, generated_flag, no_cond_ckpt);
        spdlog::info("{} finished", name);
        return 0;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: invalid config at '%s': %s\n", e.key().empty() ? "<unknown>" : e.key().c_str(),
                     e.what());
        return 2;
    } catch (const MissingArtifact& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
