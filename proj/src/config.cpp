#include "vidiff/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace vidiff {

namespace {

std::string join(const std::string& path, std::string_view key) {
    return path.empty() ? std::string(key) : path + "." + std::string(key);
}

// Typed view of one JSON object that remembers which keys were consumed.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("expected a table", path_.empty() ? "<root>" : path_);
    }

    bool has(std::string_view key) const { return j_.contains(key); }

    template <typename T>
    void get(std::string_view key, T& out) {
        if (!j_.contains(key)) return;
        seen_.insert(std::string(key));
        const std::string p = join(path_, key);
        const json& v = j_.at(key);
        try {
            read(v, out, p);
        } catch (const json::exception& e) {
            throw ConfigError(std::string("invalid value: ") + e.what(), p);
        }
    }

    Section sub(std::string_view key) {
        seen_.insert(std::string(key));
        static const json empty = json::object();
        return Section(j_.contains(key) ? j_.at(key) : empty, join(path_, key));
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw ConfigError("unknown key", join(path_, k));
    }

private:
    static void read(const json& v, int& out, const std::string& p) {
        if (!v.is_number_integer()) throw ConfigError("expected an integer", p);
        out = v.get<int>();
    }
    static void read(const json& v, std::uint64_t& out, const std::string& p) {
        if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
            throw ConfigError("expected a non-negative integer", p);
        out = v.get<std::uint64_t>();
    }
    static void read(const json& v, double& out, const std::string& p) {
        if (!v.is_number()) throw ConfigError("expected a number", p);
        out = v.get<double>();
    }
    static void read(const json& v, bool& out, const std::string& p) {
        if (!v.is_boolean()) throw ConfigError("expected true or false", p);
        out = v.get<bool>();
    }
    static void read(const json& v, std::string& out, const std::string& p) {
        if (!v.is_string()) throw ConfigError("expected a string", p);
        out = v.get<std::string>();
    }
    static void read(const json& v, std::vector<int>& out, const std::string& p) {
        if (!v.is_array()) throw ConfigError("expected a list of integers", p);
        out.clear();
        for (const auto& x : v) {
            if (!x.is_number_integer()) throw ConfigError("expected a list of integers", p);
            out.push_back(x.get<int>());
        }
    }
    static void read(const json& v, std::optional<int>& out, const std::string& p) {
        if (v.is_null()) {
            out.reset();
            return;
        }
        int x = 0;
        read(v, x, p);
        out = x;
    }
    template <typename E>
    static void read_enum(const json& v, E& out, const std::string& p, E (*parse)(std::string_view)) {
        if (!v.is_string()) throw ConfigError("expected a string", p);
        try {
            out = parse(v.get<std::string>());
        } catch (const ConfigError& e) {
            throw ConfigError(e.what(), p);
        }
    }
    static void read(const json& v, Modality& out, const std::string& p) { read_enum(v, out, p, parse_modality); }
    static void read(const json& v, FilterKind& out, const std::string& p) { read_enum(v, out, p, parse_filter_kind); }
    static void read(const json& v, SigmaMode& out, const std::string& p) { read_enum(v, out, p, parse_sigma_mode); }
    static void read(const json& v, LabelMode& out, const std::string& p) { read_enum(v, out, p, parse_label_mode); }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void read_model(Section s, DenoiserConfig& m) {
    s.get("base_channels", m.base_channels);
    s.get("channel_multipliers", m.channel_multipliers);
    s.get("attention_levels", m.attention_levels);
    s.get("num_res_blocks", m.num_res_blocks);
    s.get("height", m.height);
    s.get("width", m.width);
    s.get("image_channels", m.image_channels);
    s.get("use_condition", m.use_condition);
    s.get("embedding_dim", m.embedding_dim);
    s.get("norm_groups", m.norm_groups);
    s.finish();
}

// Re-tags a section validation failure with its path prefix.
template <typename F>
void with_prefix(const std::string& prefix, F&& f) {
    try {
        f();
    } catch (const ConfigError& e) {
        std::string key = e.key();
        const auto dot = key.find('.');
        if (dot != std::string::npos) key = key.substr(dot + 1);
        throw ConfigError(e.what(), key.empty() ? prefix : prefix + "." + key);
    }
}

}  // namespace

void RunConfig::validate() const {
    if (name.empty() || name.find('/') != std::string::npos)
        throw ConfigError("run name must be non-empty and contain no '/'", "name");
    with_prefix("dataset", [&] { dataset.validate(); });
    if (dataset.render.height != model.height || dataset.render.width != model.width)
        throw ConfigError("dataset image size must match the model", "dataset.height");
    with_prefix("model", [&] { model.validate(); });
    with_prefix("schedule", [&] { schedule.build(); });
    with_prefix("filter", [&] { filter.validate(); });
    with_prefix("train", [&] { train.validate(); });
    with_prefix("sampler", [&] { sampler.validate(schedule.T); });
    try {
        reid.gce.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(e.what(), "labels.gce_q");
    }
    if (!(reid.lsr.alpha >= 0.0 && reid.lsr.alpha < 1.0))
        throw ConfigError("lsr alpha must lie in [0, 1)", "labels.lsr_alpha");
    with_prefix("reid", [&] { reid.validate(); });
    for (int k : eval.ranks)
        if (k < 1) throw ConfigError("ranks must be >= 1", "eval.ranks");
    if (!(eval.label_noise >= 0.0 && eval.label_noise < 1.0))
        throw ConfigError("label_noise must lie in [0, 1)", "eval.label_noise");
    if (eval.translate_count < 0) throw ConfigError("translate_count must be >= 0", "eval.translate_count");
}

RunConfig parse_run_config(const json& j) {
    RunConfig c;
    Section root(j, "");
    root.get("name", c.name);
    root.get("output_dir", c.output_dir);
    root.get("seed", c.seed);
    c.dataset.seed = c.train.seed = c.sampler.seed = c.reid.seed = c.seed;

    {
        Section s = root.sub("dataset");
        s.get("n_ids", c.dataset.n_ids);
        s.get("per_id", c.dataset.per_id);
        s.get("labeled_modality", c.dataset.labeled_modality);
        s.get("id_overlap", c.dataset.id_overlap);
        s.get("seed", c.dataset.seed);
        s.get("height", c.dataset.render.height);
        s.get("width", c.dataset.render.width);
        s.get("illumination_jitter", c.dataset.render.illumination_jitter);
        s.get("ir_noise_std", c.dataset.render.ir_noise_std);
        s.get("ir_gamma", c.dataset.render.ir_gamma);
        s.finish();
    }
    read_model(root.sub("model"), c.model);
    {
        Section s = root.sub("schedule");
        s.get("T", c.schedule.T);
        s.get("alpha_start", c.schedule.alpha_start);
        s.get("alpha_end", c.schedule.alpha_end);
        s.finish();
    }
    {
        Section s = root.sub("filter");
        s.get("kind", c.filter.kind);
        s.get("sigma", c.filter.sigma);
        s.get("normalize", c.filter.normalize);
        s.finish();
    }
    {
        Section s = root.sub("train");
        auto& t = c.train;
        s.get("steps", t.steps);
        s.get("batch_size", t.batch_size);
        s.get("learning_rate", t.learning_rate);
        s.get("weight_decay", t.weight_decay);
        s.get("beta1", t.beta1);
        s.get("beta2", t.beta2);
        s.get("adam_eps", t.adam_eps);
        s.get("grad_clip", t.grad_clip);
        s.get("p_uncond", t.p_uncond);
        s.get("seed", t.seed);
        s.get("lr_schedule", t.lr_schedule);
        s.get("warmup_steps", t.warmup_steps);
        s.get("ema_decay", t.ema_decay);
        s.get("checkpoint_every", t.checkpoint_every);
        s.finish();
    }
    {
        Section s = root.sub("sampler");
        s.get("guidance_weight", c.sampler.guidance_weight);
        s.get("sigma_mode", c.sampler.sigma_mode);
        s.get("ddim_steps", c.sampler.ddim_steps);
        s.get("clip_x0", c.sampler.clip_x0);
        s.get("seed", c.sampler.seed);
        s.finish();
    }
    {
        Section s = root.sub("labels");
        s.get("mode", c.reid.mode);
        s.get("gce_q", c.reid.gce.q);
        s.get("lsr_alpha", c.reid.lsr.alpha);
        s.finish();
    }
    {
        Section s = root.sub("reid");
        auto& r = c.reid;
        s.get("steps", r.steps);
        s.get("batch_size", r.batch_size);
        s.get("learning_rate", r.learning_rate);
        s.get("weight_decay", r.weight_decay);
        s.get("embedding_dim", r.embedding_dim);
        s.get("width", r.width);
        s.get("num_classes", r.num_classes);
        s.get("seed", r.seed);
        s.finish();
    }
    {
        Section s = root.sub("eval");
        s.get("ranks", c.eval.ranks);
        s.get("label_noise", c.eval.label_noise);
        s.get("translate_count", c.eval.translate_count);
        s.finish();
    }
    root.finish();
    c.train.schedule = c.schedule;
    c.train.filter = c.filter;
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(f, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("cannot parse config: ") + e.what(), "<root>");
    }
    return parse_run_config(j);
}

json to_json(const DenoiserConfig& m) {
    return json{{"base_channels", m.base_channels},   {"channel_multipliers", m.channel_multipliers},
                {"attention_levels", m.attention_levels}, {"num_res_blocks", m.num_res_blocks},
                {"height", m.height},                 {"width", m.width},
                {"image_channels", m.image_channels}, {"use_condition", m.use_condition},
                {"embedding_dim", m.embedding_dim},   {"norm_groups", m.norm_groups}};
}

DenoiserConfig denoiser_config_from_json(const json& j, const std::string& path) {
    DenoiserConfig m;
    read_model(Section(j, path), m);
    return m;
}

json to_json(const RunConfig& c) {
    json j;
    j["name"] = c.name;
    j["output_dir"] = c.output_dir;
    j["seed"] = c.seed;
    j["dataset"] = {{"n_ids", c.dataset.n_ids},
                    {"per_id", c.dataset.per_id},
                    {"labeled_modality", to_string(c.dataset.labeled_modality)},
                    {"id_overlap", c.dataset.id_overlap},
                    {"seed", c.dataset.seed},
                    {"height", c.dataset.render.height},
                    {"width", c.dataset.render.width},
                    {"illumination_jitter", c.dataset.render.illumination_jitter},
                    {"ir_noise_std", c.dataset.render.ir_noise_std},
                    {"ir_gamma", c.dataset.render.ir_gamma}};
    j["model"] = to_json(c.model);
    j["schedule"] = {{"T", c.schedule.T}, {"alpha_start", c.schedule.alpha_start}, {"alpha_end", c.schedule.alpha_end}};
    j["filter"] = {{"kind", to_string(c.filter.kind)}, {"sigma", c.filter.sigma}, {"normalize", c.filter.normalize}};
    const auto& t = c.train;
    j["train"] = {{"steps", t.steps},
                  {"batch_size", t.batch_size},
                  {"learning_rate", t.learning_rate},
                  {"weight_decay", t.weight_decay},
                  {"beta1", t.beta1},
                  {"beta2", t.beta2},
                  {"adam_eps", t.adam_eps},
                  {"grad_clip", t.grad_clip},
                  {"p_uncond", t.p_uncond},
                  {"seed", t.seed},
                  {"lr_schedule", t.lr_schedule},
                  {"warmup_steps", t.warmup_steps},
                  {"ema_decay", t.ema_decay},
                  {"checkpoint_every", t.checkpoint_every}};
    j["sampler"] = {{"guidance_weight", c.sampler.guidance_weight},
                    {"sigma_mode", to_string(c.sampler.sigma_mode)},
                    {"ddim_steps", c.sampler.ddim_steps ? json(*c.sampler.ddim_steps) : json(nullptr)},
                    {"clip_x0", c.sampler.clip_x0},
                    {"seed", c.sampler.seed}};
    j["labels"] = {{"mode", to_string(c.reid.mode)}, {"gce_q", c.reid.gce.q}, {"lsr_alpha", c.reid.lsr.alpha}};
    const auto& r = c.reid;
    j["reid"] = {{"steps", r.steps},
                 {"batch_size", r.batch_size},
                 {"learning_rate", r.learning_rate},
                 {"weight_decay", r.weight_decay},
                 {"embedding_dim", r.embedding_dim},
                 {"width", r.width},
                 {"num_classes", r.num_classes},
                 {"seed", r.seed}};
    j["eval"] = {{"ranks", c.eval.ranks},
                 {"label_noise", c.eval.label_noise},
                 {"translate_count", c.eval.translate_count}};
    return j;
}

void save_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write config " + path.string());
    f << to_json(cfg).dump(2) << '\n';
}

void apply_override(json& tree, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0)
        throw ConfigError("override must look like section.key=value", std::string(assignment));
    const std::string key(assignment.substr(0, eq));
    const std::string text(assignment.substr(eq + 1));
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }
    json* node = &tree;
    std::istringstream parts(key);
    std::string part;
    std::vector<std::string> path;
    while (std::getline(parts, part, '.')) path.push_back(part);
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
        json& next = (*node)[path[i]];
        if (next.is_null()) next = json::object();
        if (!next.is_object()) throw ConfigError("not a table", key);
        node = &next;
    }
    (*node)[path.back()] = value;
}

}  // namespace vidiff
