#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vidiff/denoiser.hpp"
#include "vidiff/evalkit.hpp"
#include "vidiff/sampler.hpp"
#include "vidiff/synthdata.hpp"
#include "vidiff/trainer.hpp"

namespace vidiff {

using json = nlohmann::ordered_json;

struct EvalConfig {
    std::vector<int> ranks{1, 5, 10, 20};
    /// Symmetric label-noise rate applied to the generated stream by `ablate`.
    double label_noise = 0.2;
    /// Items translated by `translate` (0: every source image).
    int translate_count = 0;
};

/// Everything a run needs. Section seeds default to the global seed unless
/// set explicitly. `train.schedule` and `train.filter` mirror the top-level
/// `schedule` and `filter` sections.
struct RunConfig {
    std::string name = "run";
    std::string output_dir = "runs";
    std::uint64_t seed = 0;
    SynthConfig dataset;
    DenoiserConfig model;
    ScheduleConfig schedule;
    FilterConfig filter;
    TrainConfig train;
    SamplerConfig sampler;
    ReidConfig reid;
    EvalConfig eval;

    /// Validates every section; ConfigError keys are dotted paths.
    void validate() const;
};

/// Parses a config tree. Missing keys keep their defaults; unknown keys and
/// wrongly typed values throw ConfigError naming the key path.
RunConfig parse_run_config(const json& j);
RunConfig load_run_config(const std::filesystem::path& path);

json to_json(const RunConfig& cfg);
void save_run_config(const std::filesystem::path& path, const RunConfig& cfg);

/// Applies `section.key=value` overrides (value parsed as JSON, falling back
/// to a string) on top of a config tree.
void apply_override(json& tree, std::string_view assignment);

json to_json(const DenoiserConfig& cfg);
DenoiserConfig denoiser_config_from_json(const json& j, const std::string& path = "model");

}  // namespace vidiff
