#include "vidiff/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "vidiff/config.hpp"

namespace vidiff {

namespace {

constexpr std::array<char, 8> kMagic{'V', 'D', 'C', 'K', 'P', 'T', '0', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    json table = json::array();
    for (const auto& [name, t] : ckpt.params) table.push_back({{"name", name}, {"shape", t.shape()}});
    const json manifest{{"config", to_json(ckpt.config)},
                        {"config_hash", ckpt.manifest.config_hash},
                        {"step", ckpt.manifest.step},
                        {"seed", ckpt.manifest.seed},
                        {"arrays", table}};
    const std::string text = manifest.dump();
    const std::uint64_t len = text.size();

    const auto tmp = std::filesystem::path(path).concat(".tmp");
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw IoError("cannot write checkpoint " + path.string());
        f.write(kMagic.data(), kMagic.size());
        f.write(reinterpret_cast<const char*>(&len), sizeof len);
        f.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& [name, t] : ckpt.params)
            f.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
        if (!f) throw IoError("failed writing checkpoint " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint not found: " + path.string());
    std::array<char, 8> magic{};
    std::uint64_t len = 0;
    f.read(magic.data(), magic.size());
    f.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!f || magic != kMagic) throw IoError(path.string() + " is not a checkpoint");
    if (len > (1u << 26)) throw IoError(path.string() + ": implausible manifest length");
    std::string text(len, '\0');
    f.read(text.data(), static_cast<std::streamsize>(len));
    if (!f) throw IoError(path.string() + ": truncated manifest");

    Checkpoint c;
    try {
        const json m = json::parse(text);
        c.config = denoiser_config_from_json(m.at("config"));
        c.manifest.config_hash = m.at("config_hash").get<std::string>();
        c.manifest.step = m.at("step").get<long>();
        c.manifest.seed = m.at("seed").get<std::uint64_t>();
        for (const auto& a : m.at("arrays")) {
            TensorF t(a.at("shape").get<Shape>());
            f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
            if (!f) throw IoError(path.string() + ": truncated array " + a.at("name").get<std::string>());
            c.params.emplace(a.at("name").get<std::string>(), std::move(t));
        }
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": malformed manifest (" + e.what() + ")");
    } catch (const ConfigError& e) {
        throw IoError(path.string() + ": invalid model config (" + e.what() + ")");
    }
    if (c.manifest.config_hash != c.config.hash()) throw IoError(path.string() + ": config hash mismatch");
    return c;
}

}  // namespace vidiff
