#include "great/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace great {

using json = nlohmann::json;

namespace {
constexpr char kMagic[8] = {'G', 'R', 'E', 'A', 'T', 'C', 'K', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");
}  // namespace

Model& Checkpoint::find(const std::string& role) {
    for (auto& [r, m] : models)
        if (r == role) return m;
    throw config_error("checkpoint: no model with role '" + role + "'");
}

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const Model*>>& models,
                     std::uint64_t seed, std::int64_t step) {
    json header;
    header["seed"] = seed;
    header["step"] = step;
    header["models"] = json::array();
    std::int64_t offset = 0;
    for (const auto& [role, m] : models) {
        json jm;
        jm["role"] = role;
        jm["descriptor"] = json::parse(m->descriptor);
        jm["params"] = json::array();
        for (const auto& [name, t] : m->params) {
            jm["params"].push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
            offset += t.numel();
        }
        header["models"].push_back(std::move(jm));
    }
    const std::string htext = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw config_error("save_checkpoint: cannot open '" + path + "' for writing");
    f.write(kMagic, 8);
    const std::uint32_t hlen = static_cast<std::uint32_t>(htext.size());
    f.write(reinterpret_cast<const char*>(&hlen), 4);
    f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& [role, m] : models)
        for (const auto& [name, t] : m->params)
            f.write(reinterpret_cast<const char*>(t.values().data()),
                    static_cast<std::streamsize>(sizeof(double) * t.values().size()));
    if (!f) throw config_error("save_checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw config_error("load_checkpoint: cannot open '" + path + "'");
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
        throw config_error("load_checkpoint: '" + path + "' is not a checkpoint file");
    std::uint32_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 4);
    std::string htext(hlen, '\0');
    f.read(htext.data(), hlen);
    if (!f) throw config_error("load_checkpoint: truncated header in '" + path + "'");
    json header = json::parse(htext);

    Checkpoint ck;
    ck.seed = header.at("seed").get<std::uint64_t>();
    ck.step = header.at("step").get<std::int64_t>();
    for (const json& jm : header.at("models")) {
        Model m = build_from_descriptor(jm.at("descriptor").dump());
        for (const json& jp : jm.at("params")) {
            const std::string name = jp.at("name").get<std::string>();
            const Shape shape = jp.at("shape").get<Shape>();
            Tensor& dst = m.param(name);
            if (dst.shape != shape)
                throw config_error("load_checkpoint: shape mismatch for '" + name + "' in '" + path + "'");
        }
        ck.models.emplace_back(jm.at("role").get<std::string>(), std::move(m));
    }
    // Parameter payload follows the header in declaration order.
    for (std::size_t mi = 0; mi < ck.models.size(); ++mi) {
        Model& m = ck.models[mi].second;
        for (const json& jp : header.at("models")[mi].at("params")) {
            Tensor& dst = m.param(jp.at("name").get<std::string>());
            f.read(reinterpret_cast<char*>(dst.mutable_data().data()),
                   static_cast<std::streamsize>(sizeof(double) * dst.values().size()));
        }
    }
    if (!f) throw config_error("load_checkpoint: truncated payload in '" + path + "'");
    return ck;
}

}  // namespace great
