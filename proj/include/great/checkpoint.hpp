#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "great/net.hpp"

namespace great {

// Checkpoint file layout:
//   8-byte magic "GREATCK1"
//   uint32 little-endian header length
//   JSON header: {"seed", "step", "models": [{"role", "descriptor",
//                 "params": [{"name", "shape", "offset"}]}]}
//   raw 64-bit little-endian floats, offsets counted in doubles
struct Checkpoint {
    std::vector<std::pair<std::string, Model>> models;  // role -> model
    std::uint64_t seed = 0;
    std::int64_t step = 0;

    Model& find(const std::string& role);
};

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const Model*>>& models,
                     std::uint64_t seed, std::int64_t step);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace great
