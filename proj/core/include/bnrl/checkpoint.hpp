#pragma once

#include <filesystem>

#include "bnrl/nn.hpp"

namespace bnrl::nn {

/// Flat binary model container: magic "BNRL", u32 version, u32 layer count,
/// then per-layer kind tag + dimensions + little-endian f64 parameter blocks.
/// See docs/checkpoint_format.md for the exact byte layout. Round-trips are
/// bit-exact. Momentum buffers are not persisted.
void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

}  // namespace bnrl::nn
