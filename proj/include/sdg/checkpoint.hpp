#pragma once

#include <filesystem>
#include <memory>

#include "sdg/model.hpp"

namespace sdg {

// Binary container: magic, version, model config text and its hash, then
// (name, shape, float32 little-endian payload) per parameter.
void save_checkpoint(const std::filesystem::path& path, const SDGModel<float>& model);

// Throws IoError on read failure and CheckpointMismatch when the stored hash
// or any parameter shape disagrees with the stored config.
std::unique_ptr<SDGModel<float>> load_checkpoint(const std::filesystem::path& path);

}  // namespace sdg
