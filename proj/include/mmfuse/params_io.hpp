#pragma once

#include <filesystem>
#include <memory>

#include "mmfuse/model.hpp"

namespace mmfuse {

// Checkpoint format: JSON with the model configuration and every parameter
// tensor (shape + row-major values). Values are written as doubles, which
// round-trips float parameters exactly.
void save_model(const Model<float>& model, const std::filesystem::path& path);
std::shared_ptr<Model<float>> load_model(const std::filesystem::path& path);

}  // namespace mmfuse
