#pragma once

#include <filesystem>
#include <string>

#include "unlearn/model.hpp"

namespace unlearn {

inline constexpr int kCheckpointFormatVersion = 1;

// Writes `<dir>/manifest` (key/value text) and `<dir>/params.bin` (little-endian
// float64, parameters in manifest order). Creates `dir` if needed.
void save_checkpoint(const PolicyModel& model, const std::filesystem::path& dir);

// Throws CompatibilityError-kind errors on version, name or shape mismatch.
PolicyModel load_checkpoint(const std::filesystem::path& dir);

// Stable content hash over config and parameter bytes.
std::string model_hash(const PolicyModel& model);

}  // namespace unlearn
