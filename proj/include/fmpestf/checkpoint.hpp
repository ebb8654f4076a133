#pragma once

#include <filesystem>
#include <iosfwd>

#include "fmpestf/model.hpp"

namespace fmpestf {

inline constexpr const char* kCheckpointHeader = "FMPESTF-CKPT-v1";

// Header line, then JSON with the model config, normalizer and every
// parameter as {id, shape, values}.
void write_checkpoint(std::ostream& out, const FmpestfModel& model);
void save_checkpoint(const std::filesystem::path& path, const FmpestfModel& model);

// Builds a model from the stored config and fills in the stored values.
FmpestfModel read_checkpoint(std::istream& in);
FmpestfModel load_checkpoint(const std::filesystem::path& path);

// Loads into an existing model. A config mismatch raises ConfigError naming
// the differing fields.
void load_checkpoint_into(const std::filesystem::path& path, FmpestfModel& model);

}  // namespace fmpestf
