#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "segmil/milmodel.hpp"

namespace segmil {

struct Checkpoint {
  ModelParams params;
  std::vector<std::string> concept_names;
};

/// One JSON header line (model config, concept names and a tensor manifest
/// of name/shape/offset), then the tensors as a flat little-endian float64
/// blob. Output bytes depend only on the arguments.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace segmil
