#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "segmil/types.hpp"

namespace segmil {

inline constexpr int kBagpackVersion = 1;

enum class Split { Train, Val, Test };

std::string to_string(Split split);
Split split_from_string(const std::string& name);

/// Pixel box (x_min, y_min, x_max, y_max).
struct BBox {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
  bool operator==(const BBox&) const = default;
};

/// One segment of an image: its backbone embedding and concept-similarity
/// targets, plus optional geometry carried through for explanations.
struct Instance {
  std::vector<double> embedding;    // length D
  std::vector<double> clip_scores;  // length C, entries >= 0
  std::vector<int> concept_ids;     // each in [0, C)
  std::optional<BBox> bbox;
  std::optional<std::int64_t> mask_area;
  bool operator==(const Instance&) const = default;
};

struct Bag {
  std::string image_id;
  int label = 0;
  std::optional<int> group_id;
  std::vector<Instance> instances;
  bool operator==(const Bag&) const = default;

  /// N_s x D matrix of instance embeddings.
  Matrix embeddings() const;
  /// N_s x C matrix of clip_scores.
  Matrix clip_matrix() const;
};

struct DatasetManifest {
  int num_classes = 2;
  int D = 0;
  int C = 0;
  std::vector<std::string> concept_names;
  Split split = Split::Train;
  bool operator==(const DatasetManifest&) const = default;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Bag> bags;
};

/// Throws SchemaError if the manifest is self-inconsistent.
void validate_manifest(const DatasetManifest& manifest);

/// Throws SchemaError naming `bag_index` and the offending field.
void validate_bag(const DatasetManifest& manifest, const Bag& bag, std::size_t bag_index);

/// Group ids must be present on every bag or on none.
void validate_group_coverage(std::span<const Bag> bags);

/// True when every bag carries a group id (and there is at least one bag).
bool has_groups(std::span<const Bag> bags);

void write_bagpack(const DatasetManifest& manifest, std::span<const Bag> bags,
                   const std::filesystem::path& path);

/// Streaming reader. The header is parsed on construction; each call to
/// next() parses and validates one record, in file order.
class BagpackReader {
 public:
  explicit BagpackReader(const std::filesystem::path& path);

  const DatasetManifest& manifest() const noexcept { return manifest_; }
  std::optional<Bag> next();

 private:
  std::ifstream in_;
  DatasetManifest manifest_;
  std::size_t line_no_ = 0;
  std::size_t bag_index_ = 0;
  int grouped_ = -1;  // -1 unknown, 0 none, 1 all
};

Dataset read_bagpack(const std::filesystem::path& path);

}  // namespace segmil
