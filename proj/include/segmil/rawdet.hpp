#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <vector>

#include "segmil/bagbuild.hpp"
#include "segmil/bagio.hpp"

namespace segmil {

/// One image worth of detector output, as read from a rawdet file.
struct RawImage {
  ImageContext context;                   // image_clip is the softmax of `similarities`
  std::vector<double> similarities;       // raw image/concept similarities, length C
  std::vector<RawDetection> detections;
};

/// Streaming reader for the rawdet JSONL format. Line 1 is a header with
/// the same fields as a bagpack header plus "kind": "rawdet"; each further
/// line is one image:
///   {"image_id", "label", "group_id", "height", "width",
///    "image_similarities": [C], "image_embedding": [D],
///    "detections": [{"concept_id", "bbox": [x0,y0,x1,y1], "score",
///                    "mask": {"size": [H, W], "counts": [...]},
///                    "embedding": [D], "clip_scores": [C]}]}
class RawdetReader {
 public:
  explicit RawdetReader(const std::filesystem::path& path);
  const DatasetManifest& manifest() const noexcept { return manifest_; }
  std::optional<RawImage> next();

 private:
  std::ifstream in_;
  DatasetManifest manifest_;
  std::size_t line_no_ = 0;
};

void write_rawdet(const DatasetManifest& manifest, std::span<const RawImage> images,
                  const std::filesystem::path& path);

}  // namespace segmil
