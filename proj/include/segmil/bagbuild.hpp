#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "segmil/bagio.hpp"
#include "segmil/mask.hpp"

namespace segmil {

/// Knobs for turning raw detections into a bag.
struct BuildConfig {
  int k_top = 10;          // concepts kept per image
  double tau_iou = 0.5;    // merge when IoU strictly exceeds this
  int tau_minpix = 100;    // smallest mask kept, inclusive
  double rho_max = 0.5;    // largest mask kept, as a fraction of H*W, inclusive
  int bag_size = 15;       // N_s cap; largest merged segments win

  /// Throws ConfigError when a field is out of range.
  void validate() const;
};

/// One detector hit: a single concept with its box and segment mask. The
/// embedding and clip_scores travel with it when the producer computed them.
struct RawDetection {
  int concept_id = 0;
  BBox bbox;
  BinaryMask mask;
  double detection_score = 0.0;
  std::vector<double> embedding;
  std::vector<double> clip_scores;
};

/// A connected component of overlapping detections.
struct MergedDetection {
  BinaryMask mask;
  BBox bbox;
  std::vector<int> concept_ids;     // sorted, unique
  std::vector<double> clip_scores;  // element-wise max over members (empty if none carried)
  std::vector<double> embedding;    // taken from the largest member, never averaged
  double detection_score = 0.0;     // max over members
  std::vector<std::size_t> members; // indices into the merge input, ascending
};

std::vector<double> softmax(std::span<const double> logits);

/// Indices of the k_top most similar concepts, descending; ties go to the
/// lower concept id. Ranking is done on the raw similarities, which orders
/// identically to their softmax.
std::vector<int> select_top_concepts(std::span<const double> image_similarities, int k_top);

/// Keeps detections whose mask area lies in [tau_minpix, rho_max * H * W].
std::vector<RawDetection> filter_masks(std::span<const RawDetection> dets, int height, int width,
                                       const BuildConfig& cfg);

/// |a & b| / |a | b|, or 0 when both are empty.
double mask_iou(const BinaryMask& a, const BinaryMask& b);

/// Groups detections into connected components of the "IoU > tau_iou" graph.
/// Components are re-checked against each other until no further merge
/// applies, so the result is a fixed point. Output is ordered by descending
/// merged area, ties by smallest member index.
std::vector<MergedDetection> merge_overlapping(std::span<const RawDetection> dets, double tau_iou);

/// Image-level facts needed to assemble a bag (and its fallback instance).
struct ImageContext {
  std::string image_id;
  int label = 0;
  std::optional<int> group_id;
  int height = 0;
  int width = 0;
  std::vector<double> image_clip;       // softmax-normalized image/concept similarities
  std::vector<double> image_embedding;  // whole-image embedding for the fallback instance
};

/// One instance per merged detection, capped at cfg.bag_size by descending
/// mask area. An empty `merged` yields a single whole-image instance.
Bag assemble_bag(const ImageContext& image, std::span<const MergedDetection> merged,
                 std::span<const std::vector<double>> per_instance_clip, const BuildConfig& cfg);

struct BuildCounts {
  std::size_t detections = 0;
  std::size_t after_top_k = 0;
  std::size_t after_filter = 0;
  std::size_t merged = 0;
  std::size_t kept = 0;
  bool fallback = false;
};

struct BuildResult {
  Bag bag;
  BuildCounts counts;
};

/// Runs top-K selection (k_top capped at C), filtering, merging and assembly
/// for one image.
BuildResult build_bag(const ImageContext& image, std::span<const double> image_similarities,
                      std::span<const RawDetection> detections, const BuildConfig& cfg);

}  // namespace segmil
