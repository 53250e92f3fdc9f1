#include "segmil/bagbuild.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "segmil/error.hpp"

namespace segmil {

void BuildConfig::validate() const {
  if (k_top < 1) throw ConfigError("k_top must be >= 1");
  if (!(tau_iou > 0.0 && tau_iou <= 1.0)) throw ConfigError("tau_iou must lie in (0, 1]");
  if (tau_minpix < 1) throw ConfigError("tau_minpix must be >= 1");
  if (!(rho_max > 0.0 && rho_max <= 1.0)) throw ConfigError("rho_max must lie in (0, 1]");
  if (bag_size < 1) throw ConfigError("bag_size must be >= 1");
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double mx = *std::max_element(p.begin(), p.end());
  double sum = 0.0;
  for (double& x : p) sum += (x = std::exp(x - mx));
  for (double& x : p) x /= sum;
  return p;
}

std::vector<int> select_top_concepts(std::span<const double> sims, int k_top) {
  if (k_top < 1 || static_cast<std::size_t>(k_top) > sims.size())
    throw ConfigError("k_top " + std::to_string(k_top) + " outside [1, " + std::to_string(sims.size()) + "]");
  for (double s : sims)
    if (!std::isfinite(s)) throw SchemaError("image similarities must be finite");
  std::vector<int> order(sims.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sims[a] > sims[b]; });
  order.resize(static_cast<std::size_t>(k_top));
  return order;
}

std::vector<RawDetection> filter_masks(std::span<const RawDetection> dets, int height, int width,
                                       const BuildConfig& cfg) {
  const double max_area = cfg.rho_max * double(height) * double(width);
  std::vector<RawDetection> kept;
  for (const auto& d : dets) {
    if (d.mask.height() != height || d.mask.width() != width)
      throw SchemaError("detection mask does not match image size");
    const auto area = d.mask.area();
    if (area >= cfg.tau_minpix && double(area) <= max_area) kept.push_back(d);
  }
  return kept;
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  const auto uni = a.union_area(b);
  if (uni == 0) return 0.0;
  return double(a.intersection_area(b)) / double(uni);
}

namespace {

class DisjointSet {
 public:
  explicit DisjointSet(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) x = parent_[x] = parent_[parent_[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

BBox box_union(const BBox& a, const BBox& b) {
  return {std::min(a.x_min, b.x_min), std::min(a.y_min, b.y_min), std::max(a.x_max, b.x_max),
          std::max(a.y_max, b.y_max)};
}

MergedDetection singleton(const RawDetection& d, std::size_t index) {
  return {d.mask, d.bbox, {d.concept_id}, d.clip_scores, d.embedding, d.detection_score, {index}};
}

/// The original member whose embedding a group carries.
struct Representative {
  std::int64_t area;
  std::size_t index;
  bool beats(const Representative& o) const { return area > o.area || (area == o.area && index < o.index); }
};

/// Folds `src` into `dst`; the embedding follows the larger original member.
void absorb(MergedDetection& dst, Representative& rep, const MergedDetection& src, const Representative& src_rep) {
  dst.mask |= src.mask;
  dst.bbox = box_union(dst.bbox, src.bbox);
  dst.concept_ids.insert(dst.concept_ids.end(), src.concept_ids.begin(), src.concept_ids.end());
  std::sort(dst.concept_ids.begin(), dst.concept_ids.end());
  dst.concept_ids.erase(std::unique(dst.concept_ids.begin(), dst.concept_ids.end()), dst.concept_ids.end());
  if (dst.clip_scores.size() == src.clip_scores.size()) {
    for (std::size_t k = 0; k < dst.clip_scores.size(); ++k)
      dst.clip_scores[k] = std::max(dst.clip_scores[k], src.clip_scores[k]);
  } else if (dst.clip_scores.empty()) {
    dst.clip_scores = src.clip_scores;
  }
  if (src_rep.beats(rep)) {
    dst.embedding = src.embedding;
    rep = src_rep;
  }
  dst.detection_score = std::max(dst.detection_score, src.detection_score);
  dst.members.insert(dst.members.end(), src.members.begin(), src.members.end());
  std::sort(dst.members.begin(), dst.members.end());
}

}  // namespace

std::vector<MergedDetection> merge_overlapping(std::span<const RawDetection> dets, double tau_iou) {
  std::vector<MergedDetection> groups;
  std::vector<Representative> rep;
  groups.reserve(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (i > 0 && !dets[i].mask.same_shape(dets[0].mask)) throw SchemaError("mask dimension mismatch");
    groups.push_back(singleton(dets[i], i));
    rep.push_back({dets[i].mask.area(), i});
  }

  for (;;) {
    const std::size_t n = groups.size();
    DisjointSet ds(n);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b)
        if (mask_iou(groups[a].mask, groups[b].mask) > tau_iou) ds.unite(a, b);

    std::vector<MergedDetection> next;
    std::vector<Representative> next_rep;
    std::vector<std::size_t> slot(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t root = ds.find(i);
      if (slot[root] == n) {
        slot[root] = next.size();
        next.push_back(groups[i]);
        next_rep.push_back(rep[i]);
      } else {
        absorb(next[slot[root]], next_rep[slot[root]], groups[i], rep[i]);
      }
    }
    const bool stable = next.size() == n;
    groups = std::move(next);
    rep = std::move(next_rep);
    if (stable) break;
  }

  std::vector<std::int64_t> areas(groups.size());
  for (std::size_t i = 0; i < groups.size(); ++i) areas[i] = groups[i].mask.area();
  std::vector<std::size_t> order(groups.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (areas[a] != areas[b]) return areas[a] > areas[b];
    return groups[a].members.front() < groups[b].members.front();
  });
  std::vector<MergedDetection> out;
  out.reserve(groups.size());
  for (auto i : order) out.push_back(std::move(groups[i]));
  return out;
}

Bag assemble_bag(const ImageContext& image, std::span<const MergedDetection> merged,
                 std::span<const std::vector<double>> per_instance_clip, const BuildConfig& cfg) {
  if (merged.size() != per_instance_clip.size())
    throw SchemaError("assemble_bag: " + std::to_string(merged.size()) + " detections but " +
                      std::to_string(per_instance_clip.size()) + " clip vectors");
  Bag bag{image.image_id, image.label, image.group_id, {}};

  if (merged.empty()) {
    if (image.image_embedding.empty())
      throw SchemaError("image " + image.image_id + ": no detections and no image_embedding for the fallback instance");
    Instance whole;
    whole.embedding = image.image_embedding;
    whole.clip_scores = image.image_clip;
    whole.bbox = BBox{0, 0, double(image.width), double(image.height)};
    whole.mask_area = std::int64_t{image.height} * image.width;
    bag.instances.push_back(std::move(whole));
    return bag;
  }

  std::vector<std::size_t> order(merged.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::int64_t> areas(merged.size());
  for (std::size_t i = 0; i < merged.size(); ++i) areas[i] = merged[i].mask.area();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return areas[a] > areas[b]; });
  if (order.size() > static_cast<std::size_t>(cfg.bag_size)) order.resize(static_cast<std::size_t>(cfg.bag_size));

  for (auto i : order) {
    const auto& m = merged[i];
    if (m.embedding.empty())
      throw SchemaError("image " + image.image_id + ": merged segment " + std::to_string(i) + " has no embedding");
    Instance inst;
    inst.embedding = m.embedding;
    inst.clip_scores = per_instance_clip[i];
    inst.concept_ids = m.concept_ids;
    inst.bbox = m.bbox;
    inst.mask_area = areas[i];
    bag.instances.push_back(std::move(inst));
  }
  return bag;
}

BuildResult build_bag(const ImageContext& image, std::span<const double> image_similarities,
                      std::span<const RawDetection> detections, const BuildConfig& cfg) {
  cfg.validate();
  BuildResult result;
  result.counts.detections = detections.size();

  // A vocabulary smaller than k_top keeps every concept.
  const int k = std::min<int>(cfg.k_top, static_cast<int>(image_similarities.size()));
  const auto top = select_top_concepts(image_similarities, k);
  std::vector<RawDetection> selected;
  for (const auto& d : detections)
    if (std::find(top.begin(), top.end(), d.concept_id) != top.end()) selected.push_back(d);
  result.counts.after_top_k = selected.size();

  const auto filtered = filter_masks(selected, image.height, image.width, cfg);
  result.counts.after_filter = filtered.size();

  const auto merged = merge_overlapping(filtered, cfg.tau_iou);
  result.counts.merged = merged.size();

  std::vector<std::vector<double>> clips;
  clips.reserve(merged.size());
  for (const auto& m : merged) clips.push_back(m.clip_scores.empty() ? image.image_clip : m.clip_scores);

  result.bag = assemble_bag(image, merged, clips, cfg);
  result.counts.kept = merged.empty() ? 0 : result.bag.instances.size();
  result.counts.fallback = merged.empty();
  return result;
}

}  // namespace segmil
