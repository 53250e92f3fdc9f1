#include <doctest.h>

#include <random>

#include "../oracles/oracles.hpp"
#include "segmil/bagbuild.hpp"
#include "segmil/error.hpp"

using namespace segmil;

namespace {

RawDetection det_from_cells(int H, int W, const std::vector<std::pair<int, int>>& cells, int concept_id = 0) {
  RawDetection d;
  d.concept_id = concept_id;
  d.mask = BinaryMask(H, W);
  for (auto [r, c] : cells) d.mask.set(r, c);
  d.bbox = *d.mask.bounding_box();
  return d;
}

RawDetection det_with_area(int H, int W, std::int64_t area) {
  RawDetection d;
  d.mask = BinaryMask(H, W);
  for (std::int64_t i = 0; i < area; ++i) d.mask.set(int(i / W), int(i % W));
  return d;
}

// Filled rectangle [r0, r1) x [c0, c1).
RawDetection rect(int H, int W, int r0, int c0, int r1, int c1, int concept_id = 0) {
  std::vector<std::pair<int, int>> cells;
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) cells.emplace_back(r, c);
  return det_from_cells(H, W, cells, concept_id);
}

}  // namespace

TEST_CASE("select_top_concepts examples") {
  CHECK(select_top_concepts(std::vector<double>{0.1, 0.9, 0.5}, 2) == std::vector<int>{1, 2});
  CHECK(select_top_concepts(std::vector<double>{0.4, 0.4, 0.4}, 2) == std::vector<int>{0, 1});
  CHECK(select_top_concepts(std::vector<double>{3, 1, 2, 2}, 3) == std::vector<int>{0, 2, 3});
}

TEST_CASE("select_top_concepts is shift invariant and range checked") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  for (int t = 0; t < 20; ++t) {
    std::vector<double> s(8), shifted(8);
    for (int i = 0; i < 8; ++i) s[i] = g(rng);
    for (int i = 0; i < 8; ++i) shifted[i] = s[i] + 17.25;
    CHECK(select_top_concepts(s, 5) == select_top_concepts(shifted, 5));
  }
  CHECK_THROWS_AS(select_top_concepts(std::vector<double>{1, 2}, 0), ConfigError);
  CHECK_THROWS_AS(select_top_concepts(std::vector<double>{1, 2}, 3), ConfigError);
}

TEST_CASE("filter_masks area bounds are inclusive") {
  BuildConfig cfg;
  cfg.rho_max = 0.5;
  cfg.tau_minpix = 100;
  const std::vector<RawDetection> dets{det_with_area(224, 224, 25089), det_with_area(224, 224, 99),
                                       det_with_area(224, 224, 100), det_with_area(224, 224, 25088)};
  const auto kept = filter_masks(dets, 224, 224, cfg);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].mask.area() == 100);
  CHECK(kept[1].mask.area() == 25088);
  CHECK(filter_masks(kept, 224, 224, cfg).size() == 2);
}

TEST_CASE("filter_masks rejects masks of the wrong size") {
  const std::vector<RawDetection> dets{det_with_area(10, 10, 5)};
  CHECK_THROWS_AS(filter_masks(dets, 10, 11, BuildConfig{}), SchemaError);
}

TEST_CASE("mask_iou examples") {
  const auto a = det_from_cells(3, 3, {{0, 0}, {0, 1}}).mask;
  const auto b = det_from_cells(3, 3, {{0, 1}, {0, 2}}).mask;
  const auto far = det_from_cells(3, 3, {{2, 2}}).mask;
  CHECK(mask_iou(a, a) == 1.0);
  CHECK(mask_iou(a, far) == 0.0);
  CHECK(mask_iou(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(mask_iou(a, b) == oracle::iou(oracle::to_grid(a), oracle::to_grid(b)));
  CHECK(mask_iou(BinaryMask(2, 2), BinaryMask(2, 2)) == 0.0);
  CHECK_THROWS_AS(mask_iou(BinaryMask(2, 2), BinaryMask(2, 3)), SchemaError);
}

TEST_CASE("merge of identical and disjoint masks") {
  const auto a = rect(10, 10, 0, 0, 3, 3);
  CHECK(merge_overlapping(std::vector<RawDetection>{a, a}, 0.5).size() == 1);
  const auto b = rect(10, 10, 5, 5, 8, 8);
  CHECK(merge_overlapping(std::vector<RawDetection>{a, b}, 0.5).size() == 2);
}

TEST_CASE("chain A~B, B~C with A, C disjoint merges into one component") {
  // Columns of a 10x10 grid: A = 0-2, B = 1-5, C = 3-5.
  // IoU(A,B) = 1/3, IoU(B,C) = 0.6, IoU(A,C) = 0.
  const auto A = rect(10, 10, 0, 0, 10, 3, 4);
  const auto B = rect(10, 10, 0, 1, 10, 6, 1);
  const auto C = rect(10, 10, 0, 3, 10, 6, 2);
  CHECK(mask_iou(A.mask, B.mask) == doctest::Approx(1.0 / 3.0));
  CHECK(mask_iou(B.mask, C.mask) == doctest::Approx(0.6));
  CHECK(mask_iou(A.mask, C.mask) == 0.0);

  const std::vector<RawDetection> dets{A, B, C};
  const auto merged = merge_overlapping(dets, 0.3);
  REQUIRE(merged.size() == 1);
  CHECK(merged[0].members == std::vector<std::size_t>{0, 1, 2});
  CHECK(merged[0].concept_ids == std::vector<int>{1, 2, 4});
  CHECK(merged[0].mask.area() == 60);
  CHECK(merged[0].bbox == BBox{0, 0, 6, 10});
  const auto grids = std::vector<oracle::Grid>{oracle::to_grid(A.mask), oracle::to_grid(B.mask), oracle::to_grid(C.mask)};
  CHECK(oracle::components(grids, 0.3) == std::vector<std::vector<std::size_t>>{{0, 1, 2}});

  // At 0.5 only B and C join.
  const auto half = merge_overlapping(dets, 0.5);
  REQUIRE(half.size() == 2);
  CHECK(half[0].members == std::vector<std::size_t>{1, 2});
  CHECK(half[1].members == std::vector<std::size_t>{0});
}

TEST_CASE("merged detection carries max clip scores, max score and the largest member's embedding") {
  auto a = rect(8, 8, 0, 0, 4, 4);
  auto b = rect(8, 8, 0, 0, 4, 5);
  a.clip_scores = {0.1, 0.7, 0.2};
  b.clip_scores = {0.5, 0.2, 0.3};
  a.embedding = {1, 1};
  b.embedding = {2, 2};
  a.detection_score = 0.9;
  b.detection_score = 0.4;
  const auto m = merge_overlapping(std::vector<RawDetection>{a, b}, 0.5);
  REQUIRE(m.size() == 1);
  CHECK(m[0].clip_scores == std::vector<double>{0.5, 0.7, 0.3});
  CHECK(m[0].embedding == std::vector<double>{2, 2});
  CHECK(m[0].detection_score == 0.9);
}

TEST_CASE("merge output is ordered by area, ties by smallest index") {
  const auto small = rect(10, 10, 0, 0, 1, 2);
  const auto big = rect(10, 10, 5, 5, 9, 9);
  const auto small2 = rect(10, 10, 3, 0, 4, 2);
  const auto m = merge_overlapping(std::vector<RawDetection>{small2, big, small}, 0.5);
  REQUIRE(m.size() == 3);
  CHECK(m[0].members == std::vector<std::size_t>{1});
  CHECK(m[1].members == std::vector<std::size_t>{0});
  CHECK(m[2].members == std::vector<std::size_t>{2});
}

TEST_CASE("merge is idempotent and conserves pixels on random masks") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<RawDetection> dets;
    const int n = 2 + int(rng() % 6);
    for (int i = 0; i < n; ++i) {
      const int r0 = int(rng() % 10), c0 = int(rng() % 10);
      dets.push_back(rect(12, 12, r0, c0, r0 + 1 + int(rng() % 3), c0 + 1 + int(rng() % 3), int(rng() % 4)));
    }
    const auto once = merge_overlapping(dets, 0.2);
    std::vector<RawDetection> again_in;
    for (const auto& m : once) {
      RawDetection d;
      d.mask = m.mask;
      d.bbox = m.bbox;
      again_in.push_back(d);
    }
    const auto twice = merge_overlapping(again_in, 0.2);
    REQUIRE(twice.size() == once.size());
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(twice[i].mask == once[i].mask);

    BinaryMask in_union(12, 12), out_union(12, 12);
    for (const auto& d : dets) in_union |= d.mask;
    for (const auto& m : once) out_union |= m.mask;
    CHECK(in_union == out_union);
  }
}

TEST_CASE("assemble_bag caps the bag at the largest segments") {
  ImageContext img{"im", 1, 0, 32, 32, {0.5, 0.5}, {0, 0}};
  std::vector<MergedDetection> merged;
  std::vector<std::vector<double>> clips;
  for (int i = 0; i < 20; ++i) {
    MergedDetection m;
    m.mask = BinaryMask(32, 32);
    for (int k = 0; k <= (i * 7) % 20; ++k) m.mask.set(i, k);
    m.bbox = *m.mask.bounding_box();
    m.concept_ids = {0};
    m.embedding = {double(i), 0};
    merged.push_back(m);
    clips.push_back({0.2, 0.8});
  }
  BuildConfig cfg;
  cfg.bag_size = 15;
  const Bag bag = assemble_bag(img, merged, clips, cfg);
  REQUIRE(bag.instances.size() == 15);
  std::vector<std::int64_t> areas;
  for (const auto& m : merged) areas.push_back(m.mask.area());
  std::sort(areas.rbegin(), areas.rend());
  for (std::size_t i = 0; i < 15; ++i) CHECK(*bag.instances[i].mask_area == areas[i]);

  cfg.bag_size = 25;
  CHECK(assemble_bag(img, std::span(merged).first(3), std::span(clips).first(3), cfg).instances.size() == 3);
  CHECK_THROWS_AS(assemble_bag(img, merged, std::span(clips).first(3), cfg), SchemaError);
}

TEST_CASE("empty image falls back to a whole-image instance") {
  ImageContext img{"im", 0, std::nullopt, 20, 30, {0.25, 0.75}, {1.0, 2.0}};
  const Bag bag = assemble_bag(img, {}, {}, BuildConfig{});
  REQUIRE(bag.instances.size() == 1);
  const auto& inst = bag.instances[0];
  CHECK(inst.embedding == std::vector<double>{1.0, 2.0});
  CHECK(inst.clip_scores == std::vector<double>{0.25, 0.75});
  CHECK(*inst.bbox == BBox{0, 0, 30, 20});
  CHECK(*inst.mask_area == 600);
}

TEST_CASE("build_bag runs selection, filtering and merging") {
  const int H = 20, W = 20;
  ImageContext img{"im", 1, std::nullopt, H, W, {}, {9, 9}};
  const std::vector<double> sims{2.0, 1.0, -3.0};
  img.image_clip = softmax(sims);
  auto d0 = rect(H, W, 0, 0, 10, 10, 0);   // kept
  auto d1 = rect(H, W, 0, 0, 10, 11, 1);   // merges with d0
  auto d2 = rect(H, W, 12, 12, 14, 14, 1); // 4 pixels: filtered
  auto d3 = rect(H, W, 10, 0, 20, 10, 2);  // concept not in top-2
  for (auto* d : {&d0, &d1, &d2, &d3}) d->embedding = {1, 2};
  d0.clip_scores = {0.6, 0.3, 0.1};
  d1.clip_scores = {0.2, 0.7, 0.1};
  BuildConfig cfg;
  cfg.k_top = 2;
  cfg.tau_minpix = 10;
  const auto res = build_bag(img, sims, std::vector<RawDetection>{d0, d1, d2, d3}, cfg);
  CHECK(res.counts.detections == 4);
  CHECK(res.counts.after_top_k == 3);
  CHECK(res.counts.after_filter == 2);
  CHECK(res.counts.merged == 1);
  CHECK(res.counts.kept == 1);
  CHECK_FALSE(res.counts.fallback);
  REQUIRE(res.bag.instances.size() == 1);
  CHECK(res.bag.instances[0].concept_ids == std::vector<int>{0, 1});
  CHECK(res.bag.instances[0].clip_scores == std::vector<double>{0.6, 0.7, 0.1});

  const auto empty = build_bag(img, sims, std::vector<RawDetection>{d2, d3}, cfg);
  CHECK(empty.counts.fallback);
  REQUIRE(empty.bag.instances.size() == 1);
  CHECK(empty.bag.instances[0].clip_scores == img.image_clip);
}

TEST_CASE("build config validation") {
  BuildConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.rho_max = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.tau_iou = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.tau_minpix = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("build_bag keeps every concept when the vocabulary is smaller than k_top") {
  ImageContext img{"im", 0, std::nullopt, 8, 8, {0.5, 0.5}, {1}};
  auto d = rect(8, 8, 0, 0, 2, 2, 1);
  d.embedding = {3};
  BuildConfig cfg;
  cfg.tau_minpix = 1;
  const auto res = build_bag(img, std::vector<double>{0.0, 1.0}, std::vector<RawDetection>{d}, cfg);
  CHECK(res.counts.after_top_k == 1);
  CHECK(res.bag.instances.size() == 1);
}
