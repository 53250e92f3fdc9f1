#pragma once

#include <cstdint>
#include <vector>

#include "segmil/bagio.hpp"

namespace segmil {

/// Dense binary mask over an H x W image, row-major.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width);

  /// Decodes row-major run lengths that alternate 0-runs and 1-runs,
  /// starting with a (possibly empty) 0-run. Runs must sum to H*W.
  static BinaryMask from_rle(int height, int width, const std::vector<std::int64_t>& counts);
  std::vector<std::int64_t> to_rle() const;

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  bool same_shape(const BinaryMask& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  bool at(int row, int col) const { return pixels_[index(row, col)] != 0; }
  void set(int row, int col, bool on = true) { pixels_[index(row, col)] = on ? 1 : 0; }

  std::int64_t area() const;
  /// Tight box (x_min, y_min, x_max + 1, y_max + 1); nullopt for an empty mask.
  std::optional<BBox> bounding_box() const;

  BinaryMask& operator|=(const BinaryMask& other);
  std::int64_t intersection_area(const BinaryMask& other) const;
  std::int64_t union_area(const BinaryMask& other) const;

  bool operator==(const BinaryMask&) const = default;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(col);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> pixels_;
};

}  // namespace segmil
