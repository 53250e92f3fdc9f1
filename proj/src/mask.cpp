#include "segmil/mask.hpp"

#include <algorithm>

#include "segmil/error.hpp"

namespace segmil {

BinaryMask::BinaryMask(int height, int width) : height_(height), width_(width) {
  if (height < 1 || width < 1) throw SchemaError("mask dimensions must be positive");
  pixels_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), 0);
}

BinaryMask BinaryMask::from_rle(int height, int width, const std::vector<std::int64_t>& counts) {
  BinaryMask mask(height, width);
  const auto total = static_cast<std::int64_t>(mask.pixels_.size());
  std::int64_t pos = 0;
  std::uint8_t value = 0;
  for (auto run : counts) {
    if (run < 0) throw SchemaError("rle: negative run length");
    if (pos + run > total) throw SchemaError("rle: runs exceed H*W");
    std::fill_n(mask.pixels_.begin() + pos, run, value);
    pos += run;
    value ^= 1;
  }
  if (pos != total) throw SchemaError("rle: runs sum to " + std::to_string(pos) + ", expected H*W = " +
                                      std::to_string(total));
  return mask;
}

std::vector<std::int64_t> BinaryMask::to_rle() const {
  std::vector<std::int64_t> counts;
  std::uint8_t value = 0;
  std::int64_t run = 0;
  for (auto p : pixels_) {
    if (p != value) {
      counts.push_back(run);
      run = 0;
      value = p;
    }
    ++run;
  }
  counts.push_back(run);
  return counts;
}

std::int64_t BinaryMask::area() const {
  return std::count(pixels_.begin(), pixels_.end(), std::uint8_t{1});
}

std::optional<BBox> BinaryMask::bounding_box() const {
  int x0 = width_, y0 = height_, x1 = -1, y1 = -1;
  for (int r = 0; r < height_; ++r)
    for (int c = 0; c < width_; ++c)
      if (at(r, c)) {
        x0 = std::min(x0, c);
        y0 = std::min(y0, r);
        x1 = std::max(x1, c);
        y1 = std::max(y1, r);
      }
  if (x1 < 0) return std::nullopt;
  return BBox{double(x0), double(y0), double(x1 + 1), double(y1 + 1)};
}

BinaryMask& BinaryMask::operator|=(const BinaryMask& other) {
  if (!same_shape(other)) throw SchemaError("mask dimension mismatch");
  for (std::size_t i = 0; i < pixels_.size(); ++i) pixels_[i] |= other.pixels_[i];
  return *this;
}

std::int64_t BinaryMask::intersection_area(const BinaryMask& other) const {
  if (!same_shape(other)) throw SchemaError("mask dimension mismatch");
  std::int64_t n = 0;
  for (std::size_t i = 0; i < pixels_.size(); ++i) n += pixels_[i] & other.pixels_[i];
  return n;
}

std::int64_t BinaryMask::union_area(const BinaryMask& other) const {
  if (!same_shape(other)) throw SchemaError("mask dimension mismatch");
  std::int64_t n = 0;
  for (std::size_t i = 0; i < pixels_.size(); ++i) n += pixels_[i] | other.pixels_[i];
  return n;
}

}  // namespace segmil
