// Copyright 2026 The Panfuse Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef PANFUSE_MASK_HPP_
#define PANFUSE_MASK_HPP_

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "panfuse/errors.hpp"

namespace panfuse {

// Dense binary mask over a W x H pixel grid, bit-packed into 64-bit words.
// Tracks population count and bounding box incrementally so IoU tests can
// reject non-overlapping pairs without touching the words.
class BitMask {
 public:
  BitMask() = default;

  BitMask(int width, int height) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) {
      throw ShapeError("mask size must be positive");
    }
    const std::size_t bits = static_cast<std::size_t>(width) *
                             static_cast<std::size_t>(height);
    words_.assign((bits + 63) / 64, 0);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::int64_t count() const { return count_; }
  bool empty() const { return count_ == 0; }

  bool test(std::size_t idx) const {
    return (words_[idx >> 6] >> (idx & 63)) & 1u;
  }
  bool test(int x, int y) const {
    return test(static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
                static_cast<std::size_t>(x));
  }

  void set(std::size_t idx) {
    std::uint64_t& w = words_[idx >> 6];
    const std::uint64_t bit = std::uint64_t{1} << (idx & 63);
    if (w & bit) return;
    w |= bit;
    ++count_;
    grow_bbox(static_cast<int>(idx % static_cast<std::size_t>(width_)),
              static_cast<int>(idx / static_cast<std::size_t>(width_)));
  }
  void set(int x, int y) {
    set(static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
        static_cast<std::size_t>(x));
  }

  // In-place union. Recomputes the count from the changed words only.
  void unite(const BitMask& other) {
    check_same_grid(other);
    for (std::size_t i = 0; i < words_.size(); ++i) {
      const std::uint64_t added = other.words_[i] & ~words_[i];
      if (added == 0) continue;
      words_[i] |= added;
      count_ += std::popcount(added);
    }
    if (other.count_ > 0) {
      min_x_ = std::min(min_x_, other.min_x_);
      min_y_ = std::min(min_y_, other.min_y_);
      max_x_ = std::max(max_x_, other.max_x_);
      max_y_ = std::max(max_y_, other.max_y_);
    }
  }

  std::int64_t intersection_count(const BitMask& other) const {
    check_same_grid(other);
    if (count_ == 0 || other.count_ == 0) return 0;
    if (!bbox_overlaps(other)) return 0;
    // Restrict the scan to word rows covered by both bounding boxes.
    const int y0 = std::max(min_y_, other.min_y_);
    const int y1 = std::min(max_y_, other.max_y_);
    const std::size_t first =
        (static_cast<std::size_t>(y0) * static_cast<std::size_t>(width_)) >> 6;
    const std::size_t last = std::min(
        words_.size() - 1,
        (static_cast<std::size_t>(y1) * static_cast<std::size_t>(width_) +
         static_cast<std::size_t>(width_ - 1)) >> 6);
    std::int64_t inter = 0;
    for (std::size_t i = first; i <= last; ++i) {
      inter += std::popcount(words_[i] & other.words_[i]);
    }
    return inter;
  }

  // Intersection-over-union; 0 when both masks are empty.
  double iou(const BitMask& other) const {
    const std::int64_t inter = intersection_count(other);
    const std::int64_t uni = count_ + other.count_ - inter;
    if (uni == 0) return 0.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
  }

  // Calls f(pixel_index) for every set bit in ascending index order.
  template <class F>
  void for_each_set(F&& f) const {
    for (std::size_t w = 0; w < words_.size(); ++w) {
      std::uint64_t bits = words_[w];
      while (bits != 0) {
        const int b = std::countr_zero(bits);
        f((w << 6) + static_cast<std::size_t>(b));
        bits &= bits - 1;
      }
    }
  }

  bool operator==(const BitMask& other) const {
    return width_ == other.width_ && height_ == other.height_ &&
           words_ == other.words_;
  }

 private:
  void check_same_grid(const BitMask& other) const {
    if (width_ != other.width_ || height_ != other.height_) {
      throw ShapeError("mask grids differ");
    }
  }

  bool bbox_overlaps(const BitMask& other) const {
    return min_x_ <= other.max_x_ && other.min_x_ <= max_x_ &&
           min_y_ <= other.max_y_ && other.min_y_ <= max_y_;
  }

  void grow_bbox(int x, int y) {
    min_x_ = std::min(min_x_, x);
    min_y_ = std::min(min_y_, y);
    max_x_ = std::max(max_x_, x);
    max_y_ = std::max(max_y_, y);
  }

  int width_ = 0;
  int height_ = 0;
  std::int64_t count_ = 0;
  int min_x_ = INT32_MAX;
  int min_y_ = INT32_MAX;
  int max_x_ = INT32_MIN;
  int max_y_ = INT32_MIN;
  std::vector<std::uint64_t> words_;
};

inline double iou(const BitMask& a, const BitMask& b) { return a.iou(b); }

}  // namespace panfuse

#endif  // PANFUSE_MASK_HPP_
