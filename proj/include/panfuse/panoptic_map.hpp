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

#ifndef PANFUSE_PANOPTIC_MAP_HPP_
#define PANFUSE_PANOPTIC_MAP_HPP_

#include <cstdint>
#include <vector>

#include "panfuse/catalog.hpp"
#include "panfuse/errors.hpp"

namespace panfuse {

// Per-pixel (class id, instance id) grid. instance id 0 means "no instance"
// (stuff); a void cell carries neither class nor instance. Pixels are stored
// row-major, index = y * width + x.
class PanopticMap {
 public:
  static constexpr std::int32_t kVoidClass = -1;

  PanopticMap() = default;

  PanopticMap(int width, int height)
      : width_(width), height_(height),
        class_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height),
               kVoidClass),
        instance_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0) {
    if (width <= 0 || height <= 0) throw ShapeError("map size must be positive");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const { return class_.size(); }

  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  std::int32_t class_at(std::size_t idx) const { return class_[idx]; }
  std::int32_t instance_at(std::size_t idx) const { return instance_[idx]; }
  std::int32_t class_at(int x, int y) const { return class_[index(x, y)]; }
  std::int32_t instance_at(int x, int y) const { return instance_[index(x, y)]; }
  bool is_void(std::size_t idx) const { return class_[idx] == kVoidClass; }
  bool is_void(int x, int y) const { return is_void(index(x, y)); }

  void set(std::size_t idx, std::int32_t class_id, std::int32_t instance_id) {
    class_[idx] = class_id;
    instance_[idx] = instance_id;
  }
  void set(int x, int y, std::int32_t class_id, std::int32_t instance_id) {
    set(index(x, y), class_id, instance_id);
  }
  void set_void(std::size_t idx) {
    class_[idx] = kVoidClass;
    instance_[idx] = 0;
  }

  const std::vector<std::int32_t>& classes() const { return class_; }
  const std::vector<std::int32_t>& instances() const { return instance_; }

  bool operator==(const PanopticMap& other) const {
    return width_ == other.width_ && height_ == other.height_ &&
           class_ == other.class_ && instance_ == other.instance_;
  }

  // Checks the structural rules against a catalog: instance ids only on thing
  // classes, void cells with instance 0.
  void validate(const ClassCatalog& catalog) const {
    for (std::size_t i = 0; i < class_.size(); ++i) {
      if (class_[i] == kVoidClass) {
        if (instance_[i] != 0) throw ValidationError("void cell with instance id");
        continue;
      }
      if (!catalog.valid_class(class_[i])) {
        throw ValidationError("cell references unknown class");
      }
      if (instance_[i] > 0 && !catalog.is_thing(class_[i])) {
        throw ValidationError("instance id on non-thing class");
      }
      if (instance_[i] == 0 && catalog.is_thing(class_[i])) {
        throw ValidationError("thing cell without instance id");
      }
    }
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::int32_t> class_;
  std::vector<std::int32_t> instance_;
};

}  // namespace panfuse

#endif  // PANFUSE_PANOPTIC_MAP_HPP_
