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

#ifndef PANFUSE_CATALOG_HPP_
#define PANFUSE_CATALOG_HPP_

#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "panfuse/errors.hpp"

namespace panfuse {

struct ClassEntry {
  int id = 0;
  std::string name;
  bool is_thing = false;
};

// Class table for one dataset. Ids are contiguous 0..C-1. Exactly one id is
// the reserved background ("no object") class, which is neither thing nor
// stuff.
class ClassCatalog {
 public:
  ClassCatalog() = default;

  ClassCatalog(std::vector<ClassEntry> entries, int background_id)
      : entries_(std::move(entries)), background_id_(background_id) {
    validate();
  }

  int num_classes() const { return static_cast<int>(entries_.size()); }
  int background_id() const { return background_id_; }
  const std::vector<ClassEntry>& entries() const { return entries_; }

  bool valid_class(int id) const { return id >= 0 && id < num_classes(); }
  bool is_background(int id) const { return id == background_id_; }
  bool is_thing(int id) const {
    return valid_class(id) && entries_[static_cast<std::size_t>(id)].is_thing;
  }
  bool is_stuff(int id) const {
    return valid_class(id) && !is_background(id) && !is_thing(id);
  }
  const std::string& name(int id) const {
    if (!valid_class(id)) throw ValidationError("class id out of range");
    return entries_[static_cast<std::size_t>(id)].name;
  }

  void validate() const {
    if (entries_.size() < 2) {
      throw ValidationError("catalog needs at least background plus one class");
    }
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].id != static_cast<int>(i)) {
        throw ValidationError("class ids must be contiguous 0..C-1");
      }
    }
    if (!valid_class(background_id_)) {
      throw ValidationError("background id out of range");
    }
    if (entries_[static_cast<std::size_t>(background_id_)].is_thing) {
      throw ValidationError("background class cannot be a thing");
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& e : entries_) {
      classes.push_back({{"id", e.id}, {"name", e.name}, {"is_thing", e.is_thing}});
    }
    return {{"background_id", background_id_}, {"classes", classes}};
  }

  static ClassCatalog from_json(const nlohmann::json& j) {
    std::vector<ClassEntry> entries;
    try {
      for (const auto& c : j.at("classes")) {
        entries.push_back({c.at("id").get<int>(), c.at("name").get<std::string>(),
                           c.at("is_thing").get<bool>()});
      }
      return ClassCatalog(std::move(entries), j.at("background_id").get<int>());
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("malformed class catalog: ") + e.what());
    }
  }

  static ClassCatalog load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open catalog: " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("catalog is not valid JSON: " + std::string(e.what()));
    }
    return from_json(j);
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InputError("cannot write catalog: " + path.string());
    out << to_json().dump(2) << "\n";
  }

 private:
  std::vector<ClassEntry> entries_;
  int background_id_ = 0;
};

}  // namespace panfuse

#endif  // PANFUSE_CATALOG_HPP_
