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

#ifndef PANFUSE_MANIFEST_HPP_
#define PANFUSE_MANIFEST_HPP_

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>

#include <json.hpp>

#include "panfuse/catalog.hpp"
#include "panfuse/errors.hpp"
#include "panfuse/tensor.hpp"

namespace panfuse {

// Describes one ensemble batch on disk. All paths are resolved relative to
// the directory containing the manifest file.
struct EnsembleManifest {
  std::string image_id;
  int num_samples = 0;        // Q
  int proposals_per_sample = 0;  // N
  int num_classes = 0;        // C
  int mask_height = 0;        // h
  int mask_width = 0;         // w
  int image_height = 0;       // H
  int image_width = 0;        // W
  std::string logits_path;
  std::string masks_path;
  std::string class_catalog_path;
};

inline void to_json(nlohmann::json& j, const EnsembleManifest& m) {
  j = nlohmann::json{{"image_id", m.image_id},
                     {"num_samples", m.num_samples},
                     {"proposals_per_sample", m.proposals_per_sample},
                     {"num_classes", m.num_classes},
                     {"mask_height", m.mask_height},
                     {"mask_width", m.mask_width},
                     {"image_height", m.image_height},
                     {"image_width", m.image_width},
                     {"logits_path", m.logits_path},
                     {"masks_path", m.masks_path},
                     {"class_catalog_path", m.class_catalog_path}};
}

inline void from_json(const nlohmann::json& j, EnsembleManifest& m) {
  j.at("image_id").get_to(m.image_id);
  j.at("num_samples").get_to(m.num_samples);
  j.at("proposals_per_sample").get_to(m.proposals_per_sample);
  j.at("num_classes").get_to(m.num_classes);
  j.at("mask_height").get_to(m.mask_height);
  j.at("mask_width").get_to(m.mask_width);
  j.at("image_height").get_to(m.image_height);
  j.at("image_width").get_to(m.image_width);
  j.at("logits_path").get_to(m.logits_path);
  j.at("masks_path").get_to(m.masks_path);
  j.at("class_catalog_path").get_to(m.class_catalog_path);
}

inline EnsembleManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open manifest: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest is not valid JSON: " + std::string(e.what()));
  }
  try {
    return j.get<EnsembleManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest missing field: " + std::string(e.what()));
  }
}

inline void save_manifest(const EnsembleManifest& m,
                          const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write manifest: " + path.string());
  out << nlohmann::json(m).dump(2) << "\n";
}

// In-memory ensemble: class logits [Q, N, C] and mask logits [Q, N, h, w]
// plus the class catalog and the target image size.
class EnsembleBatch {
 public:
  EnsembleBatch(std::string image_id, Tensor class_logits, Tensor mask_logits,
                ClassCatalog catalog, int image_height, int image_width)
      : image_id_(std::move(image_id)),
        class_logits_(std::move(class_logits)),
        mask_logits_(std::move(mask_logits)),
        catalog_(std::move(catalog)),
        image_height_(image_height),
        image_width_(image_width) {
    validate();
  }

  const std::string& image_id() const { return image_id_; }
  int num_samples() const { return static_cast<int>(class_logits_.dims()[0]); }
  int proposals_per_sample() const {
    return static_cast<int>(class_logits_.dims()[1]);
  }
  int num_classes() const { return static_cast<int>(class_logits_.dims()[2]); }
  int mask_height() const { return static_cast<int>(mask_logits_.dims()[2]); }
  int mask_width() const { return static_cast<int>(mask_logits_.dims()[3]); }
  int image_height() const { return image_height_; }
  int image_width() const { return image_width_; }
  const ClassCatalog& catalog() const { return catalog_; }
  const Tensor& class_logits_tensor() const { return class_logits_; }
  const Tensor& mask_logits_tensor() const { return mask_logits_; }

  // C class logits of proposal n in sample q.
  std::span<const float> class_logits(int q, int n) const {
    const std::size_t c = static_cast<std::size_t>(num_classes());
    const std::size_t off =
        (static_cast<std::size_t>(q) * static_cast<std::size_t>(proposals_per_sample()) +
         static_cast<std::size_t>(n)) * c;
    return class_logits_.as_f32().subspan(off, c);
  }

  // h*w mask logits of proposal n in sample q, row-major.
  std::span<const float> mask_logits(int q, int n) const {
    const std::size_t hw = static_cast<std::size_t>(mask_height()) *
                           static_cast<std::size_t>(mask_width());
    const std::size_t off =
        (static_cast<std::size_t>(q) * static_cast<std::size_t>(proposals_per_sample()) +
         static_cast<std::size_t>(n)) * hw;
    return mask_logits_.as_f32().subspan(off, hw);
  }

  // Restricts the batch to its first q samples.
  EnsembleBatch take_samples(int q) const {
    if (q < 1 || q > num_samples()) {
      throw ValidationError("take_samples: q out of range");
    }
    const auto cl = class_logits_.as_f32();
    const auto ml = mask_logits_.as_f32();
    const std::size_t cl_per =
        static_cast<std::size_t>(proposals_per_sample()) *
        static_cast<std::size_t>(num_classes());
    const std::size_t ml_per =
        static_cast<std::size_t>(proposals_per_sample()) *
        static_cast<std::size_t>(mask_height()) *
        static_cast<std::size_t>(mask_width());
    Tensor cl_t = Tensor::from_floats(
        {static_cast<std::uint32_t>(q), class_logits_.dims()[1],
         class_logits_.dims()[2]},
        cl.subspan(0, static_cast<std::size_t>(q) * cl_per));
    Tensor ml_t = Tensor::from_floats(
        {static_cast<std::uint32_t>(q), mask_logits_.dims()[1],
         mask_logits_.dims()[2], mask_logits_.dims()[3]},
        ml.subspan(0, static_cast<std::size_t>(q) * ml_per));
    return EnsembleBatch(image_id_, std::move(cl_t), std::move(ml_t), catalog_,
                         image_height_, image_width_);
  }

 private:
  void validate() const {
    if (class_logits_.elem_type() != ElemType::kFloat32 ||
        mask_logits_.elem_type() != ElemType::kFloat32) {
      throw ValidationError("ensemble tensors must be float32");
    }
    if (class_logits_.rank() != 3) {
      throw ShapeError("class logits must have rank 3 [Q, N, C]");
    }
    if (mask_logits_.rank() != 4) {
      throw ShapeError("mask logits must have rank 4 [Q, N, h, w]");
    }
    if (class_logits_.dims()[0] != mask_logits_.dims()[0] ||
        class_logits_.dims()[1] != mask_logits_.dims()[1]) {
      throw ShapeError("class and mask tensors disagree on Q or N");
    }
    if (num_samples() < 1) throw ValidationError("need at least one sample");
    if (proposals_per_sample() < 1) {
      throw ValidationError("need at least one proposal per sample");
    }
    if (num_classes() < 2) throw ValidationError("need at least two classes");
    if (catalog_.num_classes() != num_classes()) {
      throw ValidationError("catalog size does not match logit channels");
    }
    if (image_height_ < 1 || image_width_ < 1) {
      throw ValidationError("image size must be positive");
    }
    for (float v : class_logits_.as_f32()) {
      if (!std::isfinite(v)) throw ValidationError("non-finite class logit");
    }
    for (float v : mask_logits_.as_f32()) {
      if (!std::isfinite(v)) throw ValidationError("non-finite mask logit");
    }
  }

  std::string image_id_;
  Tensor class_logits_;
  Tensor mask_logits_;
  ClassCatalog catalog_;
  int image_height_ = 0;
  int image_width_ = 0;
};

// Writes tensors, catalog and manifest under dir with a shared basename.
// Returns the manifest path, which load_ensemble accepts as-is.
inline std::filesystem::path save_ensemble(const EnsembleBatch& batch,
                                           const std::filesystem::path& dir,
                                           const std::string& basename) {
  std::filesystem::create_directories(dir);
  const std::string logits_name = basename + "_class_logits.pftn";
  const std::string masks_name = basename + "_mask_logits.pftn";
  const std::string catalog_name = basename + "_catalog.json";
  write_tensor(batch.class_logits_tensor(), dir / logits_name);
  write_tensor(batch.mask_logits_tensor(), dir / masks_name);
  batch.catalog().save(dir / catalog_name);

  EnsembleManifest m;
  m.image_id = batch.image_id();
  m.num_samples = batch.num_samples();
  m.proposals_per_sample = batch.proposals_per_sample();
  m.num_classes = batch.num_classes();
  m.mask_height = batch.mask_height();
  m.mask_width = batch.mask_width();
  m.image_height = batch.image_height();
  m.image_width = batch.image_width();
  m.logits_path = logits_name;
  m.masks_path = masks_name;
  m.class_catalog_path = catalog_name;
  const std::filesystem::path manifest_path = dir / (basename + "_manifest.json");
  save_manifest(m, manifest_path);
  return manifest_path;
}

inline EnsembleBatch load_ensemble(const std::filesystem::path& manifest_path) {
  const EnsembleManifest m = load_manifest(manifest_path);
  const std::filesystem::path base = manifest_path.parent_path();

  Tensor cl = read_tensor(base / m.logits_path);
  Tensor ml = read_tensor(base / m.masks_path);
  ClassCatalog cat = ClassCatalog::load(base / m.class_catalog_path);

  auto check_dim = [](const Tensor& t, std::size_t axis, int want,
                      const char* what) {
    if (static_cast<int>(t.dims()[axis]) != want) {
      throw ShapeError(std::string("manifest/tensor mismatch on ") + what);
    }
  };
  if (cl.rank() != 3) throw ShapeError("class logits must have rank 3");
  if (ml.rank() != 4) throw ShapeError("mask logits must have rank 4");
  check_dim(cl, 0, m.num_samples, "num_samples");
  check_dim(cl, 1, m.proposals_per_sample, "proposals_per_sample");
  check_dim(cl, 2, m.num_classes, "num_classes");
  check_dim(ml, 0, m.num_samples, "num_samples");
  check_dim(ml, 1, m.proposals_per_sample, "proposals_per_sample");
  check_dim(ml, 2, m.mask_height, "mask_height");
  check_dim(ml, 3, m.mask_width, "mask_width");

  return EnsembleBatch(m.image_id, std::move(cl), std::move(ml), std::move(cat),
                       m.image_height, m.image_width);
}

}  // namespace panfuse

#endif  // PANFUSE_MANIFEST_HPP_
