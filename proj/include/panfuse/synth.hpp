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
//
// Synthetic ensembles with known correspondences: scenes of stuff bands plus
// non-overlapping rectangle/ellipse instances, per-sample mask jitter
// (translate/dilate/dropout) and logit noise, and the combined Gaussian+shot
// image corruption.

#ifndef PANFUSE_SYNTH_HPP_
#define PANFUSE_SYNTH_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "panfuse/catalog.hpp"
#include "panfuse/errors.hpp"
#include "panfuse/manifest.hpp"
#include "panfuse/mask.hpp"
#include "panfuse/panoptic_map.hpp"
#include "panfuse/tensor.hpp"

namespace panfuse {

// Logit magnitude used for synthetic one-hot class vectors and binary masks;
// softmax of a 6-0 gap is ~0.97 at 12 classes, near-binary but finite.
inline constexpr float kSynthLogitScale = 6.0f;

struct SceneSpec {
  int width = 128;
  int height = 128;
  int num_instances = 6;
  int min_extent = 24;
  int max_extent = 40;
  int margin = 4;  // clearance between instances and to the border
  int num_stuff_bands = 3;
  int num_classes = 12;
  int num_stuff_classes = 3;
  bool ellipses = true;
  int max_retries = 400;
  std::uint64_t seed = 0;
};

struct JitterSpec {
  int max_translate = 0;  // uniform integer shift in [-t, t] per axis
  int max_dilate = 0;     // 0..d rounds of 4-neighbor dilation
  double logit_noise = 0.0;
  double dropout = 0.0;  // per sample-instance chance of losing the proposal
  int proposals_per_sample = 0;  // 0 = exactly the planted count; else padded
  int mask_scale = 1;            // mask grid = image size / mask_scale
  std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const SceneSpec& s) {
  j = {{"width", s.width},
       {"height", s.height},
       {"num_instances", s.num_instances},
       {"min_extent", s.min_extent},
       {"max_extent", s.max_extent},
       {"margin", s.margin},
       {"num_stuff_bands", s.num_stuff_bands},
       {"num_classes", s.num_classes},
       {"num_stuff_classes", s.num_stuff_classes},
       {"ellipses", s.ellipses},
       {"max_retries", s.max_retries},
       {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, SceneSpec& s) {
  SceneSpec d;
  s.width = j.value("width", d.width);
  s.height = j.value("height", d.height);
  s.num_instances = j.value("num_instances", d.num_instances);
  s.min_extent = j.value("min_extent", d.min_extent);
  s.max_extent = j.value("max_extent", d.max_extent);
  s.margin = j.value("margin", d.margin);
  s.num_stuff_bands = j.value("num_stuff_bands", d.num_stuff_bands);
  s.num_classes = j.value("num_classes", d.num_classes);
  s.num_stuff_classes = j.value("num_stuff_classes", d.num_stuff_classes);
  s.ellipses = j.value("ellipses", d.ellipses);
  s.max_retries = j.value("max_retries", d.max_retries);
  s.seed = j.value("seed", d.seed);
}

inline void to_json(nlohmann::json& j, const JitterSpec& s) {
  j = {{"max_translate", s.max_translate},
       {"max_dilate", s.max_dilate},
       {"logit_noise", s.logit_noise},
       {"dropout", s.dropout},
       {"proposals_per_sample", s.proposals_per_sample},
       {"mask_scale", s.mask_scale},
       {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, JitterSpec& s) {
  JitterSpec d;
  s.max_translate = j.value("max_translate", d.max_translate);
  s.max_dilate = j.value("max_dilate", d.max_dilate);
  s.logit_noise = j.value("logit_noise", d.logit_noise);
  s.dropout = j.value("dropout", d.dropout);
  s.proposals_per_sample = j.value("proposals_per_sample", d.proposals_per_sample);
  s.mask_scale = j.value("mask_scale", d.mask_scale);
  s.seed = j.value("seed", d.seed);
}

// Class 0 is background, the next num_stuff ids are stuff, the rest things.
inline ClassCatalog synth_catalog(int num_classes, int num_stuff) {
  if (num_classes < 2 || num_stuff < 0 || num_stuff > num_classes - 1) {
    throw ValidationError("invalid synthetic catalog layout");
  }
  std::vector<ClassEntry> entries;
  entries.push_back({0, "background", false});
  for (int i = 1; i < num_classes; ++i) {
    const bool stuff = i <= num_stuff;
    entries.push_back({i, (stuff ? "stuff_" : "thing_") + std::to_string(i),
                       !stuff});
  }
  return ClassCatalog(std::move(entries), 0);
}

struct PlantedInstance {
  BitMask mask;
  std::int32_t class_id = 0;
  std::int32_t instance_id = 0;
  bool ellipse = false;
};

struct Scene {
  SceneSpec spec;
  ClassCatalog catalog;
  PanopticMap gt;
  std::vector<PlantedInstance> instances;
  std::vector<std::pair<int, std::int32_t>> bands;  // (start row, class) per band
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline BitMask make_shape(int x0, int y0, int w, int h, bool ellipse,
                          int img_w, int img_h) {
  BitMask m(img_w, img_h);
  if (!ellipse) {
    for (int y = y0; y < y0 + h; ++y) {
      for (int x = x0; x < x0 + w; ++x) m.set(x, y);
    }
    return m;
  }
  const double a = (w - 1) / 2.0, b = (h - 1) / 2.0;
  const double cx = x0 + a, cy = y0 + b;
  for (int y = y0; y < y0 + h; ++y) {
    for (int x = x0; x < x0 + w; ++x) {
      const double dx = (x - cx) / a, dy = (y - cy) / b;
      if (dx * dx + dy * dy <= 1.0) m.set(x, y);
    }
  }
  return m;
}

inline BitMask translate(const BitMask& m, int dx, int dy) {
  BitMask out(m.width(), m.height());
  m.for_each_set([&](std::size_t i) {
    const int x = static_cast<int>(i % static_cast<std::size_t>(m.width())) + dx;
    const int y = static_cast<int>(i / static_cast<std::size_t>(m.width())) + dy;
    if (x >= 0 && x < m.width() && y >= 0 && y < m.height()) out.set(x, y);
  });
  return out;
}

inline BitMask dilate(const BitMask& m, int rounds) {
  BitMask cur = m;
  for (int r = 0; r < rounds; ++r) {
    BitMask next = cur;
    cur.for_each_set([&](std::size_t i) {
      const int x = static_cast<int>(i % static_cast<std::size_t>(m.width()));
      const int y = static_cast<int>(i / static_cast<std::size_t>(m.width()));
      if (x > 0) next.set(x - 1, y);
      if (x + 1 < m.width()) next.set(x + 1, y);
      if (y > 0) next.set(x, y - 1);
      if (y + 1 < m.height()) next.set(x, y + 1);
    });
    cur = std::move(next);
  }
  return cur;
}

}  // namespace detail

// Deterministic scene: horizontal stuff bands covering the image, instances
// placed by rejection sampling with a margin of clearance. Instances that do
// not fit within the retry budget are skipped; only a scene with no placeable
// instance at all is an error.
inline Scene gen_scene(const SceneSpec& spec) {
  if (spec.width < 8 || spec.height < 8) throw ValidationError("scene too small");
  if (spec.min_extent < 2 || spec.max_extent < spec.min_extent) {
    throw ValidationError("bad instance extents");
  }
  if (spec.num_stuff_bands > 0 && spec.num_stuff_classes < 1) {
    throw ValidationError("stuff bands need at least one stuff class");
  }
  const int num_things = spec.num_classes - 1 - spec.num_stuff_classes;
  if (spec.num_instances > 0 && num_things < 1) {
    throw ValidationError("instances need at least one thing class");
  }

  Scene scene;
  scene.spec = spec;
  scene.catalog = synth_catalog(spec.num_classes, spec.num_stuff_classes);
  scene.gt = PanopticMap(spec.width, spec.height);
  std::mt19937_64 rng(spec.seed);

  if (spec.num_stuff_bands > 0) {
    const int band_h = spec.height / spec.num_stuff_bands;
    for (int b = 0; b < spec.num_stuff_bands; ++b) {
      const int y0 = b * band_h;
      const int y1 = (b + 1 == spec.num_stuff_bands) ? spec.height : y0 + band_h;
      const std::int32_t cls = 1 + (b % spec.num_stuff_classes);
      scene.bands.emplace_back(y0, cls);
      for (int y = y0; y < y1; ++y) {
        for (int x = 0; x < spec.width; ++x) scene.gt.set(x, y, cls, 0);
      }
    }
  }

  BitMask occupancy(spec.width, spec.height);
  std::uniform_int_distribution<int> extent(spec.min_extent, spec.max_extent);
  std::uniform_int_distribution<int> thing_cls(1 + spec.num_stuff_classes,
                                               spec.num_classes - 1);
  for (int i = 0; i < spec.num_instances; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < spec.max_retries && !placed; ++attempt) {
      const int w = extent(rng);
      const int h = extent(rng);
      if (spec.width - w - 2 * spec.margin < 0 ||
          spec.height - h - 2 * spec.margin < 0) {
        continue;
      }
      const int x0 = std::uniform_int_distribution<int>(
          spec.margin, spec.width - w - spec.margin)(rng);
      const int y0 = std::uniform_int_distribution<int>(
          spec.margin, spec.height - h - spec.margin)(rng);
      const bool ellipse =
          spec.ellipses && std::bernoulli_distribution(0.5)(rng);

      // Clearance test against everything placed so far, bbox grown by margin.
      const BitMask grown = detail::make_shape(
          std::max(0, x0 - spec.margin), std::max(0, y0 - spec.margin),
          std::min(spec.width, x0 + w + spec.margin) - std::max(0, x0 - spec.margin),
          std::min(spec.height, y0 + h + spec.margin) - std::max(0, y0 - spec.margin),
          false, spec.width, spec.height);
      if (occupancy.intersection_count(grown) != 0) continue;

      PlantedInstance inst;
      inst.mask = detail::make_shape(x0, y0, w, h, ellipse, spec.width, spec.height);
      inst.class_id = thing_cls(rng);
      inst.instance_id = static_cast<std::int32_t>(scene.instances.size()) + 1;
      inst.ellipse = ellipse;
      occupancy.unite(inst.mask);
      inst.mask.for_each_set(
          [&](std::size_t p) { scene.gt.set(p, inst.class_id, inst.instance_id); });
      scene.instances.push_back(std::move(inst));
      placed = true;
    }
  }
  if (spec.num_instances > 0 && scene.instances.empty()) {
    throw ValidationError("could not place any instance");
  }
  return scene;
}

struct SynthEnsemble {
  EnsembleBatch batch;
  // correspondence[q][n] = planted instance index, or -1 for stuff/padding.
  std::vector<std::vector<std::int32_t>> correspondence;
};

// Each sample holds one proposal per surviving instance (translated/dilated
// mask), one per stuff band (the band's rows minus that sample's instance
// masks), and background padding up to proposals_per_sample. Class logits are
// scaled one-hot vectors plus optional Gaussian noise.
inline SynthEnsemble gen_ensemble(const Scene& scene, int num_samples,
                                  const JitterSpec& jitter) {
  if (num_samples < 1) throw ValidationError("need at least one sample");
  if (jitter.mask_scale < 1 ||
      scene.spec.width % jitter.mask_scale != 0 ||
      scene.spec.height % jitter.mask_scale != 0) {
    throw ValidationError("mask_scale must divide the image size");
  }
  const int img_w = scene.spec.width, img_h = scene.spec.height;
  const int mask_w = img_w / jitter.mask_scale;
  const int mask_h = img_h / jitter.mask_scale;
  const int c_count = scene.spec.num_classes;
  const int base_props =
      static_cast<int>(scene.instances.size() + scene.bands.size());
  const int n_props = jitter.proposals_per_sample > 0
                          ? jitter.proposals_per_sample
                          : base_props;
  if (n_props < base_props) {
    throw ValidationError("proposals_per_sample smaller than planted proposals");
  }
  if (n_props < 1) throw ValidationError("scene yields no proposals");

  const std::size_t hw = static_cast<std::size_t>(mask_h) *
                         static_cast<std::size_t>(mask_w);
  std::vector<float> class_logits(static_cast<std::size_t>(num_samples) *
                                  static_cast<std::size_t>(n_props) * c_count);
  std::vector<float> mask_logits(static_cast<std::size_t>(num_samples) *
                                     static_cast<std::size_t>(n_props) * hw,
                                 -kSynthLogitScale);
  std::vector<std::vector<std::int32_t>> corr(
      static_cast<std::size_t>(num_samples),
      std::vector<std::int32_t>(static_cast<std::size_t>(n_props), -1));

  auto write_class = [&](int q, int n, int cls, std::mt19937_64& rng) {
    float* row = class_logits.data() +
                 (static_cast<std::size_t>(q) * n_props + static_cast<std::size_t>(n)) *
                     c_count;
    std::normal_distribution<double> noise(0.0, jitter.logit_noise);
    for (int c = 0; c < c_count; ++c) {
      double v = (c == cls) ? kSynthLogitScale : 0.0;
      if (jitter.logit_noise > 0.0) v += noise(rng);
      row[c] = static_cast<float>(v);
    }
  };
  auto write_mask = [&](int q, int n, const BitMask& m) {
    float* grid = mask_logits.data() +
                  (static_cast<std::size_t>(q) * n_props + static_cast<std::size_t>(n)) * hw;
    for (int r = 0; r < mask_h; ++r) {
      const int y = std::min(img_h - 1, r * jitter.mask_scale + jitter.mask_scale / 2);
      for (int c = 0; c < mask_w; ++c) {
        const int x = std::min(img_w - 1, c * jitter.mask_scale + jitter.mask_scale / 2);
        if (m.test(x, y)) grid[static_cast<std::size_t>(r) * mask_w + c] = kSynthLogitScale;
      }
    }
  };

  for (int q = 0; q < num_samples; ++q) {
    std::mt19937_64 rng(detail::mix_seed(jitter.seed, static_cast<std::uint64_t>(q)));
    int slot = 0;

    std::vector<BitMask> inst_masks;
    std::vector<std::int32_t> inst_idx;
    for (std::size_t i = 0; i < scene.instances.size(); ++i) {
      if (jitter.dropout > 0.0 &&
          std::bernoulli_distribution(jitter.dropout)(rng)) {
        continue;
      }
      BitMask m = scene.instances[i].mask;
      if (jitter.max_translate > 0) {
        std::uniform_int_distribution<int> shift(-jitter.max_translate,
                                                 jitter.max_translate);
        const int dx = shift(rng), dy = shift(rng);
        m = detail::translate(m, dx, dy);
      }
      if (jitter.max_dilate > 0) {
        const int rounds =
            std::uniform_int_distribution<int>(0, jitter.max_dilate)(rng);
        m = detail::dilate(m, rounds);
      }
      inst_masks.push_back(std::move(m));
      inst_idx.push_back(static_cast<std::int32_t>(i));
    }

    for (std::size_t i = 0; i < inst_masks.size(); ++i) {
      write_class(q, slot, scene.instances[static_cast<std::size_t>(inst_idx[i])].class_id, rng);
      write_mask(q, slot, inst_masks[i]);
      corr[static_cast<std::size_t>(q)][static_cast<std::size_t>(slot)] = inst_idx[i];
      ++slot;
    }

    // Stuff proposals: the band's full rows with this sample's instance
    // masks punched out, so the sample's proposals partition the image.
    for (std::size_t b = 0; b < scene.bands.size(); ++b) {
      const int y0 = scene.bands[b].first;
      const int y1 = (b + 1 < scene.bands.size()) ? scene.bands[b + 1].first
                                                  : img_h;
      BitMask m(img_w, img_h);
      for (int y = y0; y < y1; ++y) {
        for (int x = 0; x < img_w; ++x) {
          const std::size_t p = static_cast<std::size_t>(y) * img_w +
                                static_cast<std::size_t>(x);
          bool covered = false;
          for (const BitMask& im : inst_masks) {
            if (im.test(p)) {
              covered = true;
              break;
            }
          }
          if (!covered) m.set(p);
        }
      }
      write_class(q, slot, scene.bands[b].second, rng);
      if (!m.empty()) write_mask(q, slot, m);
      ++slot;
    }

    for (; slot < n_props; ++slot) {
      write_class(q, slot, scene.catalog.background_id(), rng);
    }
  }

  Tensor cl = Tensor::from_floats({static_cast<std::uint32_t>(num_samples),
                                   static_cast<std::uint32_t>(n_props),
                                   static_cast<std::uint32_t>(c_count)},
                                  class_logits);
  Tensor ml = Tensor::from_floats({static_cast<std::uint32_t>(num_samples),
                                   static_cast<std::uint32_t>(n_props),
                                   static_cast<std::uint32_t>(mask_h),
                                   static_cast<std::uint32_t>(mask_w)},
                                  mask_logits);
  return SynthEnsemble{
      EnsembleBatch("synth-" + std::to_string(scene.spec.seed), std::move(cl),
                    std::move(ml), scene.catalog, img_h, img_w),
      std::move(corr)};
}

inline constexpr double kGaussianSigma[3] = {0.08, 0.12, 0.18};
inline constexpr double kShotScale[3] = {60.0, 25.0, 12.0};

// Additive Gaussian noise followed by shot noise (Poisson photon counts at a
// severity-dependent scale), then one clamp to [0, 1].
inline std::vector<float> corrupt_image(std::span<const float> pixels,
                                        int severity, std::uint64_t seed) {
  if (severity < 1 || severity > 3) {
    throw ValidationError("severity must be 1, 2 or 3");
  }
  const double sigma = kGaussianSigma[severity - 1];
  const double scale = kShotScale[severity - 1];
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, sigma);
  std::vector<float> out(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double g = static_cast<double>(pixels[i]) + gauss(rng);
    const double lam = std::max(0.0, g) * scale;
    double shot = 0.0;
    if (lam > 0.0) {
      shot = static_cast<double>(std::poisson_distribution<long>(lam)(rng)) / scale;
    }
    out[i] = static_cast<float>(std::clamp(shot, 0.0, 1.0));
  }
  return out;
}

}  // namespace panfuse

#endif  // PANFUSE_SYNTH_HPP_
