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

#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

#include "support/test_util.hpp"

using namespace panfuse;
using Catch::Matchers::WithinAbs;

namespace {

BitMask mask_from_logits(std::span<const float> logits, int w, int h) {
  BitMask m(w, h);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (logits[i] > 0.0f) m.set(i);
  }
  return m;
}

SceneSpec one_square_spec() {
  SceneSpec spec;
  spec.width = 40;
  spec.height = 40;
  spec.num_instances = 1;
  spec.min_extent = 20;
  spec.max_extent = 20;
  spec.margin = 8;
  spec.num_stuff_bands = 2;
  spec.num_classes = 6;
  spec.num_stuff_classes = 2;
  spec.ellipses = false;
  spec.seed = 9;
  return spec;
}

}  // namespace

TEST_CASE("a scene without instances is pure stuff", "[synth]") {
  SceneSpec spec;
  spec.width = 32;
  spec.height = 30;
  spec.num_instances = 0;
  spec.num_stuff_bands = 3;
  spec.num_classes = 6;
  spec.num_stuff_classes = 2;
  const Scene scene = gen_scene(spec);
  REQUIRE(scene.instances.empty());
  REQUIRE(scene.bands.size() == 3);
  // bands cycle through the stuff classes: 1, 2, 1
  REQUIRE(scene.bands[0].second == 1);
  REQUIRE(scene.bands[1].second == 2);
  REQUIRE(scene.bands[2].second == 1);
  for (std::size_t i = 0; i < scene.gt.pixel_count(); ++i) {
    REQUIRE_FALSE(scene.gt.is_void(i));
    REQUIRE(scene.catalog.is_stuff(scene.gt.class_at(i)));
  }
  REQUIRE_NOTHROW(scene.gt.validate(scene.catalog));
}

TEST_CASE("a forced rectangle has the exact planted area", "[synth]") {
  const Scene scene = gen_scene(one_square_spec());
  REQUIRE(scene.instances.size() == 1);
  const PlantedInstance& inst = scene.instances[0];
  REQUIRE_FALSE(inst.ellipse);
  REQUIRE(inst.mask.count() == 400);
  REQUIRE(inst.instance_id == 1);
  REQUIRE(scene.catalog.is_thing(inst.class_id));
  // the ground truth agrees with the registry
  std::int64_t gt_area = 0;
  for (std::size_t i = 0; i < scene.gt.pixel_count(); ++i) {
    if (scene.gt.class_at(i) == inst.class_id &&
        scene.gt.instance_at(i) == inst.instance_id) {
      ++gt_area;
      REQUIRE(inst.mask.test(i));
    }
  }
  REQUIRE(gt_area == 400);
  REQUIRE_NOTHROW(scene.gt.validate(scene.catalog));
}

TEST_CASE("scene generation is deterministic", "[synth]") {
  SceneSpec spec;
  spec.seed = 123;
  const Scene a = gen_scene(spec);
  const Scene b = gen_scene(spec);
  REQUIRE(a.gt == b.gt);
  REQUIRE(a.instances.size() == b.instances.size());
  for (std::size_t i = 0; i < a.instances.size(); ++i) {
    REQUIRE(a.instances[i].mask == b.instances[i].mask);
    REQUIRE(a.instances[i].class_id == b.instances[i].class_id);
  }
  const Scene c = gen_scene([&] {
    SceneSpec s = spec;
    s.seed = 124;
    return s;
  }());
  REQUIRE_FALSE(a.gt == c.gt);
}

TEST_CASE("instances respect the margin", "[synth]") {
  SceneSpec spec;
  spec.seed = 5;
  spec.num_instances = 6;
  const Scene scene = gen_scene(spec);
  REQUIRE(scene.instances.size() >= 2);
  for (std::size_t i = 0; i < scene.instances.size(); ++i) {
    for (std::size_t j = i + 1; j < scene.instances.size(); ++j) {
      REQUIRE(scene.instances[i].mask.intersection_count(
                  scene.instances[j].mask) == 0);
      const BitMask grown =
          detail::dilate(scene.instances[i].mask, spec.margin);
      REQUIRE(grown.intersection_count(scene.instances[j].mask) == 0);
    }
  }
}

TEST_CASE("crowded requests place what fits and drop the rest", "[synth]") {
  SceneSpec spec;
  spec.width = 64;
  spec.height = 64;
  spec.num_instances = 40;
  spec.min_extent = 20;
  spec.max_extent = 24;
  spec.seed = 2;
  const Scene scene = gen_scene(spec);
  REQUIRE(scene.instances.size() >= 1);
  REQUIRE(scene.instances.size() < 40);
}

TEST_CASE("impossible placements are an error", "[synth]") {
  SceneSpec spec;
  spec.width = 40;
  spec.height = 40;
  spec.num_instances = 1;
  spec.min_extent = 39;
  spec.max_extent = 39;
  spec.margin = 4;
  REQUIRE_THROWS_AS(gen_scene(spec), ValidationError);
}

TEST_CASE("zero jitter reproduces the ground truth in every sample",
          "[synth]") {
  SceneSpec spec;
  spec.width = 48;
  spec.height = 48;
  spec.num_instances = 3;
  spec.min_extent = 10;
  spec.max_extent = 14;
  spec.num_classes = 8;
  spec.seed = 11;
  const Scene scene = gen_scene(spec);
  REQUIRE(scene.instances.size() == 3);

  JitterSpec jitter;
  const SynthEnsemble se = gen_ensemble(scene, 4, jitter);
  REQUIRE(se.batch.num_samples() == 4);
  REQUIRE(se.batch.proposals_per_sample() ==
          static_cast<int>(scene.instances.size() + scene.bands.size()));

  const PerSampleSegmentation pss = per_sample_seg(se.batch);
  for (int q = 0; q < 4; ++q) {
    const SampleSeg& s = pss.samples[static_cast<std::size_t>(q)];
    REQUIRE(s.kept_count == se.batch.proposals_per_sample());
    for (std::size_t i = 0; i < pss.pixel_count(); ++i) {
      const std::int32_t k = s.proposal_map[i];
      REQUIRE(k != kNoProposal);
      const std::int32_t n = s.kept_origin[static_cast<std::size_t>(k)];
      const std::int32_t planted =
          se.correspondence[static_cast<std::size_t>(q)][static_cast<std::size_t>(n)];
      if (planted >= 0) {
        const PlantedInstance& inst =
            scene.instances[static_cast<std::size_t>(planted)];
        REQUIRE(scene.gt.class_at(i) == inst.class_id);
        REQUIRE(scene.gt.instance_at(i) == inst.instance_id);
      } else {
        // stuff proposal: the class vote matches the band under the pixel
        const int cls = argmax(s.softmax_row(k, pss.num_classes));
        REQUIRE(scene.gt.class_at(i) == cls);
        REQUIRE(scene.gt.instance_at(i) == 0);
      }
    }
  }
}

TEST_CASE("translation jitter stays within the iou bound", "[synth]") {
  const Scene scene = gen_scene(one_square_spec());
  JitterSpec jitter;
  jitter.max_translate = 1;
  jitter.seed = 3;
  const SynthEnsemble se = gen_ensemble(scene, 10, jitter);
  const int w = scene.spec.width, h = scene.spec.height;
  for (int q = 0; q < 10; ++q) {
    REQUIRE(se.correspondence[static_cast<std::size_t>(q)][0] == 0);
    const BitMask m = mask_from_logits(se.batch.mask_logits(q, 0), w, h);
    // a 20x20 square moved by at most one pixel per axis keeps
    // iou >= 19*19 / (800 - 361) > 0.8
    REQUIRE(m.iou(scene.instances[0].mask) >= 0.8);
    REQUIRE(m.count() == 400);
  }
}

TEST_CASE("dilation only grows the planted mask", "[synth]") {
  const Scene scene = gen_scene(one_square_spec());
  JitterSpec jitter;
  jitter.max_dilate = 2;
  jitter.seed = 4;
  const SynthEnsemble se = gen_ensemble(scene, 8, jitter);
  const int w = scene.spec.width, h = scene.spec.height;
  bool grew = false;
  for (int q = 0; q < 8; ++q) {
    BitMask m = mask_from_logits(se.batch.mask_logits(q, 0), w, h);
    REQUIRE(m.count() >= 400);
    if (m.count() > 400) grew = true;
    // the planted mask is a subset of the dilated one
    REQUIRE(m.intersection_count(scene.instances[0].mask) == 400);
  }
  REQUIRE(grew);
}

TEST_CASE("dropout removes about the expected share of proposals", "[synth]") {
  SceneSpec spec;
  spec.width = 64;
  spec.height = 64;
  spec.num_instances = 2;
  spec.min_extent = 12;
  spec.max_extent = 16;
  spec.seed = 6;
  const Scene scene = gen_scene(spec);
  REQUIRE(scene.instances.size() == 2);

  JitterSpec jitter;
  jitter.dropout = 0.3;
  jitter.proposals_per_sample = 8;
  jitter.seed = 7;
  const int q_count = 30;
  const SynthEnsemble se = gen_ensemble(scene, q_count, jitter);
  int survived = 0;
  for (int q = 0; q < q_count; ++q) {
    for (int n = 0; n < 8; ++n) {
      if (se.correspondence[static_cast<std::size_t>(q)][static_cast<std::size_t>(n)] >= 0) {
        ++survived;
      }
    }
  }
  // 60 slots at 70% survival: expect ~42, allow a wide statistical band
  REQUIRE(survived >= 30);
  REQUIRE(survived <= 54);
}

TEST_CASE("padding slots are background with no correspondence", "[synth]") {
  SceneSpec spec;
  spec.width = 32;
  spec.height = 32;
  spec.num_instances = 1;
  spec.min_extent = 8;
  spec.max_extent = 8;
  spec.num_stuff_bands = 2;
  spec.seed = 8;
  const Scene scene = gen_scene(spec);
  REQUIRE(scene.instances.size() == 1);

  JitterSpec jitter;
  jitter.proposals_per_sample = 6;  // 1 instance + 2 bands + 3 padding
  const SynthEnsemble se = gen_ensemble(scene, 2, jitter);
  REQUIRE(se.batch.proposals_per_sample() == 6);
  for (int q = 0; q < 2; ++q) {
    REQUIRE(se.correspondence[static_cast<std::size_t>(q)][0] == 0);
    for (int n = 1; n < 6; ++n) {
      REQUIRE(se.correspondence[static_cast<std::size_t>(q)][static_cast<std::size_t>(n)] == -1);
    }
    for (int n = 3; n < 6; ++n) {
      const auto row = se.batch.class_logits(q, n);
      REQUIRE(argmax(row) == 0);
      for (std::size_t i = 0; i < row.size(); ++i) {
        const float want = i == 0 ? kSynthLogitScale : 0.0f;
        REQUIRE(row[i] == want);
      }
    }
  }
}

TEST_CASE("noiseless logits use the exact synthetic scale", "[synth]") {
  const Scene scene = gen_scene(one_square_spec());
  const SynthEnsemble se = gen_ensemble(scene, 1, JitterSpec{});
  const auto row = se.batch.class_logits(0, 0);
  const int cls = scene.instances[0].class_id;
  for (std::size_t c = 0; c < row.size(); ++c) {
    REQUIRE(row[c] == (static_cast<int>(c) == cls ? kSynthLogitScale : 0.0f));
  }
  for (const float v : se.batch.mask_logits(0, 0)) {
    REQUIRE((v == kSynthLogitScale || v == -kSynthLogitScale));
  }
  REQUIRE(kSynthLogitScale == 6.0f);
}

TEST_CASE("logit noise perturbs without changing determinism", "[synth]") {
  const Scene scene = gen_scene(one_square_spec());
  JitterSpec jitter;
  jitter.logit_noise = 0.5;
  jitter.seed = 12;
  const SynthEnsemble a = gen_ensemble(scene, 3, jitter);
  const SynthEnsemble b = gen_ensemble(scene, 3, jitter);
  REQUIRE(a.batch.class_logits_tensor() == b.batch.class_logits_tensor());
  REQUIRE(a.batch.mask_logits_tensor() == b.batch.mask_logits_tensor());
  REQUIRE(a.correspondence == b.correspondence);

  jitter.seed = 13;
  const SynthEnsemble c = gen_ensemble(scene, 3, jitter);
  REQUIRE_FALSE(a.batch.class_logits_tensor() == c.batch.class_logits_tensor());
}

TEST_CASE("downscaled masks sample cell centers", "[synth]") {
  const Scene scene = gen_scene(one_square_spec());
  JitterSpec jitter;
  jitter.mask_scale = 4;
  const SynthEnsemble se = gen_ensemble(scene, 1, jitter);
  REQUIRE(se.batch.mask_height() == 10);
  REQUIRE(se.batch.mask_width() == 10);
  const auto grid = se.batch.mask_logits(0, 0);
  std::int64_t on = 0;
  for (int r = 0; r < 10; ++r) {
    for (int c = 0; c < 10; ++c) {
      const bool want = scene.instances[0].mask.test(c * 4 + 2, r * 4 + 2);
      const float v = grid[static_cast<std::size_t>(r) * 10 + static_cast<std::size_t>(c)];
      REQUIRE(v == (want ? kSynthLogitScale : -kSynthLogitScale));
      if (want) ++on;
    }
  }
  REQUIRE(on == 25);  // a 20x20 square covers a 5x5 block of centers
}

TEST_CASE("ensemble parameter validation", "[synth]") {
  const Scene scene = gen_scene(one_square_spec());
  JitterSpec bad_scale;
  bad_scale.mask_scale = 3;  // 40 % 3 != 0
  REQUIRE_THROWS_AS(gen_ensemble(scene, 2, bad_scale), ValidationError);
  JitterSpec too_few;
  too_few.proposals_per_sample = 2;  // 1 instance + 2 bands planted
  REQUIRE_THROWS_AS(gen_ensemble(scene, 2, too_few), ValidationError);
  REQUIRE_THROWS_AS(gen_ensemble(scene, 0, JitterSpec{}), ValidationError);
}

TEST_CASE("synthetic catalog layout", "[synth]") {
  const ClassCatalog cat = synth_catalog(6, 2);
  REQUIRE(cat.num_classes() == 6);
  REQUIRE(cat.background_id() == 0);
  REQUIRE(cat.is_background(0));
  REQUIRE(cat.is_stuff(1));
  REQUIRE(cat.is_stuff(2));
  REQUIRE(cat.is_thing(3));
  REQUIRE(cat.is_thing(5));
  REQUIRE_THROWS_AS(synth_catalog(1, 0), ValidationError);
  REQUIRE_THROWS_AS(synth_catalog(4, 4), ValidationError);
}

TEST_CASE("image corruption", "[synth]") {
  const std::size_t n = 100000;

  SECTION("severity one stays near the clean mean") {
    const std::vector<float> half(n, 0.5f);
    const std::vector<float> out = corrupt_image(half, 1, 21);
    double sum = 0.0;
    for (const float v : out) {
      REQUIRE(v >= 0.0f);
      REQUIRE(v <= 1.0f);
      sum += v;
    }
    REQUIRE_THAT(sum / static_cast<double>(n), WithinAbs(0.5, 0.01));
  }
  SECTION("variance grows with severity") {
    const std::vector<float> half(n, 0.5f);
    auto variance = [&](int severity) {
      const std::vector<float> out = corrupt_image(half, severity, 22);
      double mean = 0.0;
      for (const float v : out) mean += v;
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (const float v : out) var += (v - mean) * (v - mean);
      return var / static_cast<double>(n);
    };
    const double v1 = variance(1), v2 = variance(2), v3 = variance(3);
    REQUIRE(v1 < v2);
    REQUIRE(v2 < v3);
  }
  SECTION("same seed, same noise") {
    std::vector<float> img(4096);
    for (std::size_t i = 0; i < img.size(); ++i) {
      img[i] = static_cast<float>(i % 256) / 255.0f;
    }
    REQUIRE(corrupt_image(img, 2, 33) == corrupt_image(img, 2, 33));
    REQUIRE_FALSE(corrupt_image(img, 2, 33) == corrupt_image(img, 2, 34));
  }
  SECTION("black input stays in range") {
    const std::vector<float> zero(5000, 0.0f);
    const std::vector<float> out = corrupt_image(zero, 3, 44);
    for (const float v : out) {
      REQUIRE(v >= 0.0f);
      REQUIRE(v <= 1.0f);
    }
  }
  SECTION("severity bounds") {
    const std::vector<float> img(4, 0.5f);
    REQUIRE_THROWS_AS(corrupt_image(img, 0, 1), ValidationError);
    REQUIRE_THROWS_AS(corrupt_image(img, 4, 1), ValidationError);
  }
}
