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

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "support/test_util.hpp"

using namespace panfuse;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("softmax hand values", "[core_model]") {
  SECTION("uniform logits") {
    const std::vector<float> v{0.0f, 0.0f, 0.0f, 0.0f};
    const auto p = softmax(v);
    for (double x : p) CHECK_THAT(x, WithinAbs(0.25, 1e-12));
  }
  SECTION("log-3 gap") {
    const std::vector<float> v{0.0f, std::log(3.0f)};
    const auto p = softmax(v);
    CHECK_THAT(p[0], WithinAbs(0.25, 1e-6));
    CHECK_THAT(p[1], WithinAbs(0.75, 1e-6));
  }
  SECTION("huge equal logits do not overflow") {
    const std::vector<float> v{1000.0f, 1000.0f};
    const auto p = softmax(v);
    CHECK_THAT(p[0], WithinAbs(0.5, 1e-12));
    CHECK_THAT(p[1], WithinAbs(0.5, 1e-12));
  }
}

TEST_CASE("softmax properties on random logits", "[core_model]") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<float> unit(-10.0f, 10.0f);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 8);
    std::vector<float> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = unit(rng);
    const auto p = softmax(v);

    double sum = 0.0;
    for (double x : p) {
      REQUIRE(x > 0.0);
      sum += x;
    }
    REQUIRE_THAT(sum, WithinAbs(1.0, 1e-9));

    // Shift invariance is exact in real arithmetic, but adding c rounds
    // each float32 logit, so compare with a relative tolerance.
    std::vector<float> shifted = v;
    const float c = unit(rng);
    for (auto& x : shifted) x += c;
    const auto ps = softmax(shifted);
    for (std::size_t i = 0; i < p.size(); ++i) {
      REQUIRE_THAT(ps[i], WithinRel(p[i], 1e-4));
    }

    // permutation equivariance
    std::vector<std::size_t> perm(v.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<float> pv(v.size());
    for (std::size_t i = 0; i < perm.size(); ++i) pv[i] = v[perm[i]];
    const auto pp = softmax(pv);
    for (std::size_t i = 0; i < perm.size(); ++i) {
      REQUIRE_THAT(pp[i], WithinAbs(p[perm[i]], 1e-12));
    }

    // argmax preserved
    REQUIRE(argmax(std::span<const double>(p)) ==
            argmax(std::span<const float>(v)));
  }
}

TEST_CASE("argmax breaks ties by lowest index", "[core_model]") {
  const std::vector<float> v{1.0f, 3.0f, 3.0f, 2.0f};
  CHECK(argmax(std::span<const float>(v)) == 1);
  const std::vector<double> u{5.0, 5.0, 5.0};
  CHECK(argmax(std::span<const double>(u)) == 0);
}

TEST_CASE("bilinear upscale hand cases", "[core_model]") {
  SECTION("constant grid stays constant") {
    const std::vector<float> src(6, 3.25f);
    const auto dst = upscale_mask(src, 2, 3, 7, 5);
    for (float v : dst) REQUIRE(v == 3.25f);
  }
  SECTION("1x1 grid broadcasts") {
    const std::vector<float> src{2.5f};
    const auto dst = upscale_mask(src, 1, 1, 4, 6);
    REQUIRE(dst.size() == 24);
    for (float v : dst) REQUIRE(v == 2.5f);
  }
  SECTION("2x2 to 4x4 pixel-center weights") {
    const std::vector<float> src{0.0f, 1.0f, 0.0f, 1.0f};
    const auto dst = upscale_mask(src, 2, 2, 4, 4);
    const std::vector<float> row{0.0f, 0.25f, 0.75f, 1.0f};
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) {
        REQUIRE_THAT(dst[static_cast<std::size_t>(y) * 4 + x],
                     WithinAbs(row[static_cast<std::size_t>(x)], 1e-6));
      }
    }
  }
  SECTION("identity size is bit exact") {
    std::mt19937_64 rng(22);
    std::uniform_real_distribution<float> unit(-5.0f, 5.0f);
    std::vector<float> src(12 * 7);
    for (auto& v : src) v = unit(rng);
    const auto dst = upscale_mask(src, 7, 12, 7, 12);
    REQUIRE(dst == src);
  }
  SECTION("invalid sizes rejected") {
    REQUIRE_THROWS_AS(Upscaler(0, 1, 2, 2), ShapeError);
    REQUIRE_THROWS_AS(Upscaler(1, 1, 0, 2), ShapeError);
  }
}

TEST_CASE("bilinear upscale matches a naive reimplementation",
          "[core_model]") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> unit(-8.0, 8.0);
  for (int trial = 0; trial < 40; ++trial) {
    const int h = 1 + static_cast<int>(rng() % 6);
    const int w = 1 + static_cast<int>(rng() % 6);
    const int dh = 1 + static_cast<int>(rng() % 17);
    const int dw = 1 + static_cast<int>(rng() % 17);
    std::vector<double> src(static_cast<std::size_t>(h) * w);
    for (auto& v : src) v = unit(rng);
    std::vector<float> srcf(src.begin(), src.end());

    const auto got = upscale_mask(srcf, h, w, dh, dw);
    std::vector<double> srcd(srcf.begin(), srcf.end());
    const auto want = testutil::naive_bilinear(srcd, h, w, dh, dw);
    for (std::size_t i = 0; i < got.size(); ++i) {
      REQUIRE_THAT(static_cast<double>(got[i]), WithinAbs(want[i], 1e-5));
    }
  }
}

TEST_CASE("nearest mode produces constant blocks", "[core_model]") {
  const std::vector<float> src{1.0f, 2.0f, 3.0f, 4.0f};
  const auto dst = upscale_mask(src, 2, 2, 4, 4, UpscaleMode::kNearest);
  const std::vector<float> want{1, 1, 2, 2, 1, 1, 2, 2,
                                3, 3, 4, 4, 3, 3, 4, 4};
  REQUIRE(dst == want);
}

TEST_CASE("fold_max keeps the earlier label on exact ties", "[core_model]") {
  const Upscaler up(2, 2, 2, 2);
  const std::vector<float> grid{1.0f, 1.0f, 1.0f, 1.0f};
  std::vector<float> best(4, -std::numeric_limits<float>::infinity());
  std::vector<std::int32_t> label(4, -1);
  up.fold_max(grid, 0, best, label);
  up.fold_max(grid, 1, best, label);
  for (std::int32_t l : label) REQUIRE(l == 0);
}

TEST_CASE("per-sample seg drops background proposals", "[core_model]") {
  const ClassCatalog cat = testutil::make_catalog(4, 1);

  SECTION("only proposal is background: flagged, not fatal") {
    std::vector<std::vector<testutil::ProposalSpec>> samples(1);
    samples[0].push_back({0, testutil::rect_mask(4, 4, 0, 0, 4, 4)});
    const EnsembleBatch batch = testutil::make_batch(4, 4, cat, samples);
    const PerSampleSegmentation pss = per_sample_seg(batch);
    REQUIRE(pss.samples.size() == 1);
    REQUIRE(pss.samples[0].kept_count == 0);
    for (std::int32_t k : pss.samples[0].proposal_map) {
      REQUIRE(k == kNoProposal);
    }
  }
  SECTION("single survivor owns every pixel") {
    std::vector<std::vector<testutil::ProposalSpec>> samples(1);
    samples[0].push_back({0, testutil::rect_mask(4, 4, 0, 0, 4, 4)});
    testutil::ProposalSpec car;
    car.class_id = 2;
    car.mask.assign(16, 0);  // uniform mask logits, still wins as sole survivor
    samples[0].push_back(car);
    const EnsembleBatch batch = testutil::make_batch(4, 4, cat, samples);
    const PerSampleSegmentation pss = per_sample_seg(batch);
    REQUIRE(pss.samples[0].kept_count == 1);
    REQUIRE(pss.samples[0].kept_origin == std::vector<std::int32_t>{1});
    for (std::int32_t k : pss.samples[0].proposal_map) REQUIRE(k == 0);
  }
}

TEST_CASE("per-sample seg partitions disjoint high-logit regions",
          "[core_model]") {
  const ClassCatalog cat = testutil::make_catalog(5, 1);
  std::vector<std::vector<testutil::ProposalSpec>> samples(1);
  samples[0].push_back({2, testutil::rect_mask(6, 6, 0, 0, 3, 6)});
  samples[0].push_back({0, testutil::rect_mask(6, 6, 0, 0, 6, 6)});
  samples[0].push_back({3, testutil::rect_mask(6, 6, 3, 0, 6, 3)});
  samples[0].push_back({4, testutil::rect_mask(6, 6, 3, 3, 6, 6)});
  const EnsembleBatch batch = testutil::make_batch(6, 6, cat, samples);
  const PerSampleSegmentation pss = per_sample_seg(batch);

  REQUIRE(pss.samples[0].kept_count == 3);
  // background removal preserves relative proposal order
  REQUIRE(pss.samples[0].kept_origin ==
          std::vector<std::int32_t>{0, 2, 3});
  REQUIRE(pss.samples[0].proposal_map == testutil::naive_sample_map(batch, 0));
  CHECK(pss.samples[0].proposal_map[0] == 0);
  CHECK(pss.samples[0].proposal_map[5] == 1);
  CHECK(pss.samples[0].proposal_map[35] == 2);
}

TEST_CASE("per-sample seg matches the naive pipeline on random batches",
          "[core_model]") {
  std::mt19937_64 rng(24);
  const ClassCatalog cat = testutil::make_catalog(6, 2);
  std::uniform_int_distribution<int> cls(0, 5);
  for (int trial = 0; trial < 20; ++trial) {
    const int q_count = 1 + static_cast<int>(rng() % 3);
    const int n_count = 1 + static_cast<int>(rng() % 4);
    std::vector<std::vector<testutil::ProposalSpec>> samples(
        static_cast<std::size_t>(q_count));
    for (auto& s : samples) {
      for (int n = 0; n < n_count; ++n) {
        testutil::ProposalSpec p;
        p.class_id = cls(rng);
        p.mask.assign(5 * 5, 0);
        for (auto& b : p.mask) b = rng() % 2;
        s.push_back(std::move(p));
      }
    }
    const EnsembleBatch batch =
        testutil::make_batch(10, 10, cat, samples, 5, 5);
    const PerSampleSegmentation pss = per_sample_seg(batch);
    for (int q = 0; q < q_count; ++q) {
      REQUIRE(pss.samples[static_cast<std::size_t>(q)].proposal_map ==
              testutil::naive_sample_map(batch, q));
    }
  }
}

TEST_CASE("per-pixel proposal ties go to the lowest kept index",
          "[core_model]") {
  const ClassCatalog cat = testutil::make_catalog(4, 1);
  std::vector<std::vector<testutil::ProposalSpec>> samples(1);
  // identical masks, different classes: proposal 0 must own every pixel
  samples[0].push_back({2, testutil::rect_mask(3, 3, 0, 0, 3, 3)});
  samples[0].push_back({3, testutil::rect_mask(3, 3, 0, 0, 3, 3)});
  const EnsembleBatch batch = testutil::make_batch(3, 3, cat, samples);
  const PerSampleSegmentation pss = per_sample_seg(batch);
  REQUIRE(pss.samples[0].kept_count == 2);
  for (std::int32_t k : pss.samples[0].proposal_map) REQUIRE(k == 0);
}
