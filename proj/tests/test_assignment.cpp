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
#include <limits>
#include <memory>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "support/test_util.hpp"

using namespace panfuse;

namespace {

CostMatrix matrix_from(const std::vector<std::vector<double>>& rows) {
  const int r = static_cast<int>(rows.size());
  const int c = r == 0 ? 0 : static_cast<int>(rows[0].size());
  CostMatrix m(r, c);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) m.at(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  return m;
}

void check_valid(const Assignment& a, const CostMatrix& m) {
  REQUIRE(a.pairs.size() ==
          static_cast<std::size_t>(std::min(m.rows, m.cols)));
  REQUIRE(std::is_sorted(a.pairs.begin(), a.pairs.end()));
  std::set<int> rows, cols;
  double total = 0.0;
  for (const auto& [r, c] : a.pairs) {
    REQUIRE(r >= 0);
    REQUIRE(r < m.rows);
    REQUIRE(c >= 0);
    REQUIRE(c < m.cols);
    REQUIRE(rows.insert(r).second);
    REQUIRE(cols.insert(c).second);
    total += m.at(r, c);
  }
  REQUIRE(a.total_cost == total);
}

std::vector<std::uint8_t> invert(std::vector<std::uint8_t> m) {
  for (auto& v : m) v = v ? 0 : 1;
  return m;
}

std::vector<std::uint8_t> unite_masks(std::vector<std::uint8_t> a,
                                      const std::vector<std::uint8_t>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = (a[i] || b[i]) ? 1 : 0;
  return a;
}

}  // namespace

TEST_CASE("lap hand cases", "[assignment]") {
  SECTION("2x2 cross") {
    const Assignment a = solve_lap(matrix_from({{1, 2}, {2, 1}}));
    REQUIRE(a.pairs == std::vector<std::pair<int, int>>{{0, 0}, {1, 1}});
    REQUIRE(a.total_cost == 2.0);
  }
  SECTION("zero diagonal") {
    const Assignment a =
        solve_lap(matrix_from({{0, 9, 9}, {9, 0, 9}, {9, 9, 0}}));
    REQUIRE(a.pairs ==
            std::vector<std::pair<int, int>>{{0, 0}, {1, 1}, {2, 2}});
    REQUIRE(a.total_cost == 0.0);
  }
  SECTION("wide matrix leaves a column unmatched") {
    const Assignment a = solve_lap(matrix_from({{0, 5, 5}, {5, 0, 5}}));
    REQUIRE(a.pairs == std::vector<std::pair<int, int>>{{0, 0}, {1, 1}});
    REQUIRE(a.total_cost == 0.0);
  }
  SECTION("tall matrix leaves a row unmatched") {
    const Assignment a = solve_lap(matrix_from({{0, 5}, {5, 0}, {5, 5}}));
    REQUIRE(a.pairs == std::vector<std::pair<int, int>>{{0, 0}, {1, 1}});
    REQUIRE(a.total_cost == 0.0);
  }
  SECTION("empty dimensions") {
    REQUIRE(solve_lap(CostMatrix(0, 0)).pairs.empty());
    REQUIRE(solve_lap(CostMatrix(0, 4)).pairs.empty());
    REQUIRE(solve_lap(CostMatrix(4, 0)).pairs.empty());
    REQUIRE(solve_lap(CostMatrix(4, 0)).total_cost == 0.0);
  }
  SECTION("non-finite costs are rejected") {
    CostMatrix inf(2, 2);
    inf.at(0, 1) = std::numeric_limits<double>::infinity();
    REQUIRE_THROWS_AS(solve_lap(inf), ValidationError);
    CostMatrix nan(1, 1);
    nan.at(0, 0) = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(solve_lap(nan), ValidationError);
  }
}

TEST_CASE("lap matches brute force on random matrices", "[assignment]") {
  std::mt19937_64 rng(51);
  // Dyadic costs keep every partial sum exact, so totals compare with ==
  // and ties between assignments are common.
  for (int trial = 0; trial < 300; ++trial) {
    const int r = static_cast<int>(rng() % 8);
    const int c = static_cast<int>(rng() % 8);
    CostMatrix m(r, c);
    for (double& v : m.costs) v = static_cast<double>(rng() % 512) / 64.0;
    const Assignment a = solve_lap(m);
    check_valid(a, m);
    REQUIRE(a.total_cost == testutil::brute_force_lap_cost(m));
  }
}

TEST_CASE("lap total is invariant under row and column permutation",
          "[assignment]") {
  std::mt19937_64 rng(52);
  for (int trial = 0; trial < 50; ++trial) {
    const int r = 1 + static_cast<int>(rng() % 6);
    const int c = 1 + static_cast<int>(rng() % 6);
    CostMatrix m(r, c);
    for (double& v : m.costs) v = static_cast<double>(rng() % 512) / 64.0;

    std::vector<int> pr(static_cast<std::size_t>(r)), pc(static_cast<std::size_t>(c));
    for (int i = 0; i < r; ++i) pr[static_cast<std::size_t>(i)] = i;
    for (int j = 0; j < c; ++j) pc[static_cast<std::size_t>(j)] = j;
    std::shuffle(pr.begin(), pr.end(), rng);
    std::shuffle(pc.begin(), pc.end(), rng);
    CostMatrix shuffled(r, c);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) {
        shuffled.at(i, j) = m.at(pr[static_cast<std::size_t>(i)], pc[static_cast<std::size_t>(j)]);
      }
    }
    REQUIRE(solve_lap(m).total_cost == solve_lap(shuffled).total_cost);
  }
}

TEST_CASE("identical samples fuse to the single-sample result", "[assignment]") {
  const ClassCatalog cat = testutil::make_catalog(6, 2);
  const auto mask_a = testutil::rect_mask(8, 12, 1, 1, 5, 5);
  const auto mask_b = testutil::rect_mask(8, 12, 6, 2, 11, 7);
  const auto mask_stuff = invert(unite_masks(mask_a, mask_b));
  std::vector<testutil::ProposalSpec> sample;
  sample.push_back({1, mask_stuff, {}});
  sample.push_back({3, mask_a, {}});
  sample.push_back({4, mask_b, {}});

  const EnsembleBatch batch =
      testutil::make_batch(8, 12, cat, {sample, sample, sample});
  auto pss = std::make_shared<const PerSampleSegmentation>(
      per_sample_seg(batch));
  const HungarianResult hr = hungarian_fuse(batch, pss);

  REQUIRE(hr.reference_sample == 0);
  REQUIRE(hr.fused_proposals == 3);
  const PanopticMap base =
      baseline_segmentation(batch, *pss, 0, BaselineParams{0.0, 1});
  REQUIRE(hr.map == base);
  REQUIRE(count_instances(hr.map) == 2);
  REQUIRE(count_segments(hr.map) == 3);
  REQUIRE(hr.map.class_at(2, 2) == 3);
  REQUIRE(hr.map.class_at(7, 4) == 4);
  REQUIRE(hr.map.class_at(0, 0) == 1);

  // every matched proposal stays in the restricted stack
  for (int q = 0; q < 3; ++q) {
    REQUIRE(hr.stack.pss().samples[static_cast<std::size_t>(q)].kept_count == 3);
  }
}

TEST_CASE("unmatched spurious proposals are dropped", "[assignment]") {
  const ClassCatalog cat = testutil::make_catalog(6, 2);
  const auto mask_a0 = testutil::rect_mask(8, 12, 1, 1, 5, 5);
  const auto mask_a1 = testutil::rect_mask(8, 12, 2, 1, 6, 5);
  const auto mask_c = testutil::rect_mask(8, 12, 8, 5, 11, 8);

  std::vector<testutil::ProposalSpec> ref_sample;
  ref_sample.push_back({1, invert(mask_a0), {}});
  ref_sample.push_back({3, mask_a0, {}});
  std::vector<testutil::ProposalSpec> other;
  other.push_back({1, invert(unite_masks(mask_a1, mask_c)), {}});
  other.push_back({3, mask_a1, {}});
  other.push_back({5, mask_c, {}});

  const EnsembleBatch batch =
      testutil::make_batch(8, 12, cat, {ref_sample, other});
  auto pss = std::make_shared<const PerSampleSegmentation>(
      per_sample_seg(batch));
  const HungarianResult hr = hungarian_fuse(batch, pss);

  REQUIRE(hr.fused_proposals == 2);
  REQUIRE(count_instances(hr.map) == 1);
  const auto& classes = hr.map.classes();
  REQUIRE(std::count(classes.begin(), classes.end(), 5) == 0);
  // only the jitter-stable core of the instance survives the logit average
  REQUIRE(std::count(classes.begin(), classes.end(), 3) == 12);
  // the spurious proposal fell out of the restricted stack
  REQUIRE(hr.stack.pss().samples[1].kept_count == 2);
}

TEST_CASE("single sample fusion equals the unfiltered baseline", "[assignment]") {
  const ClassCatalog cat = testutil::make_catalog(6, 2);
  const auto mask_a = testutil::rect_mask(6, 10, 0, 0, 4, 4);
  const auto mask_b = testutil::rect_mask(6, 10, 5, 1, 9, 6);
  std::vector<testutil::ProposalSpec> sample;
  sample.push_back({1, invert(unite_masks(mask_a, mask_b)), {}});
  sample.push_back({3, mask_a, {}});
  sample.push_back({4, mask_b, {}});

  const EnsembleBatch batch = testutil::make_batch(6, 10, cat, {sample});
  auto pss = std::make_shared<const PerSampleSegmentation>(
      per_sample_seg(batch));
  const HungarianResult hr = hungarian_fuse(batch, pss);
  REQUIRE(hr.map ==
          baseline_segmentation(batch, *pss, 0, BaselineParams{0.0, 1}));
}

TEST_CASE("instance ids follow the reference order, not confidence",
          "[assignment]") {
  const ClassCatalog cat = testutil::make_catalog(6, 2);
  const auto mask_a = testutil::rect_mask(6, 10, 0, 0, 4, 4);
  const auto mask_b = testutil::rect_mask(6, 10, 5, 1, 9, 6);
  std::vector<testutil::ProposalSpec> sample;
  sample.push_back({1, invert(unite_masks(mask_a, mask_b)), {}});
  testutil::ProposalSpec weak{3, mask_a, {}};
  weak.class_scale = 4.0f;  // lower confidence, earlier proposal
  sample.push_back(weak);
  testutil::ProposalSpec strong{4, mask_b, {}};
  strong.class_scale = 10.0f;
  sample.push_back(strong);

  const EnsembleBatch batch = testutil::make_batch(6, 10, cat, {sample});
  auto pss = std::make_shared<const PerSampleSegmentation>(
      per_sample_seg(batch));
  const HungarianResult hr = hungarian_fuse(batch, pss);
  // weak proposal comes first in the reference sample, so it takes id 1
  REQUIRE(hr.map.class_at(1, 1) == 3);
  REQUIRE(hr.map.instance_at(1, 1) == 1);
  REQUIRE(hr.map.instance_at(6, 3) == 2);
  // the baseline ranks by score instead
  const PanopticMap base =
      baseline_segmentation(batch, *pss, 0, BaselineParams{0.0, 1});
  REQUIRE(base.instance_at(6, 3) == 1);
  REQUIRE(base.instance_at(1, 1) == 2);
  REQUIRE(testutil::equal_up_to_instance_relabel(hr.map, base));
}

TEST_CASE("reference seed selects reproducibly", "[assignment]") {
  const ClassCatalog cat = testutil::make_catalog(6, 2);
  std::vector<std::vector<testutil::ProposalSpec>> samples;
  for (int q = 0; q < 4; ++q) {
    const auto mask = testutil::rect_mask(6, 10, q, 0, q + 4, 4);
    std::vector<testutil::ProposalSpec> s;
    s.push_back({1, invert(mask), {}});
    s.push_back({3, mask, {}});
    samples.push_back(std::move(s));
  }
  const EnsembleBatch batch = testutil::make_batch(6, 10, cat, samples);
  auto pss = std::make_shared<const PerSampleSegmentation>(
      per_sample_seg(batch));

  HungarianParams params;
  params.reference_seed = 7;
  const HungarianResult a = hungarian_fuse(batch, pss, params);
  const HungarianResult b = hungarian_fuse(batch, pss, params);
  REQUIRE(a.reference_sample == b.reference_sample);
  REQUIRE(a.reference_sample >= 0);
  REQUIRE(a.reference_sample < 4);
  REQUIRE(a.map == b.map);

  const HungarianResult plain = hungarian_fuse(batch, pss);
  REQUIRE(plain.reference_sample == 0);
}

TEST_CASE("an empty reference yields an empty fusion", "[assignment]") {
  const ClassCatalog cat = testutil::make_catalog(6, 2);
  std::vector<testutil::ProposalSpec> empty_ref;
  empty_ref.push_back({0, testutil::rect_mask(4, 4, 0, 0, 4, 4), {}});
  std::vector<testutil::ProposalSpec> other;
  other.push_back({3, testutil::rect_mask(4, 4, 0, 0, 2, 2), {}});

  const EnsembleBatch batch = testutil::make_batch(4, 4, cat, {empty_ref, other});
  auto pss = std::make_shared<const PerSampleSegmentation>(
      per_sample_seg(batch));
  const HungarianResult hr = hungarian_fuse(batch, pss);
  REQUIRE(hr.fused_proposals == 0);
  for (std::size_t i = 0; i < hr.map.pixel_count(); ++i) {
    REQUIRE(hr.map.is_void(i));
  }
}
