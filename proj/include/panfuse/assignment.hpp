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
// Rectangular linear assignment (Jonker-Volgenant style successive shortest
// augmenting paths with dual potentials) and the assignment-based ensemble
// fusion baseline: match every sample's proposals against a reference sample
// by mask IoU, grow the matched masks, and average the matched logits.

#ifndef PANFUSE_ASSIGNMENT_HPP_
#define PANFUSE_ASSIGNMENT_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "panfuse/catalog.hpp"
#include "panfuse/errors.hpp"
#include "panfuse/manifest.hpp"
#include "panfuse/mask.hpp"
#include "panfuse/panoptic_map.hpp"
#include "panfuse/per_sample.hpp"
#include "panfuse/stuff_fusion.hpp"

namespace panfuse {

struct CostMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> costs;  // rows * cols, row-major

  CostMatrix() = default;
  CostMatrix(int r, int c) : rows(r), cols(c) {
    if (r < 0 || c < 0) throw ShapeError("cost matrix size must be >= 0");
    costs.assign(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), 0.0);
  }

  double& at(int r, int c) {
    return costs[static_cast<std::size_t>(r) * cols + static_cast<std::size_t>(c)];
  }
  double at(int r, int c) const {
    return costs[static_cast<std::size_t>(r) * cols + static_cast<std::size_t>(c)];
  }
};

struct Assignment {
  std::vector<std::pair<int, int>> pairs;  // (row, col), cardinality min(rows, cols)
  double total_cost = 0.0;
};

namespace detail {

// One augmenting path from cur_row to an unassigned column, Dijkstra over
// reduced costs. Returns the sink column and the path costs needed for the
// dual update.
inline int lap_augmenting_path(int nc, std::span<const double> cost, int nr_cols,
                               std::span<double> u, std::span<double> v,
                               std::span<int> path, std::span<const int> row4col,
                               std::span<double> shortest, std::span<char> sr,
                               std::span<char> sc, std::vector<int>& remaining,
                               int cur_row, double& min_val_out) {
  (void)nr_cols;
  double min_val = 0.0;
  int i = cur_row;
  int sink = -1;
  remaining.clear();
  for (int j = 0; j < nc; ++j) remaining.push_back(j);
  std::fill(shortest.begin(), shortest.end(),
            std::numeric_limits<double>::infinity());

  while (sink == -1) {
    int index = -1;
    double lowest = std::numeric_limits<double>::infinity();
    sr[static_cast<std::size_t>(i)] = 1;
    for (std::size_t it = 0; it < remaining.size(); ++it) {
      const int j = remaining[it];
      const double r = min_val +
                       cost[static_cast<std::size_t>(i) * nc +
                            static_cast<std::size_t>(j)] -
                       u[static_cast<std::size_t>(i)] - v[static_cast<std::size_t>(j)];
      if (r < shortest[static_cast<std::size_t>(j)]) {
        path[static_cast<std::size_t>(j)] = i;
        shortest[static_cast<std::size_t>(j)] = r;
      }
      // Prefer a column that ends the path when costs tie.
      if (shortest[static_cast<std::size_t>(j)] < lowest ||
          (shortest[static_cast<std::size_t>(j)] == lowest &&
           row4col[static_cast<std::size_t>(j)] == -1)) {
        lowest = shortest[static_cast<std::size_t>(j)];
        index = static_cast<int>(it);
      }
    }
    min_val = lowest;
    if (!(min_val < std::numeric_limits<double>::infinity())) {
      throw ValidationError("assignment infeasible (non-finite costs?)");
    }
    const int j = remaining[static_cast<std::size_t>(index)];
    if (row4col[static_cast<std::size_t>(j)] == -1) {
      sink = j;
    } else {
      i = row4col[static_cast<std::size_t>(j)];
    }
    sc[static_cast<std::size_t>(j)] = 1;
    remaining[static_cast<std::size_t>(index)] = remaining.back();
    remaining.pop_back();
  }
  min_val_out = min_val;
  return sink;
}

}  // namespace detail

// Minimum-total-cost assignment of cardinality min(rows, cols); the surplus
// side stays unmatched. Pairs are reported sorted by row.
inline Assignment solve_lap(const CostMatrix& m) {
  for (double c : m.costs) {
    if (!std::isfinite(c)) throw ValidationError("cost matrix must be finite");
  }
  Assignment out;
  if (m.rows == 0 || m.cols == 0) return out;

  const bool transpose = m.rows > m.cols;
  const int nr = transpose ? m.cols : m.rows;
  const int nc = transpose ? m.rows : m.cols;
  std::vector<double> cost(static_cast<std::size_t>(nr) * nc);
  if (transpose) {
    for (int r = 0; r < m.rows; ++r) {
      for (int c = 0; c < m.cols; ++c) {
        cost[static_cast<std::size_t>(c) * nc + static_cast<std::size_t>(r)] =
            m.at(r, c);
      }
    }
  } else {
    cost = m.costs;
  }

  std::vector<double> u(static_cast<std::size_t>(nr), 0.0);
  std::vector<double> v(static_cast<std::size_t>(nc), 0.0);
  std::vector<double> shortest(static_cast<std::size_t>(nc));
  std::vector<int> path(static_cast<std::size_t>(nc), -1);
  std::vector<int> col4row(static_cast<std::size_t>(nr), -1);
  std::vector<int> row4col(static_cast<std::size_t>(nc), -1);
  std::vector<char> sr(static_cast<std::size_t>(nr));
  std::vector<char> sc(static_cast<std::size_t>(nc));
  std::vector<int> remaining;
  remaining.reserve(static_cast<std::size_t>(nc));

  for (int cur_row = 0; cur_row < nr; ++cur_row) {
    std::fill(sr.begin(), sr.end(), 0);
    std::fill(sc.begin(), sc.end(), 0);
    double min_val = 0.0;
    const int sink = detail::lap_augmenting_path(
        nc, cost, nr, u, v, path, row4col, shortest, sr, sc, remaining, cur_row,
        min_val);

    u[static_cast<std::size_t>(cur_row)] += min_val;
    for (int i = 0; i < nr; ++i) {
      if (sr[static_cast<std::size_t>(i)] && i != cur_row) {
        u[static_cast<std::size_t>(i)] +=
            min_val - shortest[static_cast<std::size_t>(col4row[static_cast<std::size_t>(i)])];
      }
    }
    for (int j = 0; j < nc; ++j) {
      if (sc[static_cast<std::size_t>(j)]) {
        v[static_cast<std::size_t>(j)] -= min_val - shortest[static_cast<std::size_t>(j)];
      }
    }

    int j = sink;
    while (true) {
      const int i = path[static_cast<std::size_t>(j)];
      row4col[static_cast<std::size_t>(j)] = i;
      std::swap(col4row[static_cast<std::size_t>(i)], j);
      if (i == cur_row) break;
    }
  }

  for (int r = 0; r < nr; ++r) {
    const int c = col4row[static_cast<std::size_t>(r)];
    const int row = transpose ? c : r;
    const int col = transpose ? r : c;
    out.pairs.emplace_back(row, col);
    out.total_cost += m.at(row, col);
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  return out;
}

struct HungarianParams {
  // With a seed, the reference sample is drawn uniformly; otherwise sample 0.
  std::optional<std::uint64_t> reference_seed;
};

struct HungarianResult {
  PanopticMap map;
  ConfidenceStack stack;  // matched members only, for uncertainty measures
  int reference_sample = 0;
  int fused_proposals = 0;  // reference proposals surviving the class average
};

namespace detail {

// Full ownership masks of one sample's kept proposals.
inline std::vector<BitMask> sample_masks(const PerSampleSegmentation& pss, int q) {
  const SampleSeg& s = pss.samples[static_cast<std::size_t>(q)];
  std::vector<BitMask> masks(
      static_cast<std::size_t>(s.kept_count),
      BitMask(pss.image_width, pss.image_height));
  for (std::size_t i = 0; i < pss.pixel_count(); ++i) {
    const std::int32_t k = s.proposal_map[i];
    if (k != kNoProposal) masks[static_cast<std::size_t>(k)].set(i);
  }
  return masks;
}

}  // namespace detail

// Assignment-based fusion. The reference sample's proposals are matched
// against every other sample with 1 - IoU costs; matched masks are unioned
// into the reference masks and matched logits accumulated. Unmatched incoming
// proposals are dropped. No confidence or size thresholds are applied.
inline HungarianResult hungarian_fuse(
    const EnsembleBatch& batch,
    std::shared_ptr<const PerSampleSegmentation> pss_ptr,
    const HungarianParams& params = {},
    UpscaleMode mode = UpscaleMode::kBilinear) {
  const PerSampleSegmentation& pss = *pss_ptr;
  const int q_count = pss.num_samples();
  const int c_count = pss.num_classes;
  const std::size_t hw = static_cast<std::size_t>(batch.mask_height()) *
                         static_cast<std::size_t>(batch.mask_width());

  int ref = 0;
  if (params.reference_seed) {
    std::mt19937_64 rng(*params.reference_seed);
    ref = static_cast<int>(
        std::uniform_int_distribution<int>(0, q_count - 1)(rng));
  }

  const SampleSeg& ref_seg = pss.samples[static_cast<std::size_t>(ref)];
  const int n_ref = ref_seg.kept_count;

  std::vector<BitMask> grown = detail::sample_masks(pss, ref);
  std::vector<std::vector<float>> acc_logits(static_cast<std::size_t>(n_ref));
  std::vector<std::vector<double>> soft_sum(static_cast<std::size_t>(n_ref));
  std::vector<int> member_count(static_cast<std::size_t>(n_ref), 1);
  for (int k = 0; k < n_ref; ++k) {
    const auto ml = batch.mask_logits(ref, ref_seg.kept_origin[static_cast<std::size_t>(k)]);
    acc_logits[static_cast<std::size_t>(k)].assign(ml.begin(), ml.end());
    const auto row = ref_seg.softmax_row(k, c_count);
    soft_sum[static_cast<std::size_t>(k)].assign(row.begin(), row.end());
  }

  // Which kept proposals of each sample end up in the fused result.
  std::vector<std::vector<char>> matched(static_cast<std::size_t>(q_count));
  for (int q = 0; q < q_count; ++q) {
    matched[static_cast<std::size_t>(q)].assign(
        static_cast<std::size_t>(pss.samples[static_cast<std::size_t>(q)].kept_count), 0);
  }
  std::fill(matched[static_cast<std::size_t>(ref)].begin(),
            matched[static_cast<std::size_t>(ref)].end(), 1);

  for (int q = 0; q < q_count; ++q) {
    if (q == ref) continue;
    const SampleSeg& seg = pss.samples[static_cast<std::size_t>(q)];
    if (n_ref == 0 || seg.kept_count == 0) continue;
    const std::vector<BitMask> masks = detail::sample_masks(pss, q);

    CostMatrix cost(n_ref, seg.kept_count);
    for (int r = 0; r < n_ref; ++r) {
      for (int g = 0; g < seg.kept_count; ++g) {
        cost.at(r, g) =
            1.0 - iou(grown[static_cast<std::size_t>(r)], masks[static_cast<std::size_t>(g)]);
      }
    }
    const Assignment asg = solve_lap(cost);
    for (const auto& [r, g] : asg.pairs) {
      grown[static_cast<std::size_t>(r)].unite(masks[static_cast<std::size_t>(g)]);
      const auto ml = batch.mask_logits(q, seg.kept_origin[static_cast<std::size_t>(g)]);
      for (std::size_t j = 0; j < hw; ++j) {
        acc_logits[static_cast<std::size_t>(r)][j] += ml[j];
      }
      const auto row = seg.softmax_row(g, c_count);
      for (int j = 0; j < c_count; ++j) {
        soft_sum[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)] += row[j];
      }
      member_count[static_cast<std::size_t>(r)] += 1;
      matched[static_cast<std::size_t>(q)][static_cast<std::size_t>(g)] = 1;
    }
  }

  // Mean class distribution per fused proposal; re-apply the background
  // removal rule of the per-sample stage to the averaged distribution.
  const int background = batch.catalog().background_id();
  std::vector<int> alive;
  std::vector<int> cls_of(static_cast<std::size_t>(n_ref), -1);
  for (int k = 0; k < n_ref; ++k) {
    std::vector<double> mean = soft_sum[static_cast<std::size_t>(k)];
    for (double& v : mean) v /= member_count[static_cast<std::size_t>(k)];
    const int cls = argmax(std::span<const double>(mean));
    if (cls == background) continue;
    cls_of[static_cast<std::size_t>(k)] = cls;
    alive.push_back(k);
  }

  // Per-pixel argmax over the mean mask logits of surviving fused proposals.
  const std::size_t px = pss.pixel_count();
  PanopticMap map(pss.image_width, pss.image_height);
  if (!alive.empty()) {
    const Upscaler up(batch.mask_height(), batch.mask_width(),
                      batch.image_height(), batch.image_width(), mode);
    std::vector<float> best(px, -std::numeric_limits<float>::infinity());
    std::vector<std::int32_t> winner(px, kNoProposal);
    std::vector<float> mean_logits(hw);
    for (std::int32_t a = 0; a < static_cast<std::int32_t>(alive.size()); ++a) {
      const int k = alive[static_cast<std::size_t>(a)];
      const float inv = 1.0f / static_cast<float>(member_count[static_cast<std::size_t>(k)]);
      for (std::size_t j = 0; j < hw; ++j) {
        mean_logits[j] = acc_logits[static_cast<std::size_t>(k)][j] * inv;
      }
      up.fold_max(mean_logits, a, best, winner);
    }
    // Thing instances get dense ids in reference-proposal order.
    std::vector<std::int32_t> id_of(alive.size(), 0);
    std::vector<char> seen(alive.size(), 0);
    for (std::size_t i = 0; i < px; ++i) {
      if (winner[i] != kNoProposal) seen[static_cast<std::size_t>(winner[i])] = 1;
    }
    std::int32_t next_id = 1;
    for (std::size_t a = 0; a < alive.size(); ++a) {
      const int cls = cls_of[static_cast<std::size_t>(alive[a])];
      if (seen[a] && batch.catalog().is_thing(cls)) id_of[a] = next_id++;
    }
    for (std::size_t i = 0; i < px; ++i) {
      if (winner[i] == kNoProposal) continue;
      const std::size_t a = static_cast<std::size_t>(winner[i]);
      map.set(i, cls_of[static_cast<std::size_t>(alive[a])], id_of[a]);
    }
  }

  // Restricted stack: each sample keeps only the proposals that made it into
  // the fused result, so uncertainty measures reflect the fused prediction.
  PerSampleSegmentation restricted;
  restricted.image_height = pss.image_height;
  restricted.image_width = pss.image_width;
  restricted.num_classes = c_count;
  restricted.samples.resize(static_cast<std::size_t>(q_count));
  for (int q = 0; q < q_count; ++q) {
    const SampleSeg& in = pss.samples[static_cast<std::size_t>(q)];
    SampleSeg& out_seg = restricted.samples[static_cast<std::size_t>(q)];
    std::vector<std::int32_t> remap(static_cast<std::size_t>(in.kept_count),
                                    kNoProposal);
    for (int k = 0; k < in.kept_count; ++k) {
      if (!matched[static_cast<std::size_t>(q)][static_cast<std::size_t>(k)]) continue;
      remap[static_cast<std::size_t>(k)] = out_seg.kept_count++;
      out_seg.kept_origin.push_back(in.kept_origin[static_cast<std::size_t>(k)]);
      const auto row = in.softmax_row(k, c_count);
      out_seg.kept_softmax.insert(out_seg.kept_softmax.end(), row.begin(), row.end());
    }
    out_seg.proposal_map.resize(px, kNoProposal);
    for (std::size_t i = 0; i < px; ++i) {
      const std::int32_t k = in.proposal_map[i];
      out_seg.proposal_map[i] =
          (k == kNoProposal) ? kNoProposal : remap[static_cast<std::size_t>(k)];
    }
  }

  HungarianResult result{
      std::move(map),
      build_confidence_stack(std::move(restricted)),
      ref,
      static_cast<int>(alive.size())};
  return result;
}

}  // namespace panfuse

#endif  // PANFUSE_ASSIGNMENT_HPP_
