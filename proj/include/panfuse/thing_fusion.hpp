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
// Thing fusion: sequentially cluster instance proposals across samples by
// mask IoU (one pass, merge into the best match above a threshold or found a
// new cluster), then let well-supported clusters claim the still-void pixels
// of the stuff map in order of support.

#ifndef PANFUSE_THING_FUSION_HPP_
#define PANFUSE_THING_FUSION_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "panfuse/catalog.hpp"
#include "panfuse/errors.hpp"
#include "panfuse/mask.hpp"
#include "panfuse/panoptic_map.hpp"
#include "panfuse/stuff_fusion.hpp"

namespace panfuse {

struct FusionParams {
  double iou_threshold = 0.6;
  double min_member_fraction = 0.8;

  void validate() const {
    if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0)) {
      throw ValidationError("iou_threshold must be in [0, 1]");
    }
    if (!(min_member_fraction > 0.0 && min_member_fraction <= 1.0)) {
      throw ValidationError("min_member_fraction must be in (0, 1]");
    }
  }
};

// Smallest member count a record needs to survive: ceil(fraction * q). The
// epsilon guards against products like 0.8 * 15 landing just above the
// integer they represent, which would otherwise round the requirement up.
inline int min_member_threshold(double fraction, int q) {
  return static_cast<int>(std::ceil(fraction * q - 1e-9));
}

// One cluster of matched instance proposals.
struct InstanceRecord {
  BitMask mask;                          // union of member masks
  int member_count = 0;                  // proposals merged in, founder included
  std::vector<double> softmax_sum;       // sum of member class softmax vectors
  int founding_order = 0;
  std::vector<std::pair<int, int>> members;  // (sample, kept-proposal index)

  std::vector<double> mean_softmax() const {
    std::vector<double> m(softmax_sum);
    for (double& v : m) v /= member_count;
    return m;
  }
  double max_mean_softmax() const {
    double hi = 0.0;
    for (double v : softmax_sum) hi = std::max(hi, v);
    return hi / member_count;
  }
};

// Descending member_count; ties by higher max mean softmax, then by earlier
// founding order.
inline std::vector<InstanceRecord> sort_by_mergers(
    std::vector<InstanceRecord> records) {
  std::stable_sort(records.begin(), records.end(),
                   [](const InstanceRecord& a, const InstanceRecord& b) {
                     if (a.member_count != b.member_count) {
                       return a.member_count > b.member_count;
                     }
                     const double ca = a.max_mean_softmax();
                     const double cb = b.max_mean_softmax();
                     if (ca != cb) return ca > cb;
                     return a.founding_order < b.founding_order;
                   });
  return records;
}

// Pixels a surviving record claims, with the class and instance id it stamps.
struct ThingAssignment {
  BitMask claimed;
  std::int32_t class_id = 0;
  std::int32_t instance_id = 0;
};

// Stamps the claims onto a copy of the stuff map. Claims must target void
// cells only; a collision means the claim construction is broken.
inline PanopticMap combine(const PanopticMap& s_initial,
                           const std::vector<ThingAssignment>& assignments) {
  PanopticMap out = s_initial;
  for (const ThingAssignment& a : assignments) {
    a.claimed.for_each_set([&](std::size_t i) {
      if (!out.is_void(i)) {
        throw std::logic_error("thing assignment overlaps a labeled cell");
      }
      out.set(i, a.class_id, a.instance_id);
    });
  }
  return out;
}

struct ThingSegResult {
  PanopticMap s_final;
  std::vector<InstanceRecord> records;       // sorted by support
  std::vector<ThingAssignment> assignments;  // records that claimed pixels
  int member_threshold = 0;
};

inline ThingSegResult thing_seg(const StuffSegResult& sr,
                                const ClassCatalog& catalog,
                                const FusionParams& params = {}) {
  params.validate();
  const PerSampleSegmentation& pss = sr.sc.pss();
  const int q_count = pss.num_samples();
  const int width = pss.image_width;
  const int height = pss.image_height;
  const std::size_t px = pss.pixel_count();

  std::vector<InstanceRecord> records;

  for (int q = 0; q < q_count; ++q) {
    const SampleSeg& s = pss.samples[static_cast<std::size_t>(q)];
    if (s.kept_count == 0) continue;

    // Proposal masks restricted to pixels the mean confidence calls a thing.
    std::vector<BitMask> masks(static_cast<std::size_t>(s.kept_count));
    std::vector<bool> present(static_cast<std::size_t>(s.kept_count), false);
    for (std::size_t i = 0; i < px; ++i) {
      const std::int32_t k = s.proposal_map[i];
      if (k == kNoProposal) continue;
      const std::int32_t cls = sr.mc_argmax[i];
      if (cls < 0 || !catalog.is_thing(cls)) continue;
      if (!present[static_cast<std::size_t>(k)]) {
        masks[static_cast<std::size_t>(k)] = BitMask(width, height);
        present[static_cast<std::size_t>(k)] = true;
      }
      masks[static_cast<std::size_t>(k)].set(i);
    }

    for (int k = 0; k < s.kept_count; ++k) {
      if (!present[static_cast<std::size_t>(k)]) continue;
      BitMask& m = masks[static_cast<std::size_t>(k)];
      int best = -1;
      double best_iou = 0.0;
      for (std::size_t r = 0; r < records.size(); ++r) {
        const double v = iou(m, records[r].mask);
        if (v > best_iou) {
          best_iou = v;
          best = static_cast<int>(r);
        }
      }
      const auto row = s.softmax_row(k, pss.num_classes);
      if (best >= 0 && best_iou >= params.iou_threshold) {
        InstanceRecord& rec = records[static_cast<std::size_t>(best)];
        rec.mask.unite(m);
        rec.member_count += 1;
        for (std::size_t j = 0; j < row.size(); ++j) rec.softmax_sum[j] += row[j];
        rec.members.emplace_back(q, k);
      } else {
        InstanceRecord rec;
        rec.mask = std::move(m);
        rec.member_count = 1;
        rec.softmax_sum.assign(row.begin(), row.end());
        rec.founding_order = static_cast<int>(records.size());
        rec.members.emplace_back(q, k);
        records.push_back(std::move(rec));
      }
    }
  }

  ThingSegResult out;
  out.records = sort_by_mergers(std::move(records));
  out.member_threshold = min_member_threshold(params.min_member_fraction, q_count);

  PanopticMap working = sr.s_initial;
  std::int32_t next_id = 1;
  for (const InstanceRecord& rec : out.records) {
    if (rec.member_count < out.member_threshold) continue;
    const std::vector<double> mean = rec.mean_softmax();
    const int cls = argmax(std::span<const double>(mean));
    // A record whose fused class comes out stuff or background has no place
    // in the instance map; it claims nothing.
    if (!catalog.is_thing(cls)) continue;
    ThingAssignment a;
    a.claimed = BitMask(width, height);
    rec.mask.for_each_set([&](std::size_t i) {
      if (working.is_void(i)) a.claimed.set(i);
    });
    if (a.claimed.empty()) continue;
    a.class_id = cls;
    a.instance_id = next_id++;
    a.claimed.for_each_set(
        [&](std::size_t i) { working.set(i, a.class_id, a.instance_id); });
    out.assignments.push_back(std::move(a));
  }

  out.s_final = combine(sr.s_initial, out.assignments);
  return out;
}

}  // namespace panfuse

#endif  // PANFUSE_THING_FUSION_HPP_
