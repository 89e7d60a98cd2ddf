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
// Panoptic quality: segment matching with the canonical void rules (void
// ground truth excluded from IoU denominators; unmatched predictions mostly
// covering void are forgiven), PQ = SQ * RQ aggregation, and the
// uncertainty-removal sweep producing TPR/FDR curves.

#ifndef PANFUSE_PANOPTIC_EVAL_HPP_
#define PANFUSE_PANOPTIC_EVAL_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <unordered_map>
#include <utility>
#include <vector>

#include "panfuse/catalog.hpp"
#include "panfuse/errors.hpp"
#include "panfuse/panoptic_map.hpp"
#include "panfuse/uncertainty.hpp"

namespace panfuse {

struct ClassStats {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  double iou_sum = 0.0;
};

struct PQStats {
  std::map<std::int32_t, ClassStats> per_class;

  PQStats& operator+=(const PQStats& other) {
    for (const auto& [cls, s] : other.per_class) {
      ClassStats& mine = per_class[cls];
      mine.tp += s.tp;
      mine.fp += s.fp;
      mine.fn += s.fn;
      mine.iou_sum += s.iou_sum;
    }
    return *this;
  }
};

namespace detail {

struct SegRef {
  std::int32_t class_id = 0;
  std::int32_t instance_id = 0;
  std::int64_t area = 0;
};

inline std::vector<SegRef> collect_segments(const PanopticMap& m,
                                            std::vector<std::int32_t>& seg_of_pixel) {
  std::vector<SegRef> segs;
  std::map<std::pair<std::int32_t, std::int32_t>, std::int32_t> lookup;
  seg_of_pixel.assign(m.pixel_count(), -1);
  for (std::size_t i = 0; i < m.pixel_count(); ++i) {
    if (m.is_void(i)) continue;
    const std::pair<std::int32_t, std::int32_t> key{m.class_at(i), m.instance_at(i)};
    auto [it, inserted] = lookup.try_emplace(
        key, static_cast<std::int32_t>(segs.size()));
    if (inserted) segs.push_back({key.first, key.second, 0});
    ++segs[static_cast<std::size_t>(it->second)].area;
    seg_of_pixel[i] = it->second;
  }
  return segs;
}

}  // namespace detail

// Matches same-class segments with IoU strictly above iou_threshold, largest
// IoU first. At the canonical 0.5 threshold the matching is provably unique;
// lower thresholds (the sweep uses 0.2) can be ambiguous, which the greedy
// order resolves deterministically.
inline PQStats match_segments(const PanopticMap& pred, const PanopticMap& gt,
                              double iou_threshold = 0.5) {
  if (pred.width() != gt.width() || pred.height() != gt.height()) {
    throw ShapeError("prediction and ground truth dims differ");
  }
  std::vector<std::int32_t> pred_seg, gt_seg;
  const auto psegs = detail::collect_segments(pred, pred_seg);
  const auto gsegs = detail::collect_segments(gt, gt_seg);

  std::unordered_map<std::uint64_t, std::int64_t> inter;
  std::vector<std::int64_t> pred_void(psegs.size(), 0);
  for (std::size_t i = 0; i < pred.pixel_count(); ++i) {
    const std::int32_t p = pred_seg[i];
    if (p < 0) continue;
    const std::int32_t g = gt_seg[i];
    if (g < 0) {
      ++pred_void[static_cast<std::size_t>(p)];
    } else {
      ++inter[(static_cast<std::uint64_t>(p) << 32) |
              static_cast<std::uint32_t>(g)];
    }
  }

  struct Candidate {
    double iou;
    std::int32_t p, g;
  };
  std::vector<Candidate> cands;
  for (const auto& [key, overlap] : inter) {
    const std::int32_t p = static_cast<std::int32_t>(key >> 32);
    const std::int32_t g = static_cast<std::int32_t>(key & 0xffffffffu);
    if (psegs[static_cast<std::size_t>(p)].class_id !=
        gsegs[static_cast<std::size_t>(g)].class_id) {
      continue;
    }
    // Void ground truth under the prediction drops out of the union.
    const std::int64_t uni = psegs[static_cast<std::size_t>(p)].area +
                             gsegs[static_cast<std::size_t>(g)].area - overlap -
                             pred_void[static_cast<std::size_t>(p)];
    const double v = static_cast<double>(overlap) / static_cast<double>(uni);
    if (v > iou_threshold) cands.push_back({v, p, g});
  }
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.p != b.p) return a.p < b.p;
    return a.g < b.g;
  });

  PQStats stats;
  std::vector<char> p_used(psegs.size(), 0), g_used(gsegs.size(), 0);
  for (const Candidate& c : cands) {
    if (p_used[static_cast<std::size_t>(c.p)] || g_used[static_cast<std::size_t>(c.g)]) {
      continue;
    }
    p_used[static_cast<std::size_t>(c.p)] = 1;
    g_used[static_cast<std::size_t>(c.g)] = 1;
    ClassStats& s = stats.per_class[psegs[static_cast<std::size_t>(c.p)].class_id];
    s.tp += 1;
    s.iou_sum += c.iou;
  }
  for (std::size_t g = 0; g < gsegs.size(); ++g) {
    if (!g_used[g]) stats.per_class[gsegs[g].class_id].fn += 1;
  }
  for (std::size_t p = 0; p < psegs.size(); ++p) {
    if (p_used[p]) continue;
    // Predictions sitting mostly on unannotated ground truth are not errors.
    if (2 * pred_void[p] > psegs[p].area) continue;
    stats.per_class[psegs[p].class_id].fp += 1;
  }
  return stats;
}

struct ClassPQ {
  std::int32_t class_id = 0;
  std::int64_t tp = 0, fp = 0, fn = 0;
  double iou_sum = 0.0;
  double pq = 0.0, sq = 0.0, rq = 0.0;
  bool defined = false;     // tp + fp + fn > 0
  bool sq_defined = false;  // tp > 0
};

struct PQAggregate {
  double pq = 0.0, sq = 0.0, rq = 0.0;
  int num_classes = 0;  // defined classes averaged
};

struct PQResult {
  std::vector<ClassPQ> per_class;
  PQAggregate all, things, stuff;
};

// Per-class PQ/SQ/RQ plus unweighted means over defined classes for
// all/things/stuff. The background class never forms segments in valid maps
// and is excluded from the aggregates if it somehow appears.
inline PQResult pq(const PQStats& stats, const ClassCatalog& catalog) {
  PQResult out;
  auto add = [](PQAggregate& agg, const ClassPQ& c) {
    agg.pq += c.pq;
    agg.sq += c.sq;
    agg.rq += c.rq;
    agg.num_classes += 1;
  };
  for (const auto& [cls, s] : stats.per_class) {
    ClassPQ c;
    c.class_id = cls;
    c.tp = s.tp;
    c.fp = s.fp;
    c.fn = s.fn;
    c.iou_sum = s.iou_sum;
    c.defined = (s.tp + s.fp + s.fn) > 0;
    c.sq_defined = s.tp > 0;
    const double denom =
        static_cast<double>(s.tp) + 0.5 * static_cast<double>(s.fp) +
        0.5 * static_cast<double>(s.fn);
    if (denom > 0.0) {
      c.pq = s.iou_sum / denom;
      c.rq = static_cast<double>(s.tp) / denom;
    }
    if (c.sq_defined) c.sq = s.iou_sum / static_cast<double>(s.tp);
    if (c.defined && !catalog.is_background(cls)) {
      add(out.all, c);
      if (catalog.is_thing(cls)) {
        add(out.things, c);
      } else {
        add(out.stuff, c);
      }
    }
    out.per_class.push_back(c);
  }
  for (PQAggregate* agg : {&out.all, &out.things, &out.stuff}) {
    if (agg->num_classes > 0) {
      agg->pq /= agg->num_classes;
      agg->sq /= agg->num_classes;
      agg->rq /= agg->num_classes;
    }
  }
  return out;
}

inline constexpr double kSweepIouThreshold = 0.2;

struct SweepInput {
  const PanopticMap* pred = nullptr;
  const UncertaintyMap* uncertainty = nullptr;
  const PanopticMap* gt = nullptr;
};

struct SweepPoint {
  double threshold = 0.0;
  double removed_fraction = 0.0;
  double tpr = 0.0;
  double fdr = 0.0;
  std::int64_t tp = 0, fp = 0, fn = 0;
};

struct SweepCurve {
  double iou_threshold = kSweepIouThreshold;
  std::vector<SweepPoint> points;
};

struct SweepParams {
  double iou_threshold = kSweepIouThreshold;
  int num_points = 50;
  double max_removal = 0.95;
};

namespace detail {

inline void check_sweep_input(const SweepInput& in) {
  if (!in.pred || !in.uncertainty || !in.gt) {
    throw ValidationError("sweep input missing a map");
  }
  if (in.pred->width() != in.gt->width() ||
      in.pred->height() != in.gt->height() ||
      in.uncertainty->width != in.pred->width() ||
      in.uncertainty->height != in.pred->height()) {
    throw ShapeError("sweep maps are not aligned");
  }
}

// Pixels never covered by any sample carry no usable confidence; the sweep
// treats them as maximally uncertain.
inline double effective_u(const UncertaintyMap& u, std::size_t i) {
  if (u.no_prediction[i]) return std::log(static_cast<double>(u.num_classes));
  return u.values[i];
}

}  // namespace detail

// Thresholds hitting removal fractions 0 .. max_removal in num_points steps,
// taken from the pooled distribution of uncertainty over annotated ground
// truth. The first threshold is +inf (nothing removed).
inline std::vector<double> sweep_threshold_grid(
    const std::vector<SweepInput>& inputs, const SweepParams& params) {
  if (params.num_points < 1) throw ValidationError("need at least one point");
  std::vector<double> pool;
  for (const SweepInput& in : inputs) {
    detail::check_sweep_input(in);
    for (std::size_t i = 0; i < in.gt->pixel_count(); ++i) {
      if (!in.gt->is_void(i)) pool.push_back(detail::effective_u(*in.uncertainty, i));
    }
  }
  std::sort(pool.begin(), pool.end());
  std::vector<double> grid{std::numeric_limits<double>::infinity()};
  const std::int64_t n = static_cast<std::int64_t>(pool.size());
  for (int j = 1; j < params.num_points; ++j) {
    const double f = params.max_removal * j / (params.num_points - 1);
    const std::int64_t remove = std::llround(f * static_cast<double>(n));
    if (remove <= 0 || n == 0) continue;
    const double t = pool[static_cast<std::size_t>(n - remove)];
    if (t != grid.back()) grid.push_back(t);
  }
  return grid;
}

// For each threshold, voids ground truth wherever uncertainty >= threshold,
// re-matches at the sweep IoU threshold, and reports micro-averaged TPR and
// FDR over all classes.
inline SweepCurve uncertainty_sweep(const std::vector<SweepInput>& inputs,
                                    const std::vector<double>& thresholds,
                                    double iou_threshold = kSweepIouThreshold) {
  for (const SweepInput& in : inputs) detail::check_sweep_input(in);
  std::int64_t total_gt = 0;
  for (const SweepInput& in : inputs) {
    for (std::size_t i = 0; i < in.gt->pixel_count(); ++i) {
      if (!in.gt->is_void(i)) ++total_gt;
    }
  }

  SweepCurve curve;
  curve.iou_threshold = iou_threshold;
  for (const double t : thresholds) {
    PQStats stats;
    std::int64_t removed = 0;
    for (const SweepInput& in : inputs) {
      PanopticMap gt = *in.gt;
      for (std::size_t i = 0; i < gt.pixel_count(); ++i) {
        if (gt.is_void(i)) continue;
        if (detail::effective_u(*in.uncertainty, i) >= t) {
          gt.set_void(i);
          ++removed;
        }
      }
      stats += match_segments(*in.pred, gt, iou_threshold);
    }
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (const auto& [cls, s] : stats.per_class) {
      tp += s.tp;
      fp += s.fp;
      fn += s.fn;
    }
    SweepPoint pt;
    pt.threshold = t;
    pt.removed_fraction =
        total_gt > 0 ? static_cast<double>(removed) / static_cast<double>(total_gt)
                     : 0.0;
    pt.tp = tp;
    pt.fp = fp;
    pt.fn = fn;
    pt.tpr = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn)
                           : 0.0;
    pt.fdr = (tp + fp) > 0 ? static_cast<double>(fp) / static_cast<double>(tp + fp)
                           : 0.0;
    curve.points.push_back(pt);
  }
  return curve;
}

inline SweepCurve uncertainty_sweep(const std::vector<SweepInput>& inputs,
                                    const SweepParams& params = {}) {
  return uncertainty_sweep(inputs, sweep_threshold_grid(inputs, params),
                           params.iou_threshold);
}

inline SweepCurve uncertainty_sweep(const PanopticMap& pred,
                                    const UncertaintyMap& u,
                                    const PanopticMap& gt,
                                    const SweepParams& params = {}) {
  return uncertainty_sweep({SweepInput{&pred, &u, &gt}}, params);
}

}  // namespace panfuse

#endif  // PANFUSE_PANOPTIC_EVAL_HPP_
