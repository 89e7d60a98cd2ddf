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
// End-to-end fusion paths: the ensemble method (stuff fusion + sequential
// thing matching + confidence pruning), the assignment-matching method, and
// the single-sample baseline with its confidence/size filter.

#ifndef PANFUSE_PIPELINE_HPP_
#define PANFUSE_PIPELINE_HPP_

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "panfuse/assignment.hpp"
#include "panfuse/catalog.hpp"
#include "panfuse/errors.hpp"
#include "panfuse/manifest.hpp"
#include "panfuse/panoptic_map.hpp"
#include "panfuse/per_sample.hpp"
#include "panfuse/stuff_fusion.hpp"
#include "panfuse/thing_fusion.hpp"
#include "panfuse/uncertainty.hpp"

namespace panfuse {

enum class Method { kOurs, kHungarian, kBaseline };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::kOurs: return "ours";
    case Method::kHungarian: return "hungarian";
    case Method::kBaseline: return "baseline";
  }
  return "unknown";
}

inline Method parse_method(const std::string& s) {
  if (s == "ours") return Method::kOurs;
  if (s == "hungarian") return Method::kHungarian;
  if (s == "baseline") return Method::kBaseline;
  throw ValidationError("unknown method: " + s);
}

struct FuseParams {
  int q_limit = 0;  // 0 = use every sample in the batch
  double iou_threshold = 0.6;
  double min_member_fraction = 0.8;
  double min_prob = 0.4;
  int min_pixels = 4;
  double baseline_min_score = 0.85;
  int baseline_min_pixels = 4;
  bool prune_enabled = true;
  std::optional<std::uint64_t> hungarian_seed;
  UpscaleMode upscale = UpscaleMode::kBilinear;
};

struct FuseResult {
  Method method = Method::kOurs;
  PanopticMap map;
  std::optional<UncertaintyMap> predictive;
  std::optional<UncertaintyMap> mutual_info;
  std::optional<UncertaintyMap> softmax_entropy;
  int instance_count = 0;
  int segment_count = 0;
};

inline int count_instances(const PanopticMap& m) {
  std::set<std::pair<std::int32_t, std::int32_t>> ids;
  for (std::size_t i = 0; i < m.pixel_count(); ++i) {
    if (!m.is_void(i) && m.instance_at(i) > 0) {
      ids.insert({m.class_at(i), m.instance_at(i)});
    }
  }
  return static_cast<int>(ids.size());
}

inline int count_segments(const PanopticMap& m) {
  std::set<std::pair<std::int32_t, std::int32_t>> ids;
  for (std::size_t i = 0; i < m.pixel_count(); ++i) {
    if (!m.is_void(i)) ids.insert({m.class_at(i), m.instance_at(i)});
  }
  return static_cast<int>(ids.size());
}

struct BaselineParams {
  double min_score = 0.85;
  int min_pixels = 4;
};

// Single-sample segmentation: keep proposals whose top class probability
// reaches min_score, re-run the per-pixel argmax over the survivors (pixels
// of discarded proposals fall to the next best proposal), then drop segments
// below min_pixels. Thing instance ids rank by confidence, then by proposal
// order.
inline PanopticMap baseline_segmentation(const EnsembleBatch& batch,
                                         const PerSampleSegmentation& pss,
                                         int sample,
                                         const BaselineParams& params = {},
                                         UpscaleMode mode = UpscaleMode::kBilinear) {
  const ClassCatalog& catalog = batch.catalog();
  const SampleSeg& s = pss.samples.at(static_cast<std::size_t>(sample));
  const int c_count = pss.num_classes;

  std::vector<std::int32_t> confident_origin;
  std::vector<int> cls;
  std::vector<double> score;
  for (int k = 0; k < s.kept_count; ++k) {
    const auto row = s.softmax_row(k, c_count);
    const int c = argmax(row);
    const double p = row[static_cast<std::size_t>(c)];
    if (p < params.min_score) continue;
    confident_origin.push_back(s.kept_origin[static_cast<std::size_t>(k)]);
    cls.push_back(c);
    score.push_back(p);
  }

  const Upscaler up(batch.mask_height(), batch.mask_width(),
                    batch.image_height(), batch.image_width(), mode);
  const std::vector<std::int32_t> winner =
      detail::fold_proposal_argmax(batch, sample, confident_origin, up);

  std::vector<std::int64_t> owned(confident_origin.size(), 0);
  for (const std::int32_t w : winner) {
    if (w != kNoProposal) ++owned[static_cast<std::size_t>(w)];
  }

  // Instance ids by descending confidence; proposal order breaks ties.
  std::vector<int> order(confident_origin.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[static_cast<std::size_t>(i)] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return score[static_cast<std::size_t>(a)] > score[static_cast<std::size_t>(b)];
  });
  std::vector<std::int32_t> id_of(confident_origin.size(), 0);
  std::int32_t next_id = 1;
  for (const int k : order) {
    if (owned[static_cast<std::size_t>(k)] > 0 &&
        catalog.is_thing(cls[static_cast<std::size_t>(k)])) {
      id_of[static_cast<std::size_t>(k)] = next_id++;
    }
  }

  PanopticMap map(pss.image_width, pss.image_height);
  for (std::size_t i = 0; i < winner.size(); ++i) {
    const std::int32_t w = winner[i];
    if (w == kNoProposal) continue;
    map.set(i, cls[static_cast<std::size_t>(w)], id_of[static_cast<std::size_t>(w)]);
  }

  if (params.min_pixels > 1) {
    std::map<std::pair<std::int32_t, std::int32_t>, std::int64_t> area;
    for (std::size_t i = 0; i < map.pixel_count(); ++i) {
      if (!map.is_void(i)) ++area[{map.class_at(i), map.instance_at(i)}];
    }
    for (std::size_t i = 0; i < map.pixel_count(); ++i) {
      if (map.is_void(i)) continue;
      if (area[{map.class_at(i), map.instance_at(i)}] < params.min_pixels) {
        map.set_void(i);
      }
    }
  }
  return map;
}

inline FuseResult fuse_ours(const EnsembleBatch& input, const FuseParams& params = {}) {
  const EnsembleBatch batch =
      (params.q_limit > 0 && params.q_limit < input.num_samples())
          ? input.take_samples(params.q_limit)
          : input;
  auto pss = std::make_shared<const PerSampleSegmentation>(
      per_sample_seg(batch, params.upscale));
  StuffSegResult sr = stuff_seg(pss, batch.catalog());
  ThingSegResult tr = thing_seg(
      sr, batch.catalog(), {params.iou_threshold, params.min_member_fraction});

  FuseResult out;
  out.method = Method::kOurs;
  out.map = params.prune_enabled
                ? prune(tr.s_final, sr.mc, params.min_prob, params.min_pixels)
                : std::move(tr.s_final);
  out.predictive = predictive_entropy(sr.mc);
  out.mutual_info = mutual_information(sr.sc, sr.mc);
  out.instance_count = count_instances(out.map);
  out.segment_count = count_segments(out.map);
  return out;
}

inline FuseResult fuse_hungarian(const EnsembleBatch& input,
                                 const FuseParams& params = {}) {
  const EnsembleBatch batch =
      (params.q_limit > 0 && params.q_limit < input.num_samples())
          ? input.take_samples(params.q_limit)
          : input;
  auto pss = std::make_shared<const PerSampleSegmentation>(
      per_sample_seg(batch, params.upscale));
  HungarianResult hr = hungarian_fuse(
      batch, pss, HungarianParams{params.hungarian_seed}, params.upscale);
  const MeanConfidence mc = mean_confidence(hr.stack);

  FuseResult out;
  out.method = Method::kHungarian;
  out.map = std::move(hr.map);
  out.predictive = predictive_entropy(mc);
  out.mutual_info = mutual_information(hr.stack, mc);
  out.instance_count = count_instances(out.map);
  out.segment_count = count_segments(out.map);
  return out;
}

// Single sample, no ensembling: the first sample of the batch.
inline FuseResult fuse_baseline(const EnsembleBatch& input,
                                const FuseParams& params = {}) {
  const EnsembleBatch batch =
      input.num_samples() > 1 ? input.take_samples(1) : input;
  const PerSampleSegmentation pss = per_sample_seg(batch, params.upscale);

  FuseResult out;
  out.method = Method::kBaseline;
  out.map = baseline_segmentation(
      batch, pss, 0, {params.baseline_min_score, params.baseline_min_pixels},
      params.upscale);
  out.softmax_entropy = softmax_entropy_baseline(build_confidence_stack(pss));
  out.instance_count = count_instances(out.map);
  out.segment_count = count_segments(out.map);
  return out;
}

inline FuseResult fuse(const EnsembleBatch& batch, Method method,
                       const FuseParams& params = {}) {
  switch (method) {
    case Method::kOurs: return fuse_ours(batch, params);
    case Method::kHungarian: return fuse_hungarian(batch, params);
    case Method::kBaseline: return fuse_baseline(batch, params);
  }
  throw ValidationError("unknown method");
}

}  // namespace panfuse

#endif  // PANFUSE_PIPELINE_HPP_
