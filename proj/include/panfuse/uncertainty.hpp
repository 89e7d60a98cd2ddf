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
// Per-pixel uncertainty over confidence stacks: predictive entropy of the
// mean distribution, mutual information (predictive entropy minus the mean
// per-sample entropy), and the single-sample softmax-entropy baseline. Also
// pruning by mean confidence, histogram binning, and heatmap export.

#ifndef PANFUSE_UNCERTAINTY_HPP_
#define PANFUSE_UNCERTAINTY_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "panfuse/errors.hpp"
#include "panfuse/panoptic_map.hpp"
#include "panfuse/png_io.hpp"
#include "panfuse/stuff_fusion.hpp"

namespace panfuse {

enum class UncertaintyMeasure {
  kSoftmaxEntropy,
  kPredictiveEntropy,
  kMutualInformation,
};

inline const char* measure_name(UncertaintyMeasure m) {
  switch (m) {
    case UncertaintyMeasure::kSoftmaxEntropy: return "softmax_entropy";
    case UncertaintyMeasure::kPredictiveEntropy: return "predictive_entropy";
    case UncertaintyMeasure::kMutualInformation: return "mutual_information";
  }
  return "unknown";
}

struct UncertaintyMap {
  UncertaintyMeasure measure = UncertaintyMeasure::kPredictiveEntropy;
  int height = 0;
  int width = 0;
  int num_classes = 0;
  std::vector<double> values;              // H*W, natural-log units
  std::vector<std::uint8_t> no_prediction; // pixels no sample covered

  std::size_t pixel_count() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
};

// Shannon entropy in nats with 0 ln 0 = 0. Accepts subnormalized vectors
// (uncovered pixels contribute zero mass).
inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

inline UncertaintyMap predictive_entropy(const MeanConfidence& mc) {
  UncertaintyMap u;
  u.measure = UncertaintyMeasure::kPredictiveEntropy;
  u.height = mc.height;
  u.width = mc.width;
  u.num_classes = mc.num_classes;
  const std::size_t px = u.pixel_count();
  u.values.resize(px);
  u.no_prediction.resize(px);
  for (std::size_t i = 0; i < px; ++i) {
    u.values[i] = entropy(mc.at(i));
    u.no_prediction[i] = mc.coverage[i] == 0 ? 1 : 0;
  }
  return u;
}

namespace detail {

// Entropy of every kept proposal's softmax vector, per sample.
inline std::vector<std::vector<double>> kept_entropies(
    const PerSampleSegmentation& pss) {
  std::vector<std::vector<double>> table(pss.samples.size());
  for (std::size_t q = 0; q < pss.samples.size(); ++q) {
    const SampleSeg& s = pss.samples[q];
    table[q].resize(static_cast<std::size_t>(s.kept_count));
    for (int k = 0; k < s.kept_count; ++k) {
      table[q][static_cast<std::size_t>(k)] =
          entropy(s.softmax_row(k, pss.num_classes));
    }
  }
  return table;
}

}  // namespace detail

inline UncertaintyMap mutual_information(const ConfidenceStack& sc,
                                         const MeanConfidence& mc) {
  UncertaintyMap u;
  u.measure = UncertaintyMeasure::kMutualInformation;
  u.height = sc.height();
  u.width = sc.width();
  u.num_classes = sc.num_classes();
  const std::size_t px = u.pixel_count();
  u.values.resize(px);
  u.no_prediction.resize(px);

  const auto table = detail::kept_entropies(sc.pss());
  const int q_count = sc.num_samples();
  const double inv_q = 1.0 / q_count;
  for (std::size_t i = 0; i < px; ++i) {
    double mean_h = 0.0;
    for (int q = 0; q < q_count; ++q) {
      const std::int32_t k = sc.proposal_at(q, i);
      if (k != kNoProposal) {
        mean_h += table[static_cast<std::size_t>(q)][static_cast<std::size_t>(k)];
      }
    }
    u.values[i] = entropy(mc.at(i)) - mean_h * inv_q;
    u.no_prediction[i] = mc.coverage[i] == 0 ? 1 : 0;
  }
  return u;
}

inline UncertaintyMap mutual_information(const ConfidenceStack& sc) {
  return mutual_information(sc, mean_confidence(sc));
}

// Entropy of the one sample of a single-sample stack.
inline UncertaintyMap softmax_entropy_baseline(const ConfidenceStack& sc) {
  if (sc.num_samples() != 1) {
    throw ValidationError("softmax entropy baseline needs exactly one sample");
  }
  UncertaintyMap u;
  u.measure = UncertaintyMeasure::kSoftmaxEntropy;
  u.height = sc.height();
  u.width = sc.width();
  u.num_classes = sc.num_classes();
  const std::size_t px = u.pixel_count();
  u.values.resize(px);
  u.no_prediction.resize(px);
  const auto table = detail::kept_entropies(sc.pss());
  for (std::size_t i = 0; i < px; ++i) {
    const std::int32_t k = sc.proposal_at(0, i);
    u.no_prediction[i] = k == kNoProposal ? 1 : 0;
    u.values[i] =
        k == kNoProposal ? 0.0 : table[0][static_cast<std::size_t>(k)];
  }
  return u;
}

// Voids pixels whose assigned-class mean confidence falls below min_prob,
// then removes whole segments that end up smaller than min_pixels.
// Idempotent for fixed parameters.
inline PanopticMap prune(const PanopticMap& m, const MeanConfidence& mc,
                         double min_prob, int min_pixels) {
  if (m.width() != mc.width || m.height() != mc.height) {
    throw ShapeError("map and mean confidence dims differ");
  }
  PanopticMap out = m;
  const std::size_t px = out.pixel_count();
  for (std::size_t i = 0; i < px; ++i) {
    if (out.is_void(i)) continue;
    const double p = mc.at(i)[static_cast<std::size_t>(out.class_at(i))];
    if (p < min_prob) out.set_void(i);
  }
  if (min_pixels > 1) {
    std::map<std::pair<std::int32_t, std::int32_t>, std::int64_t> area;
    for (std::size_t i = 0; i < px; ++i) {
      if (!out.is_void(i)) ++area[{out.class_at(i), out.instance_at(i)}];
    }
    for (std::size_t i = 0; i < px; ++i) {
      if (out.is_void(i)) continue;
      if (area[{out.class_at(i), out.instance_at(i)}] < min_pixels) {
        out.set_void(i);
      }
    }
  }
  return out;
}

struct EntropyHistogram {
  int num_classes = 0;
  std::vector<double> edges;        // n_bins + 1, uniform over [0, ln C]
  std::vector<std::int64_t> counts; // n_bins
  std::int64_t total = 0;
};

// Uniform bins over [0, ln C]; the rightmost bin is closed so ln C itself is
// counted. Values outside the range (tiny numeric slop) clamp to the end bins.
inline EntropyHistogram bin_entropy(const std::vector<UncertaintyMap>& maps,
                                    int n_bins) {
  if (n_bins < 1) throw ValidationError("need at least one bin");
  if (maps.empty()) throw ValidationError("need at least one map");
  const int c = maps.front().num_classes;
  for (const auto& m : maps) {
    if (m.num_classes != c) {
      throw ValidationError("histogram inputs disagree on class count");
    }
  }
  EntropyHistogram h;
  h.num_classes = c;
  const double max_u = std::log(static_cast<double>(c));
  h.edges.resize(static_cast<std::size_t>(n_bins) + 1);
  for (int b = 0; b <= n_bins; ++b) {
    h.edges[static_cast<std::size_t>(b)] = max_u * b / n_bins;
  }
  h.counts.assign(static_cast<std::size_t>(n_bins), 0);
  for (const auto& m : maps) {
    for (double v : m.values) {
      int b = static_cast<int>(std::floor(v / max_u * n_bins));
      b = std::clamp(b, 0, n_bins - 1);
      ++h.counts[static_cast<std::size_t>(b)];
      ++h.total;
    }
  }
  return h;
}

// 8-bit grayscale heatmap, 0 = certain, 255 = ln C; fixed scale so images
// are comparable across a dataset. Half-up rounding.
inline void export_heatmap(const UncertaintyMap& u,
                           const std::filesystem::path& path) {
  const double max_u = std::log(static_cast<double>(u.num_classes));
  std::vector<std::uint8_t> gray(u.pixel_count());
  for (std::size_t i = 0; i < gray.size(); ++i) {
    const double scaled = 255.0 * u.values[i] / max_u;
    gray[i] = static_cast<std::uint8_t>(
        std::clamp(std::floor(scaled + 0.5), 0.0, 255.0));
  }
  write_gray_png(path, u.width, u.height, gray);
}

}  // namespace panfuse

#endif  // PANFUSE_UNCERTAINTY_HPP_
