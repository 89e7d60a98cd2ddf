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
// Stuff fusion: per-sample confidence stacks, their mean across samples, and
// the stuff-only initial panoptic map built from the per-pixel argmax of the
// mean confidence.

#ifndef PANFUSE_STUFF_FUSION_HPP_
#define PANFUSE_STUFF_FUSION_HPP_

#include <cstdint>
#include <cstring>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "panfuse/catalog.hpp"
#include "panfuse/errors.hpp"
#include "panfuse/panoptic_map.hpp"
#include "panfuse/per_sample.hpp"

namespace panfuse {

// Q x H x W x C stack of per-pixel class distributions: the softmax vector of
// the proposal owning the pixel in each sample, or the zero vector where no
// proposal covers it. Stored compactly as the per-sample proposal maps plus
// each sample's kept-proposal softmax table; the dense Q*H*W*C array is never
// materialized.
class ConfidenceStack {
 public:
  explicit ConfidenceStack(std::shared_ptr<const PerSampleSegmentation> pss)
      : pss_(std::move(pss)) {
    if (!pss_ || pss_->samples.empty()) {
      throw ValidationError("confidence stack needs at least one sample");
    }
  }

  const PerSampleSegmentation& pss() const { return *pss_; }
  std::shared_ptr<const PerSampleSegmentation> pss_ptr() const { return pss_; }
  int num_samples() const { return pss_->num_samples(); }
  int height() const { return pss_->image_height; }
  int width() const { return pss_->image_width; }
  int num_classes() const { return pss_->num_classes; }
  std::size_t pixel_count() const { return pss_->pixel_count(); }

  std::int32_t proposal_at(int q, std::size_t idx) const {
    return pss_->samples[static_cast<std::size_t>(q)].proposal_map[idx];
  }

  // Empty span means the pixel is uncovered in this sample (zero vector).
  std::span<const double> softmax_at(int q, std::size_t idx) const {
    const SampleSeg& s = pss_->samples[static_cast<std::size_t>(q)];
    const std::int32_t k = s.proposal_map[idx];
    if (k == kNoProposal) return {};
    return s.softmax_row(k, num_classes());
  }

  // Materialized C-vector, zeros when uncovered. Test/debug convenience.
  std::vector<double> pixel_vector(int q, int x, int y) const {
    std::vector<double> out(static_cast<std::size_t>(num_classes()), 0.0);
    const std::size_t idx = static_cast<std::size_t>(y) *
                                static_cast<std::size_t>(width()) +
                            static_cast<std::size_t>(x);
    const auto s = softmax_at(q, idx);
    std::copy(s.begin(), s.end(), out.begin());
    return out;
  }

 private:
  std::shared_ptr<const PerSampleSegmentation> pss_;
};

inline ConfidenceStack build_confidence_stack(PerSampleSegmentation pss) {
  return ConfidenceStack(
      std::make_shared<const PerSampleSegmentation>(std::move(pss)));
}

inline ConfidenceStack build_confidence_stack(
    std::shared_ptr<const PerSampleSegmentation> pss) {
  return ConfidenceStack(std::move(pss));
}

// Mean of the stack over the sample axis. Uncovered samples contribute zero
// vectors, so pixel sums are <= 1 and equal 1 only under full coverage.
struct MeanConfidence {
  int height = 0;
  int width = 0;
  int num_classes = 0;
  int num_samples = 0;
  std::vector<double> values;           // H*W*C
  std::vector<std::uint16_t> coverage;  // samples covering each pixel

  std::span<const double> at(std::size_t idx) const {
    return std::span<const double>(values).subspan(
        idx * static_cast<std::size_t>(num_classes),
        static_cast<std::size_t>(num_classes));
  }
  std::span<const double> at(int x, int y) const {
    return at(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
              static_cast<std::size_t>(x));
  }
};

inline MeanConfidence mean_confidence(const ConfidenceStack& sc) {
  MeanConfidence mc;
  mc.height = sc.height();
  mc.width = sc.width();
  mc.num_classes = sc.num_classes();
  mc.num_samples = sc.num_samples();
  const std::size_t px = sc.pixel_count();
  const std::size_t c = static_cast<std::size_t>(mc.num_classes);
  mc.values.assign(px * c, 0.0);
  mc.coverage.assign(px, 0);

  const int q_count = sc.num_samples();
  const double inv_q = 1.0 / q_count;
  const int w = mc.width;

  for (std::size_t i = 0; i < px; ++i) {
    // Neighboring pixels usually share the same owning proposal in every
    // sample; reuse the already-averaged vector instead of re-summing.
    const std::size_t ref =
        (i % static_cast<std::size_t>(w) != 0) ? i - 1
        : (i >= static_cast<std::size_t>(w))   ? i - static_cast<std::size_t>(w)
                                               : i;
    bool same = ref != i;
    for (int q = 0; same && q < q_count; ++q) {
      same = sc.proposal_at(q, i) == sc.proposal_at(q, ref);
    }
    double* out = mc.values.data() + i * c;
    if (same) {
      std::memcpy(out, mc.values.data() + ref * c, c * sizeof(double));
      mc.coverage[i] = mc.coverage[ref];
      continue;
    }
    int cov = 0;
    for (int q = 0; q < q_count; ++q) {
      const auto s = sc.softmax_at(q, i);
      if (s.empty()) continue;
      ++cov;
      for (std::size_t j = 0; j < c; ++j) out[j] += s[j];
    }
    for (std::size_t j = 0; j < c; ++j) out[j] *= inv_q;
    mc.coverage[i] = static_cast<std::uint16_t>(cov);
  }
  return mc;
}

struct StuffSegResult {
  PanopticMap s_initial;
  ConfidenceStack sc;
  MeanConfidence mc;
  // Per-pixel argmax class of MC; -1 where no sample covered the pixel.
  std::vector<std::int32_t> mc_argmax;
};

// Assigns stuff classes by the per-pixel argmax of the mean confidence.
// Pixels whose argmax is a thing or background class, and pixels without any
// coverage, stay void in the initial map.
inline StuffSegResult stuff_seg(
    std::shared_ptr<const PerSampleSegmentation> pss,
    const ClassCatalog& catalog) {
  if (pss->num_classes != catalog.num_classes()) {
    throw ValidationError("catalog size does not match segmentation classes");
  }
  ConfidenceStack sc = build_confidence_stack(pss);
  MeanConfidence mc = mean_confidence(sc);

  const std::size_t px = sc.pixel_count();
  PanopticMap s_initial(sc.width(), sc.height());
  std::vector<std::int32_t> lb(px, -1);
  for (std::size_t i = 0; i < px; ++i) {
    if (mc.coverage[i] == 0) continue;
    const int cls = argmax(mc.at(i));
    lb[i] = cls;
    if (catalog.is_stuff(cls)) s_initial.set(i, cls, 0);
  }
  return StuffSegResult{std::move(s_initial), std::move(sc), std::move(mc),
                        std::move(lb)};
}

inline StuffSegResult stuff_seg(PerSampleSegmentation pss,
                                const ClassCatalog& catalog) {
  return stuff_seg(std::make_shared<const PerSampleSegmentation>(std::move(pss)),
                   catalog);
}

}  // namespace panfuse

#endif  // PANFUSE_STUFF_FUSION_HPP_
