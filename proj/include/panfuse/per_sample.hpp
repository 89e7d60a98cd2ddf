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
// Per-sample segmentation: softmax the class logits of every proposal, drop
// proposals classified as background, upscale the surviving mask-logit grids
// to image resolution, and assign each pixel to the proposal with the highest
// mask logit there.

#ifndef PANFUSE_PER_SAMPLE_HPP_
#define PANFUSE_PER_SAMPLE_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "panfuse/errors.hpp"
#include "panfuse/manifest.hpp"

namespace panfuse {

// Numerically stable softmax (max subtraction). Output sums to 1 within 1e-9.
inline std::vector<double> softmax(std::span<const float> logits) {
  std::vector<double> out(logits.size());
  double hi = -std::numeric_limits<double>::infinity();
  for (float v : logits) hi = std::max(hi, static_cast<double>(v));
  double sum = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::exp(static_cast<double>(logits[i]) - hi);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

// Index of the largest element; lowest index wins ties.
template <class T>
int argmax(std::span<const T> v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i) {
    if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)]) {
      best = i;
    }
  }
  return best;
}

enum class UpscaleMode { kBilinear, kNearest };

// Resamples h*w grids to H*W with pixel-center alignment (corner alignment
// off): src = (dst + 0.5) * (src_size / dst_size) - 0.5, clamped. Reused
// across proposals so the coordinate tables are built once.
class Upscaler {
 public:
  Upscaler(int src_h, int src_w, int dst_h, int dst_w,
           UpscaleMode mode = UpscaleMode::kBilinear)
      : sh_(src_h), sw_(src_w), dh_(dst_h), dw_(dst_w) {
    if (src_h < 1 || src_w < 1 || dst_h < 1 || dst_w < 1) {
      throw ShapeError("upscale sizes must be >= 1");
    }
    identity_ = (sh_ == dh_ && sw_ == dw_);
    if (identity_) return;
    xmap_ = build_axis(sw_, dw_, mode);
    ymap_ = build_axis(sh_, dh_, mode);
  }

  int src_height() const { return sh_; }
  int src_width() const { return sw_; }
  int dst_height() const { return dh_; }
  int dst_width() const { return dw_; }

  void upscale(std::span<const float> src, std::span<float> dst) const {
    check_spans(src, dst);
    if (identity_) {
      std::copy(src.begin(), src.end(), dst.begin());
      return;
    }
    const std::vector<float> rows = interp_rows(src);
    for (int y = 0; y < dh_; ++y) {
      const Lin ly = ymap_[static_cast<std::size_t>(y)];
      const float* r0 = rows.data() + static_cast<std::size_t>(ly.lo) * dw_;
      const float* r1 = rows.data() + static_cast<std::size_t>(ly.hi) * dw_;
      float* out = dst.data() + static_cast<std::size_t>(y) * dw_;
      if (ly.w == 0.0f) {
        std::copy(r0, r0 + dw_, out);
      } else {
        for (int x = 0; x < dw_; ++x) out[x] = r0[x] + ly.w * (r1[x] - r0[x]);
      }
    }
  }

  // Compares the upscaled grid against best per pixel; where it is strictly
  // greater, records label. Earlier labels therefore win ties.
  void fold_max(std::span<const float> src, std::int32_t label,
                std::span<float> best, std::span<std::int32_t> label_out) const {
    check_spans(src, best);
    if (identity_) {
      for (std::size_t i = 0; i < src.size(); ++i) {
        if (src[i] > best[i]) {
          best[i] = src[i];
          label_out[i] = label;
        }
      }
      return;
    }
    const std::vector<float> rows = interp_rows(src);
    for (int y = 0; y < dh_; ++y) {
      const Lin ly = ymap_[static_cast<std::size_t>(y)];
      const float* r0 = rows.data() + static_cast<std::size_t>(ly.lo) * dw_;
      const float* r1 = rows.data() + static_cast<std::size_t>(ly.hi) * dw_;
      const std::size_t off = static_cast<std::size_t>(y) * dw_;
      for (int x = 0; x < dw_; ++x) {
        const float v =
            (ly.w == 0.0f) ? r0[x] : r0[x] + ly.w * (r1[x] - r0[x]);
        if (v > best[off + static_cast<std::size_t>(x)]) {
          best[off + static_cast<std::size_t>(x)] = v;
          label_out[off + static_cast<std::size_t>(x)] = label;
        }
      }
    }
  }

 private:
  struct Lin {
    int lo = 0;
    int hi = 0;
    float w = 0.0f;  // value = src[lo] + w * (src[hi] - src[lo])
  };

  static std::vector<Lin> build_axis(int src, int dst, UpscaleMode mode) {
    std::vector<Lin> map(static_cast<std::size_t>(dst));
    const double scale = static_cast<double>(src) / static_cast<double>(dst);
    for (int d = 0; d < dst; ++d) {
      if (mode == UpscaleMode::kNearest) {
        const int n = std::clamp(
            static_cast<int>(std::floor((d + 0.5) * scale)), 0, src - 1);
        map[static_cast<std::size_t>(d)] = {n, n, 0.0f};
        continue;
      }
      const double s = (d + 0.5) * scale - 0.5;
      if (s <= 0.0) {
        map[static_cast<std::size_t>(d)] = {0, 0, 0.0f};
      } else if (s >= src - 1) {
        map[static_cast<std::size_t>(d)] = {src - 1, src - 1, 0.0f};
      } else {
        const int lo = static_cast<int>(std::floor(s));
        map[static_cast<std::size_t>(d)] = {lo, lo + 1,
                                            static_cast<float>(s - lo)};
      }
    }
    return map;
  }

  std::vector<float> interp_rows(std::span<const float> src) const {
    std::vector<float> rows(static_cast<std::size_t>(sh_) *
                            static_cast<std::size_t>(dw_));
    for (int sy = 0; sy < sh_; ++sy) {
      const float* in = src.data() + static_cast<std::size_t>(sy) * sw_;
      float* out = rows.data() + static_cast<std::size_t>(sy) * dw_;
      for (int x = 0; x < dw_; ++x) {
        const Lin lx = xmap_[static_cast<std::size_t>(x)];
        out[x] = (lx.w == 0.0f) ? in[lx.lo]
                                : in[lx.lo] + lx.w * (in[lx.hi] - in[lx.lo]);
      }
    }
    return rows;
  }

  void check_spans(std::span<const float> src, std::span<const float> dst) const {
    if (src.size() != static_cast<std::size_t>(sh_) * static_cast<std::size_t>(sw_) ||
        dst.size() != static_cast<std::size_t>(dh_) * static_cast<std::size_t>(dw_)) {
      throw ShapeError("upscale span size mismatch");
    }
  }

  int sh_, sw_, dh_, dw_;
  bool identity_ = false;
  std::vector<Lin> xmap_, ymap_;
};

// Convenience wrapper over Upscaler for one grid.
inline std::vector<float> upscale_mask(std::span<const float> src, int src_h,
                                       int src_w, int dst_h, int dst_w,
                                       UpscaleMode mode = UpscaleMode::kBilinear) {
  Upscaler up(src_h, src_w, dst_h, dst_w, mode);
  std::vector<float> dst(static_cast<std::size_t>(dst_h) *
                         static_cast<std::size_t>(dst_w));
  up.upscale(src, dst);
  return dst;
}

inline constexpr std::int32_t kNoProposal = -1;

// One sample after background removal and per-pixel proposal assignment.
struct SampleSeg {
  std::vector<std::int32_t> proposal_map;  // H*W; kept-proposal index or kNoProposal
  std::vector<double> kept_softmax;        // kept_count * C, row-major
  std::vector<std::int32_t> kept_origin;   // original proposal index per kept index
  int kept_count = 0;

  std::span<const double> softmax_row(int k, int num_classes) const {
    return std::span<const double>(kept_softmax)
        .subspan(static_cast<std::size_t>(k) * num_classes,
                 static_cast<std::size_t>(num_classes));
  }
};

struct PerSampleSegmentation {
  std::vector<SampleSeg> samples;
  int image_height = 0;
  int image_width = 0;
  int num_classes = 0;

  int num_samples() const { return static_cast<int>(samples.size()); }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(image_height) *
           static_cast<std::size_t>(image_width);
  }
};

namespace detail {

// Per-pixel winner among the listed proposals by upscaled mask logit; the
// per-proposal softmax over proposals is monotone, so the argmax over raw
// logits is identical and the softmax is skipped.
inline std::vector<std::int32_t> fold_proposal_argmax(
    const EnsembleBatch& batch, int q, std::span<const std::int32_t> origins,
    const Upscaler& up) {
  const std::size_t px = static_cast<std::size_t>(batch.image_height()) *
                         static_cast<std::size_t>(batch.image_width());
  std::vector<std::int32_t> map(px, kNoProposal);
  if (origins.empty()) return map;
  std::vector<float> best(px, -std::numeric_limits<float>::infinity());
  for (std::int32_t k = 0; k < static_cast<std::int32_t>(origins.size()); ++k) {
    up.fold_max(batch.mask_logits(q, origins[static_cast<std::size_t>(k)]), k,
                best, map);
  }
  return map;
}

}  // namespace detail

inline PerSampleSegmentation per_sample_seg(
    const EnsembleBatch& batch, UpscaleMode mode = UpscaleMode::kBilinear) {
  PerSampleSegmentation out;
  out.image_height = batch.image_height();
  out.image_width = batch.image_width();
  out.num_classes = batch.num_classes();
  out.samples.resize(static_cast<std::size_t>(batch.num_samples()));

  const Upscaler up(batch.mask_height(), batch.mask_width(),
                    batch.image_height(), batch.image_width(), mode);
  const int background = batch.catalog().background_id();

  for (int q = 0; q < batch.num_samples(); ++q) {
    SampleSeg& s = out.samples[static_cast<std::size_t>(q)];
    for (int n = 0; n < batch.proposals_per_sample(); ++n) {
      std::vector<double> p = softmax(batch.class_logits(q, n));
      if (argmax(std::span<const double>(p)) == background) continue;
      s.kept_origin.push_back(n);
      s.kept_softmax.insert(s.kept_softmax.end(), p.begin(), p.end());
    }
    s.kept_count = static_cast<int>(s.kept_origin.size());
    s.proposal_map = detail::fold_proposal_argmax(batch, q, s.kept_origin, up);
  }
  return out;
}

}  // namespace panfuse

#endif  // PANFUSE_PER_SAMPLE_HPP_
