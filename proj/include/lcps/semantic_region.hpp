#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "lcps/errors.hpp"
#include "lcps/losses.hpp"
#include "lcps/tensor.hpp"

namespace lcps {

/// Dense image feature map, C x H x W.
struct FeatureMap {
  Tensor data;  // (C, H, W)
  int camera_index = 0;

  std::uint32_t channels() const { return data.dim(0); }
  std::uint32_t height() const { return data.dim(1); }
  std::uint32_t width() const { return data.dim(2); }

  void validate() const {
    data.require_rank(3, "feature map");
    data.require_finite("feature map");
  }
};

/// Linear pixel-wise classifier, M x C weight matrix.
struct PixelClassifier {
  Tensor theta;  // (M, C)

  std::uint32_t num_classes() const { return theta.dim(0); }
  std::uint32_t channels() const { return theta.dim(1); }

  void validate() const {
    theta.require_rank(2, "classifier");
    theta.require_finite("classifier");
    if (num_classes() < 2) throw dimension_error("classifier: needs at least 2 classes");
  }
};

/// Per-class activation heatmaps, M x H x W. Channel y is the linear score
/// of class y at every pixel, so the per-pixel argmax over channels is the
/// pixel classification.
struct CamStack {
  Tensor data;  // (M, H, W)

  std::uint32_t num_classes() const { return data.dim(0); }
  std::uint32_t height() const { return data.dim(1); }
  std::uint32_t width() const { return data.dim(2); }
};

/// Mean feature of the pixels surviving a gate. support_size == 0 implies
/// the zero vector.
struct RegionFeature {
  std::vector<float> vector;
  std::size_t support_size = 0;
};

namespace detail {

inline void check_channel_match(const FeatureMap& fm, const PixelClassifier& clf) {
  fm.validate();
  clf.validate();
  if (fm.channels() != clf.channels())
    throw dimension_error("classifier/feature-map channel mismatch");
}

/// Shared linear kernel: scores[y][h][w] = theta[y] . F[:,h,w], accumulated
/// in double. Both the CAM stack and the classification logits come from
/// here, which makes their scores identical bit-for-bit.
inline Tensor linear_scores(const FeatureMap& fm, const PixelClassifier& clf) {
  check_channel_match(fm, clf);
  const std::uint32_t m = clf.num_classes();
  const std::uint32_t c = fm.channels();
  const std::uint32_t h = fm.height();
  const std::uint32_t w = fm.width();
  Tensor out({m, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::uint32_t y = 0; y < m; ++y) {
    for (std::size_t p = 0; p < plane; ++p) {
      double acc = 0.0;
      for (std::uint32_t ch = 0; ch < c; ++ch)
        acc += static_cast<double>(clf.theta.at(y, ch)) *
               static_cast<double>(fm.data[ch * plane + p]);
      out[y * plane + p] = static_cast<float>(acc);
    }
  }
  return out;
}

}  // namespace detail

struct Classification {
  Tensor logits;                    // (M, H, W)
  std::vector<std::int32_t> labels; // H*W row-major, per-pixel argmax
};

/// Per-pixel linear classification; ties pick the lowest class index.
inline Classification classify_pixels(const FeatureMap& fm, const PixelClassifier& clf) {
  Classification out;
  out.logits = detail::linear_scores(fm, clf);
  const std::uint32_t m = clf.num_classes();
  const std::size_t plane = static_cast<std::size_t>(fm.height()) * fm.width();
  out.labels.assign(plane, 0);
  for (std::size_t p = 0; p < plane; ++p) {
    float best = out.logits[p];
    std::int32_t best_y = 0;
    for (std::uint32_t y = 1; y < m; ++y) {
      const float v = out.logits[y * plane + p];
      if (v > best) {
        best = v;
        best_y = static_cast<std::int32_t>(y);
      }
    }
    out.labels[p] = best_y;
  }
  return out;
}

/// CAM stack = classifier weights applied to the feature map.
inline CamStack compute_cams(const FeatureMap& fm, const PixelClassifier& clf) {
  return CamStack{detail::linear_scores(fm, clf)};
}

/// Pointly-supervised image loss: mean cross-entropy of the pixel logits
/// gathered at projected points against the matching point labels. Returns
/// 0 for an empty batch (callers report the count separately).
inline double pointly_supervised_loss(const std::vector<float>& logits_at_pixels,
                                      std::size_t m,
                                      const std::vector<std::int32_t>& point_labels) {
  return ce_loss(logits_at_pixels, m, point_labels);
}

/// Confidence gate over one CAM channel. The channel is min-max normalized
/// to [0,1]; pixels whose normalized activation reaches tau keep their raw
/// activation value, the rest become 0. A constant channel (max == min)
/// normalizes to all zeros, i.e. an empty gate.
inline Tensor build_gate(const CamStack& cams, std::int32_t y, double tau) {
  if (y < 0 || static_cast<std::uint32_t>(y) >= cams.num_classes())
    throw label_error("build_gate: class index out of range");
  const std::uint32_t h = cams.height();
  const std::uint32_t w = cams.width();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const float* channel = cams.data.data() + static_cast<std::size_t>(y) * plane;

  float lo = channel[0];
  float hi = channel[0];
  for (std::size_t p = 1; p < plane; ++p) {
    lo = std::min(lo, channel[p]);
    hi = std::max(hi, channel[p]);
  }

  Tensor gate({h, w}, 0.0f);
  if (hi == lo) return gate;
  const double range = static_cast<double>(hi) - static_cast<double>(lo);
  for (std::size_t p = 0; p < plane; ++p) {
    const double norm = (static_cast<double>(channel[p]) - static_cast<double>(lo)) / range;
    if (norm >= tau) gate[p] = channel[p];
  }
  return gate;
}

/// Activation applied inside the region gather (Eq-style composition:
/// gate first, then activation).
enum class RegionActivation { kIdentity, kPositivePart };

/// Masks the feature map with the gate, drops pixels whose gate value is 0,
/// and averages the surviving per-pixel feature rows.
inline RegionFeature gather_region_feature(
    const Tensor& gate, const FeatureMap& fm,
    RegionActivation activation = RegionActivation::kIdentity) {
  gate.require_rank(2, "gate");
  fm.validate();
  if (gate.dim(0) != fm.height() || gate.dim(1) != fm.width())
    throw dimension_error("gather_region_feature: gate/feature-map shape mismatch");

  const std::uint32_t c = fm.channels();
  const std::size_t plane = static_cast<std::size_t>(fm.height()) * fm.width();
  std::vector<double> acc(c, 0.0);
  std::size_t support = 0;
  for (std::size_t p = 0; p < plane; ++p) {
    const float g = gate[p];
    if (g == 0.0f) continue;
    ++support;
    for (std::uint32_t ch = 0; ch < c; ++ch) {
      double v = static_cast<double>(g) * static_cast<double>(fm.data[ch * plane + p]);
      if (activation == RegionActivation::kPositivePart) v = std::max(v, 0.0);
      acc[ch] += v;
    }
  }

  RegionFeature out;
  out.vector.assign(c, 0.0f);
  out.support_size = support;
  if (support > 0)
    for (std::uint32_t ch = 0; ch < c; ++ch)
      out.vector[ch] = static_cast<float>(acc[ch] / static_cast<double>(support));
  return out;
}

/// Concatenates [mlp | pixel | region] into a 3C fused point feature.
inline std::vector<float> fuse_point_feature(const std::vector<float>& mlp_feat,
                                             const std::vector<float>& pixel_feat,
                                             const RegionFeature& region_feat) {
  if (mlp_feat.size() != pixel_feat.size() ||
      mlp_feat.size() != region_feat.vector.size())
    throw dimension_error("fuse_point_feature: channel width mismatch");
  std::vector<float> fused;
  fused.reserve(3 * mlp_feat.size());
  fused.insert(fused.end(), mlp_feat.begin(), mlp_feat.end());
  fused.insert(fused.end(), pixel_feat.begin(), pixel_feat.end());
  fused.insert(fused.end(), region_feat.vector.begin(), region_feat.vector.end());
  return fused;
}

/// Sub-pixel feature lookup policy for projected points.
enum class PixelLookup { kNearest, kBilinear };

namespace detail {

/// Nearest pixel index with half-down rounding, clamped into [0, n).
inline std::size_t nearest_index(double coord, std::uint32_t n) {
  const double r = std::ceil(coord - 0.5);
  if (r < 0.0) return 0;
  if (r >= static_cast<double>(n)) return n - 1;
  return static_cast<std::size_t>(r);
}

}  // namespace detail

/// Feature column at a projected pixel position (px, py).
inline std::vector<float> sample_feature(const FeatureMap& fm, double px, double py,
                                         PixelLookup lookup = PixelLookup::kNearest) {
  const std::uint32_t c = fm.channels();
  const std::uint32_t h = fm.height();
  const std::uint32_t w = fm.width();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<float> out(c, 0.0f);

  if (lookup == PixelLookup::kNearest) {
    const std::size_t col = detail::nearest_index(px, w);
    const std::size_t row = detail::nearest_index(py, h);
    for (std::uint32_t ch = 0; ch < c; ++ch)
      out[ch] = fm.data[ch * plane + row * w + col];
    return out;
  }

  // Bilinear over the four surrounding pixel centers, clamped at the border.
  const double fx = std::clamp(px, 0.0, static_cast<double>(w - 1));
  const double fy = std::clamp(py, 0.0, static_cast<double>(h - 1));
  const std::size_t x0 = static_cast<std::size_t>(std::floor(fx));
  const std::size_t y0 = static_cast<std::size_t>(std::floor(fy));
  const std::size_t x1 = std::min<std::size_t>(x0 + 1, w - 1);
  const std::size_t y1 = std::min<std::size_t>(y0 + 1, h - 1);
  const double tx = fx - static_cast<double>(x0);
  const double ty = fy - static_cast<double>(y0);
  for (std::uint32_t ch = 0; ch < c; ++ch) {
    const float* pl = fm.data.data() + ch * plane;
    const double top = (1.0 - tx) * pl[y0 * w + x0] + tx * pl[y0 * w + x1];
    const double bot = (1.0 - tx) * pl[y1 * w + x0] + tx * pl[y1 * w + x1];
    out[ch] = static_cast<float>((1.0 - ty) * top + ty * bot);
  }
  return out;
}

/// Pixel label at a projected position, using nearest indexing.
inline std::int32_t label_at(const std::vector<std::int32_t>& labels,
                             std::uint32_t h, std::uint32_t w, double px, double py) {
  const std::size_t col = detail::nearest_index(px, w);
  const std::size_t row = detail::nearest_index(py, h);
  return labels[row * w + col];
}

}  // namespace lcps
