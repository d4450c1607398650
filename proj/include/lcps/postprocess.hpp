#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "lcps/classes.hpp"
#include "lcps/errors.hpp"
#include "lcps/tensor.hpp"
#include "lcps/voxel_grid.hpp"

namespace lcps {

/// Dense per-frame head outputs over the cylindrical grid: BEV center
/// heatmap (H x W), BEV offsets (H x W x 2, grid units), per-cell semantic
/// class, and the foreground-object gate (H x W x Z). H is the radial axis,
/// W the angular axis, Z height.
struct BevMaps {
  Tensor heatmap{std::vector<std::uint32_t>{1, 1}};
  Tensor offsets{std::vector<std::uint32_t>{1, 1, 2}};
  std::vector<std::int32_t> semantic;
  Tensor fog{std::vector<std::uint32_t>{1, 1, 1}};

  std::uint32_t height() const { return heatmap.dim(0); }
  std::uint32_t width() const { return heatmap.dim(1); }
  std::uint32_t depth() const { return fog.dim(2); }

  void validate() const {
    heatmap.require_rank(2, "heatmap");
    offsets.require_rank(3, "offsets");
    fog.require_rank(3, "fog");
    if (offsets.dim(0) != height() || offsets.dim(1) != width() ||
        offsets.dim(2) != 2)
      throw dimension_error("bev maps: offsets must be H x W x 2");
    if (fog.dim(0) != height() || fog.dim(1) != width())
      throw dimension_error("bev maps: fog must be H x W x Z");
    if (semantic.size() != fog.size())
      throw dimension_error("bev maps: semantic/fog cell count mismatch");
    for (const float v : heatmap.storage())
      if (!(v >= 0.0f && v <= 1.0f))
        throw data_error("bev maps: heatmap value outside [0,1]");
    for (const float v : fog.storage())
      if (!(v >= 0.0f && v <= 1.0f))
        throw data_error("bev maps: fog value outside [0,1]");
  }
};

struct PanopticLabeling {
  std::vector<std::int32_t> semantic;
  std::vector<std::int32_t> instance;  // 0 = no instance

  std::size_t size() const { return semantic.size(); }

  void validate() const {
    if (semantic.size() != instance.size())
      throw dimension_error("labeling: semantic/instance size mismatch");
  }

  friend bool operator==(const PanopticLabeling&, const PanopticLabeling&) = default;
};

struct Center {
  std::uint32_t i = 0;
  std::uint32_t j = 0;
  float score = 0.0f;
};

struct PostprocParams {
  int nms_kernel = 5;
  double nms_threshold = 0.1;
  double fog_threshold = 0.5;
  bool majority_vote = true;
};

/// Window-max non-maximum suppression on the BEV heatmap. A cell survives
/// iff its value reaches `threshold` and no cell in the kernel x kernel
/// window beats it — equal values lose to the lexicographically smaller
/// cell, so plateaus yield exactly one center. Results are sorted by
/// descending score, ties by cell order.
inline std::vector<Center> nms_centers(const Tensor& heatmap, int kernel,
                                       double threshold) {
  heatmap.require_rank(2, "heatmap");
  if (kernel < 1 || kernel % 2 == 0)
    throw config_error("nms: kernel must be odd and >= 1");
  const std::int64_t h = heatmap.dim(0);
  const std::int64_t w = heatmap.dim(1);
  const std::int64_t half = kernel / 2;

  std::vector<Center> centers;
  for (std::int64_t i = 0; i < h; ++i) {
    for (std::int64_t j = 0; j < w; ++j) {
      const float v = heatmap.at(static_cast<std::uint32_t>(i),
                                 static_cast<std::uint32_t>(j));
      if (static_cast<double>(v) < threshold) continue;
      bool is_max = true;
      for (std::int64_t a = std::max<std::int64_t>(0, i - half);
           is_max && a <= std::min(h - 1, i + half); ++a) {
        for (std::int64_t b = std::max<std::int64_t>(0, j - half);
             b <= std::min(w - 1, j + half); ++b) {
          const float u = heatmap.at(static_cast<std::uint32_t>(a),
                                     static_cast<std::uint32_t>(b));
          if (u > v || (u == v && (a < i || (a == i && b < j)))) {
            is_max = false;
            break;
          }
        }
      }
      if (is_max)
        centers.push_back(Center{static_cast<std::uint32_t>(i),
                                 static_cast<std::uint32_t>(j), v});
    }
  }
  std::sort(centers.begin(), centers.end(), [](const Center& a, const Center& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });
  return centers;
}

/// Foreground gate: a cell passes iff its semantic label is a thing class
/// and the FOG mask reaches the threshold.
inline std::vector<std::uint8_t> apply_fog(std::span<const std::int32_t> semantic,
                                           const Tensor& fog, double fog_threshold,
                                           const ClassTable& classes) {
  fog.require_rank(3, "fog");
  if (semantic.size() != fog.size())
    throw dimension_error("apply_fog: semantic/fog size mismatch");
  std::vector<std::uint8_t> mask(semantic.size(), 0);
  for (std::size_t i = 0; i < semantic.size(); ++i) {
    if (!classes.valid_id(semantic[i])) throw label_error("apply_fog: bad class id");
    mask[i] = classes.is_thing(semantic[i]) &&
                      static_cast<double>(fog[i]) >= fog_threshold
                  ? 1
                  : 0;
  }
  return mask;
}

/// Flat row-major cell index over (radial, angular, z).
inline std::size_t flat_cell_index(const VoxelIndex& idx,
                                   const CylinderGridSpec& spec) {
  return (static_cast<std::size_t>(idx.ir) * spec.angular_bins + idx.ia) *
             spec.z_bins +
         idx.iz;
}

/// Shifts each foreground cell by its BEV offset and assigns it to the
/// nearest center by Euclidean distance in BEV index space. Centers must be
/// in nms_centers order (descending score, then cell order); distance ties
/// therefore resolve to the higher-scoring center first and the smaller cell
/// second. Instance IDs are 1-based positions in the center list; with no
/// centers every foreground cell gets ID 0. Non-foreground cells get ID 0.
inline std::vector<std::int32_t> shift_and_cluster(
    std::span<const std::uint8_t> foreground, const Tensor& offsets,
    std::span<const Center> centers, std::uint32_t z_bins) {
  offsets.require_rank(3, "offsets");
  if (offsets.dim(2) != 2) throw dimension_error("offsets must be H x W x 2");
  const std::uint32_t h = offsets.dim(0);
  const std::uint32_t w = offsets.dim(1);
  if (foreground.size() != static_cast<std::size_t>(h) * w * z_bins)
    throw dimension_error("shift_and_cluster: mask/grid size mismatch");

  std::vector<std::int32_t> instance(foreground.size(), 0);
  if (centers.empty()) return instance;

  for (std::uint32_t i = 0; i < h; ++i) {
    for (std::uint32_t j = 0; j < w; ++j) {
      const std::size_t column = (static_cast<std::size_t>(i) * w + j) * z_bins;
      bool any = false;
      for (std::uint32_t k = 0; k < z_bins; ++k)
        if (foreground[column + k]) {
          any = true;
          break;
        }
      if (!any) continue;

      const double si = static_cast<double>(i) + static_cast<double>(offsets.at(i, j, 0));
      const double sj = static_cast<double>(j) + static_cast<double>(offsets.at(i, j, 1));
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < centers.size(); ++c) {
        const double di = si - static_cast<double>(centers[c].i);
        const double dj = sj - static_cast<double>(centers[c].j);
        const double d = di * di + dj * dj;
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      const auto id = static_cast<std::int32_t>(best + 1);
      for (std::uint32_t k = 0; k < z_bins; ++k)
        if (foreground[column + k]) instance[column + k] = id;
    }
  }
  return instance;
}

/// Points inherit the instance ID of their cell; each instance's semantic
/// label is then replaced by the majority vote over its member points
/// (ties to the smallest class index). Instances whose vote lands on a
/// stuff class dissolve back into stuff. Surviving IDs are compressed to
/// 1..n in ascending original order. Points without a cell keep their
/// semantic label and stay instance-free, as do points in stuff cells.
inline PanopticLabeling assign_panoptic(
    std::span<const std::optional<VoxelIndex>> point_cells,
    std::span<const std::int32_t> point_semantic,
    std::span<const std::int32_t> cell_instance, const CylinderGridSpec& spec,
    const ClassTable& classes, bool majority_vote = true) {
  if (point_cells.size() != point_semantic.size())
    throw dimension_error("assign_panoptic: cells/semantic size mismatch");
  const std::size_t n_cells = static_cast<std::size_t>(spec.radial_bins) *
                              spec.angular_bins * spec.z_bins;
  if (cell_instance.size() != n_cells)
    throw dimension_error("assign_panoptic: cell instance table size mismatch");

  PanopticLabeling out;
  out.semantic.assign(point_semantic.begin(), point_semantic.end());
  out.instance.assign(point_cells.size(), 0);
  for (std::size_t p = 0; p < point_cells.size(); ++p) {
    if (!point_cells[p]) continue;
    out.instance[p] = cell_instance[flat_cell_index(*point_cells[p], spec)];
  }

  // id -> class -> votes, over raw per-point labels
  std::map<std::int32_t, std::map<std::int32_t, std::size_t>> votes;
  for (std::size_t p = 0; p < out.size(); ++p)
    if (out.instance[p] > 0) ++votes[out.instance[p]][out.semantic[p]];

  std::map<std::int32_t, std::int32_t> winner;
  for (const auto& [id, counts] : votes) {
    std::int32_t best_class = 0;
    std::size_t best_votes = 0;
    for (const auto& [cls, n] : counts) {
      if (n > best_votes) {  // map order makes the first max the smallest class
        best_votes = n;
        best_class = cls;
      }
    }
    winner[id] = best_class;
  }

  for (std::size_t p = 0; p < out.size(); ++p) {
    const std::int32_t id = out.instance[p];
    if (id <= 0) continue;
    const std::int32_t cls = majority_vote ? winner.at(id) : out.semantic[p];
    if (majority_vote) out.semantic[p] = cls;
    if (!classes.valid_id(cls) || !classes.is_thing(cls)) out.instance[p] = 0;
  }

  // compress surviving ids to 1..n in ascending original order
  std::map<std::int32_t, std::int32_t> remap;
  for (const std::int32_t id : out.instance)
    if (id > 0) remap.emplace(id, 0);
  std::int32_t next = 1;
  for (auto& [id, compact] : remap) compact = next++;
  for (std::int32_t& id : out.instance)
    if (id > 0) id = remap.at(id);
  return out;
}

/// Per-point semantic labels read off the per-cell map; points outside the
/// grid volume fall back to class 0.
inline std::vector<std::int32_t> point_semantics_from_cells(
    std::span<const std::optional<VoxelIndex>> point_cells,
    std::span<const std::int32_t> cell_semantic, const CylinderGridSpec& spec) {
  const std::size_t n_cells = static_cast<std::size_t>(spec.radial_bins) *
                              spec.angular_bins * spec.z_bins;
  if (cell_semantic.size() != n_cells)
    throw dimension_error("point_semantics_from_cells: cell table size mismatch");
  std::vector<std::int32_t> out(point_cells.size(), 0);
  for (std::size_t p = 0; p < point_cells.size(); ++p)
    if (point_cells[p])
      out[p] = cell_semantic[flat_cell_index(*point_cells[p], spec)];
  return out;
}

struct PostprocResult {
  std::vector<Center> centers;
  std::vector<std::uint8_t> foreground;
  std::vector<std::int32_t> cell_instance;
  PanopticLabeling labeling;
};

/// Full head-to-labeling chain: NMS centers, FOG gating, offset clustering,
/// point assignment with majority vote.
inline PostprocResult postprocess_frame(
    const BevMaps& maps, std::span<const std::optional<VoxelIndex>> point_cells,
    std::span<const std::int32_t> point_semantic, const CylinderGridSpec& spec,
    const ClassTable& classes, const PostprocParams& params = {}) {
  maps.validate();
  if (maps.height() != spec.radial_bins || maps.width() != spec.angular_bins ||
      maps.depth() != spec.z_bins)
    throw dimension_error("postprocess: bev maps do not match grid spec");

  PostprocResult result;
  result.centers = nms_centers(maps.heatmap, params.nms_kernel, params.nms_threshold);
  result.foreground =
      apply_fog(maps.semantic, maps.fog, params.fog_threshold, classes);
  result.cell_instance = shift_and_cluster(result.foreground, maps.offsets,
                                           result.centers, spec.z_bins);
  result.labeling = assign_panoptic(point_cells, point_semantic,
                                    result.cell_instance, spec, classes,
                                    params.majority_vote);
  return result;
}

}  // namespace lcps
