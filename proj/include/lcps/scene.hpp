#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <set>
#include <utility>
#include <vector>

#include "lcps/classes.hpp"
#include "lcps/errors.hpp"
#include "lcps/geometry.hpp"
#include "lcps/postprocess.hpp"
#include "lcps/random.hpp"
#include "lcps/semantic_region.hpp"
#include "lcps/voxel_grid.hpp"

namespace lcps {

/// Knobs for the synthetic-scene generator. Scenes are deterministic in the
/// seed; the defaults produce frames whose ground-truth head maps drive the
/// pipeline to an exact reconstruction of the labeling (position_jitter and
/// feature_noise must stay at 0 for that exactness — jitter can push points
/// across voxel walls and noise can flip pixel argmaxes).
struct SceneConfig {
  std::uint64_t seed = 1;
  std::uint32_t n_objects = 5;
  std::uint32_t n_stuff_regions = 3;
  std::uint32_t points_per_object = 64;
  std::uint32_t points_per_stuff = 256;
  std::vector<std::int32_t> thing_classes = {4, 5, 6, 7};
  std::vector<std::int32_t> stuff_classes = {1, 2, 3};
  std::uint32_t cameras = 4;
  int image_width = 640;
  int image_height = 480;
  double focal = 300.0;
  double camera_time = 0.05;  // t2; the LiDAR sweep is at t1 = 0
  CylinderGridSpec grid = nuscenes_grid();
  std::uint32_t min_radial_bin = 24;  // keeps objects far enough to project sanely
  double position_jitter = 0.0;       // meters, uniform per axis
  double feature_noise = 0.0;         // uniform per channel on one-hot encodings
  Transform4 ego_motion;              // vehicle@t2 -> first-frame coordinates
  bool with_feature_maps = true;      // skip image painting for geometry-only scenes

  void validate(const ClassTable& classes) const {
    grid.validate();
    ego_motion.validate("ego_motion");
    if (points_per_object == 0 || points_per_stuff == 0)
      throw config_error("scene: segments need at least one point");
    if (thing_classes.empty() || stuff_classes.empty())
      throw config_error("scene: class mixes must be non-empty");
    for (const std::int32_t c : thing_classes)
      if (!classes.valid_id(c) || !classes.is_thing(c) || classes.is_ignored(c))
        throw config_error("scene: thing_classes entry is not a thing class");
    for (const std::int32_t c : stuff_classes)
      if (!classes.valid_id(c) || classes.is_thing(c) || classes.is_ignored(c))
        throw config_error("scene: stuff_classes entry is not a stuff class");
    if (cameras < 1) throw config_error("scene: need at least one camera");
    if (image_width < 8 || image_height < 8)
      throw config_error("scene: image too small");
    if (!(focal > 0.0)) throw config_error("scene: focal must be positive");
    if (grid.radial_bins < min_radial_bin + 8 || grid.angular_bins < 8 ||
        grid.z_bins < 2)
      throw config_error("scene: grid too small for placement");
  }
};

struct SyntheticFrame {
  LidarFrame frame;
  std::vector<CameraModel> rig;
  std::vector<Transform4> poses_t2_to_first;  // one per camera, all equal here
  std::vector<FeatureMap> feature_maps;       // empty when not requested
  PixelClassifier classifier;                 // identity, M x M
  PointPixelMap pixel_map;                    // compensated reference projection
  PanopticLabeling gt;
  BevMaps gt_maps;
  CylinderGridSpec grid;
  ClassTable classes;
};

/// A gentle forward-left drift with a slight yaw — a plausible inter-sensor
/// ego displacement at driving speed.
inline Transform4 default_ego_motion() {
  return Transform4::translation(1.5, 0.3, 0.02) * Transform4::rotation_z(0.05);
}

namespace detail {

struct SegmentBox {
  std::int32_t cls = 0;
  bool thing = false;
  std::uint32_t ir0 = 0, ia0 = 0, iz0 = 0;
  std::uint32_t sr = 1, sa = 1, sz = 1;
};

inline std::uint32_t box_gap(std::uint32_t a0, std::uint32_t a1, std::uint32_t b0,
                             std::uint32_t b1) {
  if (b0 > a1) return b0 - a1 - 1;
  if (a0 > b1) return a0 - b1 - 1;
  return 0;
}

/// Minimal Chebyshev distance between cells of two BEV boxes.
inline std::uint32_t bev_box_distance(const SegmentBox& a, const SegmentBox& b) {
  const std::uint32_t gr =
      box_gap(a.ir0, a.ir0 + a.sr - 1, b.ir0, b.ir0 + b.sr - 1);
  const std::uint32_t ga =
      box_gap(a.ia0, a.ia0 + a.sa - 1, b.ia0, b.ia0 + b.sa - 1);
  return std::max(gr, ga);
}

}  // namespace detail

/// Builds one fully labeled synthetic frame. Objects and stuff regions are
/// boxes of whole grid cells, pairwise disjoint at cell granularity, so every
/// cell holds points of exactly one class (and one instance). Object boxes
/// additionally keep a BEV Chebyshev distance of at least 3 so that their
/// centroid peaks survive kernel-5 NMS untouched. Ground-truth head maps are
/// derived from the sampled points: heatmap 1 at each instance's BEV centroid
/// cell, offsets pointing at it, fog marking occupied thing cells, per-cell
/// semantic labels. Instance IDs count 1..n in lexicographic centroid order,
/// which is exactly the order the clustering stage assigns.
inline SyntheticFrame generate_scene(const SceneConfig& cfg) {
  SyntheticFrame out;
  out.classes = default_class_table();
  cfg.validate(out.classes);
  const CylinderGridSpec& spec = cfg.grid;
  out.grid = spec;
  Rng rng(cfg.seed);

  // --- placement ---
  std::set<VoxelIndex> used;
  std::vector<detail::SegmentBox> boxes;
  const auto place = [&](bool thing, std::int32_t cls) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      detail::SegmentBox box;
      box.cls = cls;
      box.thing = thing;
      if (thing) {
        box.sr = 1 + static_cast<std::uint32_t>(rng.uniform_index(2));
        box.sa = 1 + static_cast<std::uint32_t>(rng.uniform_index(2));
        box.sz = 1 + static_cast<std::uint32_t>(rng.uniform_index(2));
      } else {
        box.sr = 2 + static_cast<std::uint32_t>(rng.uniform_index(3));
        box.sa = 2 + static_cast<std::uint32_t>(rng.uniform_index(3));
        box.sz = 1 + static_cast<std::uint32_t>(rng.uniform_index(2));
      }
      box.ir0 = cfg.min_radial_bin +
                static_cast<std::uint32_t>(rng.uniform_index(
                    spec.radial_bins - box.sr - cfg.min_radial_bin + 1));
      box.ia0 = static_cast<std::uint32_t>(
          rng.uniform_index(spec.angular_bins - box.sa + 1));
      box.iz0 = static_cast<std::uint32_t>(rng.uniform_index(spec.z_bins - box.sz + 1));

      bool collides = false;
      if (thing) {
        for (const detail::SegmentBox& other : boxes)
          if (other.thing && detail::bev_box_distance(box, other) < 3) {
            collides = true;
            break;
          }
      }
      for (std::uint32_t r = box.ir0; !collides && r < box.ir0 + box.sr; ++r)
        for (std::uint32_t a = box.ia0; !collides && a < box.ia0 + box.sa; ++a)
          for (std::uint32_t z = box.iz0; z < box.iz0 + box.sz; ++z)
            if (used.count(VoxelIndex{r, a, z})) {
              collides = true;
              break;
            }
      if (collides) continue;
      for (std::uint32_t r = box.ir0; r < box.ir0 + box.sr; ++r)
        for (std::uint32_t a = box.ia0; a < box.ia0 + box.sa; ++a)
          for (std::uint32_t z = box.iz0; z < box.iz0 + box.sz; ++z)
            used.insert(VoxelIndex{r, a, z});
      boxes.push_back(box);
      return;
    }
    throw generation_error("scene: placement failed after bounded retries");
  };

  for (std::uint32_t s = 0; s < cfg.n_stuff_regions; ++s)
    place(false, cfg.stuff_classes[rng.uniform_index(cfg.stuff_classes.size())]);
  for (std::uint32_t o = 0; o < cfg.n_objects; ++o)
    place(true, cfg.thing_classes[rng.uniform_index(cfg.thing_classes.size())]);

  // --- point sampling ---
  const std::size_t m = out.classes.size();
  out.frame.feature_width = m;
  out.frame.capture_time = 0.0;

  struct ObjectRecord {
    std::size_t first_point = 0;
    std::size_t n_points = 0;
    double centroid_u = 0.0;  // continuous radial index
    double centroid_v = 0.0;  // continuous angular index
    std::uint32_t ci = 0, cj = 0;
  };
  std::vector<ObjectRecord> objects;
  std::vector<std::size_t> point_box(0);

  constexpr double kMargin = 0.15;  // keeps samples clear of voxel walls
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    const detail::SegmentBox& box = boxes[b];
    const std::uint32_t n = box.thing ? cfg.points_per_object : cfg.points_per_stuff;
    if (box.thing)
      objects.push_back(ObjectRecord{out.frame.positions.size(), n, 0, 0, 0, 0});
    for (std::uint32_t p = 0; p < n; ++p) {
      const std::uint32_t ir =
          box.ir0 + static_cast<std::uint32_t>(rng.uniform_index(box.sr));
      const std::uint32_t ia =
          box.ia0 + static_cast<std::uint32_t>(rng.uniform_index(box.sa));
      const std::uint32_t iz =
          box.iz0 + static_cast<std::uint32_t>(rng.uniform_index(box.sz));
      const double r = spec.r_min +
                       (ir + kMargin + (1.0 - 2.0 * kMargin) * rng.uniform01()) *
                           spec.radial_step();
      const double theta =
          (ia + kMargin + (1.0 - 2.0 * kMargin) * rng.uniform01()) *
          spec.angular_step();
      const double z = spec.z_min +
                       (iz + kMargin + (1.0 - 2.0 * kMargin) * rng.uniform01()) *
                           spec.z_step();
      Vec3 pos{r * std::cos(theta), r * std::sin(theta), z};
      if (cfg.position_jitter > 0.0) {
        pos.x += rng.uniform(-cfg.position_jitter, cfg.position_jitter);
        pos.y += rng.uniform(-cfg.position_jitter, cfg.position_jitter);
        pos.z += rng.uniform(-cfg.position_jitter, cfg.position_jitter);
      }
      // store at float precision so file round-trips reproduce bit-exactly
      pos = Vec3{static_cast<double>(static_cast<float>(pos.x)),
                 static_cast<double>(static_cast<float>(pos.y)),
                 static_cast<double>(static_cast<float>(pos.z))};
      out.frame.positions.push_back(pos);
      point_box.push_back(b);
      for (std::size_t ch = 0; ch < m; ++ch) {
        float f = ch == static_cast<std::size_t>(box.cls) ? 1.0f : 0.0f;
        if (cfg.feature_noise > 0.0)
          f += static_cast<float>(rng.uniform(-cfg.feature_noise, cfg.feature_noise));
        out.frame.features.push_back(f);
      }
    }
  }

  // --- per-point cells, purity, centroids ---
  const std::size_t n_points = out.frame.size();
  std::vector<VoxelIndex> cells(n_points);
  for (std::size_t p = 0; p < n_points; ++p) {
    const auto idx = voxel_index(out.frame.positions[p], spec);
    if (!idx) throw generation_error("scene: sampled point left the grid");
    cells[p] = *idx;
    if (cfg.position_jitter == 0.0) {
      const detail::SegmentBox& box = boxes[point_box[p]];
      if (idx->ir < box.ir0 || idx->ir >= box.ir0 + box.sr || idx->ia < box.ia0 ||
          idx->ia >= box.ia0 + box.sa || idx->iz < box.iz0 ||
          idx->iz >= box.iz0 + box.sz)
        throw generation_error("scene: sampled point drifted out of its box");
    }
  }

  std::size_t obj_i = 0;
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    if (!boxes[b].thing) continue;
    ObjectRecord& rec = objects[obj_i++];
    double su = 0.0, sv = 0.0;
    for (std::size_t p = rec.first_point; p < rec.first_point + rec.n_points; ++p) {
      const PolarPoint pp = to_polar(out.frame.positions[p]);
      su += (pp.r - spec.r_min) / spec.radial_step();
      sv += pp.theta / spec.angular_step();
    }
    rec.centroid_u = su / static_cast<double>(rec.n_points);
    rec.centroid_v = sv / static_cast<double>(rec.n_points);
    rec.ci = static_cast<std::uint32_t>(std::floor(rec.centroid_u));
    rec.cj = static_cast<std::uint32_t>(std::floor(rec.centroid_v));
  }

  // instance ids in lexicographic centroid order — the clustering stage
  // numbers its centers the same way, so a perfect run reproduces the ids
  std::vector<std::size_t> order(objects.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (objects[a].ci != objects[b].ci) return objects[a].ci < objects[b].ci;
    return objects[a].cj < objects[b].cj;
  });
  std::vector<std::int32_t> object_id(objects.size(), 0);
  for (std::size_t rank = 0; rank < order.size(); ++rank)
    object_id[order[rank]] = static_cast<std::int32_t>(rank + 1);

  // --- ground-truth labeling ---
  out.gt.semantic.resize(n_points);
  out.gt.instance.assign(n_points, 0);
  {
    std::size_t oi = 0;
    for (std::size_t b = 0; b < boxes.size(); ++b) {
      const bool thing = boxes[b].thing;
      const std::int32_t id = thing ? object_id[oi] : 0;
      const std::size_t first = thing ? objects[oi].first_point : 0;
      (void)first;
      if (thing) ++oi;
      for (std::size_t p = 0; p < n_points; ++p)
        if (point_box[p] == b) {
          out.gt.semantic[p] = boxes[b].cls;
          out.gt.instance[p] = id;
        }
    }
  }

  // --- ground-truth head maps ---
  out.gt_maps.heatmap = Tensor({spec.radial_bins, spec.angular_bins});
  out.gt_maps.offsets = Tensor({spec.radial_bins, spec.angular_bins, 2});
  out.gt_maps.fog = Tensor({spec.radial_bins, spec.angular_bins, spec.z_bins});
  out.gt_maps.semantic.assign(
      static_cast<std::size_t>(spec.radial_bins) * spec.angular_bins * spec.z_bins,
      0);
  for (std::size_t p = 0; p < n_points; ++p) {
    const std::size_t flat = flat_cell_index(cells[p], spec);
    out.gt_maps.semantic[flat] = out.gt.semantic[p];
    if (out.classes.is_thing(out.gt.semantic[p])) {
      out.gt_maps.fog[flat] = 1.0f;
    }
  }
  for (std::size_t o = 0; o < objects.size(); ++o) {
    const ObjectRecord& rec = objects[o];
    out.gt_maps.heatmap.at(rec.ci, rec.cj) = 1.0f;
    std::set<std::pair<std::uint32_t, std::uint32_t>> columns;
    for (std::size_t p = rec.first_point; p < rec.first_point + rec.n_points; ++p)
      columns.emplace(cells[p].ir, cells[p].ia);
    for (const auto& [i, j] : columns) {
      out.gt_maps.offsets.at(i, j, 0) =
          static_cast<float>(static_cast<double>(rec.ci) - static_cast<double>(i));
      out.gt_maps.offsets.at(i, j, 1) =
          static_cast<float>(static_cast<double>(rec.cj) - static_cast<double>(j));
    }
  }

  // --- cameras ---
  out.rig.reserve(cfg.cameras);
  for (std::uint32_t k = 0; k < cfg.cameras; ++k) {
    const double yaw =
        2.0 * std::numbers::pi * static_cast<double>(k) / cfg.cameras;
    const double c = std::cos(yaw);
    const double s = std::sin(yaw);
    CameraModel cam;
    // camera right = (sin, -cos, 0), down = -z, forward = (cos, sin, 0)
    cam.extrinsic.at(0, 0) = s;
    cam.extrinsic.at(0, 1) = -c;
    cam.extrinsic.at(0, 2) = 0.0;
    cam.extrinsic.at(1, 0) = 0.0;
    cam.extrinsic.at(1, 1) = 0.0;
    cam.extrinsic.at(1, 2) = -1.0;
    cam.extrinsic.at(2, 0) = c;
    cam.extrinsic.at(2, 1) = s;
    cam.extrinsic.at(2, 2) = 0.0;
    cam.k(0, 0) = cfg.focal;
    cam.k(1, 1) = cfg.focal;
    cam.k(0, 2) = cfg.image_width / 2.0;
    cam.k(1, 2) = cfg.image_height / 2.0;
    cam.width = cfg.image_width;
    cam.height = cfg.image_height;
    cam.capture_time = cfg.camera_time;
    cam.validate();
    out.rig.push_back(cam);
  }
  out.poses_t2_to_first.assign(cfg.cameras, cfg.ego_motion);

  // identity classifier: class scores are the one-hot feature channels
  out.classifier.theta = Tensor({static_cast<std::uint32_t>(m),
                                 static_cast<std::uint32_t>(m)});
  for (std::size_t i = 0; i < m; ++i)
    out.classifier.theta.at(i, i) = 1.0f;

  out.pixel_map = build_point_pixel_map(out.frame, out.rig, out.poses_t2_to_first);

  // --- feature maps painted from the projections ---
  if (cfg.with_feature_maps) {
    const auto h = static_cast<std::uint32_t>(cfg.image_height);
    const auto w = static_cast<std::uint32_t>(cfg.image_width);
    for (std::uint32_t k = 0; k < cfg.cameras; ++k) {
      FeatureMap fm;
      fm.data = Tensor({static_cast<std::uint32_t>(m), h, w});
      fm.camera_index = static_cast<int>(k);
      const std::size_t plane = static_cast<std::size_t>(h) * w;
      std::fill_n(fm.data.data(), plane, 1.0f);  // background = class 0
      out.feature_maps.push_back(std::move(fm));
    }
    for (const PixelEntry& e : out.pixel_map.entries) {
      Tensor& img = out.feature_maps[e.camera_index].data;
      const std::size_t col = detail::nearest_index(e.px, w);
      const std::size_t row = detail::nearest_index(e.py, h);
      for (std::size_t ch = 0; ch < m; ++ch) img.at(ch, row, col) = 0.0f;
      img.at(static_cast<std::size_t>(out.gt.semantic[e.point_index]), row, col) =
          1.0f;
    }
    if (cfg.feature_noise > 0.0) {
      for (FeatureMap& fm : out.feature_maps)
        for (std::size_t i = 0; i < fm.data.size(); ++i)
          fm.data[i] += static_cast<float>(
              rng.uniform(-cfg.feature_noise, cfg.feature_noise));
    }
  }

  out.frame.validate();
  out.gt.validate();
  out.gt_maps.validate();
  return out;
}

/// Reassigns `fraction` of the occupied semantic cells to a different
/// (non-ignored) class, drawn uniformly. Models a noisy semantic head for
/// the vote/no-vote comparison.
inline std::size_t perturb_semantic_cells(BevMaps& maps, double fraction, Rng& rng,
                                          const ClassTable& classes) {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw config_error("perturb: fraction must be in [0,1]");
  std::vector<std::int32_t> labels;
  for (std::size_t c = 0; c < classes.size(); ++c)
    if (!classes.classes[c].ignore) labels.push_back(static_cast<std::int32_t>(c));
  if (labels.size() < 2) throw config_error("perturb: need two usable classes");

  std::vector<std::size_t> occupied;
  for (std::size_t i = 0; i < maps.semantic.size(); ++i)
    if (maps.semantic[i] != 0) occupied.push_back(i);
  const auto n_flip = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(occupied.size())));
  for (std::size_t i = 0; i < n_flip; ++i) {
    const std::size_t j = i + rng.uniform_index(occupied.size() - i);
    std::swap(occupied[i], occupied[j]);
    const std::size_t cell = occupied[i];
    std::int32_t replacement = maps.semantic[cell];
    while (replacement == maps.semantic[cell])
      replacement = labels[rng.uniform_index(labels.size())];
    maps.semantic[cell] = replacement;
  }
  return n_flip;
}

}  // namespace lcps
