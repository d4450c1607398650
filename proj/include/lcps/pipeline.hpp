#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lcps/attention.hpp"
#include "lcps/errors.hpp"
#include "lcps/geometry.hpp"
#include "lcps/io.hpp"
#include "lcps/metrics.hpp"
#include "lcps/postprocess.hpp"
#include "lcps/scene.hpp"
#include "lcps/semantic_region.hpp"
#include "lcps/voxel_grid.hpp"

namespace lcps {

struct PipelineParams {
  double tau = 0.7;
  RegionActivation activation = RegionActivation::kIdentity;
  PixelLookup lookup = PixelLookup::kNearest;
  PoolMode pool = PoolMode::kMean;
  std::uint32_t voxel_channels = 16;
  PvpParams pvp;
  PostprocParams postproc;
  bool compensate = true;
};

/// Every stage artifact, so callers can dump or cross-check intermediates.
struct PipelineResult {
  PointPixelMap pixel_map;
  std::size_t fused_width = 0;
  std::vector<float> fused;  // n_points x fused_width, row-major
  VoxelGrid base;
  VoxelGrid fused_grid;
  VoxelGrid refined;
  PostprocResult post;
};

struct FusedPoints {
  std::size_t width = 0;
  std::vector<float> data;  // n_points x width, row-major
};

/// SARA fusion over a precomputed correspondence map. Each point's fused row
/// is [mlp | pixel | region]; the pixel and region blocks stay zero for
/// points without a correspondence, and the whole image branch is skipped
/// when `feature_maps` is empty (the row is then just the mlp block padded
/// to 3C). A point with several correspondences uses its first map entry,
/// which under build_point_pixel_map order is the lowest camera index.
inline FusedPoints fuse_points(const LidarFrame& frame,
                               const PointPixelMap& pixel_map,
                               const std::vector<FeatureMap>& feature_maps,
                               const PixelClassifier& classifier,
                               const PipelineParams& params = {}) {
  frame.validate();
  const std::size_t n = frame.size();
  const std::size_t c = frame.feature_width;

  const bool with_images = !feature_maps.empty();
  if (with_images) {
    classifier.validate();
    if (classifier.channels() != c)
      throw dimension_error("pipeline: classifier width != point feature width");
    for (const FeatureMap& fm : feature_maps) {
      fm.validate();
      if (fm.channels() != c)
        throw dimension_error("pipeline: feature map channels != point feature width");
    }
  }
  for (const PixelEntry& e : pixel_map.entries) {
    if (e.point_index >= n)
      throw data_error("pipeline: pixel map references points past the cloud");
    if (with_images && e.camera_index >= feature_maps.size())
      throw data_error("pipeline: pixel map camera has no feature map");
  }

  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> first_entry(n, kNone);
  for (std::size_t i = 0; i < pixel_map.entries.size(); ++i) {
    const std::uint32_t p = pixel_map.entries[i].point_index;
    if (first_entry[p] == kNone) first_entry[p] = i;
  }

  FusedPoints out;
  out.width = 3 * c;
  out.data.assign(n * out.width, 0.0f);

  std::vector<std::optional<CamStack>> cams(feature_maps.size());
  std::map<std::pair<std::size_t, std::int32_t>, RegionFeature> regions;

  for (std::size_t p = 0; p < n; ++p) {
    float* row = out.data.data() + p * out.width;
    const float* mlp = frame.feature_row(p);
    std::copy(mlp, mlp + c, row);
    if (!with_images || first_entry[p] == kNone) continue;

    const PixelEntry& e = pixel_map.entries[first_entry[p]];
    const std::size_t k = e.camera_index;
    const FeatureMap& fm = feature_maps[k];
    if (!cams[k]) cams[k] = compute_cams(fm, classifier);
    const CamStack& cs = *cams[k];

    const std::vector<float> pixel = sample_feature(fm, e.px, e.py, params.lookup);

    // classify the landing pixel straight off the CAM stack (its planes are
    // the classifier scores, so this matches classify_pixels exactly)
    const std::size_t plane = static_cast<std::size_t>(fm.height()) * fm.width();
    const std::size_t off =
        detail::nearest_index(e.py, fm.height()) * fm.width() +
        detail::nearest_index(e.px, fm.width());
    std::int32_t y = 0;
    float best = cs.data[off];
    for (std::uint32_t cls = 1; cls < cs.num_classes(); ++cls) {
      const float v = cs.data[cls * plane + off];
      if (v > best) {
        best = v;
        y = static_cast<std::int32_t>(cls);
      }
    }

    auto found = regions.find({k, y});
    if (found == regions.end()) {
      const Tensor gate = build_gate(cs, y, params.tau);
      found = regions
                  .emplace(std::make_pair(k, y),
                           gather_region_feature(gate, fm, params.activation))
                  .first;
    }

    std::copy(pixel.begin(), pixel.end(), row + c);
    const std::vector<float>& reg = found->second.vector;
    std::copy(reg.begin(), reg.end(), row + 2 * c);
  }
  return out;
}

/// Frame positions moved into the sweep's ego frame (returned verbatim when
/// world_to_ego is the identity, so the move is also exact in floats).
inline std::vector<Vec3> ego_positions(const LidarFrame& frame) {
  if (frame.world_to_ego.is_identity()) return frame.positions;
  std::vector<Vec3> out;
  out.reserve(frame.size());
  for (const Vec3& p : frame.positions) out.push_back(frame.world_to_ego.apply(p));
  return out;
}

/// Row-wise resize_channels over an n x width feature block.
inline std::vector<float> resize_feature_rows(std::span<const float> rows,
                                              std::size_t width,
                                              std::uint32_t out_width) {
  if (rows.empty() && width == 0) return {};
  if (width == 0 || rows.size() % width != 0)
    throw dimension_error("resize_feature_rows: ragged feature block");
  const std::size_t n = rows.size() / width;
  std::vector<float> out(n * out_width);
  for (std::size_t p = 0; p < n; ++p) {
    const std::vector<float> r =
        resize_channels(rows.subspan(p * width, width), out_width);
    std::copy(r.begin(), r.end(),
              out.begin() + p * static_cast<std::size_t>(out_width));
  }
  return out;
}

/// Runs the full chain: point/pixel alignment, per-point fusion of MLP,
/// pixel, and class-region image features, voxelization of both the raw
/// geometry and the fused features, neighborhood attention refinement, and
/// head post-processing. `head_maps` stands in for the learned prediction
/// heads; feeding a frame's ground-truth maps exercises every stage under an
/// oracle. When `feature_maps` is empty the image branch is skipped and
/// fused rows carry only the point feature block. When `params.compensate`
/// is off, every camera is projected with the sweep's own pose, i.e. motion
/// between the LiDAR and camera timestamps is ignored.
inline PipelineResult run_pipeline(const LidarFrame& frame,
                                   const std::vector<CameraModel>& rig,
                                   const std::vector<Transform4>& poses_t2_to_first,
                                   const std::vector<FeatureMap>& feature_maps,
                                   const PixelClassifier& classifier,
                                   const BevMaps& head_maps,
                                   const CylinderGridSpec& spec,
                                   const ClassTable& classes,
                                   const PipelineParams& params = {}) {
  frame.validate();
  spec.validate();
  const std::size_t n = frame.size();

  if (!feature_maps.empty() && feature_maps.size() != rig.size())
    throw config_error("pipeline: need one feature map per camera");

  PipelineResult out;

  // --- alignment ---
  if (!rig.empty()) {
    std::vector<Transform4> poses = poses_t2_to_first;
    if (!params.compensate) poses.assign(rig.size(), frame.pose_to_first);
    out.pixel_map = build_point_pixel_map(frame, rig, poses);
  }

  // --- SARA fusion: each point takes its first correspondence ---
  FusedPoints fused =
      fuse_points(frame, out.pixel_map, feature_maps, classifier, params);
  out.fused_width = fused.width;
  out.fused = std::move(fused.data);

  // --- voxelization in the ego frame ---
  LidarFrame ego = frame;
  ego.positions = ego_positions(frame);

  out.base = encode_base_voxels(ego, spec, params.voxel_channels);
  const std::vector<float> fused_resized =
      resize_feature_rows(out.fused, out.fused_width, params.voxel_channels);
  out.fused_grid = scatter_pool(ego.positions, fused_resized, params.voxel_channels,
                                spec, params.pool);

  // --- neighborhood attention ---
  out.refined = propagate(out.base, out.fused_grid, params.pvp);

  // --- heads + post-processing ---
  std::vector<std::optional<VoxelIndex>> point_cells(n);
  for (std::size_t p = 0; p < n; ++p)
    point_cells[p] = voxel_index(ego.positions[p], spec);
  const std::vector<std::int32_t> point_semantic =
      point_semantics_from_cells(point_cells, head_maps.semantic, spec);
  out.post = postprocess_frame(head_maps, point_cells, point_semantic, spec,
                               classes, params.postproc);
  return out;
}

/// Convenience wrapper over a synthetic frame: its ground-truth maps play
/// the oracle heads.
inline PipelineResult run_pipeline(const SyntheticFrame& scene,
                                   const PipelineParams& params = {}) {
  return run_pipeline(scene.frame, scene.rig, scene.poses_t2_to_first,
                      scene.feature_maps, scene.classifier, scene.gt_maps,
                      scene.grid, scene.classes, params);
}

/// Disagreement between two correspondence maps at pixel resolution: counts
/// (point, camera) pairs present in exactly one map plus pairs landing on
/// different nearest pixels. Camera image sizes come from the rig.
inline std::size_t count_pixel_mismatches(const PointPixelMap& a,
                                          const PointPixelMap& b,
                                          const std::vector<CameraModel>& rig) {
  using Key = std::pair<std::uint32_t, std::uint32_t>;
  const auto collect = [&rig](const PointPixelMap& m) {
    std::map<Key, std::pair<std::size_t, std::size_t>> out;
    for (const PixelEntry& e : m.entries) {
      if (e.camera_index >= rig.size())
        throw dimension_error("count_pixel_mismatches: camera index out of range");
      const CameraModel& cam = rig[e.camera_index];
      out[{e.point_index, e.camera_index}] = {
          detail::nearest_index(e.py, static_cast<std::uint32_t>(cam.height)),
          detail::nearest_index(e.px, static_cast<std::uint32_t>(cam.width))};
    }
    return out;
  };
  const auto ma = collect(a);
  const auto mb = collect(b);
  std::size_t mismatches = 0;
  for (const auto& [key, px] : ma) {
    const auto it = mb.find(key);
    if (it == mb.end() || it->second != px) ++mismatches;
  }
  for (const auto& [key, px] : mb)
    if (!ma.count(key)) ++mismatches;
  return mismatches;
}

/// Corpus evaluation over `<stem>_pred.lcpl` / `<stem>_gt.lcpl` pairs.
struct CorpusResult {
  MetricReport report;                // pooled over every readable pair
  std::size_t frames = 0;             // pairs that evaluated cleanly
  std::vector<std::string> errors;    // "<stem>: <what>" for the rest
  std::vector<std::pair<std::string, MetricReport>> per_frame;  // optional
};

inline CorpusResult evaluate_corpus(const std::filesystem::path& dir,
                                    const ClassTable& classes,
                                    bool per_frame_breakdown = false) {
  classes.validate_for_evaluation();
  if (!std::filesystem::is_directory(dir))
    throw config_error("evaluate: not a directory: " + dir.string());

  std::vector<std::string> stems;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    constexpr std::string_view kSuffix = "_gt.lcpl";
    if (name.size() > kSuffix.size() && name.ends_with(kSuffix))
      stems.push_back(name.substr(0, name.size() - kSuffix.size()));
  }
  if (stems.empty())
    throw config_error("evaluate: no *_gt.lcpl / *_pred.lcpl pairs in " +
                       dir.string());
  std::sort(stems.begin(), stems.end());

  CorpusResult out;
  MatchStats pooled(classes.size());
  for (const std::string& stem : stems) {
    try {
      const PanopticLabeling gt = read_labeling(dir / (stem + "_gt.lcpl"));
      const PanopticLabeling pred = read_labeling(dir / (stem + "_pred.lcpl"));
      MatchStats stats = match_segments(gt, pred, classes);
      if (per_frame_breakdown)
        out.per_frame.emplace_back(stem, panoptic_quality(stats, classes));
      pooled.merge(stats);
      ++out.frames;
    } catch (const std::exception& e) {
      out.errors.push_back(stem + ": " + e.what());
    }
  }
  if (out.frames == 0)
    throw data_error("evaluate: no pair could be read (" +
                     std::to_string(out.errors.size()) + " failures)");
  out.report = panoptic_quality(pooled, classes);
  return out;
}

}  // namespace lcps
