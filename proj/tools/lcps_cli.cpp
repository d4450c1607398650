// lcps — command line front end.
//
// A frame directory (produced by `synth`) holds:
//   cloud.lcpk        point positions + features
//   frame.json        capture time, pose_to_first, world_to_ego
//   calibration.json  camera models
//   poses.json        ego@t -> ego@t0 pose per camera timestamp
//   features_<k>.lcft per-camera feature map (C, H, W), when painted
//   classifier.lcft   pixel classifier weights (M, C), when painted
//   heads/            BevMaps bundle standing in for the prediction heads
//   gt.lcpl           ground-truth labeling
//   grid.json         cylinder grid of the scene
//
// Stages (`project`, `fuse`, `voxelize`, `propagate`, `postprocess`) chain
// through files and reproduce a single `run` bit for bit; `run --dump DIR`
// writes every intermediate for that comparison.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lcps/classes.hpp"
#include "lcps/errors.hpp"
#include "lcps/geometry.hpp"
#include "lcps/io.hpp"
#include "lcps/metrics.hpp"
#include "lcps/pipeline.hpp"
#include "lcps/postprocess.hpp"
#include "lcps/scene.hpp"
#include "lcps/voxel_grid.hpp"

namespace fs = std::filesystem;

namespace {

struct Settings {
  std::string config_path;
  std::string grid = "nuscenes-100m";
  std::string grid_spec_path;
  double tau = 0.7;
  int nms_kernel = 5;
  double nms_threshold = 0.1;
  double fog_threshold = 0.5;
  std::string pool = "mean";
  std::string dump_dir;
  std::uint64_t seed = 1;
  bool no_compensate = false;
  bool no_vote = false;
  bool grid_explicit = false;
};

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw lcps::config_error("config: bad number for '" + key + "': " + value);
  }
}

// Config file keys mirror the long flags and take precedence over them.
void apply_config(Settings& s) {
  if (s.config_path.empty()) return;
  for (const auto& [key, value] : lcps::read_config(s.config_path)) {
    if (key == "grid") {
      if (value != "nuscenes-100m" && value != "kitti-60m" && value != "custom")
        throw lcps::config_error("config: unknown grid preset: " + value);
      s.grid = value;
      s.grid_explicit = true;
    } else if (key == "grid-spec") {
      s.grid_spec_path = value;
    } else if (key == "tau") {
      s.tau = parse_double(key, value);
    } else if (key == "nms-kernel") {
      s.nms_kernel = static_cast<int>(parse_double(key, value));
    } else if (key == "nms-threshold") {
      s.nms_threshold = parse_double(key, value);
    } else if (key == "fog-threshold") {
      s.fog_threshold = parse_double(key, value);
    } else if (key == "pool") {
      if (value != "mean" && value != "max")
        throw lcps::config_error("config: pool must be mean or max");
      s.pool = value;
    } else if (key == "seed") {
      try {
        std::size_t used = 0;
        s.seed = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
      } catch (const std::exception&) {
        throw lcps::config_error("config: bad number for 'seed': " + value);
      }
    } else {
      throw lcps::config_error("config: unknown key '" + key + "'");
    }
  }
}

// Explicit --grid / config wins; otherwise a frame's own grid.json; otherwise
// the preset default.
lcps::CylinderGridSpec resolve_grid(const Settings& s, const fs::path* frame_dir) {
  if (!s.grid_explicit && frame_dir != nullptr) {
    const fs::path own = *frame_dir / "grid.json";
    if (fs::exists(own)) return lcps::read_grid_spec(own);
  }
  if (s.grid == "nuscenes-100m") return lcps::nuscenes_grid();
  if (s.grid == "kitti-60m") return lcps::kitti_grid();
  if (s.grid_spec_path.empty())
    throw lcps::config_error("--grid custom requires --grid-spec FILE");
  return lcps::read_grid_spec(s.grid_spec_path);
}

lcps::PipelineParams params_from(const Settings& s) {
  lcps::PipelineParams p;
  p.tau = s.tau;
  p.pool = s.pool == "max" ? lcps::PoolMode::kMax : lcps::PoolMode::kMean;
  p.compensate = !s.no_compensate;
  p.postproc.nms_kernel = s.nms_kernel;
  p.postproc.nms_threshold = s.nms_threshold;
  p.postproc.fog_threshold = s.fog_threshold;
  p.postproc.majority_vote = !s.no_vote;
  return p;
}

struct FrameBundle {
  lcps::LidarFrame frame;
  std::vector<lcps::CameraModel> rig;
  std::vector<lcps::Transform4> poses_t2_to_first;
  std::vector<lcps::FeatureMap> feature_maps;
  lcps::PixelClassifier classifier;
};

FrameBundle load_frame(const fs::path& dir) {
  if (!fs::is_directory(dir))
    throw lcps::data_error("not a frame directory: " + dir.string());

  FrameBundle b;
  b.frame = lcps::read_point_cloud(dir / "cloud.lcpk");
  const lcps::FrameMeta meta = lcps::read_frame_meta(dir / "frame.json");
  b.frame.capture_time = meta.capture_time;
  b.frame.pose_to_first = meta.pose_to_first;
  b.frame.world_to_ego = meta.world_to_ego;

  b.rig = lcps::read_calibration(dir / "calibration.json");
  const lcps::PoseTable poses = lcps::read_poses(dir / "poses.json");
  for (const lcps::CameraModel& cam : b.rig)
    b.poses_t2_to_first.push_back(poses.at(cam.capture_time));

  for (std::size_t k = 0; k < b.rig.size(); ++k) {
    const fs::path fm = dir / ("features_" + std::to_string(k) + ".lcft");
    if (!fs::exists(fm)) break;
    b.feature_maps.push_back(
        lcps::FeatureMap{lcps::read_tensor(fm), static_cast<int>(k)});
  }
  if (!b.feature_maps.empty()) {
    if (b.feature_maps.size() != b.rig.size())
      throw lcps::data_error("frame has feature maps for only some cameras");
    b.classifier.theta = lcps::read_tensor(dir / "classifier.lcft");
  }
  return b;
}

std::vector<std::optional<lcps::VoxelIndex>> cells_of(
    const std::vector<lcps::Vec3>& ego, const lcps::CylinderGridSpec& spec) {
  std::vector<std::optional<lcps::VoxelIndex>> cells(ego.size());
  for (std::size_t p = 0; p < ego.size(); ++p)
    cells[p] = lcps::voxel_index(ego[p], spec);
  return cells;
}

lcps::Tensor rows_to_tensor(const std::vector<float>& data, std::size_t width) {
  lcps::Tensor t({static_cast<std::uint32_t>(data.size() / width),
                  static_cast<std::uint32_t>(width)});
  std::copy(data.begin(), data.end(), t.data());
  return t;
}

// --- subcommand bodies ------------------------------------------------------

struct SynthOptions {
  std::uint32_t objects = 5;
  std::uint32_t stuff_regions = 3;
  std::uint32_t points_per_object = 64;
  std::uint32_t points_per_stuff = 256;
  std::uint32_t cameras = 4;
  double jitter = 0.0;
  double feature_noise = 0.0;
  bool ego_drift = false;
  bool no_images = false;
};

void cmd_synth(const Settings& s, const SynthOptions& o, const fs::path& out_dir) {
  lcps::SceneConfig cfg;
  cfg.seed = s.seed;
  cfg.n_objects = o.objects;
  cfg.n_stuff_regions = o.stuff_regions;
  cfg.points_per_object = o.points_per_object;
  cfg.points_per_stuff = o.points_per_stuff;
  cfg.cameras = o.cameras;
  cfg.position_jitter = o.jitter;
  cfg.feature_noise = o.feature_noise;
  cfg.with_feature_maps = !o.no_images;
  cfg.grid = resolve_grid(s, nullptr);
  if (o.ego_drift) cfg.ego_motion = lcps::default_ego_motion();

  const lcps::SyntheticFrame scene = lcps::generate_scene(cfg);

  fs::create_directories(out_dir / "heads");
  lcps::write_point_cloud(out_dir / "cloud.lcpk", scene.frame);
  lcps::write_frame_meta(out_dir / "frame.json",
                         lcps::FrameMeta{scene.frame.capture_time,
                                         scene.frame.pose_to_first,
                                         scene.frame.world_to_ego});
  lcps::write_calibration(out_dir / "calibration.json", scene.rig);

  lcps::PoseTable table;
  for (std::size_t k = 0; k < scene.rig.size(); ++k) {
    const double t = scene.rig[k].capture_time;
    bool seen = false;
    for (const auto& [known, m] : table.poses) seen = seen || known == t;
    if (!seen) table.poses.emplace_back(t, scene.poses_t2_to_first[k]);
  }
  lcps::write_poses(out_dir / "poses.json", table);

  for (std::size_t k = 0; k < scene.feature_maps.size(); ++k)
    lcps::write_tensor(out_dir / ("features_" + std::to_string(k) + ".lcft"),
                       scene.feature_maps[k].data);
  if (!scene.feature_maps.empty())
    lcps::write_tensor(out_dir / "classifier.lcft", scene.classifier.theta);

  lcps::write_bev_maps(out_dir / "heads", scene.gt_maps);
  lcps::write_labeling(out_dir / "gt.lcpl", scene.gt);
  lcps::write_grid_spec(out_dir / "grid.json", scene.grid);
  std::printf("wrote frame with %zu points, %zu cameras to %s\n",
              scene.frame.size(), scene.rig.size(), out_dir.string().c_str());
}

void cmd_project(const Settings& s, const fs::path& frame_dir, const fs::path& out) {
  const FrameBundle b = load_frame(frame_dir);
  std::vector<lcps::Transform4> poses = b.poses_t2_to_first;
  if (s.no_compensate) poses.assign(b.rig.size(), b.frame.pose_to_first);
  const lcps::PointPixelMap map =
      lcps::build_point_pixel_map(b.frame, b.rig, poses);
  lcps::write_pixel_map(out, map);
  std::printf("%zu correspondences across %zu cameras\n", map.entries.size(),
              b.rig.size());
}

void cmd_fuse(const Settings& s, const fs::path& frame_dir, const fs::path& map_path,
              const fs::path& out) {
  const FrameBundle b = load_frame(frame_dir);
  const lcps::PointPixelMap map = lcps::read_pixel_map(map_path);
  const lcps::FusedPoints fused = lcps::fuse_points(
      b.frame, map, b.feature_maps, b.classifier, params_from(s));
  lcps::write_tensor(out, rows_to_tensor(fused.data, fused.width));
  std::printf("fused %zu points to width %zu\n", b.frame.size(), fused.width);
}

void cmd_voxelize(const Settings& s, const fs::path& frame_dir,
                  const fs::path& fused_path, const fs::path& base_out,
                  const fs::path& fused_out) {
  const FrameBundle b = load_frame(frame_dir);
  const lcps::CylinderGridSpec spec = resolve_grid(s, &frame_dir);
  const lcps::PipelineParams params = params_from(s);

  const lcps::Tensor fused = lcps::read_tensor(fused_path);
  fused.require_rank(2, "fused features");
  if (fused.dim(0) != b.frame.size())
    throw lcps::dimension_error("fused feature rows do not match the cloud");

  lcps::LidarFrame ego = b.frame;
  ego.positions = lcps::ego_positions(b.frame);

  const lcps::VoxelGrid base =
      lcps::encode_base_voxels(ego, spec, params.voxel_channels);
  const std::vector<float> resized = lcps::resize_feature_rows(
      std::span<const float>(fused.data(), fused.size()), fused.dim(1),
      params.voxel_channels);
  const lcps::VoxelGrid fused_grid = lcps::scatter_pool(
      ego.positions, resized, params.voxel_channels, spec, params.pool);

  lcps::write_voxel_grid(base_out, base);
  lcps::write_voxel_grid(fused_out, fused_grid);
  std::printf("base %zu cells, fused %zu cells\n", base.cells.size(),
              fused_grid.cells.size());
}

void cmd_propagate(const fs::path& base_path, const fs::path& fused_path,
                   const fs::path& out) {
  const lcps::VoxelGrid base = lcps::read_voxel_grid(base_path);
  const lcps::VoxelGrid fused = lcps::read_voxel_grid(fused_path);
  const lcps::VoxelGrid refined = lcps::propagate(base, fused);
  lcps::write_voxel_grid(out, refined);
  std::printf("refined %zu cells\n", refined.cells.size());
}

void cmd_postprocess(const Settings& s, const fs::path& frame_dir,
                     const fs::path& out, fs::path heads_dir) {
  const FrameBundle b = load_frame(frame_dir);
  const lcps::CylinderGridSpec spec = resolve_grid(s, &frame_dir);
  if (heads_dir.empty()) heads_dir = frame_dir / "heads";
  const lcps::BevMaps maps = lcps::read_bev_maps(heads_dir);
  const lcps::ClassTable classes = lcps::default_class_table();

  const auto cells = cells_of(lcps::ego_positions(b.frame), spec);
  const std::vector<std::int32_t> semantic =
      lcps::point_semantics_from_cells(cells, maps.semantic, spec);
  const lcps::PostprocResult result = lcps::postprocess_frame(
      maps, cells, semantic, spec, classes, params_from(s).postproc);
  lcps::write_labeling(out, result.labeling);
  std::printf("%zu centers, %zu points labeled\n", result.centers.size(),
              result.labeling.size());
}

void cmd_run(const Settings& s, const fs::path& frame_dir, const fs::path& out,
             fs::path heads_dir) {
  const FrameBundle b = load_frame(frame_dir);
  const lcps::CylinderGridSpec spec = resolve_grid(s, &frame_dir);
  if (heads_dir.empty()) heads_dir = frame_dir / "heads";
  const lcps::BevMaps maps = lcps::read_bev_maps(heads_dir);
  const lcps::ClassTable classes = lcps::default_class_table();

  const lcps::PipelineResult result =
      lcps::run_pipeline(b.frame, b.rig, b.poses_t2_to_first, b.feature_maps,
                         b.classifier, maps, spec, classes, params_from(s));
  lcps::write_labeling(out, result.post.labeling);

  if (!s.dump_dir.empty()) {
    const fs::path dump(s.dump_dir);
    fs::create_directories(dump);
    lcps::write_pixel_map(dump / "pixel_map.lcpm", result.pixel_map);
    lcps::write_tensor(dump / "fused.lcft",
                       rows_to_tensor(result.fused, result.fused_width));
    lcps::write_voxel_grid(dump / "base.lcvg", result.base);
    lcps::write_voxel_grid(dump / "fused_grid.lcvg", result.fused_grid);
    lcps::write_voxel_grid(dump / "refined.lcvg", result.refined);
  }
  std::printf("%zu points labeled, %zu instances\n", result.post.labeling.size(),
              result.post.centers.size());
}

int cmd_evaluate(const fs::path& corpus_dir, bool per_frame,
                 const fs::path& csv_path) {
  const lcps::ClassTable classes = lcps::default_class_table();
  const lcps::CorpusResult result =
      lcps::evaluate_corpus(corpus_dir, classes, per_frame);

  std::printf("frames %zu\n", result.frames);
  std::fputs(lcps::format_report_kv(result.report).c_str(), stdout);
  if (per_frame)
    for (const auto& [stem, report] : result.per_frame)
      std::printf("frame %s pq %.6f miou %.6f\n", stem.c_str(), report.pq,
                  report.miou);
  if (!csv_path.empty()) {
    std::ofstream out(csv_path);
    if (!out) throw lcps::data_error("cannot write " + csv_path.string());
    out << lcps::format_classwise_csv(result.report);
  }
  if (!result.errors.empty()) {
    for (const std::string& e : result.errors)
      std::fprintf(stderr, "error: %s\n", e.c_str());
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LiDAR-camera panoptic segmentation pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  Settings s;
  app.add_option("--config", s.config_path, "key/value file overriding flags");
  auto* grid_opt =
      app.add_option("--grid", s.grid, "grid preset")
          ->check(CLI::IsMember({"nuscenes-100m", "kitti-60m", "custom"}));
  app.add_option("--grid-spec", s.grid_spec_path, "JSON grid spec for --grid custom");
  app.add_option("--tau", s.tau, "CAM gate threshold");
  app.add_option("--nms-kernel", s.nms_kernel, "NMS window size (odd)");
  app.add_option("--nms-threshold", s.nms_threshold, "NMS score threshold");
  app.add_option("--fog-threshold", s.fog_threshold, "foreground gate threshold");
  app.add_option("--pool", s.pool, "voxel pooling")
      ->check(CLI::IsMember({"mean", "max"}));
  app.add_option("--dump", s.dump_dir, "directory for stage artifacts (run)");
  app.add_option("--seed", s.seed, "scene seed");
  app.add_flag("--no-compensate", s.no_compensate, "project with the sweep pose");
  app.add_flag("--no-vote", s.no_vote, "skip the majority vote");

  SynthOptions so;
  std::string synth_out;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic frame");
  synth->add_option("out_dir", synth_out)->required();
  synth->add_option("--objects", so.objects);
  synth->add_option("--stuff-regions", so.stuff_regions);
  synth->add_option("--points-per-object", so.points_per_object);
  synth->add_option("--points-per-stuff", so.points_per_stuff);
  synth->add_option("--cameras", so.cameras);
  synth->add_option("--jitter", so.jitter);
  synth->add_option("--feature-noise", so.feature_noise);
  synth->add_flag("--ego-drift", so.ego_drift, "use the stock ego displacement");
  synth->add_flag("--no-images", so.no_images, "skip feature map painting");

  std::string project_dir, project_out;
  CLI::App* project = app.add_subcommand("project", "point to pixel alignment");
  project->add_option("frame_dir", project_dir)->required();
  project->add_option("out_map", project_out)->required();

  std::string fuse_dir, fuse_map, fuse_out;
  CLI::App* fuse = app.add_subcommand("fuse", "per-point feature fusion");
  fuse->add_option("frame_dir", fuse_dir)->required();
  fuse->add_option("pixel_map", fuse_map)->required();
  fuse->add_option("out_features", fuse_out)->required();

  std::string vox_dir, vox_fused, vox_base_out, vox_fused_out;
  CLI::App* voxelize = app.add_subcommand("voxelize", "scatter into the grid");
  voxelize->add_option("frame_dir", vox_dir)->required();
  voxelize->add_option("fused_features", vox_fused)->required();
  voxelize->add_option("base_out", vox_base_out)->required();
  voxelize->add_option("fused_out", vox_fused_out)->required();

  std::string prop_base, prop_fused, prop_out;
  CLI::App* propagate = app.add_subcommand("propagate", "neighborhood attention");
  propagate->add_option("base_grid", prop_base)->required();
  propagate->add_option("fused_grid", prop_fused)->required();
  propagate->add_option("out_grid", prop_out)->required();

  std::string post_dir, post_out, post_heads;
  CLI::App* postprocess = app.add_subcommand("postprocess", "heads to labeling");
  postprocess->add_option("frame_dir", post_dir)->required();
  postprocess->add_option("out_labeling", post_out)->required();
  postprocess->add_option("--heads", post_heads, "BevMaps bundle directory");

  std::string run_dir, run_out, run_heads;
  CLI::App* run = app.add_subcommand("run", "full pipeline");
  run->add_option("frame_dir", run_dir)->required();
  run->add_option("out_labeling", run_out)->required();
  run->add_option("--heads", run_heads, "BevMaps bundle directory");

  std::string eval_dir, eval_csv;
  bool eval_per_frame = false;
  CLI::App* evaluate = app.add_subcommand("evaluate", "score a labeling corpus");
  evaluate->add_option("corpus_dir", eval_dir)->required();
  evaluate->add_flag("--per-frame", eval_per_frame, "per-frame breakdown");
  evaluate->add_option("--csv", eval_csv, "write the class-wise table here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    s.grid_explicit = grid_opt->count() > 0;
    apply_config(s);

    if (synth->parsed()) {
      cmd_synth(s, so, synth_out);
    } else if (project->parsed()) {
      cmd_project(s, project_dir, project_out);
    } else if (fuse->parsed()) {
      cmd_fuse(s, fuse_dir, fuse_map, fuse_out);
    } else if (voxelize->parsed()) {
      cmd_voxelize(s, vox_dir, vox_fused, vox_base_out, vox_fused_out);
    } else if (propagate->parsed()) {
      cmd_propagate(prop_base, prop_fused, prop_out);
    } else if (postprocess->parsed()) {
      cmd_postprocess(s, post_dir, post_out, post_heads);
    } else if (run->parsed()) {
      cmd_run(s, run_dir, run_out, run_heads);
    } else if (evaluate->parsed()) {
      return cmd_evaluate(eval_dir, eval_per_frame, eval_csv);
    }
  } catch (const lcps::config_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
