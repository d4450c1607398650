#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lcps/errors.hpp"
#include "lcps/geometry.hpp"
#include "lcps/postprocess.hpp"
#include "lcps/tensor.hpp"
#include "lcps/voxel_grid.hpp"

// Binary container formats. All integers and floats are little-endian; see
// docs/FORMATS.md for the byte-level layouts.
//
//   LCPK  point cloud: "LCPK", u32 N, u32 C, N*3 f32 positions, N*C f32 features
//   LCFT  tensor:      "LCFT", u32 rank, rank*u32 dims, f32 payload (row-major)
//   LCVG  voxel grid:  "LCVG", grid spec, u32 channels, u64 cells,
//                      cells * (3*u32 index, u32 count, C*f32 feature)
//   LCPL  labeling:    "LCPL", u32 N, N * (i32 semantic, i32 instance)
//   LCPM  pixel map:   "LCPM", u32 cameras, u64 entries,
//                      entries * (u32 point, u32 camera, 3*f64 u,v,depth),
//                      cameras * u64 culled
namespace lcps {

namespace detail {

class ByteWriter {
 public:
  explicit ByteWriter(const std::filesystem::path& path)
      : stream_(path, std::ios::binary), path_(path.string()) {
    if (!stream_) throw data_error("cannot open for writing: " + path_);
  }

  void magic(const char (&tag)[5]) { stream_.write(tag, 4); }

  void u32(std::uint32_t v) { bytes(static_cast<std::uint64_t>(v), 4); }
  void u64(std::uint64_t v) { bytes(v, 8); }
  void i32(std::int32_t v) { bytes(static_cast<std::uint32_t>(v), 4); }
  void f32(float v) { bytes(std::bit_cast<std::uint32_t>(v), 4); }
  void f64(double v) { bytes(std::bit_cast<std::uint64_t>(v), 8); }

  void close() {
    stream_.close();
    if (!stream_) throw data_error("write failed: " + path_);
  }

 private:
  void bytes(std::uint64_t v, int n) {
    char buf[8];
    for (int i = 0; i < n; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    stream_.write(buf, n);
  }

  std::ofstream stream_;
  std::string path_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::filesystem::path& path)
      : stream_(path, std::ios::binary), path_(path.string()) {
    if (!stream_) throw data_error("cannot open for reading: " + path_);
  }

  void magic(const char (&tag)[5]) {
    char buf[4];
    stream_.read(buf, 4);
    if (!stream_ || std::memcmp(buf, tag, 4) != 0)
      throw data_error(std::string("bad magic, expected ") + tag + ": " + path_);
  }

  std::uint32_t u32() { return static_cast<std::uint32_t>(bytes(4)); }
  std::uint64_t u64() { return bytes(8); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(bytes(8)); }

  void done() {
    stream_.peek();
    if (!stream_.eof()) throw data_error("trailing bytes: " + path_);
  }

 private:
  std::uint64_t bytes(int n) {
    char buf[8];
    stream_.read(buf, n);
    if (!stream_) throw data_error("truncated file: " + path_);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
    return v;
  }

  std::ifstream stream_;
  std::string path_;
};

}  // namespace detail

// --- LCPK ------------------------------------------------------------------

inline void write_point_cloud(const std::filesystem::path& path,
                              const LidarFrame& frame) {
  frame.validate();
  detail::ByteWriter w(path);
  w.magic("LCPK");
  w.u32(static_cast<std::uint32_t>(frame.size()));
  w.u32(static_cast<std::uint32_t>(frame.feature_width));
  for (const Vec3& p : frame.positions) {
    w.f32(static_cast<float>(p.x));
    w.f32(static_cast<float>(p.y));
    w.f32(static_cast<float>(p.z));
  }
  for (const float f : frame.features) w.f32(f);
  w.close();
}

/// Reads positions and features; pose fields stay at their defaults and come
/// from the frame metadata file.
inline LidarFrame read_point_cloud(const std::filesystem::path& path) {
  detail::ByteReader r(path);
  r.magic("LCPK");
  const std::uint32_t n = r.u32();
  const std::uint32_t c = r.u32();
  if (c == 0) throw data_error("point cloud with zero feature channels");
  LidarFrame frame;
  frame.feature_width = c;
  frame.positions.resize(n);
  for (Vec3& p : frame.positions) {
    p.x = static_cast<double>(r.f32());
    p.y = static_cast<double>(r.f32());
    p.z = static_cast<double>(r.f32());
  }
  frame.features.resize(static_cast<std::size_t>(n) * c);
  for (float& f : frame.features) f = r.f32();
  r.done();
  return frame;
}

// --- LCFT ------------------------------------------------------------------

inline void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  detail::ByteWriter w(path);
  w.magic("LCFT");
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (const std::uint32_t d : t.dims()) w.u32(d);
  for (const float v : t.storage()) w.f32(v);
  w.close();
}

inline Tensor read_tensor(const std::filesystem::path& path) {
  detail::ByteReader r(path);
  r.magic("LCFT");
  const std::uint32_t rank = r.u32();
  if (rank < 1 || rank > 4) throw data_error("tensor rank outside 1..4");
  std::vector<std::uint32_t> dims(rank);
  std::size_t total = 1;
  for (std::uint32_t& d : dims) {
    d = r.u32();
    if (d == 0) throw data_error("tensor with zero dimension");
    total *= d;
  }
  Tensor t(dims);
  for (std::size_t i = 0; i < total; ++i) t[i] = r.f32();
  r.done();
  return t;
}

// --- LCVG ------------------------------------------------------------------

inline void write_voxel_grid(const std::filesystem::path& path,
                             const VoxelGrid& grid) {
  detail::ByteWriter w(path);
  w.magic("LCVG");
  w.u32(grid.spec.radial_bins);
  w.u32(grid.spec.angular_bins);
  w.u32(grid.spec.z_bins);
  w.f64(grid.spec.r_min);
  w.f64(grid.spec.r_max);
  w.f64(grid.spec.z_min);
  w.f64(grid.spec.z_max);
  w.u32(grid.channels);
  w.u64(grid.cells.size());
  for (const auto& [idx, cell] : grid.cells) {
    w.u32(idx.ir);
    w.u32(idx.ia);
    w.u32(idx.iz);
    w.u32(cell.count);
    if (cell.feature.size() != grid.channels)
      throw data_error("voxel cell feature width mismatch");
    for (const float f : cell.feature) w.f32(f);
  }
  w.close();
}

inline VoxelGrid read_voxel_grid(const std::filesystem::path& path) {
  detail::ByteReader r(path);
  r.magic("LCVG");
  VoxelGrid grid;
  grid.spec.radial_bins = r.u32();
  grid.spec.angular_bins = r.u32();
  grid.spec.z_bins = r.u32();
  grid.spec.r_min = r.f64();
  grid.spec.r_max = r.f64();
  grid.spec.z_min = r.f64();
  grid.spec.z_max = r.f64();
  grid.spec.validate();
  grid.channels = r.u32();
  if (grid.channels == 0) throw data_error("voxel grid with zero channels");
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    VoxelIndex idx{r.u32(), r.u32(), r.u32()};
    if (idx.ir >= grid.spec.radial_bins || idx.ia >= grid.spec.angular_bins ||
        idx.iz >= grid.spec.z_bins)
      throw data_error("voxel index outside grid");
    VoxelCell cell;
    cell.count = r.u32();
    cell.feature.resize(grid.channels);
    for (float& f : cell.feature) f = r.f32();
    if (!grid.cells.emplace(idx, std::move(cell)).second)
      throw data_error("duplicate voxel cell record");
  }
  r.done();
  return grid;
}

// --- LCPL ------------------------------------------------------------------

inline void write_labeling(const std::filesystem::path& path,
                           const PanopticLabeling& labeling) {
  labeling.validate();
  detail::ByteWriter w(path);
  w.magic("LCPL");
  w.u32(static_cast<std::uint32_t>(labeling.size()));
  for (std::size_t i = 0; i < labeling.size(); ++i) {
    w.i32(labeling.semantic[i]);
    w.i32(labeling.instance[i]);
  }
  w.close();
}

inline PanopticLabeling read_labeling(const std::filesystem::path& path) {
  detail::ByteReader r(path);
  r.magic("LCPL");
  const std::uint32_t n = r.u32();
  PanopticLabeling labeling;
  labeling.semantic.resize(n);
  labeling.instance.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    labeling.semantic[i] = r.i32();
    labeling.instance[i] = r.i32();
  }
  r.done();
  return labeling;
}

// --- LCPM ------------------------------------------------------------------

inline void write_pixel_map(const std::filesystem::path& path,
                            const PointPixelMap& map) {
  detail::ByteWriter w(path);
  w.magic("LCPM");
  w.u32(static_cast<std::uint32_t>(map.culled_per_camera.size()));
  w.u64(map.entries.size());
  for (const PixelEntry& e : map.entries) {
    w.u32(e.point_index);
    w.u32(e.camera_index);
    w.f64(e.px);
    w.f64(e.py);
    w.f64(e.depth);
  }
  for (const std::size_t c : map.culled_per_camera)
    w.u64(static_cast<std::uint64_t>(c));
  w.close();
}

inline PointPixelMap read_pixel_map(const std::filesystem::path& path) {
  detail::ByteReader r(path);
  r.magic("LCPM");
  const std::uint32_t cameras = r.u32();
  const std::uint64_t n = r.u64();
  PointPixelMap map;
  map.entries.resize(n);
  for (PixelEntry& e : map.entries) {
    e.point_index = r.u32();
    e.camera_index = r.u32();
    e.px = r.f64();
    e.py = r.f64();
    e.depth = r.f64();
    if (e.camera_index >= cameras)
      throw data_error("pixel entry camera out of range");
  }
  map.culled_per_camera.resize(cameras);
  for (std::size_t& c : map.culled_per_camera)
    c = static_cast<std::size_t>(r.u64());
  r.done();
  return map;
}

// --- JSON sidecars -----------------------------------------------------------

namespace detail {

inline nlohmann::json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open for reading: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw data_error("bad json in " + path.string() + ": " + e.what());
  }
  return j;
}

inline void save_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot open for writing: " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw data_error("write failed: " + path.string());
}

inline Transform4 matrix_from_json(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 16)
    throw data_error(what + ": expected 16 numbers");
  Transform4 t;
  for (std::size_t i = 0; i < 16; ++i) t.m[i] = j[i].get<double>();
  return t;
}

inline nlohmann::json matrix_to_json(const Transform4& t) {
  nlohmann::json j = nlohmann::json::array();
  for (const double v : t.m) j.push_back(v);
  return j;
}

}  // namespace detail

inline std::vector<CameraModel> read_calibration(const std::filesystem::path& path) {
  const nlohmann::json j = detail::load_json(path);
  if (!j.contains("cameras") || !j["cameras"].is_array())
    throw data_error("calibration: missing cameras array");
  std::vector<CameraModel> rig;
  try {
    for (const auto& jc : j["cameras"]) {
      CameraModel cam;
      const auto& k = jc.at("intrinsic");
      if (!k.is_array() || k.size() != 9)
        throw data_error("calibration: intrinsic must be 9 numbers");
      for (std::size_t i = 0; i < 9; ++i) cam.intrinsic[i] = k[i].get<double>();
      cam.extrinsic = detail::matrix_from_json(jc.at("extrinsic"), "extrinsic");
      cam.width = jc.at("width").get<int>();
      cam.height = jc.at("height").get<int>();
      cam.capture_time = jc.at("capture_time").get<double>();
      cam.validate();
      rig.push_back(cam);
    }
  } catch (const nlohmann::json::exception& e) {
    throw data_error("calibration: " + std::string(e.what()));
  }
  if (rig.empty()) throw data_error("calibration: empty rig");
  return rig;
}

inline void write_calibration(const std::filesystem::path& path,
                              const std::vector<CameraModel>& rig) {
  nlohmann::json j;
  j["cameras"] = nlohmann::json::array();
  for (const CameraModel& cam : rig) {
    nlohmann::json jc;
    jc["intrinsic"] = nlohmann::json::array();
    for (const double v : cam.intrinsic) jc["intrinsic"].push_back(v);
    jc["extrinsic"] = detail::matrix_to_json(cam.extrinsic);
    jc["width"] = cam.width;
    jc["height"] = cam.height;
    jc["capture_time"] = cam.capture_time;
    j["cameras"].push_back(jc);
  }
  detail::save_json(path, j);
}

/// Ego poses to the first frame, keyed by capture timestamp.
struct PoseTable {
  std::vector<std::pair<double, Transform4>> poses;

  const Transform4& at(double timestamp) const {
    for (const auto& [t, m] : poses)
      if (t == timestamp) return m;
    throw data_error("no pose for timestamp " + std::to_string(timestamp));
  }
};

inline PoseTable read_poses(const std::filesystem::path& path) {
  const nlohmann::json j = detail::load_json(path);
  if (!j.contains("poses") || !j["poses"].is_array())
    throw data_error("poses: missing poses array");
  PoseTable table;
  try {
    for (const auto& jp : j["poses"]) {
      const double t = jp.at("timestamp").get<double>();
      Transform4 m = detail::matrix_from_json(jp.at("matrix"), "pose matrix");
      m.validate();
      table.poses.emplace_back(t, m);
    }
  } catch (const nlohmann::json::exception& e) {
    throw data_error("poses: " + std::string(e.what()));
  }
  return table;
}

inline void write_poses(const std::filesystem::path& path, const PoseTable& table) {
  nlohmann::json j;
  j["poses"] = nlohmann::json::array();
  for (const auto& [t, m] : table.poses) {
    nlohmann::json jp;
    jp["timestamp"] = t;
    jp["matrix"] = detail::matrix_to_json(m);
    j["poses"].push_back(jp);
  }
  detail::save_json(path, j);
}

/// Per-sweep metadata that LCPK does not carry.
struct FrameMeta {
  double capture_time = 0.0;
  Transform4 pose_to_first;
  Transform4 world_to_ego;
};

inline FrameMeta read_frame_meta(const std::filesystem::path& path) {
  const nlohmann::json j = detail::load_json(path);
  FrameMeta meta;
  try {
    meta.capture_time = j.at("capture_time").get<double>();
    meta.pose_to_first = detail::matrix_from_json(j.at("pose_to_first"), "pose_to_first");
    meta.world_to_ego = detail::matrix_from_json(j.at("world_to_ego"), "world_to_ego");
  } catch (const nlohmann::json::exception& e) {
    throw data_error("frame meta: " + std::string(e.what()));
  }
  meta.pose_to_first.validate();
  meta.world_to_ego.validate();
  return meta;
}

inline void write_frame_meta(const std::filesystem::path& path, const FrameMeta& meta) {
  nlohmann::json j;
  j["capture_time"] = meta.capture_time;
  j["pose_to_first"] = detail::matrix_to_json(meta.pose_to_first);
  j["world_to_ego"] = detail::matrix_to_json(meta.world_to_ego);
  detail::save_json(path, j);
}

inline CylinderGridSpec read_grid_spec(const std::filesystem::path& path) {
  const nlohmann::json j = detail::load_json(path);
  CylinderGridSpec spec;
  try {
    spec.radial_bins = j.at("radial_bins").get<std::uint32_t>();
    spec.angular_bins = j.at("angular_bins").get<std::uint32_t>();
    spec.z_bins = j.at("z_bins").get<std::uint32_t>();
    spec.r_min = j.at("r_min").get<double>();
    spec.r_max = j.at("r_max").get<double>();
    spec.z_min = j.at("z_min").get<double>();
    spec.z_max = j.at("z_max").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw data_error("grid spec: " + std::string(e.what()));
  }
  spec.validate();
  return spec;
}

inline void write_grid_spec(const std::filesystem::path& path,
                            const CylinderGridSpec& spec) {
  nlohmann::json j;
  j["radial_bins"] = spec.radial_bins;
  j["angular_bins"] = spec.angular_bins;
  j["z_bins"] = spec.z_bins;
  j["r_min"] = spec.r_min;
  j["r_max"] = spec.r_max;
  j["z_min"] = spec.z_min;
  j["z_max"] = spec.z_max;
  detail::save_json(path, j);
}

// --- BevMaps bundle -----------------------------------------------------------

/// The per-cell semantic map travels as an LCFT tensor: either rank-3
/// (H, W, Z) holding integral class ids, or rank-4 logits (M, H, W, Z)
/// reduced by argmax (ties to the smaller class).
inline std::vector<std::int32_t> semantic_cells_from_tensor(const Tensor& t) {
  if (t.rank() == 3) {
    std::vector<std::int32_t> out(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      const float v = t[i];
      if (!(v >= 0.0f) || v != std::floor(v))
        throw data_error("semantic tensor holds a non-integral class id");
      out[i] = static_cast<std::int32_t>(v);
    }
    return out;
  }
  if (t.rank() == 4) {
    const std::size_t m = t.dim(0);
    const std::size_t cells =
        static_cast<std::size_t>(t.dim(1)) * t.dim(2) * t.dim(3);
    std::vector<std::int32_t> out(cells, 0);
    for (std::size_t i = 0; i < cells; ++i) {
      float best = t[i];
      std::int32_t arg = 0;
      for (std::size_t c = 1; c < m; ++c) {
        const float v = t[c * cells + i];
        if (v > best) {
          best = v;
          arg = static_cast<std::int32_t>(c);
        }
      }
      out[i] = arg;
    }
    return out;
  }
  throw data_error("semantic tensor must be rank 3 or rank 4");
}

inline Tensor semantic_cells_to_tensor(const std::vector<std::int32_t>& cells,
                                       std::uint32_t h, std::uint32_t w,
                                       std::uint32_t z) {
  Tensor t(std::vector<std::uint32_t>{h, w, z});
  if (cells.size() != t.size())
    throw dimension_error("semantic cell count does not match H x W x Z");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i] < 0) throw data_error("negative class id in semantic cells");
    t[i] = static_cast<float>(cells[i]);
  }
  return t;
}

inline BevMaps read_bev_maps(const std::filesystem::path& dir) {
  BevMaps maps;
  maps.heatmap = read_tensor(dir / "heatmap.lcft");
  maps.offsets = read_tensor(dir / "offsets.lcft");
  maps.fog = read_tensor(dir / "fog.lcft");
  maps.semantic = semantic_cells_from_tensor(read_tensor(dir / "semantic.lcft"));
  maps.validate();
  return maps;
}

inline void write_bev_maps(const std::filesystem::path& dir, const BevMaps& maps) {
  maps.validate();
  write_tensor(dir / "heatmap.lcft", maps.heatmap);
  write_tensor(dir / "offsets.lcft", maps.offsets);
  write_tensor(dir / "fog.lcft", maps.fog);
  write_tensor(dir / "semantic.lcft",
               semantic_cells_to_tensor(maps.semantic, maps.height(),
                                        maps.width(), maps.depth()));
}

// --- Config files --------------------------------------------------------------

/// Plain text configuration: one `key value` or `key = value` per line,
/// '#' starts a comment, blank lines ignored.
inline std::map<std::string, std::string> read_config(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open config: " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    std::string key, value;
    std::istringstream ls(line);
    if (!(ls >> key)) continue;
    ls >> value;
    if (value == "=")
      ls >> value;
    else if (value.size() > 1 && value.front() == '=')
      value.erase(0, 1);
    if (const auto eq = key.find('='); eq != std::string::npos) {
      if (value.empty()) value = key.substr(eq + 1);
      key.erase(eq);
    }
    if (key.empty() || value.empty())
      throw config_error(path.string() + ":" + std::to_string(lineno) +
                         ": expected 'key value'");
    std::string rest;
    if (ls >> rest)
      throw config_error(path.string() + ":" + std::to_string(lineno) +
                         ": trailing tokens");
    kv[key] = value;
  }
  return kv;
}

}  // namespace lcps
