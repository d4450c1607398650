#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lcps/geometry.hpp"
#include "lcps/io.hpp"
#include "lcps/postprocess.hpp"
#include "lcps/voxel_grid.hpp"

namespace fs = std::filesystem;
using lcps::Tensor;

namespace {

fs::path temp_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() /
                       ("lcps-io-" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

fs::path temp_file(const std::string& name) {
  static int counter = 0;
  return temp_dir() / (std::to_string(counter++) + "-" + name);
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_i32(std::string& s, std::int32_t v) {
  put_u32(s, static_cast<std::uint32_t>(v));
}
void put_f32(std::string& s, float v) { put_u32(s, std::bit_cast<std::uint32_t>(v)); }
void put_f64(std::string& s, double v) { put_u64(s, std::bit_cast<std::uint64_t>(v)); }

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

void spit(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  REQUIRE(out.good());
}

}  // namespace

TEST_CASE("point cloud container", "[io]") {
  SECTION("the writer produces the documented byte layout") {
    lcps::LidarFrame frame;
    frame.feature_width = 1;
    frame.positions = {{1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}};
    frame.features = {0.5f, 0.25f};
    const fs::path path = temp_file("cloud.lcpk");
    lcps::write_point_cloud(path, frame);

    std::string expect = "LCPK";
    put_u32(expect, 2);
    put_u32(expect, 1);
    for (const float v : {1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f}) put_f32(expect, v);
    put_f32(expect, 0.5f);
    put_f32(expect, 0.25f);
    REQUIRE(slurp(path) == expect);
  }
  SECTION("the reader decodes hand-assembled bytes") {
    std::string raw = "LCPK";
    put_u32(raw, 1);
    put_u32(raw, 2);
    put_f32(raw, -1.5f);
    put_f32(raw, 0.0f);
    put_f32(raw, 7.0f);
    put_f32(raw, 9.0f);
    put_f32(raw, 10.0f);
    const fs::path path = temp_file("hand.lcpk");
    spit(path, raw);
    const lcps::LidarFrame frame = lcps::read_point_cloud(path);
    REQUIRE(frame.size() == 1);
    REQUIRE(frame.feature_width == 2);
    REQUIRE(frame.positions[0].x == -1.5);
    REQUIRE(frame.positions[0].z == 7.0);
    REQUIRE(frame.features == std::vector<float>{9.0f, 10.0f});
  }
  SECTION("a wrong magic is rejected") {
    std::string raw = "LCPX";
    put_u32(raw, 0);
    put_u32(raw, 1);
    const fs::path path = temp_file("badmagic.lcpk");
    spit(path, raw);
    REQUIRE_THROWS_AS(lcps::read_point_cloud(path), lcps::data_error);
  }
  SECTION("truncated payloads are rejected") {
    std::string raw = "LCPK";
    put_u32(raw, 2);
    put_u32(raw, 1);
    put_f32(raw, 1.0f);  // far short of 2*3 + 2 floats
    const fs::path path = temp_file("short.lcpk");
    spit(path, raw);
    REQUIRE_THROWS_AS(lcps::read_point_cloud(path), lcps::data_error);
  }
  SECTION("trailing bytes are rejected") {
    std::string raw = "LCPK";
    put_u32(raw, 0);
    put_u32(raw, 1);
    raw.push_back('x');
    const fs::path path = temp_file("trailing.lcpk");
    spit(path, raw);
    REQUIRE_THROWS_AS(lcps::read_point_cloud(path), lcps::data_error);
  }
}

TEST_CASE("tensor container", "[io]") {
  SECTION("round trip preserves shape and bits") {
    Tensor t({2, 3});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i) * 0.5f;
    const fs::path path = temp_file("t.lcft");
    lcps::write_tensor(path, t);
    const Tensor back = lcps::read_tensor(path);
    REQUIRE(back.dims() == t.dims());
    REQUIRE(back.storage() == t.storage());
  }
  SECTION("the byte layout is magic, rank, dims, payload") {
    Tensor t({1, 2});
    t[0] = 1.0f;
    t[1] = -2.0f;
    const fs::path path = temp_file("layout.lcft");
    lcps::write_tensor(path, t);
    std::string expect = "LCFT";
    put_u32(expect, 2);
    put_u32(expect, 1);
    put_u32(expect, 2);
    put_f32(expect, 1.0f);
    put_f32(expect, -2.0f);
    REQUIRE(slurp(path) == expect);
  }
  SECTION("zero dimensions are rejected") {
    std::string raw = "LCFT";
    put_u32(raw, 1);
    put_u32(raw, 0);
    const fs::path path = temp_file("zdim.lcft");
    spit(path, raw);
    REQUIRE_THROWS_AS(lcps::read_tensor(path), lcps::data_error);
  }
  SECTION("rank outside 1..4 is rejected") {
    std::string raw = "LCFT";
    put_u32(raw, 5);
    const fs::path path = temp_file("rank.lcft");
    spit(path, raw);
    REQUIRE_THROWS_AS(lcps::read_tensor(path), lcps::data_error);
  }
}

TEST_CASE("voxel grid container", "[io]") {
  SECTION("round trip preserves cells and spec") {
    lcps::VoxelGrid grid;
    grid.spec = lcps::kitti_grid();
    grid.channels = 2;
    grid.cells[{0, 1, 2}] = lcps::VoxelCell{{1.0f, 2.0f}, 3};
    grid.cells[{4, 5, 6}] = lcps::VoxelCell{{-1.0f, 0.5f}, 1};
    const fs::path path = temp_file("grid.lcvg");
    lcps::write_voxel_grid(path, grid);
    const lcps::VoxelGrid back = lcps::read_voxel_grid(path);
    REQUIRE(back.spec.radial_bins == grid.spec.radial_bins);
    REQUIRE(back.spec.r_max == grid.spec.r_max);
    REQUIRE(back.channels == 2);
    REQUIRE(back.cells.size() == 2);
    REQUIRE(back.cells.at({0, 1, 2}).feature == std::vector<float>{1.0f, 2.0f});
    REQUIRE(back.cells.at({0, 1, 2}).count == 3);
    REQUIRE(back.cells.at({4, 5, 6}).count == 1);
  }
  SECTION("duplicate cell records are rejected") {
    std::string raw = "LCVG";
    put_u32(raw, 4);
    put_u32(raw, 4);
    put_u32(raw, 2);
    put_f64(raw, 0.0);
    put_f64(raw, 10.0);
    put_f64(raw, -1.0);
    put_f64(raw, 1.0);
    put_u32(raw, 1);  // channels
    put_u64(raw, 2);  // two records, same index
    for (int rep = 0; rep < 2; ++rep) {
      put_u32(raw, 1);
      put_u32(raw, 1);
      put_u32(raw, 1);
      put_u32(raw, 1);
      put_f32(raw, 0.0f);
    }
    const fs::path path = temp_file("dup.lcvg");
    spit(path, raw);
    REQUIRE_THROWS_AS(lcps::read_voxel_grid(path), lcps::data_error);
  }
  SECTION("cell indices outside the grid are rejected") {
    std::string raw = "LCVG";
    put_u32(raw, 4);
    put_u32(raw, 4);
    put_u32(raw, 2);
    put_f64(raw, 0.0);
    put_f64(raw, 10.0);
    put_f64(raw, -1.0);
    put_f64(raw, 1.0);
    put_u32(raw, 1);
    put_u64(raw, 1);
    put_u32(raw, 9);  // ir out of range
    put_u32(raw, 0);
    put_u32(raw, 0);
    put_u32(raw, 1);
    put_f32(raw, 0.0f);
    const fs::path path = temp_file("oob.lcvg");
    spit(path, raw);
    REQUIRE_THROWS_AS(lcps::read_voxel_grid(path), lcps::data_error);
  }
}

TEST_CASE("labeling container", "[io]") {
  SECTION("the byte layout interleaves semantic and instance") {
    lcps::PanopticLabeling lab;
    lab.semantic = {4, -1};
    lab.instance = {7, 0};
    const fs::path path = temp_file("lab.lcpl");
    lcps::write_labeling(path, lab);
    std::string expect = "LCPL";
    put_u32(expect, 2);
    put_i32(expect, 4);
    put_i32(expect, 7);
    put_i32(expect, -1);
    put_i32(expect, 0);
    REQUIRE(slurp(path) == expect);
    REQUIRE(lcps::read_labeling(path) == lab);
  }
  SECTION("truncated records are rejected") {
    std::string raw = "LCPL";
    put_u32(raw, 2);
    put_i32(raw, 1);
    const fs::path path = temp_file("short.lcpl");
    spit(path, raw);
    REQUIRE_THROWS_AS(lcps::read_labeling(path), lcps::data_error);
  }
}

TEST_CASE("pixel map container", "[io]") {
  SECTION("round trip preserves entries and cull counters") {
    lcps::PointPixelMap map;
    map.entries = {{0, 1, 12.5, 300.0, 4.25}, {5, 0, 0.0, 0.0, 1.0}};
    map.culled_per_camera = {17, 3};
    const fs::path path = temp_file("map.lcpm");
    lcps::write_pixel_map(path, map);
    const lcps::PointPixelMap back = lcps::read_pixel_map(path);
    REQUIRE(back.entries.size() == 2);
    REQUIRE(back.entries[0].point_index == 0);
    REQUIRE(back.entries[0].camera_index == 1);
    REQUIRE(back.entries[0].px == 12.5);
    REQUIRE(back.entries[1].depth == 1.0);
    REQUIRE(back.culled_per_camera == std::vector<std::size_t>{17, 3});
  }
  SECTION("entries referencing unknown cameras are rejected") {
    std::string raw = "LCPM";
    put_u32(raw, 1);  // one camera
    put_u64(raw, 1);
    put_u32(raw, 0);
    put_u32(raw, 2);  // camera 2 does not exist
    put_f64(raw, 0.0);
    put_f64(raw, 0.0);
    put_f64(raw, 1.0);
    put_u64(raw, 0);
    const fs::path path = temp_file("badcam.lcpm");
    spit(path, raw);
    REQUIRE_THROWS_AS(lcps::read_pixel_map(path), lcps::data_error);
  }
}

TEST_CASE("json sidecars", "[io]") {
  SECTION("calibration round trip") {
    std::vector<lcps::CameraModel> rig(2);
    rig[0].intrinsic = {300.0, 0.0, 320.0, 0.0, 300.0, 240.0, 0.0, 0.0, 1.0};
    rig[0].width = 640;
    rig[0].height = 480;
    rig[0].capture_time = 0.05;
    rig[1] = rig[0];
    rig[1].extrinsic = lcps::Transform4::translation(1.0, 2.0, 3.0);
    const fs::path path = temp_file("calib.json");
    lcps::write_calibration(path, rig);
    const auto back = lcps::read_calibration(path);
    REQUIRE(back.size() == 2);
    REQUIRE(back[0].intrinsic == rig[0].intrinsic);
    REQUIRE(back[1].extrinsic.m == rig[1].extrinsic.m);
    REQUIRE(back[1].capture_time == 0.05);
  }
  SECTION("calibration without cameras is rejected") {
    const fs::path path = temp_file("nocam.json");
    std::ofstream(path) << "{\"cameras\": []}\n";
    REQUIRE_THROWS_AS(lcps::read_calibration(path), lcps::data_error);
  }
  SECTION("pose tables look up by exact timestamp") {
    lcps::PoseTable table;
    table.poses.emplace_back(0.0, lcps::Transform4{});
    table.poses.emplace_back(0.05, lcps::Transform4::translation(1.0, 0.0, 0.0));
    const fs::path path = temp_file("poses.json");
    lcps::write_poses(path, table);
    const auto back = lcps::read_poses(path);
    REQUIRE(back.poses.size() == 2);
    REQUIRE(back.at(0.05).m == lcps::Transform4::translation(1.0, 0.0, 0.0).m);
    REQUIRE_THROWS_AS(back.at(0.75), lcps::data_error);
  }
  SECTION("frame metadata round trip") {
    lcps::FrameMeta meta;
    meta.capture_time = 1.5;
    meta.pose_to_first = lcps::Transform4::translation(0.5, 0.0, 0.0);
    meta.world_to_ego = lcps::Transform4::rotation_z(0.3);
    const fs::path path = temp_file("meta.json");
    lcps::write_frame_meta(path, meta);
    const auto back = lcps::read_frame_meta(path);
    REQUIRE(back.capture_time == 1.5);
    REQUIRE(back.pose_to_first.m == meta.pose_to_first.m);
    REQUIRE(back.world_to_ego.m == meta.world_to_ego.m);
  }
  SECTION("grid spec round trip and validation") {
    const fs::path path = temp_file("grid.json");
    lcps::write_grid_spec(path, lcps::nuscenes_grid());
    const auto back = lcps::read_grid_spec(path);
    REQUIRE(back.radial_bins == 480);
    REQUIRE(back.r_max == 100.0);
  }
  SECTION("degenerate grid specs are rejected") {
    const fs::path path = temp_file("badgrid2.json");
    std::ofstream(path)
        << "{\"radial_bins\":4,\"angular_bins\":4,\"z_bins\":2,"
           "\"r_min\":5.0,\"r_max\":1.0,\"z_min\":-1.0,\"z_max\":1.0}\n";
    REQUIRE_THROWS_AS(lcps::read_grid_spec(path), lcps::config_error);
  }
}

TEST_CASE("semantic cell tensors", "[io]") {
  SECTION("rank-3 tensors carry integral class ids") {
    Tensor t({1, 2, 2});
    t[0] = 0.0f;
    t[1] = 3.0f;
    t[2] = 7.0f;
    t[3] = 1.0f;
    REQUIRE(lcps::semantic_cells_from_tensor(t) ==
            std::vector<std::int32_t>{0, 3, 7, 1});
  }
  SECTION("non-integral ids are rejected") {
    Tensor t({1, 1, 1});
    t[0] = 2.5f;
    REQUIRE_THROWS_AS(lcps::semantic_cells_from_tensor(t), lcps::data_error);
  }
  SECTION("rank-4 logits reduce by argmax with ties to the smaller class") {
    Tensor t({3, 1, 1, 2});  // M=3, two cells
    // cell 0: logits (1, 5, 5) -> class 1; cell 1: logits (2, 2, 0) -> class 0
    t[0] = 1.0f;
    t[1] = 2.0f;
    t[2] = 5.0f;
    t[3] = 2.0f;
    t[4] = 5.0f;
    t[5] = 0.0f;
    REQUIRE(lcps::semantic_cells_from_tensor(t) == std::vector<std::int32_t>{1, 0});
  }
  SECTION("negative ids cannot be encoded") {
    REQUIRE_THROWS_AS(lcps::semantic_cells_to_tensor({-1}, 1, 1, 1),
                      lcps::data_error);
  }
}

TEST_CASE("bev map bundles", "[io]") {
  lcps::BevMaps maps;
  maps.heatmap = Tensor({2, 2});
  maps.heatmap.at(0, 1) = 0.75f;
  maps.offsets = Tensor({2, 2, 2});
  maps.offsets.at(1, 0, 1) = -2.5f;
  maps.fog = Tensor({2, 2, 3}, 1.0f);
  maps.semantic.assign(12, 4);
  const fs::path dir = temp_dir() / "bev";
  std::filesystem::create_directories(dir);
  lcps::write_bev_maps(dir, maps);
  const lcps::BevMaps back = lcps::read_bev_maps(dir);
  REQUIRE(back.heatmap.storage() == maps.heatmap.storage());
  REQUIRE(back.offsets.storage() == maps.offsets.storage());
  REQUIRE(back.fog.storage() == maps.fog.storage());
  REQUIRE(back.semantic == maps.semantic);
}

TEST_CASE("config files", "[io]") {
  SECTION("all key-value spellings parse") {
    const fs::path path = temp_file("ok.cfg");
    std::ofstream(path) << "# leading comment\n"
                           "tau 0.6\n"
                           "grid = kitti-60m\n"
                           "pool=max\n"
                           "seed =42\n"
                           "kernel= 7  # trailing comment\n"
                           "\n";
    const auto kv = lcps::read_config(path);
    REQUIRE(kv.size() == 5);
    REQUIRE(kv.at("tau") == "0.6");
    REQUIRE(kv.at("grid") == "kitti-60m");
    REQUIRE(kv.at("pool") == "max");
    REQUIRE(kv.at("seed") == "42");
    REQUIRE(kv.at("kernel") == "7");
  }
  SECTION("a key without a value is an error") {
    const fs::path path = temp_file("novalue.cfg");
    std::ofstream(path) << "tau\n";
    REQUIRE_THROWS_AS(lcps::read_config(path), lcps::config_error);
  }
  SECTION("trailing tokens are an error") {
    const fs::path path = temp_file("extra.cfg");
    std::ofstream(path) << "tau 0.5 0.6\n";
    REQUIRE_THROWS_AS(lcps::read_config(path), lcps::config_error);
  }
  SECTION("a missing file is a data error") {
    REQUIRE_THROWS_AS(lcps::read_config(temp_dir() / "absent.cfg"),
                      lcps::data_error);
  }
}
