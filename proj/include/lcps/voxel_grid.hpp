#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "lcps/errors.hpp"
#include "lcps/geometry.hpp"

namespace lcps {

/// Cylindrical (r, theta, z) partition of the scene volume.
struct CylinderGridSpec {
  std::uint32_t radial_bins = 480;
  std::uint32_t angular_bins = 360;
  std::uint32_t z_bins = 32;
  double r_min = 0.0;
  double r_max = 100.0;
  double z_min = -5.0;
  double z_max = 3.0;

  void validate() const {
    if (radial_bins < 1 || angular_bins < 1 || z_bins < 1)
      throw config_error("grid spec: bins must be >= 1");
    if (!(r_min >= 0.0) || !(r_max > r_min))
      throw config_error("grid spec: need 0 <= r_min < r_max");
    if (!(z_min < z_max)) throw config_error("grid spec: need z_min < z_max");
  }

  double radial_step() const { return (r_max - r_min) / radial_bins; }
  double angular_step() const { return 2.0 * std::numbers::pi / angular_bins; }
  double z_step() const { return (z_max - z_min) / z_bins; }

  friend bool operator==(const CylinderGridSpec&, const CylinderGridSpec&) = default;
};

/// 480 x 360 x 32 over r in [0,100] m, z in [-5,3] m.
inline CylinderGridSpec nuscenes_grid() { return CylinderGridSpec{}; }

/// Same partition with the perception distance shortened to 60 m.
inline CylinderGridSpec kitti_grid() {
  CylinderGridSpec spec;
  spec.r_max = 60.0;
  return spec;
}

struct VoxelIndex {
  std::uint32_t ir = 0;
  std::uint32_t ia = 0;
  std::uint32_t iz = 0;

  auto operator<=>(const VoxelIndex&) const = default;
};

struct PolarPoint {
  double r = 0.0;
  double theta = 0.0;  // [0, 2*pi)
  double z = 0.0;
};

inline PolarPoint to_polar(const Vec3& p) {
  PolarPoint out;
  out.r = std::hypot(p.x, p.y);
  out.theta = std::atan2(p.y, p.x);
  if (out.theta < 0.0) out.theta += 2.0 * std::numbers::pi;
  out.z = p.z;
  return out;
}

/// Bin index for one point, or nullopt when r or z falls outside the volume.
/// The closed upper boundary folds into the last bin; the angular axis is
/// periodic and always in range.
inline std::optional<VoxelIndex> voxel_index(const Vec3& position,
                                             const CylinderGridSpec& spec) {
  const PolarPoint pp = to_polar(position);
  if (pp.r < spec.r_min || pp.r > spec.r_max) return std::nullopt;
  if (pp.z < spec.z_min || pp.z > spec.z_max) return std::nullopt;

  const auto bin = [](double v, double lo, double hi, std::uint32_t n) {
    const double t = (v - lo) / (hi - lo) * static_cast<double>(n);
    const double f = std::floor(t);
    if (f < 0.0) return std::uint32_t{0};
    const auto i = static_cast<std::uint32_t>(f);
    return std::min(i, n - 1);
  };

  VoxelIndex idx;
  idx.ir = bin(pp.r, spec.r_min, spec.r_max, spec.radial_bins);
  idx.iz = bin(pp.z, spec.z_min, spec.z_max, spec.z_bins);
  idx.ia = bin(pp.theta, 0.0, 2.0 * std::numbers::pi, spec.angular_bins);
  return idx;
}

/// Polar-space center of a voxel.
inline PolarPoint voxel_center(const VoxelIndex& idx, const CylinderGridSpec& spec) {
  PolarPoint c;
  c.r = spec.r_min + (idx.ir + 0.5) * spec.radial_step();
  c.theta = (idx.ia + 0.5) * spec.angular_step();
  c.z = spec.z_min + (idx.iz + 0.5) * spec.z_step();
  return c;
}

enum class PoolMode { kMean, kMax };

struct VoxelCell {
  std::vector<float> feature;
  std::uint32_t count = 0;
};

/// Sparse voxel features over a cylindrical partition. Cells iterate in
/// ascending index order, which every accumulation routine here relies on
/// for reproducibility.
struct VoxelGrid {
  CylinderGridSpec spec;
  std::uint32_t channels = 0;
  std::map<VoxelIndex, VoxelCell> cells;

  const VoxelCell* find(const VoxelIndex& idx) const {
    const auto it = cells.find(idx);
    return it == cells.end() ? nullptr : &it->second;
  }

  friend bool operator==(const VoxelGrid& a, const VoxelGrid& b) {
    if (!(a.spec == b.spec) || a.channels != b.channels ||
        a.cells.size() != b.cells.size())
      return false;
    auto ia = a.cells.begin();
    auto ib = b.cells.begin();
    for (; ia != a.cells.end(); ++ia, ++ib) {
      if (ia->first != ib->first || ia->second.count != ib->second.count ||
          ia->second.feature != ib->second.feature)
        return false;
    }
    return true;
  }
};

namespace detail {

/// Canonical accumulation order: sort member records by voxel index, then by
/// position value, then by feature value. The key depends only on record
/// content, so any permutation of the input produces the same sequence and
/// therefore bit-identical pooled sums.
struct ScatterRecord {
  VoxelIndex idx;
  std::size_t row;
};

inline void canonical_sort(std::vector<ScatterRecord>& records,
                           std::span<const Vec3> positions,
                           std::span<const float> features, std::size_t width) {
  std::sort(records.begin(), records.end(),
            [&](const ScatterRecord& a, const ScatterRecord& b) {
              if (a.idx != b.idx) return a.idx < b.idx;
              const Vec3& pa = positions[a.row];
              const Vec3& pb = positions[b.row];
              if (pa.x != pb.x) return pa.x < pb.x;
              if (pa.y != pb.y) return pa.y < pb.y;
              if (pa.z != pb.z) return pa.z < pb.z;
              const float* fa = features.data() + a.row * width;
              const float* fb = features.data() + b.row * width;
              return std::lexicographical_compare(fa, fa + width, fb, fb + width);
            });
}

}  // namespace detail

/// Scatters (position, feature) records into voxels and pools members of the
/// same cell. Points outside the volume are dropped. The result does not
/// depend on the input order.
inline VoxelGrid scatter_pool(std::span<const Vec3> positions,
                              std::span<const float> features, std::size_t width,
                              const CylinderGridSpec& spec,
                              PoolMode pool = PoolMode::kMean) {
  spec.validate();
  if (width == 0) throw dimension_error("scatter_pool: zero channel width");
  if (features.size() != positions.size() * width)
    throw dimension_error("scatter_pool: positions/features size mismatch");

  std::vector<detail::ScatterRecord> records;
  records.reserve(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (const auto idx = voxel_index(positions[i], spec))
      records.push_back(detail::ScatterRecord{*idx, i});
  }
  detail::canonical_sort(records, positions, features, width);

  VoxelGrid grid;
  grid.spec = spec;
  grid.channels = static_cast<std::uint32_t>(width);

  std::size_t begin = 0;
  std::vector<double> acc(width);
  while (begin < records.size()) {
    std::size_t end = begin;
    while (end < records.size() && records[end].idx == records[begin].idx) ++end;

    const float* first = features.data() + records[begin].row * width;
    if (pool == PoolMode::kMean) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t r = begin; r < end; ++r) {
        const float* f = features.data() + records[r].row * width;
        for (std::size_t c = 0; c < width; ++c) acc[c] += static_cast<double>(f[c]);
      }
      VoxelCell cell;
      cell.count = static_cast<std::uint32_t>(end - begin);
      cell.feature.resize(width);
      for (std::size_t c = 0; c < width; ++c)
        cell.feature[c] = static_cast<float>(acc[c] / static_cast<double>(cell.count));
      grid.cells.emplace(records[begin].idx, std::move(cell));
    } else {
      VoxelCell cell;
      cell.count = static_cast<std::uint32_t>(end - begin);
      cell.feature.assign(first, first + width);
      for (std::size_t r = begin + 1; r < end; ++r) {
        const float* f = features.data() + records[r].row * width;
        for (std::size_t c = 0; c < width; ++c)
          cell.feature[c] = std::max(cell.feature[c], f[c]);
      }
      grid.cells.emplace(records[begin].idx, std::move(cell));
    }
    begin = end;
  }
  return grid;
}

/// Identity-padded channel resize: out[i] = in[i] for i < min(n, width),
/// zero beyond. This is the fixed linear map used wherever a feature vector
/// must match a configured voxel channel width.
inline std::vector<float> resize_channels(std::span<const float> in, std::size_t width) {
  std::vector<float> out(width, 0.0f);
  const std::size_t n = std::min(in.size(), width);
  std::copy(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(n), out.begin());
  return out;
}

/// Plain geometric voxel encoding of a sweep: per cell, the mean raw point
/// feature concatenated with the mean polar offset of members from the cell
/// center, resized to `out_width` channels with the identity-padded map.
inline VoxelGrid encode_base_voxels(const LidarFrame& frame,
                                    const CylinderGridSpec& spec,
                                    std::size_t out_width) {
  frame.validate();
  spec.validate();
  if (out_width == 0) throw dimension_error("encode_base_voxels: zero channel width");

  std::vector<detail::ScatterRecord> records;
  records.reserve(frame.size());
  for (std::size_t i = 0; i < frame.size(); ++i) {
    if (const auto idx = voxel_index(frame.positions[i], spec))
      records.push_back(detail::ScatterRecord{*idx, i});
  }
  detail::canonical_sort(records, frame.positions, frame.features,
                         frame.feature_width);

  VoxelGrid grid;
  grid.spec = spec;
  grid.channels = static_cast<std::uint32_t>(out_width);

  const std::size_t c = frame.feature_width;
  std::vector<double> feat_acc(c);
  std::vector<float> native(c + 3);
  std::size_t begin = 0;
  while (begin < records.size()) {
    std::size_t end = begin;
    while (end < records.size() && records[end].idx == records[begin].idx) ++end;
    const std::size_t n = end - begin;
    const PolarPoint center = voxel_center(records[begin].idx, spec);

    std::fill(feat_acc.begin(), feat_acc.end(), 0.0);
    double dr = 0.0, dtheta = 0.0, dz = 0.0;
    for (std::size_t r = begin; r < end; ++r) {
      const float* f = frame.feature_row(records[r].row);
      for (std::size_t ch = 0; ch < c; ++ch) feat_acc[ch] += static_cast<double>(f[ch]);
      const PolarPoint pp = to_polar(frame.positions[records[r].row]);
      dr += pp.r - center.r;
      dtheta += pp.theta - center.theta;
      dz += pp.z - center.z;
    }
    for (std::size_t ch = 0; ch < c; ++ch)
      native[ch] = static_cast<float>(feat_acc[ch] / static_cast<double>(n));
    native[c + 0] = static_cast<float>(dr / static_cast<double>(n));
    native[c + 1] = static_cast<float>(dtheta / static_cast<double>(n));
    native[c + 2] = static_cast<float>(dz / static_cast<double>(n));

    VoxelCell cell;
    cell.count = static_cast<std::uint32_t>(n);
    cell.feature = resize_channels(native, out_width);
    grid.cells.emplace(records[begin].idx, std::move(cell));
    begin = end;
  }
  return grid;
}

}  // namespace lcps
