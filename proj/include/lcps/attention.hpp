#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "lcps/errors.hpp"
#include "lcps/tensor.hpp"
#include "lcps/voxel_grid.hpp"

namespace lcps {

/// Candidate 27-neighborhood of a voxel, center included. Offsets are walked
/// in the fixed order dr, dtheta, dz in {-1,0,+1}; the angular axis wraps
/// modulo angular_bins, the radial and z axes drop out-of-range offsets.
/// Aliased indices (possible when angular_bins < 3) keep their first
/// occurrence. The offset-relative order is what makes propagation commute
/// bit-exactly with grid rotation.
inline std::vector<VoxelIndex> neighbor_indices(const VoxelIndex& center,
                                                const CylinderGridSpec& spec) {
  std::vector<VoxelIndex> out;
  out.reserve(27);
  const auto bins_a = static_cast<std::int64_t>(spec.angular_bins);
  for (int dr = -1; dr <= 1; ++dr) {
    const std::int64_t ir = static_cast<std::int64_t>(center.ir) + dr;
    if (ir < 0 || ir >= static_cast<std::int64_t>(spec.radial_bins)) continue;
    for (int da = -1; da <= 1; ++da) {
      std::int64_t ia = static_cast<std::int64_t>(center.ia) + da;
      ia = ((ia % bins_a) + bins_a) % bins_a;
      for (int dz = -1; dz <= 1; ++dz) {
        const std::int64_t iz = static_cast<std::int64_t>(center.iz) + dz;
        if (iz < 0 || iz >= static_cast<std::int64_t>(spec.z_bins)) continue;
        const VoxelIndex idx{static_cast<std::uint32_t>(ir),
                             static_cast<std::uint32_t>(ia),
                             static_cast<std::uint32_t>(iz)};
        bool seen = false;
        for (const VoxelIndex& v : out)
          if (v == idx) {
            seen = true;
            break;
          }
        if (!seen) out.push_back(idx);
      }
    }
  }
  return out;
}

/// softmax(q.K^T / sqrt(C)) over m key rows, computed in double with
/// max-subtraction.
inline std::vector<double> attention_weights(std::span<const float> query,
                                             std::span<const float> keys,
                                             std::size_t width) {
  if (width == 0 || query.size() != width)
    throw dimension_error("attention: query width mismatch");
  if (keys.empty() || keys.size() % width != 0)
    throw dimension_error("attention: need m >= 1 key rows of query width");
  const std::size_t m = keys.size() / width;
  const double scale = 1.0 / std::sqrt(static_cast<double>(width));

  std::vector<double> logits(m);
  for (std::size_t i = 0; i < m; ++i) {
    const float* k = keys.data() + i * width;
    double dot = 0.0;
    for (std::size_t c = 0; c < width; ++c)
      dot += static_cast<double>(query[c]) * static_cast<double>(k[c]);
    logits[i] = dot * scale;
  }

  double mx = logits[0];
  for (std::size_t i = 1; i < m; ++i) mx = std::max(mx, logits[i]);
  double denom = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    logits[i] = std::exp(logits[i] - mx);
    denom += logits[i];
  }
  for (std::size_t i = 0; i < m; ++i) logits[i] /= denom;
  return logits;
}

/// Scaled-dot-product attention over m key/value rows; returns the attended
/// row in double precision (callers decide the final rounding).
inline std::vector<double> local_attention(std::span<const float> query,
                                           std::span<const float> keys,
                                           std::span<const float> values,
                                           std::size_t width) {
  if (values.size() != keys.size())
    throw dimension_error("attention: keys/values row count mismatch");
  const std::vector<double> w = attention_weights(query, keys, width);
  std::vector<double> out(width, 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const float* v = values.data() + i * width;
    for (std::size_t c = 0; c < width; ++c)
      out[c] += w[i] * static_cast<double>(v[c]);
  }
  return out;
}

/// Optional linear projections for Q, K, V (identity when absent). A row
/// feature x maps to x' with x'[j] = sum_c x[c] * W(c, j).
struct PvpParams {
  std::optional<Tensor> wq;
  std::optional<Tensor> wk;
  std::optional<Tensor> wv;

  void validate(std::uint32_t channels) const {
    const auto check = [&](const std::optional<Tensor>& w, const char* name) {
      if (!w) return;
      w->require_rank(2, name);
      if (w->dim(0) != channels || w->dim(1) != channels)
        throw dimension_error(std::string(name) + ": projection must be CxC");
    };
    check(wq, "wq");
    check(wk, "wk");
    check(wv, "wv");
  }
};

namespace detail {

inline void project_row(std::span<const float> in, const Tensor& w,
                        std::span<float> out) {
  const std::size_t c = in.size();
  for (std::size_t j = 0; j < c; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < c; ++i)
      acc += static_cast<double>(in[i]) * static_cast<double>(w.at(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j)));
    out[j] = static_cast<float>(acc);
  }
}

}  // namespace detail

/// Point-to-voxel propagation: every occupied base cell attends over the
/// fused-grid cells in its 27-neighborhood and adds the result onto its own
/// feature. Cells with no fused neighbor pass through bit-exact; cells absent
/// from the base grid stay absent.
inline VoxelGrid propagate(const VoxelGrid& base, const VoxelGrid& fused,
                           const PvpParams& params = {}) {
  if (!(base.spec == fused.spec))
    throw config_error("propagate: grid specs differ");
  if (base.channels != fused.channels)
    throw config_error("propagate: channel widths differ");
  params.validate(base.channels);
  const std::size_t c = base.channels;

  VoxelGrid out;
  out.spec = base.spec;
  out.channels = base.channels;

  std::vector<float> keys, values, q(c);
  for (const auto& [idx, cell] : base.cells) {
    keys.clear();
    values.clear();
    for (const VoxelIndex& nidx : neighbor_indices(idx, base.spec)) {
      const VoxelCell* ncell = fused.find(nidx);
      if (!ncell) continue;
      keys.insert(keys.end(), ncell->feature.begin(), ncell->feature.end());
      values.insert(values.end(), ncell->feature.begin(), ncell->feature.end());
    }

    VoxelCell ocell;
    ocell.count = cell.count;
    if (keys.empty()) {
      ocell.feature = cell.feature;
    } else {
      std::span<const float> query(cell.feature);
      if (params.wq) {
        detail::project_row(cell.feature, *params.wq, q);
        query = q;
      }
      if (params.wk) {
        for (std::size_t i = 0; i * c < keys.size(); ++i) {
          std::vector<float> row(keys.begin() + static_cast<std::ptrdiff_t>(i * c),
                                 keys.begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
          detail::project_row(row, *params.wk,
                              std::span<float>(keys.data() + i * c, c));
        }
      }
      if (params.wv) {
        for (std::size_t i = 0; i * c < values.size(); ++i) {
          std::vector<float> row(values.begin() + static_cast<std::ptrdiff_t>(i * c),
                                 values.begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
          detail::project_row(row, *params.wv,
                              std::span<float>(values.data() + i * c, c));
        }
      }
      const std::vector<double> att = local_attention(query, keys, values, c);
      ocell.feature.resize(c);
      for (std::size_t ch = 0; ch < c; ++ch)
        ocell.feature[ch] =
            static_cast<float>(att[ch] + static_cast<double>(cell.feature[ch]));
    }
    out.cells.emplace(idx, std::move(ocell));
  }
  return out;
}

}  // namespace lcps
