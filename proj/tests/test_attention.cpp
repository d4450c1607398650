#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>
#include <vector>

#include "lcps/attention.hpp"
#include "lcps/random.hpp"
#include "oracles.hpp"

using lcps::CylinderGridSpec;
using lcps::Rng;
using lcps::VoxelCell;
using lcps::VoxelGrid;
using lcps::VoxelIndex;

namespace {

CylinderGridSpec tiny_spec(std::uint32_t r, std::uint32_t a, std::uint32_t z) {
  CylinderGridSpec spec;
  spec.radial_bins = r;
  spec.angular_bins = a;
  spec.z_bins = z;
  return spec;
}

VoxelGrid random_grid(Rng& rng, const CylinderGridSpec& spec, std::size_t cells,
                      std::uint32_t channels) {
  VoxelGrid g;
  g.spec = spec;
  g.channels = channels;
  while (g.cells.size() < cells) {
    const VoxelIndex idx{static_cast<std::uint32_t>(rng.uniform_index(spec.radial_bins)),
                         static_cast<std::uint32_t>(rng.uniform_index(spec.angular_bins)),
                         static_cast<std::uint32_t>(rng.uniform_index(spec.z_bins))};
    VoxelCell cell;
    cell.count = 1;
    for (std::uint32_t c = 0; c < channels; ++c)
      cell.feature.push_back(static_cast<float>(rng.uniform(-1.0, 1.0)));
    g.cells.emplace(idx, std::move(cell));
  }
  return g;
}

VoxelGrid rotate_one_bin(const VoxelGrid& g) {
  VoxelGrid out;
  out.spec = g.spec;
  out.channels = g.channels;
  for (const auto& [idx, cell] : g.cells)
    out.cells.emplace(VoxelIndex{idx.ir, (idx.ia + 1) % g.spec.angular_bins, idx.iz},
                      cell);
  return out;
}

}  // namespace

TEST_CASE("neighbor_indices", "[pvp]") {
  const CylinderGridSpec spec = lcps::nuscenes_grid();
  SECTION("interior centers see the full 27") {
    const auto n = lcps::neighbor_indices(VoxelIndex{100, 100, 10}, spec);
    REQUIRE(n.size() == 27);
    const std::set<VoxelIndex> uniq(n.begin(), n.end());
    REQUIRE(uniq.size() == 27);
    REQUIRE(uniq == oracle::neighborhood_scan(VoxelIndex{100, 100, 10},
                                              tiny_spec(480, 360, 32)));
  }
  SECTION("angular axis wraps at zero") {
    const auto n = lcps::neighbor_indices(VoxelIndex{100, 0, 10}, spec);
    REQUIRE(n.size() == 27);
    bool wrapped = false;
    for (const auto& idx : n)
      if (idx.ia == spec.angular_bins - 1) wrapped = true;
    REQUIRE(wrapped);
    // modular-arithmetic oracle: same set as brute force over the whole grid
    const std::set<VoxelIndex> uniq(n.begin(), n.end());
    REQUIRE(uniq == oracle::neighborhood_scan(VoxelIndex{100, 0, 10}, spec));
  }
  SECTION("radial floor cuts the set to 18") {
    const auto n = lcps::neighbor_indices(VoxelIndex{0, 100, 10}, spec);
    REQUIRE(n.size() == 18);
    for (const auto& idx : n) REQUIRE(idx.ir <= 1);
  }
  SECTION("tiny angular spans deduplicate wrapped offsets") {
    const CylinderGridSpec two = tiny_spec(8, 2, 8);
    const auto n = lcps::neighbor_indices(VoxelIndex{4, 0, 4}, two);
    const std::set<VoxelIndex> uniq(n.begin(), n.end());
    REQUIRE(uniq.size() == n.size());  // distinct members
    REQUIRE(n.size() == 18);           // 3 * 2 * 3
  }
}

TEST_CASE("local_attention", "[pvp]") {
  SECTION("a single row passes straight through") {
    const std::vector<float> q{0.3f, -0.7f};
    const std::vector<float> kv{2.0f, 5.0f};
    const auto out = lcps::local_attention(q, kv, kv, 2);
    REQUIRE(out[0] == 2.0);
    REQUIRE(out[1] == 5.0);
  }
  SECTION("identical keys average the values") {
    const std::vector<float> q{1.0f, 0.0f};
    const std::vector<float> keys{0.5f, 0.5f, 0.5f, 0.5f, 0.5f, 0.5f};
    const std::vector<float> values{0.0f, 3.0f, 6.0f, 9.0f, 0.0f, 0.0f};
    const auto out = lcps::local_attention(q, keys, values, 2);
    REQUIRE(out[0] == Catch::Approx(2.0).margin(1e-12));
    REQUIRE(out[1] == Catch::Approx(4.0).margin(1e-12));
  }
  SECTION("random rows match the extended-precision oracle") {
    Rng rng(31);
    for (int rep = 0; rep < 50; ++rep) {
      std::vector<float> q(4);
      std::vector<std::vector<float>> keys(3, std::vector<float>(4));
      std::vector<std::vector<float>> values(3, std::vector<float>(4));
      std::vector<float> kflat, vflat;
      for (auto& v : q) v = static_cast<float>(rng.uniform(-2.0, 2.0));
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) {
          keys[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
              static_cast<float>(rng.uniform(-2.0, 2.0));
          values[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
              static_cast<float>(rng.uniform(-2.0, 2.0));
        }
      for (const auto& r : keys) kflat.insert(kflat.end(), r.begin(), r.end());
      for (const auto& r : values) vflat.insert(vflat.end(), r.begin(), r.end());
      const auto out = lcps::local_attention(q, kflat, vflat, 4);
      const auto ref = oracle::attention_reference(q, keys, values);
      for (std::size_t c = 0; c < 4; ++c)
        REQUIRE(out[c] == Catch::Approx(static_cast<double>(ref[c])).margin(1e-12));
    }
  }
  SECTION("weights sum to one within 1e-9") {
    Rng rng(37);
    for (int rep = 0; rep < 100; ++rep) {
      const std::size_t m = 1 + rng.uniform_index(8);
      std::vector<float> q(3), keys(m * 3);
      for (auto& v : q) v = static_cast<float>(rng.uniform(-5.0, 5.0));
      for (auto& v : keys) v = static_cast<float>(rng.uniform(-5.0, 5.0));
      const auto w = lcps::attention_weights(q, keys, 3);
      double sum = 0.0;
      for (const double v : w) {
        REQUIRE(v >= 0.0);
        sum += v;
      }
      REQUIRE(sum == Catch::Approx(1.0).margin(1e-9));
    }
  }
  SECTION("empty keys are a dimension error at this level") {
    REQUIRE_THROWS_AS(lcps::attention_weights(std::vector<float>{1.0f},
                                              std::vector<float>{}, 1),
                      lcps::dimension_error);
  }
}

TEST_CASE("propagate", "[pvp]") {
  const CylinderGridSpec spec = tiny_spec(4, 4, 4);
  SECTION("empty fused grid is the identity") {
    Rng rng(41);
    const VoxelGrid base = random_grid(rng, spec, 10, 3);
    VoxelGrid fused;
    fused.spec = spec;
    fused.channels = 3;
    const VoxelGrid out = lcps::propagate(base, fused);
    REQUIRE(out == base);
  }
  SECTION("a single co-located fused cell adds straight on") {
    VoxelGrid base, fused;
    base.spec = fused.spec = spec;
    base.channels = fused.channels = 2;
    base.cells.emplace(VoxelIndex{1, 1, 1}, VoxelCell{{0.5f, -0.25f}, 1});
    fused.cells.emplace(VoxelIndex{1, 1, 1}, VoxelCell{{0.25f, 1.5f}, 1});
    const VoxelGrid out = lcps::propagate(base, fused);
    REQUIRE(out.cells.size() == 1);
    const auto& feat = out.cells.begin()->second.feature;
    REQUIRE(feat[0] == 0.75f);   // 0.25 + 0.5, both dyadic
    REQUIRE(feat[1] == 1.25f);   // 1.5 - 0.25
  }
  SECTION("random grids match the exhaustive neighborhood oracle") {
    Rng rng(43);
    for (int rep = 0; rep < 10; ++rep) {
      const VoxelGrid base = random_grid(rng, spec, 5, 3);
      const VoxelGrid fused = random_grid(rng, spec, 8, 3);
      const VoxelGrid out = lcps::propagate(base, fused);
      REQUIRE(out.cells.size() == base.cells.size());
      for (const auto& [idx, cell] : base.cells) {
        const auto members = oracle::neighborhood_scan(idx, spec);
        std::vector<std::vector<float>> rows;
        for (const auto& m : members)
          if (const VoxelCell* f = fused.find(m)) rows.push_back(f->feature);
        const auto& got = out.cells.at(idx).feature;
        if (rows.empty()) {
          REQUIRE(got == cell.feature);
          continue;
        }
        const auto att = oracle::attention_reference(cell.feature, rows, rows);
        for (std::size_t c = 0; c < 3; ++c)
          REQUIRE(got[c] == Catch::Approx(static_cast<double>(att[c]) +
                                          cell.feature[c])
                                .margin(1e-5));
      }
    }
  }
  SECTION("attention term stays in the neighbor convex hull") {
    Rng rng(47);
    for (int rep = 0; rep < 20; ++rep) {
      const VoxelGrid base = random_grid(rng, spec, 6, 2);
      const VoxelGrid fused = random_grid(rng, spec, 10, 2);
      const VoxelGrid out = lcps::propagate(base, fused);
      for (const auto& [idx, cell] : base.cells) {
        std::vector<std::vector<float>> rows;
        for (const auto& m : oracle::neighborhood_scan(idx, spec))
          if (const VoxelCell* f = fused.find(m)) rows.push_back(f->feature);
        if (rows.empty()) continue;
        for (std::size_t c = 0; c < 2; ++c) {
          float lo = rows[0][c], hi = rows[0][c];
          for (const auto& r : rows) {
            lo = std::min(lo, r[c]);
            hi = std::max(hi, r[c]);
          }
          const double att = static_cast<double>(out.cells.at(idx).feature[c]) -
                             static_cast<double>(cell.feature[c]);
          REQUIRE(att >= lo - 1e-6);
          REQUIRE(att <= hi + 1e-6);
        }
      }
    }
  }
  SECTION("rotating both grids by one angular bin commutes bit-exactly") {
    Rng rng(53);
    for (int rep = 0; rep < 5; ++rep) {
      const CylinderGridSpec s = tiny_spec(8, 8, 4);
      const VoxelGrid base = random_grid(rng, s, 12, 3);
      const VoxelGrid fused = random_grid(rng, s, 16, 3);
      const VoxelGrid direct = rotate_one_bin(lcps::propagate(base, fused));
      const VoxelGrid rotated =
          lcps::propagate(rotate_one_bin(base), rotate_one_bin(fused));
      REQUIRE(direct == rotated);
    }
  }
  SECTION("projection matrices reshape queries, keys, and values") {
    // wv = 2I doubles the attended value; wq/wk = I leave weights unchanged
    VoxelGrid base, fused;
    base.spec = fused.spec = spec;
    base.channels = fused.channels = 2;
    base.cells.emplace(VoxelIndex{2, 2, 2}, VoxelCell{{0.5f, 0.5f}, 1});
    fused.cells.emplace(VoxelIndex{2, 2, 2}, VoxelCell{{0.25f, -0.5f}, 1});
    lcps::PvpParams params;
    params.wq = lcps::Tensor({2, 2});
    params.wk = lcps::Tensor({2, 2});
    params.wv = lcps::Tensor({2, 2});
    for (std::uint32_t i = 0; i < 2; ++i) {
      params.wq->at(i, i) = 1.0f;
      params.wk->at(i, i) = 1.0f;
      params.wv->at(i, i) = 2.0f;
    }
    const VoxelGrid out = lcps::propagate(base, fused, params);
    const auto& feat = out.cells.begin()->second.feature;
    REQUIRE(feat[0] == 1.0f);    // 2*0.25 + 0.5
    REQUIRE(feat[1] == -0.5f);   // 2*-0.5 + 0.5
    lcps::PvpParams bad;
    bad.wq = lcps::Tensor({3, 3});
    REQUIRE_THROWS_AS(lcps::propagate(base, fused, bad), lcps::dimension_error);
  }
  SECTION("spec mismatch is a configuration error") {
    VoxelGrid base, fused;
    base.spec = spec;
    fused.spec = tiny_spec(5, 4, 4);
    base.channels = fused.channels = 1;
    REQUIRE_THROWS_AS(lcps::propagate(base, fused), lcps::config_error);
  }
}
