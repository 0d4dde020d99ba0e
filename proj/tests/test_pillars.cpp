#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "tmae/pillars.hpp"

using namespace tmae;

namespace {

PointFrame frame_from(std::vector<Point> pts) {
  PointFrame f;
  f.frame_index = 0;
  f.pose = pose_identity();
  f.points = std::move(pts);
  return f;
}

// brute-force binning oracle: map from cell to member count
std::map<std::pair<int32_t, int32_t>, int64_t> bin_ref(const std::vector<Point>& pts,
                                                       const GridConfig& g) {
  std::map<std::pair<int32_t, int32_t>, int64_t> cells;
  for (const auto& p : pts) {
    if (p.x < g.range_min[0] || p.x >= g.range_max[0]) continue;
    if (p.y < g.range_min[1] || p.y >= g.range_max[1]) continue;
    if (p.z < g.range_min[2] || p.z >= g.range_max[2]) continue;
    auto ix = static_cast<int32_t>(std::floor((p.x - g.range_min[0]) / g.pillar_size[0]));
    auto iy = static_cast<int32_t>(std::floor((p.y - g.range_min[1]) / g.pillar_size[1]));
    ix = std::min(ix, static_cast<int32_t>(g.nx() - 1));
    iy = std::min(iy, static_cast<int32_t>(g.ny() - 1));
    cells[{ix, iy}] += 1;
  }
  return cells;
}

}  // namespace

TEST_SUITE_BEGIN("pillars");

TEST_CASE("grid dimensions") {
  GridConfig g = GridConfig::desk_default();
  CHECK(g.nx() == 50);
  CHECK(g.ny() == 50);
  GridConfig v = GridConfig::vehicle_default();
  CHECK(v.nx() == 468);
  CHECK(v.ny() == 468);
  g.validate();
  v.validate();
}

TEST_CASE("binning matches the brute-force oracle on random frames") {
  GridConfig g = GridConfig::desk_default();
  Rng rng(40);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Point> pts;
    int n = 200 + static_cast<int>(rng.uniform_int(200));
    for (int i = 0; i < n; ++i)
      pts.push_back({rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-3, 5),
                     rng.uniform(0, 1)});
    PointFrame f = frame_from(pts);
    PillarSet ps = assign_pillars(f, g);
    auto ref = bin_ref(pts, g);
    REQUIRE(ps.count() == static_cast<int64_t>(ref.size()));
    int64_t kept = 0;
    for (int64_t p = 0; p < ps.count(); ++p) {
      auto it = ref.find(ps.coords[static_cast<size_t>(p)]);
      REQUIRE(it != ref.end());
      int64_t len = ps.point_offsets[static_cast<size_t>(p) + 1] -
                    ps.point_offsets[static_cast<size_t>(p)];
      CHECK(len == it->second);
      kept += len;
    }
    CHECK(kept + ps.dropped == n);
  }
}

TEST_CASE("half-open boundaries") {
  GridConfig g = GridConfig::desk_default();
  std::vector<Point> pts{
      {-8.0, -8.0, -2.0, 0.1},   // min corner: inside, cell (0,0)
      {8.0, 0.0, 0.0, 0.1},      // x == max: dropped
      {0.0, 8.0, 0.0, 0.1},      // y == max: dropped
      {0.0, 0.0, 4.0, 0.1},      // z == max: dropped
      {-8.001, 0.0, 0.0, 0.1},   // below min: dropped
      {7.999, 7.999, 3.999, 0.1} // just inside the far corner
  };
  PillarSet ps = assign_pillars(frame_from(pts), g);
  CHECK(ps.dropped == 4);
  REQUIRE(ps.count() == 2);
  CHECK(ps.coords[0] == std::pair<int32_t, int32_t>{0, 0});
  CHECK(ps.coords[1] == std::pair<int32_t, int32_t>{49, 49});
}

TEST_CASE("coords are lexicographically ascending and point ids partition the kept set") {
  GridConfig g = GridConfig::desk_default();
  Rng rng(41);
  std::vector<Point> pts;
  for (int i = 0; i < 500; ++i)
    pts.push_back({rng.uniform(-8, 8), rng.uniform(-8, 8), rng.uniform(-2, 4),
                   rng.uniform(0, 1)});
  PillarSet ps = assign_pillars(frame_from(pts), g);
  for (int64_t p = 1; p < ps.count(); ++p)
    CHECK(ps.coords[static_cast<size_t>(p - 1)] < ps.coords[static_cast<size_t>(p)]);
  REQUIRE(ps.point_offsets.size() == static_cast<size_t>(ps.count()) + 1);
  CHECK(ps.point_offsets.front() == 0);
  CHECK(ps.point_offsets.back() == static_cast<int64_t>(ps.point_ids.size()));
  std::set<int64_t> seen(ps.point_ids.begin(), ps.point_ids.end());
  CHECK(seen.size() == ps.point_ids.size());  // each point in exactly one pillar
  CHECK(static_cast<int64_t>(seen.size()) + ps.dropped == 500);
}

TEST_CASE("pillar structure is invariant to input point order") {
  GridConfig g = GridConfig::desk_default();
  Rng rng(42);
  std::vector<Point> pts;
  for (int i = 0; i < 300; ++i)
    pts.push_back({rng.uniform(-8, 8), rng.uniform(-8, 8), rng.uniform(-2, 4),
                   rng.uniform(0, 1)});
  PointFrame a = frame_from(pts);
  std::vector<Point> shuffled = pts;
  rng.shuffle(shuffled);
  PointFrame b = frame_from(shuffled);

  PillarSet pa = assign_pillars(a, g);
  PillarSet pb = assign_pillars(b, g);
  REQUIRE(pa.count() == pb.count());
  CHECK(pa.coords == pb.coords);
  CHECK(pa.point_offsets == pb.point_offsets);
  // ids differ (they index different orderings) but the features must not
  Tensor fa = build_point_features(a, pa, g);
  Tensor fb = build_point_features(b, pb, g);
  REQUIRE(fa.numel() == fb.numel());
  for (int64_t i = 0; i < fa.numel(); ++i) CHECK(fa.data()[i] == fb.data()[i]);
}

TEST_CASE("point features are cell-relative") {
  GridConfig g = GridConfig::desk_default();
  // cell (0,0) spans [-8,-7.68); center (-7.84,-7.84)
  std::vector<Point> pts{{-7.8, -7.7, 1.25, 0.6}};
  PointFrame f = frame_from(pts);
  PillarSet ps = assign_pillars(f, g);
  REQUIRE(ps.count() == 1);
  Tensor feats = build_point_features(f, ps, g);
  REQUIRE(feats.shape() == Shape{1, 4});
  CHECK(feats.data()[0] == doctest::Approx(-7.8 + 7.84).epsilon(1e-12));
  CHECK(feats.data()[1] == doctest::Approx(-7.7 + 7.84).epsilon(1e-12));
  CHECK(feats.data()[2] == doctest::Approx(1.25));
  CHECK(feats.data()[3] == doctest::Approx(0.6));
}

TEST_CASE("mask split: floor ratio, disjoint, ascending, complement") {
  Rng rng(43);
  for (int trial = 0; trial < 30; ++trial) {
    int64_t n = 1 + rng.uniform_int(40);
    MaskSplit ms = mask_pillars(n, 0.75, rng);
    int64_t want = static_cast<int64_t>(std::floor(0.75 * static_cast<double>(n)));
    CHECK(static_cast<int64_t>(ms.masked_ids.size()) == want);
    CHECK(static_cast<int64_t>(ms.visible_ids.size()) == n - want);
    CHECK(std::is_sorted(ms.masked_ids.begin(), ms.masked_ids.end()));
    CHECK(std::is_sorted(ms.visible_ids.begin(), ms.visible_ids.end()));
    std::set<int64_t> all(ms.masked_ids.begin(), ms.masked_ids.end());
    all.insert(ms.visible_ids.begin(), ms.visible_ids.end());
    CHECK(static_cast<int64_t>(all.size()) == n);
    if (!all.empty()) {
      CHECK(*all.begin() == 0);
      CHECK(*all.rbegin() == n - 1);
    }
  }
}

TEST_CASE("mask split is deterministic in the rng state") {
  Rng a(44), b(44);
  MaskSplit ma = mask_pillars(100, 0.75, a);
  MaskSplit mb = mask_pillars(100, 0.75, b);
  CHECK(ma.masked_ids == mb.masked_ids);
  CHECK(ma.visible_ids == mb.visible_ids);
}

TEST_CASE("subset_pillars keeps rows and rebuilds offsets") {
  GridConfig g = GridConfig::desk_default();
  Rng rng(45);
  std::vector<Point> pts;
  for (int i = 0; i < 400; ++i)
    pts.push_back({rng.uniform(-8, 8), rng.uniform(-8, 8), rng.uniform(-2, 4),
                   rng.uniform(0, 1)});
  PointFrame f = frame_from(pts);
  PillarSet ps = assign_pillars(f, g);
  REQUIRE(ps.count() >= 4);
  std::vector<int64_t> rows{0, 2, ps.count() - 1};
  PillarSet sub = subset_pillars(ps, rows);
  REQUIRE(sub.count() == 3);
  for (size_t r = 0; r < rows.size(); ++r) {
    CHECK(sub.coords[r] == ps.coords[static_cast<size_t>(rows[r])]);
    int64_t src_len = ps.point_offsets[static_cast<size_t>(rows[r]) + 1] -
                      ps.point_offsets[static_cast<size_t>(rows[r])];
    int64_t sub_len = sub.point_offsets[r + 1] - sub.point_offsets[r];
    CHECK(src_len == sub_len);
    for (int64_t k = 0; k < src_len; ++k)
      CHECK(sub.point_ids[static_cast<size_t>(sub.point_offsets[r] + k)] ==
            ps.point_ids[static_cast<size_t>(ps.point_offsets[static_cast<size_t>(rows[r])] + k)]);
  }
}

TEST_CASE("targets are normalized into the cell cube") {
  GridConfig g = GridConfig::desk_default();
  Rng rng(46);
  std::vector<Point> pts;
  for (int i = 0; i < 600; ++i)
    pts.push_back({rng.uniform(-8, 8), rng.uniform(-8, 8), rng.uniform(-2, 4),
                   rng.uniform(0, 1)});
  PointFrame f = frame_from(pts);
  PillarSet ps = assign_pillars(f, g);
  std::vector<int64_t> masked;
  for (int64_t p = 0; p < ps.count(); p += 2) masked.push_back(p);
  const int64_t k_gt = 8;
  Rng draw(47);
  Tensor t = sample_targets(f, ps, masked, k_gt, g, draw);
  REQUIRE(t.shape() == Shape{static_cast<int64_t>(masked.size()), 3 * k_gt});
  for (int64_t i = 0; i < t.numel(); ++i) {
    CHECK(t.data()[i] >= -1.0 - 1e-9);
    CHECK(t.data()[i] <= 1.0 + 1e-9);
  }
}

TEST_CASE("small pillars sample targets with replacement from their own members") {
  GridConfig g = GridConfig::desk_default();
  // one pillar with a single point: all k_gt copies must be that point
  std::vector<Point> pts{{-7.9, -7.9, 1.0, 0.5}};
  PointFrame f = frame_from(pts);
  PillarSet ps = assign_pillars(f, g);
  REQUIRE(ps.count() == 1);
  Rng draw(48);
  Tensor t = sample_targets(f, ps, {0}, 4, g, draw);
  REQUIRE(t.shape() == Shape{1, 12});
  for (int k = 1; k < 4; ++k) {
    CHECK(t.data()[3 * k] == t.data()[0]);
    CHECK(t.data()[3 * k + 1] == t.data()[1]);
    CHECK(t.data()[3 * k + 2] == t.data()[2]);
  }
  // z normalization: zmid = 1, half-height 3, z = 1 -> 0
  CHECK(t.data()[2] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("target sampling without replacement covers distinct members") {
  GridConfig g = GridConfig::desk_default();
  std::vector<Point> pts;
  for (int i = 0; i < 12; ++i)
    pts.push_back({-7.9, -7.9, -1.5 + 0.4 * i, 0.1 * i});  // same cell, distinct z
  PointFrame f = frame_from(pts);
  PillarSet ps = assign_pillars(f, g);
  REQUIRE(ps.count() == 1);
  Rng draw(49);
  Tensor t = sample_targets(f, ps, {0}, 8, g, draw);
  std::set<double> zs;
  for (int k = 0; k < 8; ++k) zs.insert(t.data()[3 * k + 2]);
  CHECK(zs.size() == 8);  // enough members: all draws distinct
}

TEST_SUITE_END();
