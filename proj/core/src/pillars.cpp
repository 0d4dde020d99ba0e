#include "tmae/pillars.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "tmae/error.hpp"

namespace tmae {

int64_t GridConfig::nx() const {
  return std::llround((range_max[0] - range_min[0]) / pillar_size[0]);
}

int64_t GridConfig::ny() const {
  return std::llround((range_max[1] - range_min[1]) / pillar_size[1]);
}

void GridConfig::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (!(range_max[a] > range_min[a]))
      throw UsageError("grid: range_max must exceed range_min on every axis");
    if (!(pillar_size[a] > 0)) throw UsageError("grid: pillar_size must be positive");
  }
  if (nx() < 1 || ny() < 1) throw UsageError("grid: degenerate cell counts");
}

PillarSet assign_pillars(const PointFrame& frame, const GridConfig& grid) {
  grid.validate();
  const double x0 = grid.range_min[0], y0 = grid.range_min[1], z0 = grid.range_min[2];
  const double x1 = grid.range_max[0], y1 = grid.range_max[1], z1 = grid.range_max[2];
  const double dx = grid.pillar_size[0], dy = grid.pillar_size[1];
  const int64_t nx = grid.nx(), ny = grid.ny();

  // cell -> member point ids; ordered map gives the lexicographic coord order
  std::map<std::pair<int32_t, int32_t>, std::vector<int64_t>> cells;
  int64_t dropped = 0;
  for (size_t i = 0; i < frame.points.size(); ++i) {
    const Point& q = frame.points[i];
    if (q.x < x0 || q.x >= x1 || q.y < y0 || q.y >= y1 || q.z < z0 || q.z >= z1) {
      ++dropped;
      continue;
    }
    auto ix = static_cast<int64_t>(std::floor((q.x - x0) / dx));
    auto iy = static_cast<int64_t>(std::floor((q.y - y0) / dy));
    // floating error at the far edge can land exactly on nx; such points are
    // inside [min,max) so clamp into the last cell
    if (ix >= nx) ix = nx - 1;
    if (iy >= ny) iy = ny - 1;
    cells[{static_cast<int32_t>(ix), static_cast<int32_t>(iy)}].push_back(
        static_cast<int64_t>(i));
  }

  PillarSet out;
  out.dropped = dropped;
  out.coords.reserve(cells.size());
  out.point_offsets.reserve(cells.size() + 1);
  out.point_offsets.push_back(0);
  for (auto& [coord, ids] : cells) {
    // canonical member order: by point value, index as tiebreak; keeps the
    // pipeline bit-stable under permutations of the input cloud
    std::sort(ids.begin(), ids.end(), [&](int64_t a, int64_t b) {
      const Point& pa = frame.points[static_cast<size_t>(a)];
      const Point& pb = frame.points[static_cast<size_t>(b)];
      if (pa.x != pb.x) return pa.x < pb.x;
      if (pa.y != pb.y) return pa.y < pb.y;
      if (pa.z != pb.z) return pa.z < pb.z;
      if (pa.intensity != pb.intensity) return pa.intensity < pb.intensity;
      return a < b;
    });
    out.coords.push_back(coord);
    out.point_ids.insert(out.point_ids.end(), ids.begin(), ids.end());
    out.point_offsets.push_back(static_cast<int64_t>(out.point_ids.size()));
  }
  return out;
}

MaskSplit mask_pillars(int64_t pillar_count, double ratio, Rng& rng) {
  if (ratio < 0.0 || ratio > 1.0) throw UsageError("mask_pillars: ratio must be in [0,1]");
  if (pillar_count < 0) throw NumericError("mask_pillars: negative pillar count");
  int64_t k = static_cast<int64_t>(std::floor(ratio * static_cast<double>(pillar_count)));
  MaskSplit s;
  s.masked_ids = rng.sample_without_replacement(pillar_count, k);
  std::sort(s.masked_ids.begin(), s.masked_ids.end());
  s.visible_ids.reserve(static_cast<size_t>(pillar_count - k));
  size_t mi = 0;
  for (int64_t i = 0; i < pillar_count; ++i) {
    if (mi < s.masked_ids.size() && s.masked_ids[mi] == i) {
      ++mi;
    } else {
      s.visible_ids.push_back(i);
    }
  }
  return s;
}

PillarSet subset_pillars(const PillarSet& src, const std::vector<int64_t>& rows) {
  PillarSet out;
  out.dropped = src.dropped;
  out.point_offsets.push_back(0);
  for (int64_t r : rows) {
    if (r < 0 || r >= src.count())
      throw NumericError("subset_pillars: row " + std::to_string(r) + " out of range");
    out.coords.push_back(src.coords[static_cast<size_t>(r)]);
    int64_t a = src.point_offsets[static_cast<size_t>(r)];
    int64_t b = src.point_offsets[static_cast<size_t>(r) + 1];
    for (int64_t i = a; i < b; ++i) out.point_ids.push_back(src.point_ids[static_cast<size_t>(i)]);
    out.point_offsets.push_back(static_cast<int64_t>(out.point_ids.size()));
  }
  return out;
}

Tensor build_point_features(const PointFrame& frame, const PillarSet& pillars,
                            const GridConfig& grid) {
  int64_t n = static_cast<int64_t>(pillars.point_ids.size());
  Tensor x = Tensor::zeros({n, 4});
  double* xd = x.data();
  const double dx = grid.pillar_size[0], dy = grid.pillar_size[1];
  for (int64_t p = 0; p < pillars.count(); ++p) {
    auto [ix, iy] = pillars.coords[static_cast<size_t>(p)];
    double cx = grid.range_min[0] + (static_cast<double>(ix) + 0.5) * dx;
    double cy = grid.range_min[1] + (static_cast<double>(iy) + 0.5) * dy;
    for (int64_t i = pillars.point_offsets[static_cast<size_t>(p)];
         i < pillars.point_offsets[static_cast<size_t>(p) + 1]; ++i) {
      const Point& q = frame.points[static_cast<size_t>(pillars.point_ids[static_cast<size_t>(i)])];
      xd[i * 4 + 0] = q.x - cx;
      xd[i * 4 + 1] = q.y - cy;
      xd[i * 4 + 2] = q.z;
      xd[i * 4 + 3] = q.intensity;
    }
  }
  return x;
}

Tensor sample_targets(const PointFrame& frame, const PillarSet& pillars,
                      const std::vector<int64_t>& masked_ids, int64_t k_gt,
                      const GridConfig& grid, Rng& rng) {
  if (k_gt < 1) throw UsageError("sample_targets: k_gt must be >= 1");
  int64_t m = static_cast<int64_t>(masked_ids.size());
  Tensor t = Tensor::zeros({m, 3 * k_gt});
  double* td = t.data();
  const double dx = grid.pillar_size[0], dy = grid.pillar_size[1];
  const double zmid = 0.5 * (grid.range_min[2] + grid.range_max[2]);
  const double hz = 0.5 * (grid.range_max[2] - grid.range_min[2]);
  for (int64_t r = 0; r < m; ++r) {
    int64_t p = masked_ids[static_cast<size_t>(r)];
    if (p < 0 || p >= pillars.count())
      throw NumericError("sample_targets: masked id " + std::to_string(p) + " out of range");
    int64_t a = pillars.point_offsets[static_cast<size_t>(p)];
    int64_t b = pillars.point_offsets[static_cast<size_t>(p) + 1];
    int64_t len = b - a;
    auto [ix, iy] = pillars.coords[static_cast<size_t>(p)];
    double cx = grid.range_min[0] + (static_cast<double>(ix) + 0.5) * dx;
    double cy = grid.range_min[1] + (static_cast<double>(iy) + 0.5) * dy;
    std::vector<int64_t> picks;
    picks.reserve(static_cast<size_t>(k_gt));
    if (len >= k_gt) {
      for (int64_t j : rng.sample_without_replacement(len, k_gt)) picks.push_back(a + j);
    } else {
      for (int64_t j = 0; j < k_gt; ++j) picks.push_back(a + rng.uniform_int(len));
    }
    for (int64_t j = 0; j < k_gt; ++j) {
      const Point& q =
          frame.points[static_cast<size_t>(pillars.point_ids[static_cast<size_t>(picks[static_cast<size_t>(j)])])];
      td[r * 3 * k_gt + j * 3 + 0] = (q.x - cx) / (dx / 2.0);
      td[r * 3 * k_gt + j * 3 + 1] = (q.y - cy) / (dy / 2.0);
      td[r * 3 * k_gt + j * 3 + 2] = (q.z - zmid) / hz;
    }
  }
  return t;
}

}  // namespace tmae
