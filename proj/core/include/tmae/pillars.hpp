#pragma once
#include <cstdint>
#include <utility>
#include <vector>

#include "tmae/geometry.hpp"
#include "tmae/rng.hpp"
#include "tmae/tensor.hpp"

namespace tmae {

struct GridConfig {
  double range_min[3] = {-8.0, -8.0, -2.0};
  double range_max[3] = {8.0, 8.0, 4.0};
  double pillar_size[3] = {0.32, 0.32, 6.0};

  int64_t nx() const;  // cells along x
  int64_t ny() const;  // cells along y
  void validate() const;

  static GridConfig desk_default() { return GridConfig{}; }
  // full-scale vehicle range; same pillar footprint
  static GridConfig vehicle_default() {
    GridConfig g;
    g.range_min[0] = -74.88; g.range_min[1] = -74.88; g.range_min[2] = -2.0;
    g.range_max[0] = 74.88;  g.range_max[1] = 74.88;  g.range_max[2] = 4.0;
    return g;
  }
};

// Occupied cells of one frame. coords is lexicographically ascending by
// (ix, iy). Member points of pillar p are point_ids[point_offsets[p] ..
// point_offsets[p+1]), ordered canonically by point value (x,y,z,intensity)
// so that pooling and target sampling are invariant to input point order.
struct PillarSet {
  std::vector<std::pair<int32_t, int32_t>> coords;
  std::vector<int64_t> point_offsets;
  std::vector<int64_t> point_ids;
  int64_t dropped = 0;

  int64_t count() const { return static_cast<int64_t>(coords.size()); }
};

// Half-open binning: cell ix = floor((x - xmin)/dx), valid when the point
// lies in [min, max) on all three axes; everything else is dropped.
PillarSet assign_pillars(const PointFrame& frame, const GridConfig& grid);

struct MaskSplit {
  std::vector<int64_t> masked_ids;   // ascending pillar row indices
  std::vector<int64_t> visible_ids;  // ascending complement
};

// floor(ratio*P) pillars drawn without replacement
MaskSplit mask_pillars(int64_t pillar_count, double ratio, Rng& rng);

// pillar subset keeping only the given rows (ascending); point data rebuilt
PillarSet subset_pillars(const PillarSet& src, const std::vector<int64_t>& rows);

// [N,4] rows grouped by pillar in canonical order; per point:
// (x - cell_center_x, y - cell_center_y, z, intensity)
Tensor build_point_features(const PointFrame& frame, const PillarSet& pillars,
                            const GridConfig& grid);

// Ground-truth target sets for masked pillars: k_gt points per pillar drawn
// from its members (without replacement when enough points exist, with
// replacement otherwise), normalized to the cell:
// ((x-cx)/(dx/2), (y-cy)/(dy/2), (z-zmid)/(dz/2)). Shape [M, 3*k_gt].
Tensor sample_targets(const PointFrame& frame, const PillarSet& pillars,
                      const std::vector<int64_t>& masked_ids, int64_t k_gt,
                      const GridConfig& grid, Rng& rng);

}  // namespace tmae
