#include "tmae/windows.hpp"

#include <map>

#include "tmae/error.hpp"

namespace tmae {

namespace {
inline std::pair<int64_t, int64_t> window_key(int32_t ix, int32_t iy, int64_t lx, int64_t ly,
                                              bool shifted) {
  int64_t x = static_cast<int64_t>(ix) + (shifted ? lx / 2 : 0);
  int64_t y = static_cast<int64_t>(iy) + (shifted ? ly / 2 : 0);
  return {x / lx, y / ly};
}
}  // namespace

WindowPartition partition_windows(const std::vector<std::pair<int32_t, int32_t>>& coords,
                                  int64_t lx, int64_t ly, bool shifted) {
  if (lx < 1 || ly < 1) throw UsageError("partition_windows: window extents must be >= 1");
  std::map<std::pair<int64_t, int64_t>, std::vector<int64_t>> groups;
  for (size_t r = 0; r < coords.size(); ++r) {
    auto [ix, iy] = coords[r];
    if (ix < 0 || iy < 0)
      throw NumericError("partition_windows: negative cell coordinate");
    groups[window_key(ix, iy, lx, ly, shifted)].push_back(static_cast<int64_t>(r));
  }
  WindowPartition out;
  out.window_of.assign(coords.size(), -1);
  out.windows.reserve(groups.size());
  for (auto& [key, rows] : groups) {
    for (int64_t r : rows) out.window_of[static_cast<size_t>(r)] = static_cast<int64_t>(out.windows.size());
    out.windows.push_back(std::move(rows));
  }
  return out;
}

JointPartition joint_group(const std::vector<std::pair<int32_t, int32_t>>& prev_coords,
                           const std::vector<std::pair<int32_t, int32_t>>& cur_coords,
                           int64_t lx, int64_t ly, bool shifted) {
  if (lx < 1 || ly < 1) throw UsageError("joint_group: window extents must be >= 1");
  std::map<std::pair<int64_t, int64_t>, JointWindow> groups;
  for (size_t r = 0; r < cur_coords.size(); ++r) {
    auto [ix, iy] = cur_coords[r];
    if (ix < 0 || iy < 0) throw NumericError("joint_group: negative cell coordinate");
    groups[window_key(ix, iy, lx, ly, shifted)].cur_rows.push_back(static_cast<int64_t>(r));
  }
  for (size_t r = 0; r < prev_coords.size(); ++r) {
    auto [ix, iy] = prev_coords[r];
    if (ix < 0 || iy < 0) throw NumericError("joint_group: negative cell coordinate");
    auto key = window_key(ix, iy, lx, ly, shifted);
    auto it = groups.find(key);
    // windows holding only earlier-frame cells have no queries: dropped
    if (it != groups.end()) it->second.prev_rows.push_back(static_cast<int64_t>(r));
  }
  JointPartition out;
  out.windows.reserve(groups.size());
  for (auto& [key, w] : groups) out.windows.push_back(std::move(w));
  return out;
}

}  // namespace tmae
