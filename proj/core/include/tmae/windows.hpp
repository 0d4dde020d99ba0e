#pragma once
#include <cstdint>
#include <utility>
#include <vector>

namespace tmae {

// Self-attention partition of one frame's pillars. Every row lands in
// exactly one window; windows are ordered by (wx, wy) ascending and member
// rows are ascending.
struct WindowPartition {
  std::vector<std::vector<int64_t>> windows;
  std::vector<int64_t> window_of;  // row -> position in `windows`
};

// Unshifted: window of cell (ix,iy) is (ix/lx, iy/ly). Shifted: the window
// grid moves by half a window, (ix+lx/2)/lx and likewise for y. Both frames
// of a pair must use the same formula for cross windows to line up.
WindowPartition partition_windows(const std::vector<std::pair<int32_t, int32_t>>& coords,
                                  int64_t lx, int64_t ly, bool shifted);

// Cross-attention grouping: cells of both frames keyed into the same window
// grid. Windows that contain no later-frame (query) rows are dropped;
// windows with queries but no earlier-frame rows stay, with empty prev.
struct JointWindow {
  std::vector<int64_t> cur_rows;
  std::vector<int64_t> prev_rows;
};

struct JointPartition {
  std::vector<JointWindow> windows;
};

JointPartition joint_group(const std::vector<std::pair<int32_t, int32_t>>& prev_coords,
                           const std::vector<std::pair<int32_t, int32_t>>& cur_coords,
                           int64_t lx, int64_t ly, bool shifted);

}  // namespace tmae
