#include <doctest.h>

#include <map>
#include <set>

#include "tmae/rng.hpp"
#include "tmae/windows.hpp"

using namespace tmae;

namespace {

std::vector<std::pair<int32_t, int32_t>> random_coords(Rng& rng, int n, int32_t extent) {
  std::set<std::pair<int32_t, int32_t>> uniq;
  while (static_cast<int>(uniq.size()) < n)
    uniq.insert({static_cast<int32_t>(rng.uniform_int(extent)),
                 static_cast<int32_t>(rng.uniform_int(extent))});
  return {uniq.begin(), uniq.end()};
}

std::pair<int64_t, int64_t> key_ref(std::pair<int32_t, int32_t> c, int64_t lx, int64_t ly,
                                    bool shifted) {
  int64_t ox = shifted ? lx / 2 : 0, oy = shifted ? ly / 2 : 0;
  return {(c.first + ox) / lx, (c.second + oy) / ly};
}

}  // namespace

TEST_SUITE_BEGIN("windows");

TEST_CASE("every row is in exactly one window, members grouped correctly") {
  Rng rng(50);
  for (bool shifted : {false, true}) {
    auto coords = random_coords(rng, 120, 50);
    WindowPartition wp = partition_windows(coords, 8, 8, shifted);
    REQUIRE(wp.window_of.size() == coords.size());
    std::vector<int> seen(coords.size(), 0);
    std::map<std::pair<int64_t, int64_t>, std::set<int64_t>> ref;
    for (size_t r = 0; r < coords.size(); ++r)
      ref[key_ref(coords[r], 8, 8, shifted)].insert(static_cast<int64_t>(r));
    REQUIRE(wp.windows.size() == ref.size());
    // windows ordered by key ascending, members ascending
    auto it = ref.begin();
    for (size_t w = 0; w < wp.windows.size(); ++w, ++it) {
      const auto& members = wp.windows[w];
      REQUIRE(members.size() == it->second.size());
      int64_t prev = -1;
      for (int64_t r : members) {
        CHECK(r > prev);
        prev = r;
        CHECK(it->second.count(r) == 1);
        CHECK(wp.window_of[static_cast<size_t>(r)] == static_cast<int64_t>(w));
        seen[static_cast<size_t>(r)] += 1;
      }
    }
    for (int s : seen) CHECK(s == 1);
  }
}

TEST_CASE("shifted grid assigns boundary cells differently") {
  // cells straddling x=8 share a window unshifted only after the shift splits at 4/12
  std::vector<std::pair<int32_t, int32_t>> coords{{7, 0}, {8, 0}, {3, 0}, {4, 0}};
  WindowPartition un = partition_windows(coords, 8, 8, false);
  WindowPartition sh = partition_windows(coords, 8, 8, true);
  // unshifted: {7,3,4} in window 0, {8} in window 1
  CHECK(un.window_of[0] == un.window_of[2]);
  CHECK(un.window_of[0] == un.window_of[3]);
  CHECK(un.window_of[0] != un.window_of[1]);
  // shifted by 4: 7+4=11 and 8+4=12 land together (the shift heals the 7|8
  // boundary) while 3+4=7 and 4+4=8 split at the new boundary
  CHECK(sh.window_of[0] == sh.window_of[1]);
  CHECK(sh.window_of[2] != sh.window_of[3]);
  CHECK(sh.window_of[0] == sh.window_of[3]);
}

TEST_CASE("joint grouping drops prev-only windows and keeps cur-only ones") {
  //  window (0,0): both frames; window (1,0): prev only; window (0,1): cur only
  std::vector<std::pair<int32_t, int32_t>> prev{{1, 1}, {2, 3}, {9, 1}};
  std::vector<std::pair<int32_t, int32_t>> cur{{0, 0}, {3, 9}};
  JointPartition jp = joint_group(prev, cur, 8, 8, false);
  REQUIRE(jp.windows.size() == 2);
  // windows follow cur key order: (0,0) then (0,1)
  CHECK(jp.windows[0].cur_rows == std::vector<int64_t>{0});
  CHECK(jp.windows[0].prev_rows == std::vector<int64_t>{0, 1});
  CHECK(jp.windows[1].cur_rows == std::vector<int64_t>{1});
  CHECK(jp.windows[1].prev_rows.empty());
}

TEST_CASE("joint grouping covers all cur rows exactly once") {
  Rng rng(51);
  auto prev = random_coords(rng, 80, 50);
  auto cur = random_coords(rng, 90, 50);
  for (bool shifted : {false, true}) {
    JointPartition jp = joint_group(prev, cur, 8, 8, shifted);
    std::vector<int> seen(cur.size(), 0);
    for (const auto& w : jp.windows) {
      CHECK_FALSE(w.cur_rows.empty());
      for (int64_t r : w.cur_rows) seen[static_cast<size_t>(r)] += 1;
      // prev rows in a window must share the cur rows' window key
      if (!w.prev_rows.empty()) {
        auto key = key_ref(cur[static_cast<size_t>(w.cur_rows[0])], 8, 8, shifted);
        for (int64_t r : w.prev_rows)
          CHECK(key_ref(prev[static_cast<size_t>(r)], 8, 8, shifted) == key);
      }
    }
    for (int s : seen) CHECK(s == 1);
    // every prev row whose window has cur rows appears; others are dropped
    std::set<std::pair<int64_t, int64_t>> cur_keys;
    for (auto c : cur) cur_keys.insert(key_ref(c, 8, 8, shifted));
    size_t expected_prev = 0;
    for (auto c : prev)
      if (cur_keys.count(key_ref(c, 8, 8, shifted))) ++expected_prev;
    size_t got_prev = 0;
    for (const auto& w : jp.windows) got_prev += w.prev_rows.size();
    CHECK(got_prev == expected_prev);
  }
}

TEST_CASE("shifted and unshifted joint grids use one formula per pair") {
  // the same physical cells in both frames always share a window, shifted or not
  std::vector<std::pair<int32_t, int32_t>> cells{{5, 5}, {12, 40}, {31, 7}};
  for (bool shifted : {false, true}) {
    JointPartition jp = joint_group(cells, cells, 8, 8, shifted);
    REQUIRE(jp.windows.size() == 3);
    for (const auto& w : jp.windows) {
      REQUIRE(w.cur_rows.size() == 1);
      REQUIRE(w.prev_rows.size() == 1);
      CHECK(w.cur_rows[0] == w.prev_rows[0]);
    }
  }
}

TEST_SUITE_END();
