#pragma once
#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "tmae/rng.hpp"

namespace tmae {

// rigid transform, row-major homogeneous 4x4
struct Pose {
  std::array<double, 16> m;
};

Pose pose_identity();
Pose pose_from_xyzyaw(double x, double y, double z, double yaw);
// a*b: apply b first, then a
Pose pose_compose(const Pose& a, const Pose& b);
// rigid inverse (R^T, -R^T t); the rotation block must be orthonormal
Pose pose_inverse(const Pose& p);

struct Point {
  double x, y, z, intensity;
};

struct PointFrame {
  int64_t frame_index = 0;
  Pose pose;  // sensor-to-world
  std::vector<Point> points;
};

// applies the pose to xyz; intensity passes through
std::vector<Point> transform_points(const std::vector<Point>& pts, const Pose& pose);
// re-expresses a frame's points in the coordinate frame of target_pose:
// X' = inv(target_pose) * frame.pose * X
PointFrame transform_to_frame(const PointFrame& frame, const Pose& target_pose);

// ---------------------------------------------------------------------------
// augmentation

struct AugConfig {
  double flip_prob = 0.5;
  double scale_min = 0.95;
  double scale_max = 1.05;
  double yaw_max = 0.7853981633974483;  // pi/4
};

struct AugParams {
  bool flip_x = false;  // negate x
  bool flip_y = false;  // negate y
  double scale = 1.0;
  double yaw = 0.0;
};

// draw order is fixed: flip_x, flip_y, scale, yaw
AugParams sample_aug(Rng& rng, const AugConfig& cfg);
// order: flips, then uniform scale on xyz, then yaw rotation about z
std::vector<Point> apply_aug(const std::vector<Point>& pts, const AugParams& a);

// ---------------------------------------------------------------------------
// synthetic scenes

struct BoxSpec {
  double cx = 0, cy = 0, cz = 0;   // center, world coords
  double sx = 1, sy = 1, sz = 1;   // full extents
  double yaw = 0;
  double vx = 0, vy = 0;           // meters per frame; nonzero = moving
};

struct SceneConfig {
  uint64_t seed = 7;
  int64_t frames = 12;
  int64_t sequences = 6;        // consumed by dataset generation, not per-sequence
  int64_t ground_points = 7000;
  double ground_z = -1.3;       // ground plane height (sensor mounted above it)
  double ground_z_sigma = 0.02;
  double tilt_x = 0.0, tilt_y = 0.0;  // ground plane slope (world frame)
  double tilt_max = 0.02;       // scene_for_sequence draws tilts in [-max, max]
  double height_max = 0.4;      // per-sequence ground height shift in [-max, max]
  double noise_sigma = 0.01;    // per-frame sensor noise on xyz
  double box_density = 120.0;   // surface points per square meter
  double box_jitter = 1.5;      // per-sequence xy placement jitter
  double ego_vx = 0.2, ego_vy = 0.0;
  double ego_yaw_rate = 0.02;   // radians per frame
  double range_x = 3.2, range_y = 3.2;  // sensor half-extents, sizes ground scatter
  std::vector<BoxSpec> boxes;

  static SceneConfig default_desk();
};

// One sequence: a fixed world (scattered ground + box surfaces) observed from
// a moving ego pose, with fresh per-frame sensor noise. Points are in ego
// coordinates; each frame carries its sensor-to-world pose.
std::vector<PointFrame> gen_synthetic_sequence(const SceneConfig& cfg);

// per-sequence variant: boxes jittered in xy and the seed re-derived, so
// sequences share structure but not geometry
SceneConfig scene_for_sequence(const SceneConfig& cfg, int64_t seq_idx);

// world-frame center of box b at frame t (moving boxes translate by v*t)
std::pair<double, double> box_center_at(const SceneConfig& cfg, size_t box_idx, int64_t t);

}  // namespace tmae
