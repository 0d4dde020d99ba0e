#include "tmae/geometry.hpp"

#include <cmath>

#include "tmae/error.hpp"

namespace tmae {

Pose pose_identity() {
  Pose p{};
  p.m = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
  return p;
}

Pose pose_from_xyzyaw(double x, double y, double z, double yaw) {
  Pose p = pose_identity();
  double c = std::cos(yaw), s = std::sin(yaw);
  p.m[0] = c;  p.m[1] = -s; p.m[3] = x;
  p.m[4] = s;  p.m[5] = c;  p.m[7] = y;
  p.m[11] = z;
  return p;
}

Pose pose_compose(const Pose& a, const Pose& b) {
  Pose r{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += a.m[i * 4 + k] * b.m[k * 4 + j];
      r.m[i * 4 + j] = acc;
    }
  return r;
}

Pose pose_inverse(const Pose& p) {
  Pose r = pose_identity();
  // R^T
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.m[i * 4 + j] = p.m[j * 4 + i];
  // -R^T t
  for (int i = 0; i < 3; ++i) {
    double acc = 0.0;
    for (int j = 0; j < 3; ++j) acc += r.m[i * 4 + j] * p.m[j * 4 + 3];
    r.m[i * 4 + 3] = -acc;
  }
  return r;
}

namespace {
inline Point apply_pose(const Pose& p, const Point& q) {
  return Point{p.m[0] * q.x + p.m[1] * q.y + p.m[2] * q.z + p.m[3],
               p.m[4] * q.x + p.m[5] * q.y + p.m[6] * q.z + p.m[7],
               p.m[8] * q.x + p.m[9] * q.y + p.m[10] * q.z + p.m[11], q.intensity};
}
}  // namespace

std::vector<Point> transform_points(const std::vector<Point>& pts, const Pose& pose) {
  std::vector<Point> out;
  out.reserve(pts.size());
  for (const auto& q : pts) out.push_back(apply_pose(pose, q));
  return out;
}

PointFrame transform_to_frame(const PointFrame& frame, const Pose& target_pose) {
  Pose rel = pose_compose(pose_inverse(target_pose), frame.pose);
  PointFrame out;
  out.frame_index = frame.frame_index;
  out.pose = target_pose;
  out.points = transform_points(frame.points, rel);
  return out;
}

AugParams sample_aug(Rng& rng, const AugConfig& cfg) {
  AugParams a;
  a.flip_x = rng.bernoulli(cfg.flip_prob);
  a.flip_y = rng.bernoulli(cfg.flip_prob);
  a.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  a.yaw = rng.uniform(-cfg.yaw_max, cfg.yaw_max);
  return a;
}

std::vector<Point> apply_aug(const std::vector<Point>& pts, const AugParams& a) {
  double c = std::cos(a.yaw), s = std::sin(a.yaw);
  std::vector<Point> out;
  out.reserve(pts.size());
  for (const auto& q : pts) {
    double x = a.flip_x ? -q.x : q.x;
    double y = a.flip_y ? -q.y : q.y;
    double z = q.z;
    x *= a.scale;
    y *= a.scale;
    z *= a.scale;
    out.push_back(Point{c * x - s * y, s * x + c * y, z, q.intensity});
  }
  return out;
}

// ---------------------------------------------------------------------------

SceneConfig SceneConfig::default_desk() {
  SceneConfig c;
  // box centers sit on the ground plane (cz = ground_z + height/2)
  c.boxes = {
      {2.2, 1.5, -0.8, 1.6, 1.2, 1.0, 0.3, 0.0, 0.0},
      {-2.4, -1.8, -0.9, 2.0, 1.0, 0.8, -0.6, 0.0, 0.0},
      {0.8, -2.6, -0.85, 1.2, 1.2, 0.9, 0.0, 0.0, 0.0},
      // one mover, one grid cell per frame
      {-2.8, 2.2, -0.8, 1.6, 1.2, 1.0, 0.0, 0.32, 0.0},
  };
  return c;
}

std::pair<double, double> box_center_at(const SceneConfig& cfg, size_t box_idx, int64_t t) {
  const BoxSpec& b = cfg.boxes.at(box_idx);
  return {b.cx + b.vx * static_cast<double>(t), b.cy + b.vy * static_cast<double>(t)};
}

namespace {
// uniform surface samples of an axis-aligned unit-centered box of extents
// (sx,sy,sz), in box-local coords; point count proportional to face area
std::vector<Point> sample_box_surface(Rng& rng, const BoxSpec& b, double density) {
  std::vector<Point> out;
  struct Face {
    int fixed_axis;
    double sign;
    double a_extent, b_extent;
  };
  double sx = b.sx, sy = b.sy, sz = b.sz;
  const Face faces[6] = {
      {0, +1, sy, sz}, {0, -1, sy, sz}, {1, +1, sx, sz},
      {1, -1, sx, sz}, {2, +1, sx, sy}, {2, -1, sx, sy},
  };
  double half[3] = {sx / 2, sy / 2, sz / 2};
  for (const auto& f : faces) {
    int64_t n = static_cast<int64_t>(std::llround(density * f.a_extent * f.b_extent));
    for (int64_t i = 0; i < n; ++i) {
      double u = rng.uniform(-f.a_extent / 2, f.a_extent / 2);
      double v = rng.uniform(-f.b_extent / 2, f.b_extent / 2);
      double intensity = rng.uniform(0.5, 0.9);
      double p[3];
      p[f.fixed_axis] = f.sign * half[f.fixed_axis];
      if (f.fixed_axis == 0) { p[1] = u; p[2] = v; }
      else if (f.fixed_axis == 1) { p[0] = u; p[2] = v; }
      else { p[0] = u; p[1] = v; }
      out.push_back(Point{p[0], p[1], p[2], intensity});
    }
  }
  return out;
}

std::vector<Point> place_box(const std::vector<Point>& local, double cx, double cy, double cz,
                             double yaw) {
  double c = std::cos(yaw), s = std::sin(yaw);
  std::vector<Point> out;
  out.reserve(local.size());
  for (const auto& q : local)
    out.push_back(Point{cx + c * q.x - s * q.y, cy + s * q.x + c * q.y, cz + q.z, q.intensity});
  return out;
}
}  // namespace

SceneConfig scene_for_sequence(const SceneConfig& cfg, int64_t seq_idx) {
  SceneConfig out = cfg;
  out.seed = mix_seed(cfg.seed, static_cast<uint64_t>(seq_idx) + 1);
  Rng jit(mix_seed(cfg.seed, 0x5eedu + static_cast<uint64_t>(seq_idx)));
  for (auto& b : out.boxes) {
    b.cx += jit.uniform(-cfg.box_jitter, cfg.box_jitter);
    b.cy += jit.uniform(-cfg.box_jitter, cfg.box_jitter);
    b.yaw += jit.uniform(-0.5, 0.5);
  }
  // per-sequence terrain: a slope plus a global floor height, with boxes
  // riding the floor. The earlier frame of a pair then carries
  // sequence-specific heights, so reconstruction has a signal that can only
  // be read from that frame's content; a wrong prior frame presents wrong
  // heights everywhere.
  out.tilt_x = jit.uniform(-cfg.tilt_max, cfg.tilt_max);
  out.tilt_y = jit.uniform(-cfg.tilt_max, cfg.tilt_max);
  double dh = jit.uniform(-cfg.height_max, cfg.height_max);
  out.ground_z += dh;
  for (auto& b : out.boxes) b.cz += dh;
  return out;
}

std::vector<PointFrame> gen_synthetic_sequence(const SceneConfig& cfg) {
  if (cfg.frames < 1) throw NumericError("gen_synthetic_sequence: frames must be >= 1");
  Rng rng(cfg.seed);

  // fixed world geometry: ground scatter sized to cover the swept sensor range
  double ego_x1 = cfg.ego_vx * static_cast<double>(cfg.frames - 1);
  double ego_y1 = cfg.ego_vy * static_cast<double>(cfg.frames - 1);
  double gx0 = std::min(0.0, ego_x1) - cfg.range_x - 1.0;
  double gx1 = std::max(0.0, ego_x1) + cfg.range_x + 1.0;
  double gy0 = std::min(0.0, ego_y1) - cfg.range_y - 1.0;
  double gy1 = std::max(0.0, ego_y1) + cfg.range_y + 1.0;

  std::vector<Point> ground;
  ground.reserve(static_cast<size_t>(cfg.ground_points));
  for (int64_t i = 0; i < cfg.ground_points; ++i) {
    double x = rng.uniform(gx0, gx1);
    double y = rng.uniform(gy0, gy1);
    double z = cfg.ground_z + cfg.tilt_x * x + cfg.tilt_y * y +
               rng.normal(0.0, cfg.ground_z_sigma);
    double intensity = rng.uniform(0.1, 0.4);
    ground.push_back(Point{x, y, z, intensity});
  }

  std::vector<std::vector<Point>> box_local;
  for (const auto& b : cfg.boxes) box_local.push_back(sample_box_surface(rng, b, cfg.box_density));

  std::vector<PointFrame> frames;
  frames.reserve(static_cast<size_t>(cfg.frames));
  for (int64_t t = 0; t < cfg.frames; ++t) {
    Pose pose = pose_from_xyzyaw(cfg.ego_vx * static_cast<double>(t),
                                 cfg.ego_vy * static_cast<double>(t), 0.0,
                                 cfg.ego_yaw_rate * static_cast<double>(t));
    std::vector<Point> world = ground;
    for (size_t b = 0; b < cfg.boxes.size(); ++b) {
      auto [cx, cy] = box_center_at(cfg, b, t);
      auto placed = place_box(box_local[b], cx, cy, cfg.boxes[b].cz, cfg.boxes[b].yaw);
      world.insert(world.end(), placed.begin(), placed.end());
    }
    PointFrame f;
    f.frame_index = t;
    f.pose = pose;
    f.points = transform_points(world, pose_inverse(pose));
    for (auto& q : f.points) {
      q.x += rng.normal(0.0, cfg.noise_sigma);
      q.y += rng.normal(0.0, cfg.noise_sigma);
      q.z += rng.normal(0.0, cfg.noise_sigma);
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace tmae
