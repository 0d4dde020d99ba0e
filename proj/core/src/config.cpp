#include "tmae/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "tmae/error.hpp"

namespace tmae {

void RunConfig::validate() const {
  grid.validate();
  model.validate();
  train.validate();
  if (scene.frames < 1) throw UsageError("scene: frames must be >= 1");
  if (scene.sequences < 1) throw UsageError("scene: sequences must be >= 1");
  if (scene.ground_points < 0) throw UsageError("scene: ground_points must be >= 0");
  if (scene.noise_sigma < 0) throw UsageError("scene: noise_sigma must be >= 0");
  if (scene.box_density < 0) throw UsageError("scene: box_density must be >= 0");
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double parse_num(const std::string& section, const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    if (trim(v.substr(pos)).empty()) return d;
  } catch (...) {
  }
  throw UsageError("config [" + section + "] " + key + ": '" + v + "' is not a number");
}

int64_t parse_int(const std::string& section, const std::string& key, const std::string& v) {
  double d = parse_num(section, key, v);
  if (d != std::floor(d))
    throw UsageError("config [" + section + "] " + key + ": '" + v + "' is not an integer");
  return static_cast<int64_t>(d);
}

uint64_t parse_u64(const std::string& section, const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    unsigned long long u = std::stoull(trim(v), &pos);
    if (trim(v.substr(pos)).empty()) return u;
  } catch (...) {
  }
  throw UsageError("config [" + section + "] " + key + ": '" + v + "' is not an unsigned integer");
}

bool parse_bool(const std::string& section, const std::string& key, const std::string& v) {
  std::string t = trim(v);
  if (t == "true" || t == "1") return true;
  if (t == "false" || t == "0") return false;
  throw UsageError("config [" + section + "] " + key + ": '" + v + "' is not a bool");
}

std::vector<double> parse_tuple(const std::string& section, const std::string& key,
                                const std::string& v, size_t n) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_num(section, key, item));
  if (out.size() != n)
    throw UsageError("config [" + section + "] " + key + ": expected " + std::to_string(n) +
                     " comma-separated values, got " + std::to_string(out.size()));
  return out;
}

void set_key(RunConfig& c, const std::string& sec, const std::string& key,
             const std::string& val) {
  if (sec == "grid") {
    if (key == "range_min") {
      auto t = parse_tuple(sec, key, val, 3);
      for (int i = 0; i < 3; ++i) c.grid.range_min[i] = t[static_cast<size_t>(i)];
    } else if (key == "range_max") {
      auto t = parse_tuple(sec, key, val, 3);
      for (int i = 0; i < 3; ++i) c.grid.range_max[i] = t[static_cast<size_t>(i)];
    } else if (key == "pillar_size") {
      auto t = parse_tuple(sec, key, val, 3);
      for (int i = 0; i < 3; ++i) c.grid.pillar_size[i] = t[static_cast<size_t>(i)];
    } else {
      throw UsageError("config: unknown key [grid] " + key);
    }
  } else if (sec == "model") {
    if (key == "d_model") c.model.d_model = parse_int(sec, key, val);
    else if (key == "heads") c.model.heads = parse_int(sec, key, val);
    else if (key == "encoder_blocks") c.model.encoder_blocks = parse_int(sec, key, val);
    else if (key == "diffusion_layers") c.model.diffusion_layers = parse_int(sec, key, val);
    else if (key == "k_pred") c.model.k_pred = parse_int(sec, key, val);
    else if (key == "k_gt") c.model.k_gt = parse_int(sec, key, val);
    else if (key == "mask_ratio") c.model.mask_ratio = parse_num(sec, key, val);
    else if (key == "window") {
      auto t = parse_tuple(sec, key, val, 2);
      c.model.win_x = static_cast<int64_t>(t[0]);
      c.model.win_y = static_cast<int64_t>(t[1]);
    } else if (key == "pe_temperature") c.model.pe_temperature = parse_num(sec, key, val);
    else if (key == "ln_eps") c.model.ln_eps = parse_num(sec, key, val);
    else if (key == "use_wca") c.model.use_wca = parse_bool(sec, key, val);
    else throw UsageError("config: unknown key [model] " + key);
  } else if (sec == "train") {
    if (key == "max_lr") c.train.max_lr = parse_num(sec, key, val);
    else if (key == "epochs") c.train.epochs = parse_int(sec, key, val);
    else if (key == "steps_per_epoch") c.train.steps_per_epoch = parse_int(sec, key, val);
    else if (key == "batch_size") c.train.batch_size = parse_int(sec, key, val);
    else if (key == "weight_decay") c.train.weight_decay = parse_num(sec, key, val);
    else if (key == "beta1") c.train.beta1 = parse_num(sec, key, val);
    else if (key == "beta2") c.train.beta2 = parse_num(sec, key, val);
    else if (key == "adam_eps") c.train.adam_eps = parse_num(sec, key, val);
    else if (key == "seed") c.train.seed = parse_u64(sec, key, val);
    else if (key == "temporal_n") c.train.temporal_n = parse_int(sec, key, val);
    else if (key == "warmup_frac") c.train.warmup_frac = parse_num(sec, key, val);
    else if (key == "start_div") c.train.start_div = parse_num(sec, key, val);
    else if (key == "final_div") c.train.final_div = parse_num(sec, key, val);
    else if (key == "inference_gap") c.train.inference_gap = parse_int(sec, key, val);
    else if (key == "aug_flip_prob") c.train.aug.flip_prob = parse_num(sec, key, val);
    else if (key == "aug_scale_min") c.train.aug.scale_min = parse_num(sec, key, val);
    else if (key == "aug_scale_max") c.train.aug.scale_max = parse_num(sec, key, val);
    else if (key == "aug_yaw_max") c.train.aug.yaw_max = parse_num(sec, key, val);
    else if (key == "baseline_concat") c.train.baseline_concat = parse_bool(sec, key, val);
    else throw UsageError("config: unknown key [train] " + key);
  } else if (sec == "scene") {
    if (key == "seed") c.scene.seed = parse_u64(sec, key, val);
    else if (key == "frames") c.scene.frames = parse_int(sec, key, val);
    else if (key == "sequences") c.scene.sequences = parse_int(sec, key, val);
    else if (key == "ground_points") c.scene.ground_points = parse_int(sec, key, val);
    else if (key == "ground_z") c.scene.ground_z = parse_num(sec, key, val);
    else if (key == "ground_z_sigma") c.scene.ground_z_sigma = parse_num(sec, key, val);
    else if (key == "tilt_x") c.scene.tilt_x = parse_num(sec, key, val);
    else if (key == "tilt_y") c.scene.tilt_y = parse_num(sec, key, val);
    else if (key == "tilt_max") c.scene.tilt_max = parse_num(sec, key, val);
    else if (key == "height_max") c.scene.height_max = parse_num(sec, key, val);
    else if (key == "noise_sigma") c.scene.noise_sigma = parse_num(sec, key, val);
    else if (key == "box_density") c.scene.box_density = parse_num(sec, key, val);
    else if (key == "box_jitter") c.scene.box_jitter = parse_num(sec, key, val);
    else if (key == "ego_vx") c.scene.ego_vx = parse_num(sec, key, val);
    else if (key == "ego_vy") c.scene.ego_vy = parse_num(sec, key, val);
    else if (key == "ego_yaw_rate") c.scene.ego_yaw_rate = parse_num(sec, key, val);
    else if (key == "range_x") c.scene.range_x = parse_num(sec, key, val);
    else if (key == "range_y") c.scene.range_y = parse_num(sec, key, val);
    else if (key == "clear_boxes") {
      if (parse_bool(sec, key, val)) c.scene.boxes.clear();
    } else if (key == "static_box") {
      auto t = parse_tuple(sec, key, val, 7);
      c.scene.boxes.push_back(BoxSpec{t[0], t[1], t[2], t[3], t[4], t[5], t[6], 0.0, 0.0});
    } else if (key == "moving_box") {
      auto t = parse_tuple(sec, key, val, 9);
      c.scene.boxes.push_back(BoxSpec{t[0], t[1], t[2], t[3], t[4], t[5], t[6], t[7], t[8]});
    } else {
      throw UsageError("config: unknown key [scene] " + key);
    }
  } else {
    throw UsageError("config: unknown section [" + sec + "]");
  }
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const RunConfig& base) {
  RunConfig cfg = base;
  std::istringstream in(text);
  std::string line;
  std::string section;
  bool boxes_reset = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw UsageError("config line " + std::to_string(lineno) + ": malformed section header '" +
                         line + "'");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "grid" && section != "model" && section != "train" && section != "scene")
        throw UsageError("config line " + std::to_string(lineno) + ": unknown section [" +
                         section + "]");
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError("config line " + std::to_string(lineno) + ": expected 'key = value', got '" +
                       line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (section.empty())
      throw UsageError("config line " + std::to_string(lineno) + ": key '" + key +
                       "' outside any [section]");
    // a config that lists boxes replaces the inherited set rather than
    // appending to it
    if (section == "scene" && (key == "static_box" || key == "moving_box") && !boxes_reset) {
      cfg.scene.boxes.clear();
      boxes_reset = true;
    }
    try {
      set_key(cfg, section, key, val);
    } catch (const UsageError& e) {
      throw UsageError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_config_file(const std::string& path, const RunConfig& base) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot open config file '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_config_text(text, base);
}

void apply_override(RunConfig& cfg, const std::string& dotted) {
  auto eq = dotted.find('=');
  if (eq == std::string::npos)
    throw UsageError("--set expects section.key=value, got '" + dotted + "'");
  std::string path = trim(dotted.substr(0, eq));
  std::string val = trim(dotted.substr(eq + 1));
  auto dot = path.find('.');
  if (dot == std::string::npos)
    throw UsageError("--set expects section.key=value, got '" + dotted + "'");
  set_key(cfg, trim(path.substr(0, dot)), trim(path.substr(dot + 1)), val);
}

namespace {
std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace

std::string serialize_config(const RunConfig& c) {
  std::ostringstream o;
  o << "[grid]\n";
  o << "range_min = " << num(c.grid.range_min[0]) << "," << num(c.grid.range_min[1]) << ","
    << num(c.grid.range_min[2]) << "\n";
  o << "range_max = " << num(c.grid.range_max[0]) << "," << num(c.grid.range_max[1]) << ","
    << num(c.grid.range_max[2]) << "\n";
  o << "pillar_size = " << num(c.grid.pillar_size[0]) << "," << num(c.grid.pillar_size[1]) << ","
    << num(c.grid.pillar_size[2]) << "\n";
  o << "\n[model]\n";
  o << "d_model = " << c.model.d_model << "\n";
  o << "heads = " << c.model.heads << "\n";
  o << "encoder_blocks = " << c.model.encoder_blocks << "\n";
  o << "diffusion_layers = " << c.model.diffusion_layers << "\n";
  o << "k_pred = " << c.model.k_pred << "\n";
  o << "k_gt = " << c.model.k_gt << "\n";
  o << "mask_ratio = " << num(c.model.mask_ratio) << "\n";
  o << "window = " << c.model.win_x << "," << c.model.win_y << "\n";
  o << "pe_temperature = " << num(c.model.pe_temperature) << "\n";
  o << "ln_eps = " << num(c.model.ln_eps) << "\n";
  o << "use_wca = " << (c.model.use_wca ? "true" : "false") << "\n";
  o << "\n[train]\n";
  o << "max_lr = " << num(c.train.max_lr) << "\n";
  o << "epochs = " << c.train.epochs << "\n";
  o << "steps_per_epoch = " << c.train.steps_per_epoch << "\n";
  o << "batch_size = " << c.train.batch_size << "\n";
  o << "weight_decay = " << num(c.train.weight_decay) << "\n";
  o << "beta1 = " << num(c.train.beta1) << "\n";
  o << "beta2 = " << num(c.train.beta2) << "\n";
  o << "adam_eps = " << num(c.train.adam_eps) << "\n";
  o << "seed = " << c.train.seed << "\n";
  o << "temporal_n = " << c.train.temporal_n << "\n";
  o << "warmup_frac = " << num(c.train.warmup_frac) << "\n";
  o << "start_div = " << num(c.train.start_div) << "\n";
  o << "final_div = " << num(c.train.final_div) << "\n";
  o << "inference_gap = " << c.train.inference_gap << "\n";
  o << "aug_flip_prob = " << num(c.train.aug.flip_prob) << "\n";
  o << "aug_scale_min = " << num(c.train.aug.scale_min) << "\n";
  o << "aug_scale_max = " << num(c.train.aug.scale_max) << "\n";
  o << "aug_yaw_max = " << num(c.train.aug.yaw_max) << "\n";
  o << "baseline_concat = " << (c.train.baseline_concat ? "true" : "false") << "\n";
  o << "\n[scene]\n";
  o << "seed = " << c.scene.seed << "\n";
  o << "frames = " << c.scene.frames << "\n";
  o << "sequences = " << c.scene.sequences << "\n";
  o << "ground_points = " << c.scene.ground_points << "\n";
  o << "ground_z = " << num(c.scene.ground_z) << "\n";
  o << "ground_z_sigma = " << num(c.scene.ground_z_sigma) << "\n";
  o << "tilt_x = " << num(c.scene.tilt_x) << "\n";
  o << "tilt_y = " << num(c.scene.tilt_y) << "\n";
  o << "tilt_max = " << num(c.scene.tilt_max) << "\n";
  o << "height_max = " << num(c.scene.height_max) << "\n";
  o << "noise_sigma = " << num(c.scene.noise_sigma) << "\n";
  o << "box_density = " << num(c.scene.box_density) << "\n";
  o << "box_jitter = " << num(c.scene.box_jitter) << "\n";
  o << "ego_vx = " << num(c.scene.ego_vx) << "\n";
  o << "ego_vy = " << num(c.scene.ego_vy) << "\n";
  o << "ego_yaw_rate = " << num(c.scene.ego_yaw_rate) << "\n";
  o << "range_x = " << num(c.scene.range_x) << "\n";
  o << "range_y = " << num(c.scene.range_y) << "\n";
  o << "clear_boxes = true\n";
  for (const auto& b : c.scene.boxes) {
    if (b.vx == 0.0 && b.vy == 0.0) {
      o << "static_box = " << num(b.cx) << "," << num(b.cy) << "," << num(b.cz) << ","
        << num(b.sx) << "," << num(b.sy) << "," << num(b.sz) << "," << num(b.yaw) << "\n";
    } else {
      o << "moving_box = " << num(b.cx) << "," << num(b.cy) << "," << num(b.cz) << ","
        << num(b.sx) << "," << num(b.sy) << "," << num(b.sz) << "," << num(b.yaw) << ","
        << num(b.vx) << "," << num(b.vy) << "\n";
    }
  }
  return o.str();
}

}  // namespace tmae
