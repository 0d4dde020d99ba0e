#include "tmae/io.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "tmae/error.hpp"

namespace fs = std::filesystem;

namespace tmae {

namespace {

constexpr uint16_t kFrameVersion = 1;
constexpr uint16_t kCkptVersion = 1;

void put_u16(std::string& b, uint16_t v) {
  b.push_back(static_cast<char>(v & 0xff));
  b.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& b, uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& b, float v) {
  uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32(b, u);
}

void put_f64(std::string& b, double v) {
  uint64_t u;
  std::memcpy(&u, &v, 8);
  put_u64(b, u);
}

struct Reader {
  const unsigned char* p;
  size_t size;
  size_t off = 0;
  std::string path;

  void need(size_t n, const char* what) {
    if (off + n > size)
      throw DataError("'" + path + "': truncated while reading " + what + " at byte offset " +
                      std::to_string(off) + " (file size " + std::to_string(size) + ")");
  }
  uint16_t u16(const char* what) {
    need(2, what);
    uint16_t v = static_cast<uint16_t>(p[off]) | static_cast<uint16_t>(p[off + 1]) << 8;
    off += 2;
    return v;
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[off + i]) << (8 * i);
    off += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[off + i]) << (8 * i);
    off += 8;
    return v;
  }
  float f32(const char* what) {
    uint32_t u = u32(what);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }
  double f64(const char* what) {
    uint64_t u = u64(what);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
  }
  std::string bytes(size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(p + off), n);
    off += n;
    return s;
  }
};

void write_file(const std::string& path, const std::string& buf) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw DataError("write failed for '" + path + "'");
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return buf;
}

}  // namespace

void save_frame(const std::string& path, const PointFrame& frame) {
  std::string b;
  b.reserve(40 + 128 + frame.points.size() * 16);
  b += "PCSQ";
  put_u16(b, kFrameVersion);
  put_u32(b, static_cast<uint32_t>(frame.frame_index));
  for (double v : frame.pose.m) put_f64(b, v);
  put_u32(b, static_cast<uint32_t>(frame.points.size()));
  for (const auto& q : frame.points) {
    put_f32(b, static_cast<float>(q.x));
    put_f32(b, static_cast<float>(q.y));
    put_f32(b, static_cast<float>(q.z));
    put_f32(b, static_cast<float>(q.intensity));
  }
  write_file(path, b);
}

PointFrame load_frame(const std::string& path) {
  std::string buf = read_file(path);
  Reader r{reinterpret_cast<const unsigned char*>(buf.data()), buf.size(), 0, path};
  std::string magic = r.bytes(4, "magic");
  if (magic != "PCSQ")
    throw DataError("'" + path + "': bad magic at byte offset 0 (expected PCSQ)");
  uint16_t ver = r.u16("version");
  if (ver != kFrameVersion)
    throw DataError("'" + path + "': unsupported frame version " + std::to_string(ver) +
                    " (reader supports " + std::to_string(kFrameVersion) + ")");
  PointFrame f;
  f.frame_index = r.u32("frame_index");
  for (auto& v : f.pose.m) v = r.f64("pose");
  uint32_t n = r.u32("point count");
  f.points.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    Point q;
    q.x = r.f32("point x");
    q.y = r.f32("point y");
    q.z = r.f32("point z");
    q.intensity = r.f32("point intensity");
    f.points.push_back(q);
  }
  if (r.off != r.size)
    throw DataError("'" + path + "': " + std::to_string(r.size - r.off) +
                    " trailing bytes at offset " + std::to_string(r.off));
  return f;
}

void save_sequence(const std::string& dir, const std::vector<PointFrame>& frames,
                   const std::string& meta_echo) {
  fs::create_directories(dir);
  char name[32];
  for (size_t i = 0; i < frames.size(); ++i) {
    std::snprintf(name, sizeof(name), "frame_%06zu.pcsq", i);
    save_frame((fs::path(dir) / name).string(), frames[i]);
  }
  std::ofstream meta(fs::path(dir) / "sequence.meta", std::ios::trunc);
  if (!meta) throw DataError("cannot write sequence.meta in '" + dir + "'");
  meta << "frames = " << frames.size() << "\n";
  meta << meta_echo;
  if (!meta_echo.empty() && meta_echo.back() != '\n') meta << "\n";
}

std::vector<PointFrame> load_sequence(const std::string& dir) {
  std::ifstream meta(fs::path(dir) / "sequence.meta");
  if (!meta) throw DataError("'" + dir + "': missing sequence.meta");
  int64_t count = -1;
  std::string line;
  while (std::getline(meta, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    key.erase(std::remove_if(key.begin(), key.end(), ::isspace), key.end());
    if (key == "frames") {
      count = std::stoll(line.substr(eq + 1));
      break;
    }
  }
  if (count < 0) throw DataError("'" + dir + "': sequence.meta has no frames entry");
  std::vector<PointFrame> frames;
  frames.reserve(static_cast<size_t>(count));
  char name[32];
  for (int64_t i = 0; i < count; ++i) {
    std::snprintf(name, sizeof(name), "frame_%06lld.pcsq", static_cast<long long>(i));
    PointFrame f = load_frame((fs::path(dir) / name).string());
    if (f.frame_index != i)
      throw DataError(std::string("'") + name + "' in '" + dir + "': frame_index " +
                      std::to_string(f.frame_index) + " does not match position " +
                      std::to_string(i));
    frames.push_back(std::move(f));
  }
  return frames;
}

std::vector<std::vector<PointFrame>> load_dataset_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError("'" + dir + "' is not a directory");
  std::vector<std::string> seq_dirs;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && e.path().filename().string().rfind("seq_", 0) == 0)
      seq_dirs.push_back(e.path().string());
  }
  if (seq_dirs.empty()) throw DataError("'" + dir + "' contains no seq_* directories");
  std::sort(seq_dirs.begin(), seq_dirs.end());
  std::vector<std::vector<PointFrame>> out;
  out.reserve(seq_dirs.size());
  for (const auto& sd : seq_dirs) out.push_back(load_sequence(sd));
  return out;
}

// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path, ParamStore& store, const std::string& config_echo,
                     const Rng& rng) {
  std::string b;
  b += "TMCK";
  put_u16(b, kCkptVersion);
  put_u64(b, static_cast<uint64_t>(store.step));
  for (uint64_t s : rng.state()) put_u64(b, s);
  put_u32(b, static_cast<uint32_t>(config_echo.size()));
  b += config_echo;
  put_u32(b, static_cast<uint32_t>(store.slots().size()));
  for (auto& s : store.slots()) {
    size_t n = s.t.impl->data.size();
    if (s.m.empty()) s.m.assign(n, 0.0);
    if (s.v.empty()) s.v.assign(n, 0.0);
    put_u16(b, static_cast<uint16_t>(s.name.size()));
    b += s.name;
    const Shape& sh = s.t.shape();
    put_u32(b, static_cast<uint32_t>(sh.size()));
    for (int64_t d : sh) put_u32(b, static_cast<uint32_t>(d));
    // live state rounds to storage precision so that resuming from this file
    // continues bit-identically to the run that wrote it
    double* pd = s.t.data();
    for (size_t i = 0; i < n; ++i) {
      float fv = static_cast<float>(pd[i]);
      pd[i] = static_cast<double>(fv);
      put_f32(b, fv);
    }
    for (size_t i = 0; i < n; ++i) {
      float fv = static_cast<float>(s.m[i]);
      s.m[i] = static_cast<double>(fv);
      put_f32(b, fv);
    }
    for (size_t i = 0; i < n; ++i) {
      float fv = static_cast<float>(s.v[i]);
      s.v[i] = static_cast<double>(fv);
      put_f32(b, fv);
    }
  }
  write_file(path, b);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::string buf = read_file(path);
  Reader r{reinterpret_cast<const unsigned char*>(buf.data()), buf.size(), 0, path};
  if (r.bytes(4, "magic") != "TMCK")
    throw DataError("'" + path + "': bad magic at byte offset 0 (expected TMCK)");
  uint16_t ver = r.u16("version");
  if (ver != kCkptVersion)
    throw DataError("'" + path + "': unsupported checkpoint version " + std::to_string(ver) +
                    " (reader supports " + std::to_string(kCkptVersion) + ")");
  Checkpoint ck;
  ck.step = static_cast<int64_t>(r.u64("step"));
  for (auto& s : ck.rng_state) s = r.u64("rng state");
  uint32_t clen = r.u32("config length");
  ck.config_text = r.bytes(clen, "config echo");
  uint32_t np = r.u32("param count");
  ck.entries.reserve(np);
  for (uint32_t i = 0; i < np; ++i) {
    CheckpointEntry e;
    uint16_t nl = r.u16("name length");
    e.name = r.bytes(nl, "name");
    uint32_t rank = r.u32("rank");
    if (rank > 8) throw DataError("'" + path + "': implausible rank " + std::to_string(rank) +
                                  " for '" + e.name + "' at byte offset " + std::to_string(r.off));
    int64_t numel = 1;
    for (uint32_t k = 0; k < rank; ++k) {
      uint32_t d = r.u32("dim");
      e.shape.push_back(static_cast<int64_t>(d));
      numel *= d;
    }
    e.data.resize(static_cast<size_t>(numel));
    e.m.resize(static_cast<size_t>(numel));
    e.v.resize(static_cast<size_t>(numel));
    for (auto& v : e.data) v = r.f32("param data");
    for (auto& v : e.m) v = r.f32("adam m");
    for (auto& v : e.v) v = r.f32("adam v");
    ck.entries.push_back(std::move(e));
  }
  if (r.off != r.size)
    throw DataError("'" + path + "': " + std::to_string(r.size - r.off) +
                    " trailing bytes at offset " + std::to_string(r.off));
  return ck;
}

void apply_checkpoint(const Checkpoint& ck, ParamStore& store, Rng& rng) {
  std::string missing, extra;
  for (const auto& s : store.slots()) {
    bool found = false;
    for (const auto& e : ck.entries)
      if (e.name == s.name) { found = true; break; }
    if (!found) missing += (missing.empty() ? "" : ", ") + s.name;
  }
  for (const auto& e : ck.entries) {
    if (!store.has(e.name)) extra += (extra.empty() ? "" : ", ") + e.name;
  }
  if (!missing.empty() || !extra.empty())
    throw DataError("checkpoint does not match the model: missing [" + missing + "], extra [" +
                    extra + "]");
  for (const auto& e : ck.entries) {
    auto& s = store.slot(e.name);
    if (s.t.shape() != e.shape)
      throw DataError("checkpoint shape mismatch for '" + e.name + "': " +
                      shape_str(e.shape) + " vs model " + shape_str(s.t.shape()));
    std::copy(e.data.begin(), e.data.end(), s.t.data());
    s.m = e.m;
    s.v = e.v;
  }
  store.step = ck.step;
  rng.set_state(ck.rng_state);
}

}  // namespace tmae
