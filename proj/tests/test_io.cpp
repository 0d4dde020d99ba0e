#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tmae/error.hpp"
#include "tmae/io.hpp"

using namespace tmae;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir() {
  fs::path d = fs::temp_directory_path() / "tmae_io_tests";
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

PointFrame sample_frame(uint64_t seed, int n) {
  Rng rng(seed);
  PointFrame f;
  f.frame_index = 4;
  f.pose = pose_from_xyzyaw(0.4, -0.2, 0.0, 0.3);
  for (int i = 0; i < n; ++i)
    f.points.push_back({rng.uniform(-8, 8), rng.uniform(-8, 8), rng.uniform(-2, 4),
                        rng.uniform(0, 1)});
  return f;
}

double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

TEST_SUITE_BEGIN("io");

TEST_CASE("frame golden bytes: header layout is pinned") {
  fs::path p = tmp_dir() / "golden.pcsq";
  PointFrame f;
  f.frame_index = 7;
  f.pose = pose_identity();
  f.points.push_back({1.0, 2.0, 3.0, 0.5});
  save_frame(p.string(), f);
  std::string b = slurp(p);
  REQUIRE(b.size() == 4 + 2 + 4 + 16 * 8 + 4 + 16);
  CHECK(b.substr(0, 4) == "PCSQ");
  CHECK(static_cast<unsigned char>(b[4]) == 1);  // version lo byte
  CHECK(static_cast<unsigned char>(b[5]) == 0);
  CHECK(static_cast<unsigned char>(b[6]) == 7);  // frame index lo byte
  CHECK(static_cast<unsigned char>(b[7]) == 0);
  // pose[0] = 1.0 as little-endian f64: 00..00 F0 3F
  size_t off = 10;
  for (int i = 0; i < 6; ++i) CHECK(static_cast<unsigned char>(b[off + i]) == 0);
  CHECK(static_cast<unsigned char>(b[off + 6]) == 0xF0);
  CHECK(static_cast<unsigned char>(b[off + 7]) == 0x3F);
  // count = 1
  size_t coff = 10 + 16 * 8;
  CHECK(static_cast<unsigned char>(b[coff]) == 1);
  // x = 1.0f little-endian: 00 00 80 3F
  CHECK(static_cast<unsigned char>(b[coff + 4]) == 0);
  CHECK(static_cast<unsigned char>(b[coff + 5]) == 0);
  CHECK(static_cast<unsigned char>(b[coff + 6]) == 0x80);
  CHECK(static_cast<unsigned char>(b[coff + 7]) == 0x3F);
}

TEST_CASE("frame round trip is exact at storage precision") {
  fs::path p = tmp_dir() / "rt.pcsq";
  PointFrame f = sample_frame(100, 300);
  save_frame(p.string(), f);
  PointFrame g = load_frame(p.string());
  CHECK(g.frame_index == f.frame_index);
  for (int i = 0; i < 16; ++i) CHECK(g.pose.m[i] == f.pose.m[i]);  // pose stays f64
  REQUIRE(g.points.size() == f.points.size());
  for (size_t i = 0; i < f.points.size(); ++i) {
    CHECK(g.points[i].x == f32(f.points[i].x));
    CHECK(g.points[i].y == f32(f.points[i].y));
    CHECK(g.points[i].z == f32(f.points[i].z));
    CHECK(g.points[i].intensity == f32(f.points[i].intensity));
  }
  // second save of the loaded frame is byte-identical (f32 is a fixed point)
  fs::path p2 = tmp_dir() / "rt2.pcsq";
  save_frame(p2.string(), g);
  CHECK(slurp(p) == slurp(p2));
}

TEST_CASE("frame reader reports precise failures") {
  fs::path dir = tmp_dir();
  PointFrame f = sample_frame(101, 5);
  fs::path good = dir / "good.pcsq";
  save_frame(good.string(), f);
  std::string bytes = slurp(good);

  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_frame((dir / "nope.pcsq").string()), DataError);
  }
  SUBCASE("bad magic") {
    std::string b = bytes;
    b[0] = 'X';
    spit(dir / "badmagic.pcsq", b);
    CHECK_THROWS_WITH_AS(load_frame((dir / "badmagic.pcsq").string()),
                         doctest::Contains("magic"), DataError);
  }
  SUBCASE("unsupported version") {
    std::string b = bytes;
    b[4] = 2;
    spit(dir / "badver.pcsq", b);
    CHECK_THROWS_WITH_AS(load_frame((dir / "badver.pcsq").string()),
                         doctest::Contains("version"), DataError);
  }
  SUBCASE("truncated payload names the offset") {
    std::string b = bytes.substr(0, bytes.size() - 7);
    spit(dir / "trunc.pcsq", b);
    CHECK_THROWS_WITH_AS(load_frame((dir / "trunc.pcsq").string()),
                         doctest::Contains("offset"), DataError);
  }
  SUBCASE("trailing bytes rejected") {
    std::string b = bytes + "zz";
    spit(dir / "trail.pcsq", b);
    CHECK_THROWS_WITH_AS(load_frame((dir / "trail.pcsq").string()),
                         doctest::Contains("trailing"), DataError);
  }
}

TEST_CASE("sequence directory round trip and meta") {
  fs::path dir = tmp_dir() / "seqdir";
  fs::remove_all(dir);
  std::vector<PointFrame> frames;
  for (int i = 0; i < 3; ++i) {
    PointFrame f = sample_frame(200 + static_cast<uint64_t>(i), 50);
    f.frame_index = i;
    frames.push_back(f);
  }
  save_sequence(dir.string(), frames, "gen = test\n");
  CHECK(fs::exists(dir / "frame_000000.pcsq"));
  CHECK(fs::exists(dir / "frame_000002.pcsq"));
  std::string meta = slurp(dir / "sequence.meta");
  CHECK(meta.find("frames = 3") != std::string::npos);
  CHECK(meta.find("gen = test") != std::string::npos);
  auto loaded = load_sequence(dir.string());
  REQUIRE(loaded.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(loaded[i].frame_index == static_cast<int64_t>(i));
    CHECK(loaded[i].points.size() == frames[i].points.size());
  }
}

TEST_CASE("sequence loader rejects index mismatches") {
  fs::path dir = tmp_dir() / "seqbad";
  fs::remove_all(dir);
  std::vector<PointFrame> frames;
  PointFrame f = sample_frame(300, 10);
  f.frame_index = 5;  // claims to be frame 5 but sits at position 0
  frames.push_back(f);
  save_sequence(dir.string(), frames, "");
  CHECK_THROWS_AS(load_sequence(dir.string()), DataError);
}

TEST_CASE("dataset directory loads sequences in lexicographic order") {
  fs::path root = tmp_dir() / "dataset";
  fs::remove_all(root);
  fs::create_directories(root);
  for (int s = 0; s < 3; ++s) {
    std::vector<PointFrame> frames;
    PointFrame f = sample_frame(400 + static_cast<uint64_t>(s), 10 + s);
    f.frame_index = 0;
    frames.push_back(f);
    char name[16];
    std::snprintf(name, sizeof(name), "seq_%03d", s);
    save_sequence((root / name).string(), frames, "");
  }
  auto ds = load_dataset_dir(root.string());
  REQUIRE(ds.size() == 3);
  CHECK(ds[0][0].points.size() == 10);
  CHECK(ds[1][0].points.size() == 11);
  CHECK(ds[2][0].points.size() == 12);
  CHECK_THROWS_AS(load_dataset_dir((root / "missing").string()), DataError);
}

TEST_CASE("checkpoint round trip restores parameters, moments, step, rng") {
  fs::path p = tmp_dir() / "ck.tmck";
  ModelConfig m;
  m.d_model = 8;
  m.heads = 2;
  m.encoder_blocks = 1;
  m.diffusion_layers = 1;
  m.k_pred = 4;
  m.k_gt = 6;
  Rng rng(500);
  ParamStore store = build_params(m, rng);
  store.step = 17;
  // dirty the moments so they round trip too
  for (auto& s : store.slots()) {
    s.m.assign(s.t.impl->data.size(), 0.25);
    s.v.assign(s.t.impl->data.size(), 0.5);
  }
  Rng stream(777);
  stream.uniform();  // advance off the seed state
  save_checkpoint(p.string(), store, "echo-text", stream);

  Checkpoint ck = load_checkpoint(p.string());
  CHECK(ck.step == 17);
  CHECK(ck.config_text == "echo-text");
  CHECK(ck.rng_state == stream.state());
  REQUIRE(ck.entries.size() == store.slots().size());

  Rng rng2(500);
  ParamStore store2 = build_params(m, rng2);
  Rng stream2(1);
  apply_checkpoint(ck, store2, stream2);
  CHECK(store2.step == 17);
  CHECK(stream2.state() == stream.state());
  for (size_t i = 0; i < store.slots().size(); ++i) {
    const auto& a = store.slots()[i];
    const auto& b = store2.slots()[i];
    CHECK(a.name == b.name);
    for (int64_t j = 0; j < a.t.numel(); ++j) {
      // save quantized the live store, so the values agree exactly
      CHECK(a.t.data()[j] == b.t.data()[j]);
      CHECK(a.t.data()[j] == f32(a.t.data()[j]));
    }
    REQUIRE(b.m.size() == a.m.size());
    CHECK(b.m[0] == 0.25);
    CHECK(b.v[0] == 0.5);
  }

  // save -> load -> save produces byte-identical files
  fs::path p2 = tmp_dir() / "ck2.tmck";
  save_checkpoint(p2.string(), store2, ck.config_text, stream2);
  CHECK(slurp(p) == slurp(p2));
}

TEST_CASE("checkpoint magic and layout are pinned") {
  fs::path p = tmp_dir() / "ckg.tmck";
  ModelConfig m;
  m.d_model = 8;
  m.heads = 2;
  m.encoder_blocks = 1;
  m.diffusion_layers = 1;
  m.k_pred = 4;
  m.k_gt = 6;
  Rng rng(501);
  ParamStore store = build_params(m, rng);
  save_checkpoint(p.string(), store, "c", Rng(1));
  std::string b = slurp(p);
  CHECK(b.substr(0, 4) == "TMCK");
  CHECK(static_cast<unsigned char>(b[4]) == 1);
  CHECK(static_cast<unsigned char>(b[5]) == 0);
}

TEST_CASE("checkpoint reader failure modes") {
  fs::path dir = tmp_dir();
  ModelConfig m;
  m.d_model = 8;
  m.heads = 2;
  m.encoder_blocks = 1;
  m.diffusion_layers = 1;
  m.k_pred = 4;
  m.k_gt = 6;
  Rng rng(502);
  ParamStore store = build_params(m, rng);
  fs::path good = dir / "ok.tmck";
  save_checkpoint(good.string(), store, "c", Rng(1));
  std::string bytes = slurp(good);

  SUBCASE("bad magic") {
    std::string b = bytes;
    b[1] = 'x';
    spit(dir / "ckbad.tmck", b);
    CHECK_THROWS_WITH_AS(load_checkpoint((dir / "ckbad.tmck").string()),
                         doctest::Contains("magic"), DataError);
  }
  SUBCASE("truncation") {
    spit(dir / "cktrunc.tmck", bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_checkpoint((dir / "cktrunc.tmck").string()), DataError);
  }
  SUBCASE("trailing garbage") {
    spit(dir / "cktrail.tmck", bytes + "!");
    CHECK_THROWS_WITH_AS(load_checkpoint((dir / "cktrail.tmck").string()),
                         doctest::Contains("trailing"), DataError);
  }
  SUBCASE("name-set mismatch is spelled out") {
    Checkpoint ck = load_checkpoint(good.string());
    ModelConfig bigger = m;
    bigger.encoder_blocks = 2;
    Rng r2(503);
    ParamStore store2 = build_params(bigger, r2);
    Rng stream(1);
    CHECK_THROWS_WITH_AS(apply_checkpoint(ck, store2, stream), doctest::Contains("enc1"),
                         DataError);
  }
  SUBCASE("shape mismatch is rejected") {
    Checkpoint ck = load_checkpoint(good.string());
    ck.entries[0].shape = Shape{1, 1};
    ck.entries[0].data.assign(1, 0.0);
    ck.entries[0].m.assign(1, 0.0);
    ck.entries[0].v.assign(1, 0.0);
    Rng r2(504);
    ParamStore store2 = build_params(m, r2);
    Rng stream(1);
    CHECK_THROWS_AS(apply_checkpoint(ck, store2, stream), DataError);
  }
}

TEST_SUITE_END();
