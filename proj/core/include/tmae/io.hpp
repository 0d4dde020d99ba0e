#pragma once
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tmae/geometry.hpp"
#include "tmae/model.hpp"

namespace tmae {

// Frame container, magic "PCSQ" version 1, little-endian:
//   magic[4] u16_version u32_frame_index f64_pose[16] u32_count
//   count * (f32 x, f32 y, f32 z, f32 intensity)
// Coordinates are stored at f32 and widen to f64 in memory. Malformed input
// reports the byte offset of the first problem.
void save_frame(const std::string& path, const PointFrame& frame);
PointFrame load_frame(const std::string& path);

// A sequence directory holds frame_000000.pcsq .. and a sequence.meta text
// file (frame count plus a config echo).
void save_sequence(const std::string& dir, const std::vector<PointFrame>& frames,
                   const std::string& meta_echo);
std::vector<PointFrame> load_sequence(const std::string& dir);

// dataset root: seq_000, seq_001, ... (lexicographic)
std::vector<std::vector<PointFrame>> load_dataset_dir(const std::string& dir);

// Checkpoint, magic "TMCK" version 1, little-endian:
//   magic[4] u16_version u64_step u64_rng[4] u32_config_len config_bytes
//   u32_param_count, then per parameter (registration order):
//     u16_name_len name u32_rank u32_dims[rank]
//     f32 data[numel] f32 adam_m[numel] f32 adam_v[numel]
// Values are stored at f32. Saving also rounds the live parameters and
// moments to f32 in place, so the saving run and a run resumed from the file
// continue from identical state.
void save_checkpoint(const std::string& path, ParamStore& store, const std::string& config_echo,
                     const Rng& rng);

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> data, m, v;
};

struct Checkpoint {
  int64_t step = 0;
  std::array<uint64_t, 4> rng_state{};
  std::string config_text;
  std::vector<CheckpointEntry> entries;
};

Checkpoint load_checkpoint(const std::string& path);

// copies entries into an already-built store; name sets and shapes must
// match exactly (missing/extra names are listed in the error)
void apply_checkpoint(const Checkpoint& ck, ParamStore& store, Rng& rng);

}  // namespace tmae
