#pragma once
#include <cstdint>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "tmae/geometry.hpp"
#include "tmae/model.hpp"
#include "tmae/pillars.hpp"

namespace tmae {

struct TrainConfig {
  double max_lr = 3e-3;
  int64_t epochs = 4;
  int64_t steps_per_epoch = 50;
  int64_t batch_size = 1;
  double weight_decay = 0.01;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  uint64_t seed = 42;
  int64_t temporal_n = 6;     // temporal batch width
  double warmup_frac = 0.1;   // one-cycle warmup fraction
  double start_div = 10.0;    // initial lr = max_lr / start_div
  double final_div = 1000.0;  // final lr = max_lr / final_div
  int64_t inference_gap = 3;
  AugConfig aug;
  bool baseline_concat = false;

  void validate() const;
};

// Cosine one-cycle: ramps max_lr/start_div -> max_lr over the first
// floor(warmup_frac*total) steps, hits max_lr exactly at the warmup
// boundary, then cosine-decays to exactly max_lr/final_div at the last step.
double one_cycle_lr(int64_t step, int64_t total_steps, double max_lr, double warmup_frac,
                    double start_div, double final_div);

// Decoupled weight decay applied to the parameter before the moment update;
// bias-corrected Adam step after. Increments store.step once. lr = 0 leaves
// every parameter unchanged. Non-finite gradients are rejected, naming the
// offending tensor.
void adamw_step(ParamStore& store, double lr, const TrainConfig& cfg);

// Offsets (prev, cur) into an n-frame batch: prev uniform over the first
// third {0..ceil(n/3)-1}, cur uniform over the last third {ceil(2n/3)..n-1}.
std::pair<int64_t, int64_t> temporal_sample(int64_t n, Rng& rng);

struct Dataset {
  std::vector<std::vector<PointFrame>> sequences;
};

struct TrainResult {
  std::vector<double> losses;  // one per optimizer step of this run
  double final_loss = 0.0;
  int64_t steps_run = 0;
};

// Pretraining loop. Per step: pick a sequence and temporal batch, align the
// earlier frame into the later frame's coordinates, apply one shared
// augmentation to both, run the two-frame forward (or the single-frame
// concatenation baseline), backprop, AdamW with the one-cycle schedule.
// Metrics rows (step,epoch,lr,loss at 9 significant digits) stream to
// metrics_path; a checkpoint lands at ckpt_path at every epoch boundary.
// Saving quantizes live parameters and moments to storage precision so a
// resumed run continues bit-identically to an uninterrupted one; resume_from
// restores params, moments, step counter and RNG stream.
TrainResult pretrain(const Dataset& data, const GridConfig& grid, const ModelConfig& model,
                     const TrainConfig& train, const std::string& config_echo,
                     const std::string& ckpt_path, const std::string& metrics_path,
                     const std::string& resume_from = "");

struct GapSpec {
  bool random = false;
  int64_t gap = 3;
};

struct EvalStats {
  std::vector<double> per_frame;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
  int64_t frames = 0;
};

// Reconstruction quality over every frame with an available earlier frame
// (index >= 1). prev index is max(0, cur-gap): near sequence starts the
// earliest available frame substitutes. Masking and target draws come from
// a per-frame seed derived from eval_seed, independent of the gap choice, so
// different gap settings score identical masks. shuffled_prev pairs each
// frame with the same-index frame of the next sequence instead (a wrong
// "earlier frame" with matched statistics).
EvalStats eval_recon(ParamStore& params, const GridConfig& grid, const ModelConfig& model,
                     const Dataset& data, GapSpec gap, bool shuffled_prev, uint64_t eval_seed);

// CSV dump of first-pass cross-attention scores for one aligned frame pair,
// without masking: header cur_ix,cur_iy,prev_ix,prev_iy,score, one row per
// (query pillar, earlier-frame pillar) sharing a window. filter_box, when
// given, keeps only query pillars whose cell center (meters, later-frame
// coords) lies inside {x0,y0,x1,y1}. Returns rows written.
int64_t dump_attention(ParamStore& params, const GridConfig& grid, const ModelConfig& model,
                       const PointFrame& prev_aligned, const PointFrame& cur, std::ostream& out,
                       const double* filter_box = nullptr);

}  // namespace tmae
