#pragma once
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "tmae/attention.hpp"
#include "tmae/pillars.hpp"
#include "tmae/tensor.hpp"

namespace tmae {

struct ModelConfig {
  int64_t d_model = 64;
  int64_t heads = 4;
  int64_t encoder_blocks = 4;
  int64_t diffusion_layers = 3;
  int64_t k_pred = 16;
  int64_t k_gt = 64;
  double mask_ratio = 0.75;
  int64_t win_x = 8, win_y = 8;
  double pe_temperature = 10000.0;
  double ln_eps = 1e-5;
  // false runs the single-frame pipeline (concatenation baseline): no
  // cross-attention parameters exist and the forward skips that stage
  bool use_wca = true;

  void validate() const;
};

// Named parameters in registration order plus per-tensor optimizer moments
// and the global step counter; this is exactly the training state a
// checkpoint captures.
class ParamStore {
 public:
  struct Slot {
    std::string name;
    Tensor t;
    std::vector<double> m, v;  // first/second moments, sized lazily
  };

  Tensor create(const std::string& name, Shape shape, double init_std, Rng& rng);
  Tensor create_filled(const std::string& name, Shape shape, double fill);
  Tensor get(const std::string& name) const;
  bool has(const std::string& name) const;
  Slot& slot(const std::string& name);
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }
  void zero_grads();
  std::vector<Tensor> all_params() const;
  int64_t total_scalars() const;

  int64_t step = 0;

 private:
  std::vector<Slot> slots_;
  std::unordered_map<std::string, size_t> index_;
};

// Parameter layout (registration order): pillar embedding, encoder blocks
// enc0..N-1, cross blocks wca0/wca1 (when enabled), diffusion convs, the
// reconstruction head. Weights are N(0, 1/sqrt(fan_in)); embed/conv/head
// biases are N(0, 0.02) to break the all-zero prediction degeneracy of
// unreached masked cells; attention and norm biases zero, norm scales one.
// Head x/y output biases are widened to N(0, 0.3) so the k_pred predicted
// points start separated (coincident points share chamfer gradients and
// cannot spread).
ParamStore build_params(const ModelConfig& cfg, Rng& rng);

AttnParams attn_params(const ParamStore& store, const std::string& prefix);

// per-point features -> two linear layers (expansion at d/2) -> mean pool
// per pillar
Tensor embed_pillars(Tape& tp, const PointFrame& frame, const PillarSet& pillars,
                     const ParamStore& store, const GridConfig& grid, const ModelConfig& cfg);

// windowed self-attention encoder; blocks alternate unshifted/shifted
Tensor encode_frame(Tape& tp, const Tensor& tokens,
                    const std::vector<std::pair<int32_t, int32_t>>& coords,
                    const ParamStore& store, const ModelConfig& cfg);

// two cross-attention passes: unshifted windows, then shifted. The second
// pass queries with the first pass's output but keys/values stay the
// original earlier-frame tokens. Scores (head-averaged, first pass only)
// land in dump when given.
Tensor wca(Tape& tp, const Tensor& f_cur,
           const std::vector<std::pair<int32_t, int32_t>>& cur_coords, const Tensor& f_prev,
           const std::vector<std::pair<int32_t, int32_t>>& prev_coords, const ParamStore& store,
           const ModelConfig& cfg, std::vector<WindowScores>* dump = nullptr);

// visible tokens scattered onto the BEV grid (zeros elsewhere), then the
// diffusion convs (ReLU between layers, none after the last)
Tensor densify_and_diffuse(Tape& tp, const Tensor& tokens,
                           const std::vector<std::pair<int32_t, int32_t>>& cells,
                           const ParamStore& store, const GridConfig& grid,
                           const ModelConfig& cfg);

// gather masked cells from the diffused map, MLP d -> 2d -> 3*k_pred, tanh;
// rows are predicted point sets in normalized cell coordinates
Tensor reconstruct(Tape& tp, const Tensor& bev,
                   const std::vector<std::pair<int32_t, int32_t>>& masked_cells,
                   const ParamStore& store, const ModelConfig& cfg);

struct ForwardStats {
  int64_t prev_pillars = 0;
  int64_t cur_pillars = 0;
  int64_t masked = 0;
  int64_t visible = 0;
  double loss = 0.0;
};

// Full two-frame objective. RNG order: mask split first, then target
// sampling; both frames must already be in the same coordinate frame.
Tensor forward_tmae(Tape& tp, const PointFrame& prev, const PointFrame& cur,
                    const ParamStore& store, const ModelConfig& cfg, const GridConfig& grid,
                    Rng& rng, ForwardStats* stats = nullptr,
                    std::vector<WindowScores>* dump = nullptr);

// single-frame pipeline used by the concatenation baseline
Tensor forward_single(Tape& tp, const PointFrame& frame, const ParamStore& store,
                      const ModelConfig& cfg, const GridConfig& grid, Rng& rng,
                      ForwardStats* stats = nullptr);

}  // namespace tmae
