#pragma once
#include <cstdint>
#include <vector>

#include "tmae/tensor.hpp"
#include "tmae/windows.hpp"

namespace tmae {

// Sinusoidal encoding of integer cell coords (ix,iy) into d channels:
// first half encodes ix, second half iy, each as interleaved sin/cos pairs
// with geometrically decaying frequencies. d must be divisible by 4.
// Output is a constant [P,d] tensor (no gradient flows into it).
Tensor positional_encoding(const std::vector<std::pair<int32_t, int32_t>>& coords, int64_t d,
                           double temperature = 10000.0);

// one transformer block's parameters, shared by self and cross variants
struct AttnParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;          // [d,d] / [d]
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;          // [d,4d] style expansion
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;              // [d]
};

// softmax(Q Wq (K Wk)^T / sqrt(d/h)) V Wv per head, heads concatenated, then
// Wo. q_in [nq,d], k_in and v_in [nk,d]. When scores_avg is given it
// receives the nq*nk head-averaged post-softmax scores (values only).
Tensor mha(Tape& tp, const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
           const AttnParams& p, int64_t heads, std::vector<double>* scores_avg = nullptr);

// Windowed self-attention block over one frame's tokens:
//   x' = x + MHA(x+pe, x+pe, x)   within each window
//   out = LN2(MLP(LN1(x')) + x')
Tensor sra_block(Tape& tp, const Tensor& tokens, const Tensor& pe, const WindowPartition& part,
                 const AttnParams& p, int64_t heads, double ln_eps);

struct WindowScores {
  std::vector<int64_t> cur_rows;
  std::vector<int64_t> prev_rows;
  std::vector<double> scores;  // |cur_rows| x |prev_rows|, head-averaged
};

// Windowed cross-attention block. Per window: queries are later-frame tokens
// plus their positional term, keys are earlier-frame tokens plus theirs, and
// values are the earlier-frame tokens without any positional term:
//   f_hat = MHA(f_cur+pe_cur, f_prev+pe_prev, f_prev)
//   out   = LN2(MLP(LN1(f_hat)) + f_hat)
// The residual wraps f_hat alone; queries contribute only through attention
// weights, so the output is assembled from earlier-frame content. Windows
// without earlier-frame rows skip the MHA: out = LN2(MLP(LN1(f_cur)) + f_cur).
Tensor srca_block(Tape& tp, const Tensor& f_cur, const Tensor& pe_cur, const Tensor& f_prev,
                  const Tensor& pe_prev, const JointPartition& part, const AttnParams& p,
                  int64_t heads, double ln_eps, std::vector<WindowScores>* dump = nullptr);

}  // namespace tmae
