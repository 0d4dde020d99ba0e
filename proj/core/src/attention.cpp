#include "tmae/attention.hpp"

#include <cmath>

#include "tmae/error.hpp"

namespace tmae {

Tensor positional_encoding(const std::vector<std::pair<int32_t, int32_t>>& coords, int64_t d,
                           double temperature) {
  if (d % 4 != 0) throw UsageError("positional_encoding: d must be divisible by 4");
  int64_t p = static_cast<int64_t>(coords.size());
  int64_t pairs = d / 4;
  Tensor pe = Tensor::zeros({p, d});
  double* pd = pe.data();
  for (int64_t r = 0; r < p; ++r) {
    double ix = static_cast<double>(coords[static_cast<size_t>(r)].first);
    double iy = static_cast<double>(coords[static_cast<size_t>(r)].second);
    double* row = pd + r * d;
    for (int64_t k = 0; k < pairs; ++k) {
      double w = std::pow(temperature, -static_cast<double>(k) / static_cast<double>(pairs));
      row[2 * k] = std::sin(ix * w);
      row[2 * k + 1] = std::cos(ix * w);
      row[d / 2 + 2 * k] = std::sin(iy * w);
      row[d / 2 + 2 * k + 1] = std::cos(iy * w);
    }
  }
  return pe;
}

Tensor mha(Tape& tp, const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
           const AttnParams& p, int64_t heads, std::vector<double>* scores_avg) {
  int64_t d = q_in.dim(1);
  if (d % heads != 0) throw UsageError("mha: d_model must be divisible by heads");
  if (k_in.dim(0) != v_in.dim(0))
    throw NumericError("mha: key/value row mismatch " + shape_str(k_in.shape()) + " vs " +
                       shape_str(v_in.shape()));
  int64_t dh = d / heads;
  int64_t nq = q_in.dim(0), nk = k_in.dim(0);
  Tensor q = linear(tp, q_in, p.wq, p.bq);
  Tensor k = linear(tp, k_in, p.wk, p.bk);
  Tensor v = linear(tp, v_in, p.wv, p.bv);
  if (scores_avg) scores_avg->assign(static_cast<size_t>(nq * nk), 0.0);
  std::vector<Tensor> outs;
  outs.reserve(static_cast<size_t>(heads));
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int64_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(tp, q, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(tp, k, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(tp, v, h * dh, (h + 1) * dh);
    Tensor s = scale(tp, matmul(tp, qh, transpose2d(tp, kh)), inv_sqrt);
    Tensor a = softmax_lastdim(tp, s);
    if (scores_avg) {
      const double* ad = a.data();
      double inv_h = 1.0 / static_cast<double>(heads);
      for (int64_t i = 0; i < nq * nk; ++i) (*scores_avg)[static_cast<size_t>(i)] += ad[i] * inv_h;
    }
    outs.push_back(matmul(tp, a, vh));
  }
  return linear(tp, concat_cols(tp, outs), p.wo, p.bo);
}

namespace {
// LN2(MLP(LN1(x)) + x), the shared block tail
Tensor block_tail(Tape& tp, const Tensor& x, const AttnParams& p, double ln_eps) {
  Tensor h = layer_norm(tp, x, p.ln1_g, p.ln1_b, ln_eps);
  h = linear(tp, h, p.mlp_w1, p.mlp_b1);
  h = gelu(tp, h);
  h = linear(tp, h, p.mlp_w2, p.mlp_b2);
  Tensor r = add(tp, h, x);
  return layer_norm(tp, r, p.ln2_g, p.ln2_b, ln_eps);
}
}  // namespace

Tensor sra_block(Tape& tp, const Tensor& tokens, const Tensor& pe, const WindowPartition& part,
                 const AttnParams& p, int64_t heads, double ln_eps) {
  if (tokens.dim(0) != pe.dim(0) || tokens.dim(1) != pe.dim(1))
    throw NumericError("sra_block: token/pe shape mismatch " + shape_str(tokens.shape()) +
                       " vs " + shape_str(pe.shape()));
  std::vector<Tensor> outs;
  std::vector<int64_t> order;
  outs.reserve(part.windows.size());
  for (const auto& rows : part.windows) {
    Tensor xw = gather_rows(tp, tokens, rows);
    Tensor pew = gather_rows(tp, pe, rows);
    Tensor qk = add(tp, xw, pew);
    Tensor att = mha(tp, qk, qk, xw, p, heads);
    Tensor x1 = add(tp, xw, att);
    outs.push_back(block_tail(tp, x1, p, ln_eps));
    order.insert(order.end(), rows.begin(), rows.end());
  }
  return scatter_rows(tp, concat_rows(tp, outs), order, tokens.dim(0));
}

Tensor srca_block(Tape& tp, const Tensor& f_cur, const Tensor& pe_cur, const Tensor& f_prev,
                  const Tensor& pe_prev, const JointPartition& part, const AttnParams& p,
                  int64_t heads, double ln_eps, std::vector<WindowScores>* dump) {
  std::vector<Tensor> outs;
  std::vector<int64_t> order;
  outs.reserve(part.windows.size());
  for (const auto& w : part.windows) {
    if (w.cur_rows.empty())
      throw NumericError("srca_block: window without query rows");
    Tensor qw = gather_rows(tp, f_cur, w.cur_rows);
    Tensor out_w;
    if (w.prev_rows.empty()) {
      out_w = block_tail(tp, qw, p, ln_eps);
    } else {
      Tensor q_pos = add(tp, qw, gather_rows(tp, pe_cur, w.cur_rows));
      Tensor kw = gather_rows(tp, f_prev, w.prev_rows);
      Tensor k_pos = add(tp, kw, gather_rows(tp, pe_prev, w.prev_rows));
      std::vector<double> sc;
      Tensor fhat = mha(tp, q_pos, k_pos, kw, p, heads, dump ? &sc : nullptr);
      if (dump) dump->push_back(WindowScores{w.cur_rows, w.prev_rows, std::move(sc)});
      out_w = block_tail(tp, fhat, p, ln_eps);
    }
    outs.push_back(out_w);
    order.insert(order.end(), w.cur_rows.begin(), w.cur_rows.end());
  }
  return scatter_rows(tp, concat_rows(tp, outs), order, f_cur.dim(0));
}

}  // namespace tmae
