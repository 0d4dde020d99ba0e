#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include "tmae/attention.hpp"
#include "tmae/error.hpp"
#include "tmae/gradcheck.hpp"
#include "tmae/rng.hpp"

using namespace tmae;

namespace {

AttnParams make_params(int64_t d, Rng& rng) {
  AttnParams p;
  double s = 1.0 / std::sqrt(static_cast<double>(d));
  p.wq = Tensor::randn({d, d}, rng, s, true);
  p.bq = Tensor::randn({d}, rng, 0.1, true);
  p.wk = Tensor::randn({d, d}, rng, s, true);
  p.bk = Tensor::randn({d}, rng, 0.1, true);
  p.wv = Tensor::randn({d, d}, rng, s, true);
  p.bv = Tensor::randn({d}, rng, 0.1, true);
  p.wo = Tensor::randn({d, d}, rng, s, true);
  p.bo = Tensor::randn({d}, rng, 0.1, true);
  p.mlp_w1 = Tensor::randn({d, 4 * d}, rng, s, true);
  p.mlp_b1 = Tensor::randn({4 * d}, rng, 0.1, true);
  p.mlp_w2 = Tensor::randn({4 * d, d}, rng, 1.0 / std::sqrt(4.0 * d), true);
  p.mlp_b2 = Tensor::randn({d}, rng, 0.1, true);
  p.ln1_g = Tensor::full({d}, 1.0, true);
  p.ln1_b = Tensor::zeros({d}, true);
  p.ln2_g = Tensor::full({d}, 1.0, true);
  p.ln2_b = Tensor::zeros({d}, true);
  return p;
}

// ---- plain-loop reference implementation -----------------------------------

std::vector<double> ref_linear(const std::vector<double>& x, int64_t n, int64_t din,
                               const Tensor& w, const Tensor& b) {
  int64_t dout = w.dim(1);
  std::vector<double> y(static_cast<size_t>(n * dout), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < dout; ++j) {
      double acc = b.data()[j];
      for (int64_t k = 0; k < din; ++k)
        acc += x[static_cast<size_t>(i * din + k)] * w.data()[k * dout + j];
      y[static_cast<size_t>(i * dout + j)] = acc;
    }
  return y;
}

std::vector<double> ref_ln(const std::vector<double>& x, int64_t n, int64_t d, const Tensor& g,
                           const Tensor& b, double eps) {
  std::vector<double> y(x.size());
  for (int64_t i = 0; i < n; ++i) {
    double mu = 0;
    for (int64_t j = 0; j < d; ++j) mu += x[static_cast<size_t>(i * d + j)];
    mu /= static_cast<double>(d);
    double var = 0;
    for (int64_t j = 0; j < d; ++j) {
      double c = x[static_cast<size_t>(i * d + j)] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double inv = 1.0 / std::sqrt(var + eps);
    for (int64_t j = 0; j < d; ++j)
      y[static_cast<size_t>(i * d + j)] =
          (x[static_cast<size_t>(i * d + j)] - mu) * inv * g.data()[j] + b.data()[j];
  }
  return y;
}

double ref_gelu(double v) {
  double u = 0.7978845608028654 * (v + 0.044715 * v * v * v);
  return 0.5 * v * (1.0 + std::tanh(u));
}

// dense attention with an explicit allowed mask; -inf outside
std::vector<double> ref_mha_masked(const std::vector<double>& qin,
                                   const std::vector<double>& kin,
                                   const std::vector<double>& vin, int64_t nq, int64_t nk,
                                   const AttnParams& p, int64_t heads,
                                   const std::vector<char>& allowed) {
  int64_t d = p.wq.dim(0), dh = d / heads;
  auto q = ref_linear(qin, nq, d, p.wq, p.bq);
  auto k = ref_linear(kin, nk, d, p.wk, p.bk);
  auto v = ref_linear(vin, nk, d, p.wv, p.bv);
  std::vector<double> concat(static_cast<size_t>(nq * d), 0.0);
  double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int64_t h = 0; h < heads; ++h) {
    for (int64_t i = 0; i < nq; ++i) {
      std::vector<double> s(static_cast<size_t>(nk), -std::numeric_limits<double>::infinity());
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t j = 0; j < nk; ++j) {
        if (!allowed[static_cast<size_t>(i * nk + j)]) continue;
        double acc = 0;
        for (int64_t c = 0; c < dh; ++c)
          acc += q[static_cast<size_t>(i * d + h * dh + c)] *
                 k[static_cast<size_t>(j * d + h * dh + c)];
        s[static_cast<size_t>(j)] = acc * inv;
        mx = std::max(mx, s[static_cast<size_t>(j)]);
      }
      double z = 0;
      for (int64_t j = 0; j < nk; ++j)
        if (allowed[static_cast<size_t>(i * nk + j)]) {
          s[static_cast<size_t>(j)] = std::exp(s[static_cast<size_t>(j)] - mx);
          z += s[static_cast<size_t>(j)];
        }
      for (int64_t c = 0; c < dh; ++c) {
        double acc = 0;
        for (int64_t j = 0; j < nk; ++j)
          if (allowed[static_cast<size_t>(i * nk + j)])
            acc += s[static_cast<size_t>(j)] / z * v[static_cast<size_t>(j * d + h * dh + c)];
        concat[static_cast<size_t>(i * d + h * dh + c)] = acc;
      }
    }
  }
  return ref_linear(concat, nq, d, p.wo, p.bo);
}

std::vector<double> ref_tail(const std::vector<double>& x, int64_t n, const AttnParams& p,
                             double eps) {
  int64_t d = p.wq.dim(0);
  auto h = ref_ln(x, n, d, p.ln1_g, p.ln1_b, eps);
  auto m1 = ref_linear(h, n, d, p.mlp_w1, p.mlp_b1);
  for (auto& v : m1) v = ref_gelu(v);
  auto m2 = ref_linear(m1, n, 4 * d, p.mlp_w2, p.mlp_b2);
  for (size_t i = 0; i < m2.size(); ++i) m2[i] += x[i];
  return ref_ln(m2, n, d, p.ln2_g, p.ln2_b, eps);
}

std::vector<double> tensor_vec(const Tensor& t) {
  return {t.data(), t.data() + t.numel()};
}

std::vector<std::pair<int32_t, int32_t>> random_cells(Rng& rng, int n, int32_t extent) {
  std::set<std::pair<int32_t, int32_t>> uniq;
  while (static_cast<int>(uniq.size()) < n)
    uniq.insert({static_cast<int32_t>(rng.uniform_int(extent)),
                 static_cast<int32_t>(rng.uniform_int(extent))});
  return {uniq.begin(), uniq.end()};
}

}  // namespace

TEST_SUITE_BEGIN("attention");

TEST_CASE("positional encoding values and shape") {
  std::vector<std::pair<int32_t, int32_t>> coords{{3, 7}, {0, 0}};
  const int64_t d = 8;
  const double T = 100.0;
  Tensor pe = positional_encoding(coords, d, T);
  REQUIRE(pe.shape() == Shape{2, d});
  CHECK_FALSE(pe.requires_grad());
  // pairs = d/4 = 2, frequencies T^(-k/pairs)
  for (int64_t k = 0; k < 2; ++k) {
    double w = std::pow(T, -static_cast<double>(k) / 2.0);
    CHECK(pe.data()[2 * k] == doctest::Approx(std::sin(3.0 * w)).epsilon(1e-12));
    CHECK(pe.data()[2 * k + 1] == doctest::Approx(std::cos(3.0 * w)).epsilon(1e-12));
    CHECK(pe.data()[4 + 2 * k] == doctest::Approx(std::sin(7.0 * w)).epsilon(1e-12));
    CHECK(pe.data()[4 + 2 * k + 1] == doctest::Approx(std::cos(7.0 * w)).epsilon(1e-12));
  }
  // (0,0): sin 0, cos 1 everywhere
  for (int64_t k = 0; k < 2; ++k) {
    CHECK(pe.data()[d + 2 * k] == doctest::Approx(0.0));
    CHECK(pe.data()[d + 2 * k + 1] == doctest::Approx(1.0));
  }
}

TEST_CASE("positional encoding distinguishes nearby cells") {
  std::vector<std::pair<int32_t, int32_t>> coords;
  for (int32_t x = 0; x < 20; ++x)
    for (int32_t y = 0; y < 20; ++y) coords.push_back({x, y});
  Tensor pe = positional_encoding(coords, 16);
  std::set<std::vector<double>> uniq;
  for (size_t r = 0; r < coords.size(); ++r)
    uniq.insert(std::vector<double>(pe.data() + r * 16, pe.data() + (r + 1) * 16));
  CHECK(uniq.size() == coords.size());
}

TEST_CASE("positional encoding requires d divisible by 4") {
  std::vector<std::pair<int32_t, int32_t>> coords{{0, 0}};
  CHECK_THROWS_AS(positional_encoding(coords, 6), UsageError);
}

TEST_CASE("mha matches the dense reference without a mask") {
  Rng rng(60);
  const int64_t d = 8, heads = 2, nq = 5, nk = 7;
  AttnParams p = make_params(d, rng);
  Tensor q = Tensor::randn({nq, d}, rng, 1.0, false);
  Tensor k = Tensor::randn({nk, d}, rng, 1.0, false);
  Tensor v = Tensor::randn({nk, d}, rng, 1.0, false);
  Tape tp;
  std::vector<double> scores;
  Tensor out = mha(tp, q, k, v, p, heads, &scores);
  REQUIRE(out.shape() == Shape{nq, d});
  std::vector<char> allowed(static_cast<size_t>(nq * nk), 1);
  auto ref = ref_mha_masked(tensor_vec(q), tensor_vec(k), tensor_vec(v), nq, nk, p, heads,
                            allowed);
  for (int64_t i = 0; i < out.numel(); ++i)
    CHECK(std::fabs(out.data()[i] - ref[static_cast<size_t>(i)]) < 1e-10);
  // head-averaged scores: one distribution per query row
  REQUIRE(scores.size() == static_cast<size_t>(nq * nk));
  for (int64_t i = 0; i < nq; ++i) {
    double row = 0;
    for (int64_t j = 0; j < nk; ++j) {
      CHECK(scores[static_cast<size_t>(i * nk + j)] >= 0.0);
      row += scores[static_cast<size_t>(i * nk + j)];
    }
    CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("windowed self-attention equals dense attention with a window mask") {
  Rng rng(61);
  const int64_t d = 8, heads = 2;
  AttnParams p = make_params(d, rng);
  for (bool shifted : {false, true}) {
    auto coords = random_cells(rng, 24, 12);
    int64_t n = static_cast<int64_t>(coords.size());
    WindowPartition part = partition_windows(coords, 4, 4, shifted);
    Tensor x = Tensor::randn({n, d}, rng, 1.0, false);
    Tensor pe = positional_encoding(coords, d);
    Tape tp;
    Tensor out = sra_block(tp, x, pe, part, p, heads, 1e-5);
    REQUIRE(out.shape() == Shape{n, d});

    // dense oracle: attention allowed only inside a window
    std::vector<char> allowed(static_cast<size_t>(n * n), 0);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j)
        if (part.window_of[static_cast<size_t>(i)] == part.window_of[static_cast<size_t>(j)])
          allowed[static_cast<size_t>(i * n + j)] = 1;
    auto xv = tensor_vec(x);
    auto pv = tensor_vec(pe);
    std::vector<double> xpe(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) xpe[i] = xv[i] + pv[i];
    auto att = ref_mha_masked(xpe, xpe, xv, n, n, p, heads, allowed);
    for (size_t i = 0; i < att.size(); ++i) att[i] += xv[i];
    auto ref = ref_tail(att, n, p, 1e-5);
    double worst = 0;
    for (int64_t i = 0; i < out.numel(); ++i)
      worst = std::max(worst, std::fabs(out.data()[i] - ref[static_cast<size_t>(i)]));
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("windowed cross-attention equals dense masked attention with query-free residual") {
  Rng rng(62);
  const int64_t d = 8, heads = 2;
  AttnParams p = make_params(d, rng);
  for (bool shifted : {false, true}) {
    auto cur = random_cells(rng, 18, 12);
    auto prev = random_cells(rng, 15, 12);
    int64_t nc = static_cast<int64_t>(cur.size()), np = static_cast<int64_t>(prev.size());
    JointPartition part = joint_group(prev, cur, 4, 4, shifted);
    Tensor f_cur = Tensor::randn({nc, d}, rng, 1.0, false);
    Tensor f_prev = Tensor::randn({np, d}, rng, 1.0, false);
    Tensor pe_cur = positional_encoding(cur, d);
    Tensor pe_prev = positional_encoding(prev, d);
    Tape tp;
    std::vector<WindowScores> dump;
    Tensor out = srca_block(tp, f_cur, pe_cur, f_prev, pe_prev, part, p, heads, 1e-5, &dump);
    REQUIRE(out.shape() == Shape{nc, d});

    // oracle: per cur row, attend over prev rows of its window; keyless rows
    // fall back to the cur token itself
    std::vector<int64_t> win_of_cur(static_cast<size_t>(nc), -1);
    for (size_t w = 0; w < part.windows.size(); ++w)
      for (int64_t r : part.windows[w].cur_rows) win_of_cur[static_cast<size_t>(r)] = static_cast<int64_t>(w);
    auto cv = tensor_vec(f_cur);
    auto pv = tensor_vec(f_prev);
    auto pec = tensor_vec(pe_cur);
    auto pep = tensor_vec(pe_prev);
    std::vector<double> q(cv.size());
    for (size_t i = 0; i < cv.size(); ++i) q[i] = cv[i] + pec[i];
    std::vector<double> kk(pv.size());
    for (size_t i = 0; i < pv.size(); ++i) kk[i] = pv[i] + pep[i];
    std::vector<char> allowed(static_cast<size_t>(nc * np), 0);
    for (const auto& w : part.windows)
      for (int64_t i : w.cur_rows)
        for (int64_t j : w.prev_rows) allowed[static_cast<size_t>(i * np + j)] = 1;
    auto att = ref_mha_masked(q, kk, pv, nc, np, p, heads, allowed);
    std::vector<double> fhat(static_cast<size_t>(nc * d));
    for (int64_t i = 0; i < nc; ++i) {
      bool keyed = false;
      for (int64_t j = 0; j < np; ++j) keyed |= allowed[static_cast<size_t>(i * np + j)] != 0;
      for (int64_t c = 0; c < d; ++c)
        fhat[static_cast<size_t>(i * d + c)] =
            keyed ? att[static_cast<size_t>(i * d + c)] : cv[static_cast<size_t>(i * d + c)];
    }
    auto ref = ref_tail(fhat, nc, p, 1e-5);
    double worst = 0;
    for (int64_t i = 0; i < out.numel(); ++i)
      worst = std::max(worst, std::fabs(out.data()[i] - ref[static_cast<size_t>(i)]));
    CHECK(worst < 1e-10);

    // dump covers exactly the keyed windows, rows normalized
    size_t keyed_windows = 0;
    for (const auto& w : part.windows)
      if (!w.prev_rows.empty()) ++keyed_windows;
    REQUIRE(dump.size() == keyed_windows);
    for (const auto& ws : dump) {
      REQUIRE(ws.scores.size() == ws.cur_rows.size() * ws.prev_rows.size());
      for (size_t i = 0; i < ws.cur_rows.size(); ++i) {
        double row = 0;
        for (size_t j = 0; j < ws.prev_rows.size(); ++j)
          row += ws.scores[i * ws.prev_rows.size() + j];
        CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("cross-attention output carries no query-side residual") {
  // one prev row per window: the attention distribution is a point mass, so
  // the block output must be identical for different cur token values
  Rng rng(63);
  const int64_t d = 8, heads = 2;
  AttnParams p = make_params(d, rng);
  std::vector<std::pair<int32_t, int32_t>> cur{{0, 0}, {5, 5}};
  std::vector<std::pair<int32_t, int32_t>> prev{{1, 1}, {4, 6}};
  JointPartition part = joint_group(prev, cur, 4, 4, false);
  REQUIRE(part.windows.size() == 2);
  Tensor f_prev = Tensor::randn({2, d}, rng, 1.0, false);
  Tensor pe_cur = positional_encoding(cur, d);
  Tensor pe_prev = positional_encoding(prev, d);
  Tensor a = Tensor::randn({2, d}, rng, 1.0, false);
  Tensor b = Tensor::randn({2, d}, rng, 1.0, false);
  Tape t1, t2;
  Tensor o1 = srca_block(t1, a, pe_cur, f_prev, pe_prev, part, p, heads, 1e-5);
  Tensor o2 = srca_block(t2, b, pe_cur, f_prev, pe_prev, part, p, heads, 1e-5);
  for (int64_t i = 0; i < o1.numel(); ++i)
    CHECK(o1.data()[i] == doctest::Approx(o2.data()[i]).epsilon(1e-14));
}

TEST_CASE("cross-attention output depends on prev content") {
  Rng rng(64);
  const int64_t d = 8, heads = 2;
  AttnParams p = make_params(d, rng);
  std::vector<std::pair<int32_t, int32_t>> cells{{0, 0}, {1, 1}, {2, 2}};
  JointPartition part = joint_group(cells, cells, 4, 4, false);
  Tensor f_cur = Tensor::randn({3, d}, rng, 1.0, false);
  Tensor pa = Tensor::randn({3, d}, rng, 1.0, false);
  Tensor pb = Tensor::randn({3, d}, rng, 1.0, false);
  Tensor pe = positional_encoding(cells, d);
  Tape t1, t2;
  Tensor o1 = srca_block(t1, f_cur, pe, pa, pe, part, p, heads, 1e-5);
  Tensor o2 = srca_block(t2, f_cur, pe, pb, pe, part, p, heads, 1e-5);
  double diff = 0;
  for (int64_t i = 0; i < o1.numel(); ++i)
    diff = std::max(diff, std::fabs(o1.data()[i] - o2.data()[i]));
  CHECK(diff > 1e-6);
}

TEST_CASE("gradients flow through windowed blocks") {
  Rng rng(65);
  const int64_t d = 8, heads = 2;
  AttnParams p = make_params(d, rng);
  auto coords = random_cells(rng, 10, 8);
  int64_t n = static_cast<int64_t>(coords.size());
  WindowPartition part = partition_windows(coords, 4, 4, false);
  Tensor x = Tensor::randn({n, d}, rng, 1.0, true);
  x.set_name("x");
  Tensor pe = positional_encoding(coords, d);
  auto eval = [&](bool with_grad) -> double {
    Tape tp;
    Tensor out = sra_block(tp, x, pe, part, p, heads, 1e-5);
    Tensor loss = sum_all(tp, mul(tp, out, out));
    if (with_grad) {
      x.clear_grad();
      for (Tensor* t : {&p.wq, &p.bq, &p.wk, &p.bk, &p.wv, &p.bv, &p.wo, &p.bo, &p.mlp_w1,
                        &p.mlp_b1, &p.mlp_w2, &p.mlp_b2, &p.ln1_g, &p.ln1_b, &p.ln2_g,
                        &p.ln2_b})
        t->clear_grad();
      tp.backward(loss);
    }
    return loss.data()[0];
  };
  Rng pick(66);
  GradCheckReport rep =
      grad_check(eval, {x, p.wq, p.wv, p.wo, p.mlp_w1, p.ln1_g, p.ln2_b}, 1e-5, 1e-5, pick, 24);
  CHECK(rep.pass);
}

TEST_SUITE_END();
