#include "tmae/tensor.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <unordered_set>

#include "tmae/error.hpp"

namespace tmae {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

namespace {

#ifdef NDEBUG
bool g_finite_checks = false;
#else
bool g_finite_checks = true;
#endif

std::shared_ptr<TensorImpl> make_impl(Shape shape, bool rg) {
  auto p = std::make_shared<TensorImpl>();
  p->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  p->shape = std::move(shape);
  p->requires_grad = rg;
  return p;
}

void check_finite(const Tensor& t, const char* op) {
  if (!g_finite_checks) return;
  const double* d = t.data();
  int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(d[i])) {
      throw NumericError(std::string("op '") + op + "' produced non-finite value at flat index " +
                         std::to_string(i) + " (output shape " + shape_str(t.shape()) + ")");
    }
  }
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw NumericError(msg);
}

// grad of t, allocating zeros on first touch
std::vector<double>& g(std::shared_ptr<TensorImpl>& t) {
  if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
  return t->grad;
}

// true if the upstream grad exists (i.e. this output contributed to the loss)
bool has_g(const std::shared_ptr<TensorImpl>& t) { return !t->grad.empty(); }

}  // namespace

bool finite_checks_enabled() { return g_finite_checks; }
void set_finite_checks(bool on) { g_finite_checks = on; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return Tensor(make_impl(std::move(shape), requires_grad));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = v;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  require(shape_numel(shape) == static_cast<int64_t>(data.size()),
          "from_data: shape " + shape_str(shape) + " does not match data size " +
              std::to_string(data.size()));
  auto p = std::make_shared<TensorImpl>();
  p->shape = std::move(shape);
  p->data = std::move(data);
  p->requires_grad = requires_grad;
  return Tensor(p);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal(0.0, stddev);
  return t;
}

void Tensor::ensure_grad() {
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
}

void Tape::push(const char* op, std::shared_ptr<TensorImpl> out, std::function<void()> fn) {
  nodes_.push_back(Node{op, std::move(out), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  require(loss.defined(), "backward: undefined loss tensor");
  require(loss.numel() == 1,
          "backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  require(!consumed_, "backward: tape already consumed; rerun the forward pass first");
  require(!nodes_.empty(), "backward: empty tape (no recorded operations)");
  bool found = false;
  for (const auto& n : nodes_) {
    if (n.out == loss.impl) { found = true; break; }
  }
  require(found, "backward: loss was not produced by this tape (detached graph)");
  consumed_ = true;
  loss.impl->grad.assign(1, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
}

void Tape::clear() {
  nodes_.clear();
  consumed_ = false;
}

// ---------------------------------------------------------------------------
// elementwise

namespace {
const char* ew_name(EwKind k) {
  switch (k) {
    case EwKind::add: return "add";
    case EwKind::sub: return "sub";
    case EwKind::mul: return "mul";
    case EwKind::scale: return "scale";
    case EwKind::relu: return "relu";
    case EwKind::gelu: return "gelu";
    case EwKind::tanh: return "tanh";
  }
  return "?";
}

constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC1 = 0.044715;
}  // namespace

Tensor elementwise(Tape& tp, EwKind kind, const Tensor& x, const Tensor& y, double scalar) {
  require(x.defined(), "elementwise: undefined input");
  bool binary = (kind == EwKind::add || kind == EwKind::sub || kind == EwKind::mul);
  if (binary) {
    require(y.defined(), std::string("elementwise ") + ew_name(kind) + ": missing second input");
    require(x.shape() == y.shape(), std::string("elementwise ") + ew_name(kind) +
                                        ": shape mismatch " + shape_str(x.shape()) + " vs " +
                                        shape_str(y.shape()));
  } else {
    require(!y.defined(), std::string("elementwise ") + ew_name(kind) + ": unexpected second input");
  }

  bool rg = x.requires_grad() || (binary && y.requires_grad());
  Tensor out = Tensor::zeros(x.shape(), rg);
  int64_t n = x.numel();
  const double* xd = x.data();
  double* od = out.data();

  switch (kind) {
    case EwKind::add: {
      const double* yd = y.data();
      for (int64_t i = 0; i < n; ++i) od[i] = xd[i] + yd[i];
      break;
    }
    case EwKind::sub: {
      const double* yd = y.data();
      for (int64_t i = 0; i < n; ++i) od[i] = xd[i] - yd[i];
      break;
    }
    case EwKind::mul: {
      const double* yd = y.data();
      for (int64_t i = 0; i < n; ++i) od[i] = xd[i] * yd[i];
      break;
    }
    case EwKind::scale:
      for (int64_t i = 0; i < n; ++i) od[i] = xd[i] * scalar;
      break;
    case EwKind::relu:
      for (int64_t i = 0; i < n; ++i) od[i] = xd[i] > 0.0 ? xd[i] : 0.0;
      break;
    case EwKind::gelu:
      for (int64_t i = 0; i < n; ++i) {
        double v = xd[i];
        od[i] = 0.5 * v * (1.0 + std::tanh(kGeluC0 * (v + kGeluC1 * v * v * v)));
      }
      break;
    case EwKind::tanh:
      for (int64_t i = 0; i < n; ++i) od[i] = std::tanh(xd[i]);
      break;
    default:
      throw NumericError("elementwise: unknown kind");
  }
  check_finite(out, ew_name(kind));
  if (!rg) return out;

  auto xi = x.impl;
  auto yi = binary ? y.impl : nullptr;
  auto oi = out.impl;
  tp.push(ew_name(kind), oi, [kind, xi, yi, oi, scalar, n]() mutable {
    if (!has_g(oi)) return;
    const double* og = oi->grad.data();
    const double* xd = xi->data.data();
    switch (kind) {
      case EwKind::add: {
        if (xi->requires_grad) {
          double* xg = g(xi).data();
          for (int64_t i = 0; i < n; ++i) xg[i] += og[i];
        }
        if (yi->requires_grad) {
          double* yg = g(yi).data();
          for (int64_t i = 0; i < n; ++i) yg[i] += og[i];
        }
        break;
      }
      case EwKind::sub: {
        if (xi->requires_grad) {
          double* xg = g(xi).data();
          for (int64_t i = 0; i < n; ++i) xg[i] += og[i];
        }
        if (yi->requires_grad) {
          double* yg = g(yi).data();
          for (int64_t i = 0; i < n; ++i) yg[i] -= og[i];
        }
        break;
      }
      case EwKind::mul: {
        const double* yd = yi->data.data();
        if (xi->requires_grad) {
          double* xg = g(xi).data();
          for (int64_t i = 0; i < n; ++i) xg[i] += og[i] * yd[i];
        }
        if (yi->requires_grad) {
          double* yg = g(yi).data();
          for (int64_t i = 0; i < n; ++i) yg[i] += og[i] * xd[i];
        }
        break;
      }
      case EwKind::scale: {
        if (xi->requires_grad) {
          double* xg = g(xi).data();
          for (int64_t i = 0; i < n; ++i) xg[i] += og[i] * scalar;
        }
        break;
      }
      case EwKind::relu: {
        if (xi->requires_grad) {
          double* xg = g(xi).data();
          for (int64_t i = 0; i < n; ++i)
            if (xd[i] > 0.0) xg[i] += og[i];
        }
        break;
      }
      case EwKind::gelu: {
        if (xi->requires_grad) {
          double* xg = g(xi).data();
          for (int64_t i = 0; i < n; ++i) {
            double v = xd[i];
            double u = kGeluC0 * (v + kGeluC1 * v * v * v);
            double t = std::tanh(u);
            double sech2 = 1.0 - t * t;
            double du = kGeluC0 * (1.0 + 3.0 * kGeluC1 * v * v);
            xg[i] += og[i] * (0.5 * (1.0 + t) + 0.5 * v * sech2 * du);
          }
        }
        break;
      }
      case EwKind::tanh: {
        if (xi->requires_grad) {
          double* xg = g(xi).data();
          const double* od2 = oi->data.data();
          for (int64_t i = 0; i < n; ++i) xg[i] += og[i] * (1.0 - od2[i] * od2[i]);
        }
        break;
      }
    }
  });
  return out;
}

Tensor add(Tape& tp, const Tensor& x, const Tensor& y) { return elementwise(tp, EwKind::add, x, y); }
Tensor sub(Tape& tp, const Tensor& x, const Tensor& y) { return elementwise(tp, EwKind::sub, x, y); }
Tensor mul(Tape& tp, const Tensor& x, const Tensor& y) { return elementwise(tp, EwKind::mul, x, y); }
Tensor scale(Tape& tp, const Tensor& x, double s) {
  return elementwise(tp, EwKind::scale, x, Tensor(), s);
}
Tensor relu(Tape& tp, const Tensor& x) { return elementwise(tp, EwKind::relu, x); }
Tensor gelu(Tape& tp, const Tensor& x) { return elementwise(tp, EwKind::gelu, x); }
Tensor tanh_op(Tape& tp, const Tensor& x) { return elementwise(tp, EwKind::tanh, x); }

// ---------------------------------------------------------------------------
// matmul / transpose

namespace {
// C[m,n] += A[m,k]*B[k,n]; ikj order keeps both inner streams contiguous
void mm_acc(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* a = A + i * k;
    double* c = C + i * n;
    for (int64_t p = 0; p < k; ++p) {
      double av = a[p];
      const double* b = B + p * n;
      for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[m,n] += A^T[m,k]*B[k,n] with A stored [k,m]
void mm_acc_at(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n) {
  for (int64_t p = 0; p < k; ++p) {
    const double* a = A + p * m;
    const double* b = B + p * n;
    for (int64_t i = 0; i < m; ++i) {
      double av = a[i];
      double* c = C + i * n;
      for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[m,n] += A[m,k]*B^T[k,n] with B stored [n,k]
void mm_acc_bt(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* a = A + i * k;
    double* c = C + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const double* b = B + j * k;
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += a[p] * b[p];
      c[j] += acc;
    }
  }
}
}  // namespace

Tensor matmul(Tape& tp, const Tensor& a, const Tensor& b) {
  require(a.shape().size() == 2 && b.shape().size() == 2,
          "matmul: expects rank-2 inputs, got " + shape_str(a.shape()) + " and " +
              shape_str(b.shape()));
  require(a.dim(1) == b.dim(0), "matmul: inner dimension mismatch " + shape_str(a.shape()) +
                                    " x " + shape_str(b.shape()));
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  bool rg = a.requires_grad() || b.requires_grad();
  Tensor c = Tensor::zeros({m, n}, rg);
  mm_acc(a.data(), b.data(), c.data(), m, k, n);
  check_finite(c, "matmul");
  if (!rg) return c;

  auto ai = a.impl, bi = b.impl, ci = c.impl;
  tp.push("matmul", ci, [ai, bi, ci, m, k, n]() mutable {
    if (!has_g(ci)) return;
    const double* cg = ci->grad.data();
    if (ai->requires_grad) {
      // dA = dC * B^T
      mm_acc_bt(cg, bi->data.data(), g(ai).data(), m, n, k);
    }
    if (bi->requires_grad) {
      // dB = A^T * dC
      mm_acc_at(ai->data.data(), cg, g(bi).data(), k, m, n);
    }
  });
  return c;
}

Tensor transpose2d(Tape& tp, const Tensor& x) {
  require(x.shape().size() == 2, "transpose2d: expects rank-2 input, got " + shape_str(x.shape()));
  int64_t m = x.dim(0), n = x.dim(1);
  Tensor y = Tensor::zeros({n, m}, x.requires_grad());
  const double* xd = x.data();
  double* yd = y.data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) yd[j * m + i] = xd[i * n + j];
  if (!y.requires_grad()) return y;
  auto xi = x.impl, yi = y.impl;
  tp.push("transpose2d", yi, [xi, yi, m, n]() mutable {
    if (!has_g(yi)) return;
    const double* yg = yi->grad.data();
    double* xg = g(xi).data();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) xg[i * n + j] += yg[j * m + i];
  });
  return y;
}

// ---------------------------------------------------------------------------
// softmax / layer norm

Tensor softmax_lastdim(Tape& tp, const Tensor& x) {
  require(!x.shape().empty(), "softmax_lastdim: scalar input");
  int64_t d = x.shape().back();
  int64_t rows = x.numel() / d;
  Tensor y = Tensor::zeros(x.shape(), x.requires_grad());
  const double* xd = x.data();
  double* yd = y.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = xd + r * d;
    double* yr = yd + r * d;
    double mx = xr[0];
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    double inv = 1.0 / sum;
    for (int64_t j = 0; j < d; ++j) yr[j] *= inv;
  }
  check_finite(y, "softmax");
  if (!y.requires_grad()) return y;
  auto xi = x.impl, yi = y.impl;
  tp.push("softmax", yi, [xi, yi, rows, d]() mutable {
    if (!has_g(yi) || !xi->requires_grad) return;
    const double* yg = yi->grad.data();
    const double* yd = yi->data.data();
    double* xg = g(xi).data();
    for (int64_t r = 0; r < rows; ++r) {
      const double* gr = yg + r * d;
      const double* yr = yd + r * d;
      double dot = 0.0;
      for (int64_t j = 0; j < d; ++j) dot += gr[j] * yr[j];
      double* xr = xg + r * d;
      for (int64_t j = 0; j < d; ++j) xr[j] += yr[j] * (gr[j] - dot);
    }
  });
  return y;
}

Tensor layer_norm(Tape& tp, const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require(!x.shape().empty(), "layer_norm: scalar input");
  int64_t d = x.shape().back();
  require(gamma.shape() == Shape{d} && beta.shape() == Shape{d},
          "layer_norm: gamma/beta must be [" + std::to_string(d) + "], got " +
              shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
  int64_t rows = x.numel() / d;
  bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  Tensor y = Tensor::zeros(x.shape(), rg);
  // x_hat kept for backward
  auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(x.numel()));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  const double* xd = x.data();
  const double* gd = gamma.data();
  const double* bd = beta.data();
  double* yd = y.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = xd + r * d;
    double mu = 0.0;
    for (int64_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      double c = xr[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(r)] = inv;
    double* hr = xhat->data() + r * d;
    double* yr = yd + r * d;
    for (int64_t j = 0; j < d; ++j) {
      hr[j] = (xr[j] - mu) * inv;
      yr[j] = gd[j] * hr[j] + bd[j];
    }
  }
  check_finite(y, "layer_norm");
  if (!rg) return y;
  auto xi = x.impl, gi = gamma.impl, bi = beta.impl, yi = y.impl;
  tp.push("layer_norm", yi, [xi, gi, bi, yi, xhat, inv_std, rows, d]() mutable {
    if (!has_g(yi)) return;
    const double* yg = yi->grad.data();
    const double* gd = gi->data.data();
    for (int64_t r = 0; r < rows; ++r) {
      const double* gr = yg + r * d;
      const double* hr = xhat->data() + r * d;
      if (gi->requires_grad) {
        double* gg = g(gi).data();
        for (int64_t j = 0; j < d; ++j) gg[j] += gr[j] * hr[j];
      }
      if (bi->requires_grad) {
        double* bg = g(bi).data();
        for (int64_t j = 0; j < d; ++j) bg[j] += gr[j];
      }
      if (xi->requires_grad) {
        double inv = (*inv_std)[static_cast<size_t>(r)];
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (int64_t j = 0; j < d; ++j) {
          double dh = gr[j] * gd[j];
          mean_dh += dh;
          mean_dh_h += dh * hr[j];
        }
        mean_dh /= static_cast<double>(d);
        mean_dh_h /= static_cast<double>(d);
        double* xg = g(xi).data() + r * d;
        for (int64_t j = 0; j < d; ++j) {
          double dh = gr[j] * gd[j];
          xg[j] += inv * (dh - mean_dh - hr[j] * mean_dh_h);
        }
      }
    }
  });
  return y;
}

// ---------------------------------------------------------------------------
// shape plumbing

Tensor repeat_rows(Tape& tp, const Tensor& b, int64_t n) {
  require(b.shape().size() == 1, "repeat_rows: expects rank-1 input, got " + shape_str(b.shape()));
  int64_t d = b.dim(0);
  Tensor y = Tensor::zeros({n, d}, b.requires_grad());
  const double* bd = b.data();
  double* yd = y.data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) yd[i * d + j] = bd[j];
  if (!y.requires_grad()) return y;
  auto bi = b.impl, yi = y.impl;
  tp.push("repeat_rows", yi, [bi, yi, n, d]() mutable {
    if (!has_g(yi)) return;
    const double* yg = yi->grad.data();
    double* bg = g(bi).data();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < d; ++j) bg[j] += yg[i * d + j];
  });
  return y;
}

Tensor linear(Tape& tp, const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(tp, x, w);
  return add(tp, y, repeat_rows(tp, b, y.dim(0)));
}

Tensor gather_rows(Tape& tp, const Tensor& x, const std::vector<int64_t>& idx) {
  require(x.shape().size() == 2, "gather_rows: expects rank-2 input, got " + shape_str(x.shape()));
  int64_t n = x.dim(0), d = x.dim(1);
  int64_t m = static_cast<int64_t>(idx.size());
  for (auto i : idx)
    require(i >= 0 && i < n, "gather_rows: index " + std::to_string(i) + " out of range [0," +
                                 std::to_string(n) + ")");
  Tensor y = Tensor::zeros({m, d}, x.requires_grad());
  const double* xd = x.data();
  double* yd = y.data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < d; ++j) yd[i * d + j] = xd[idx[static_cast<size_t>(i)] * d + j];
  if (!y.requires_grad()) return y;
  auto xi = x.impl, yi = y.impl;
  auto ids = idx;
  tp.push("gather_rows", yi, [xi, yi, ids, m, d]() mutable {
    if (!has_g(yi)) return;
    const double* yg = yi->grad.data();
    double* xg = g(xi).data();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < d; ++j) xg[ids[static_cast<size_t>(i)] * d + j] += yg[i * d + j];
  });
  return y;
}

Tensor scatter_rows(Tape& tp, const Tensor& rows, const std::vector<int64_t>& idx,
                    int64_t n_total) {
  require(rows.shape().size() == 2,
          "scatter_rows: expects rank-2 input, got " + shape_str(rows.shape()));
  int64_t m = rows.dim(0), d = rows.dim(1);
  require(m == static_cast<int64_t>(idx.size()), "scatter_rows: row/index count mismatch");
  std::unordered_set<int64_t> seen;
  for (auto i : idx) {
    require(i >= 0 && i < n_total, "scatter_rows: index " + std::to_string(i) +
                                       " out of range [0," + std::to_string(n_total) + ")");
    require(seen.insert(i).second, "scatter_rows: duplicate index " + std::to_string(i));
  }
  Tensor y = Tensor::zeros({n_total, d}, rows.requires_grad());
  const double* rd = rows.data();
  double* yd = y.data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < d; ++j) yd[idx[static_cast<size_t>(i)] * d + j] = rd[i * d + j];
  if (!y.requires_grad()) return y;
  auto ri = rows.impl, yi = y.impl;
  auto ids = idx;
  tp.push("scatter_rows", yi, [ri, yi, ids, m, d]() mutable {
    if (!has_g(yi)) return;
    const double* yg = yi->grad.data();
    double* rg2 = g(ri).data();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < d; ++j) rg2[i * d + j] += yg[ids[static_cast<size_t>(i)] * d + j];
  });
  return y;
}

Tensor slice_cols(Tape& tp, const Tensor& x, int64_t c0, int64_t c1) {
  require(x.shape().size() == 2, "slice_cols: expects rank-2 input, got " + shape_str(x.shape()));
  int64_t n = x.dim(0), d = x.dim(1);
  require(0 <= c0 && c0 < c1 && c1 <= d,
          "slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
              ") for width " + std::to_string(d));
  int64_t w = c1 - c0;
  Tensor y = Tensor::zeros({n, w}, x.requires_grad());
  const double* xd = x.data();
  double* yd = y.data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < w; ++j) yd[i * w + j] = xd[i * d + c0 + j];
  if (!y.requires_grad()) return y;
  auto xi = x.impl, yi = y.impl;
  tp.push("slice_cols", yi, [xi, yi, n, d, w, c0]() mutable {
    if (!has_g(yi)) return;
    const double* yg = yi->grad.data();
    double* xg = g(xi).data();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < w; ++j) xg[i * d + c0 + j] += yg[i * w + j];
  });
  return y;
}

Tensor concat_cols(Tape& tp, const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  int64_t n = parts[0].dim(0);
  int64_t total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    require(p.shape().size() == 2 && p.dim(0) == n,
            "concat_cols: row count mismatch, " + shape_str(parts[0].shape()) + " vs " +
                shape_str(p.shape()));
    total += p.dim(1);
    rg = rg || p.requires_grad();
  }
  Tensor y = Tensor::zeros({n, total}, rg);
  double* yd = y.data();
  int64_t off = 0;
  for (const auto& p : parts) {
    int64_t w = p.dim(1);
    const double* pd = p.data();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < w; ++j) yd[i * total + off + j] = pd[i * w + j];
    off += w;
  }
  if (!rg) return y;
  std::vector<std::shared_ptr<TensorImpl>> pis;
  for (const auto& p : parts) pis.push_back(p.impl);
  auto yi = y.impl;
  tp.push("concat_cols", yi, [pis, yi, n, total]() mutable {
    if (!has_g(yi)) return;
    const double* yg = yi->grad.data();
    int64_t off = 0;
    for (auto& pi : pis) {
      int64_t w = pi->shape[1];
      if (pi->requires_grad) {
        double* pg = g(pi).data();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < w; ++j) pg[i * w + j] += yg[i * total + off + j];
      }
      off += w;
    }
  });
  return y;
}

Tensor concat_rows(Tape& tp, const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  int64_t d = parts[0].dim(1);
  int64_t total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    require(p.shape().size() == 2 && p.dim(1) == d,
            "concat_rows: column count mismatch, " + shape_str(parts[0].shape()) + " vs " +
                shape_str(p.shape()));
    total += p.dim(0);
    rg = rg || p.requires_grad();
  }
  Tensor y = Tensor::zeros({total, d}, rg);
  double* yd = y.data();
  int64_t off = 0;
  for (const auto& p : parts) {
    int64_t n = p.dim(0) * d;
    const double* pd = p.data();
    for (int64_t i = 0; i < n; ++i) yd[off + i] = pd[i];
    off += n;
  }
  if (!rg) return y;
  std::vector<std::shared_ptr<TensorImpl>> pis;
  for (const auto& p : parts) pis.push_back(p.impl);
  auto yi = y.impl;
  tp.push("concat_rows", yi, [pis, yi, d]() mutable {
    if (!has_g(yi)) return;
    const double* yg = yi->grad.data();
    int64_t off = 0;
    for (auto& pi : pis) {
      int64_t n = pi->shape[0] * d;
      if (pi->requires_grad) {
        double* pg = g(pi).data();
        for (int64_t i = 0; i < n; ++i) pg[i] += yg[off + i];
      }
      off += n;
    }
  });
  return y;
}

Tensor segment_mean(Tape& tp, const Tensor& x, const std::vector<int64_t>& offsets) {
  require(x.shape().size() == 2, "segment_mean: expects rank-2 input, got " + shape_str(x.shape()));
  require(offsets.size() >= 1 && offsets.front() == 0 &&
              offsets.back() == x.dim(0),
          "segment_mean: offsets must start at 0 and end at row count");
  int64_t p = static_cast<int64_t>(offsets.size()) - 1;
  int64_t d = x.dim(1);
  for (int64_t s = 0; s < p; ++s)
    require(offsets[static_cast<size_t>(s)] < offsets[static_cast<size_t>(s) + 1],
            "segment_mean: empty segment " + std::to_string(s));
  Tensor y = Tensor::zeros({p, d}, x.requires_grad());
  const double* xd = x.data();
  double* yd = y.data();
  for (int64_t s = 0; s < p; ++s) {
    int64_t a = offsets[static_cast<size_t>(s)], b = offsets[static_cast<size_t>(s) + 1];
    double* yr = yd + s * d;
    for (int64_t r = a; r < b; ++r) {
      const double* xr = xd + r * d;
      for (int64_t j = 0; j < d; ++j) yr[j] += xr[j];
    }
    double inv = 1.0 / static_cast<double>(b - a);
    for (int64_t j = 0; j < d; ++j) yr[j] *= inv;
  }
  check_finite(y, "segment_mean");
  if (!y.requires_grad()) return y;
  auto xi = x.impl, yi = y.impl;
  auto offs = offsets;
  tp.push("segment_mean", yi, [xi, yi, offs, p, d]() mutable {
    if (!has_g(yi)) return;
    const double* yg = yi->grad.data();
    double* xg = g(xi).data();
    for (int64_t s = 0; s < p; ++s) {
      int64_t a = offs[static_cast<size_t>(s)], b = offs[static_cast<size_t>(s) + 1];
      double inv = 1.0 / static_cast<double>(b - a);
      const double* yr = yg + s * d;
      for (int64_t r = a; r < b; ++r) {
        double* xr = xg + r * d;
        for (int64_t j = 0; j < d; ++j) xr[j] += yr[j] * inv;
      }
    }
  });
  return y;
}

// ---------------------------------------------------------------------------
// conv / grid

Tensor conv2d_3x3(Tape& tp, const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.shape().size() == 3, "conv2d_3x3: input must be [C,H,W], got " + shape_str(x.shape()));
  require(w.shape().size() == 4 && w.dim(2) == 3 && w.dim(3) == 3,
          "conv2d_3x3: weight must be [Co,Ci,3,3], got " + shape_str(w.shape()));
  require(w.dim(1) == x.dim(0), "conv2d_3x3: channel mismatch " + shape_str(x.shape()) + " vs " +
                                    shape_str(w.shape()));
  int64_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2), co = w.dim(0);
  require(b.shape() == Shape{co},
          "conv2d_3x3: bias must be [" + std::to_string(co) + "], got " + shape_str(b.shape()));
  bool rg = x.requires_grad() || w.requires_grad() || b.requires_grad();
  Tensor y = Tensor::zeros({co, h, wd}, rg);
  const double* xd = x.data();
  const double* wdt = w.data();
  const double* bd = b.data();
  double* yd = y.data();
  for (int64_t o = 0; o < co; ++o) {
    double* yplane = yd + o * h * wd;
    double bv = bd[o];
    for (int64_t i = 0; i < h * wd; ++i) yplane[i] = bv;
    for (int64_t c = 0; c < ci; ++c) {
      const double* xplane = xd + c * h * wd;
      const double* wk = wdt + (o * ci + c) * 9;
      for (int64_t ky = 0; ky < 3; ++ky) {
        for (int64_t kx = 0; kx < 3; ++kx) {
          double wv = wk[ky * 3 + kx];
          if (wv == 0.0) continue;
          int64_t dy = ky - 1, dx = kx - 1;
          int64_t y0 = std::max<int64_t>(0, -dy), y1 = std::min(h, h - dy);
          int64_t x0 = std::max<int64_t>(0, -dx), x1 = std::min(wd, wd - dx);
          for (int64_t yy = y0; yy < y1; ++yy) {
            double* yrow = yplane + yy * wd;
            const double* xrow = xplane + (yy + dy) * wd + dx;
            for (int64_t xx = x0; xx < x1; ++xx) yrow[xx] += wv * xrow[xx];
          }
        }
      }
    }
  }
  check_finite(y, "conv2d_3x3");
  if (!rg) return y;
  auto xi = x.impl, wi = w.impl, bi = b.impl, yi = y.impl;
  tp.push("conv2d_3x3", yi, [xi, wi, bi, yi, ci, co, h, wd]() mutable {
    if (!has_g(yi)) return;
    const double* yg = yi->grad.data();
    if (bi->requires_grad) {
      double* bg = g(bi).data();
      for (int64_t o = 0; o < co; ++o) {
        const double* yplane = yg + o * h * wd;
        double acc = 0.0;
        for (int64_t i = 0; i < h * wd; ++i) acc += yplane[i];
        bg[o] += acc;
      }
    }
    if (xi->requires_grad) {
      double* xg = g(xi).data();
      const double* wdt = wi->data.data();
      for (int64_t c = 0; c < ci; ++c) {
        double* xplane = xg + c * h * wd;
        for (int64_t o = 0; o < co; ++o) {
          const double* yplane = yg + o * h * wd;
          const double* wk = wdt + (o * ci + c) * 9;
          for (int64_t ky = 0; ky < 3; ++ky) {
            for (int64_t kx = 0; kx < 3; ++kx) {
              double wv = wk[ky * 3 + kx];
              if (wv == 0.0) continue;
              int64_t dy = ky - 1, dx = kx - 1;
              int64_t y0 = std::max<int64_t>(0, -dy), y1 = std::min(h, h - dy);
              int64_t x0 = std::max<int64_t>(0, -dx), x1 = std::min(wd, wd - dx);
              for (int64_t yy = y0; yy < y1; ++yy) {
                double* xrow = xplane + (yy + dy) * wd + dx;
                const double* yrow = yplane + yy * wd;
                for (int64_t xx = x0; xx < x1; ++xx) xrow[xx] += wv * yrow[xx];
              }
            }
          }
        }
      }
    }
    if (wi->requires_grad) {
      double* wg = g(wi).data();
      const double* xd = xi->data.data();
      for (int64_t o = 0; o < co; ++o) {
        const double* yplane = yg + o * h * wd;
        for (int64_t c = 0; c < ci; ++c) {
          const double* xplane = xd + c * h * wd;
          double* wk = wg + (o * ci + c) * 9;
          for (int64_t ky = 0; ky < 3; ++ky) {
            for (int64_t kx = 0; kx < 3; ++kx) {
              int64_t dy = ky - 1, dx = kx - 1;
              int64_t y0 = std::max<int64_t>(0, -dy), y1 = std::min(h, h - dy);
              int64_t x0 = std::max<int64_t>(0, -dx), x1 = std::min(wd, wd - dx);
              double acc = 0.0;
              for (int64_t yy = y0; yy < y1; ++yy) {
                const double* yrow = yplane + yy * wd;
                const double* xrow = xplane + (yy + dy) * wd + dx;
                for (int64_t xx = x0; xx < x1; ++xx) acc += yrow[xx] * xrow[xx];
              }
              wk[ky * 3 + kx] += acc;
            }
          }
        }
      }
    }
  });
  return y;
}

Tensor scatter_to_grid(Tape& tp, const Tensor& tokens,
                       const std::vector<std::pair<int32_t, int32_t>>& cells, int64_t H,
                       int64_t W) {
  require(tokens.shape().size() == 2,
          "scatter_to_grid: tokens must be [P,d], got " + shape_str(tokens.shape()));
  int64_t p = tokens.dim(0), d = tokens.dim(1);
  require(p == static_cast<int64_t>(cells.size()), "scatter_to_grid: token/cell count mismatch");
  std::unordered_set<int64_t> seen;
  for (auto [ix, iy] : cells) {
    require(ix >= 0 && ix < W && iy >= 0 && iy < H,
            "scatter_to_grid: cell (" + std::to_string(ix) + "," + std::to_string(iy) +
                ") outside " + std::to_string(W) + "x" + std::to_string(H) + " grid");
    require(seen.insert(static_cast<int64_t>(iy) * W + ix).second,
            "scatter_to_grid: duplicate cell (" + std::to_string(ix) + "," + std::to_string(iy) + ")");
  }
  Tensor y = Tensor::zeros({d, H, W}, tokens.requires_grad());
  const double* td = tokens.data();
  double* yd = y.data();
  for (int64_t i = 0; i < p; ++i) {
    auto [ix, iy] = cells[static_cast<size_t>(i)];
    for (int64_t j = 0; j < d; ++j) yd[j * H * W + iy * W + ix] = td[i * d + j];
  }
  if (!y.requires_grad()) return y;
  auto ti = tokens.impl, yi = y.impl;
  auto cs = cells;
  tp.push("scatter_to_grid", yi, [ti, yi, cs, p, d, H, W]() mutable {
    if (!has_g(yi)) return;
    const double* yg = yi->grad.data();
    double* tg = g(ti).data();
    for (int64_t i = 0; i < p; ++i) {
      auto [ix, iy] = cs[static_cast<size_t>(i)];
      for (int64_t j = 0; j < d; ++j) tg[i * d + j] += yg[j * H * W + iy * W + ix];
    }
  });
  return y;
}

Tensor gather_from_grid(Tape& tp, const Tensor& grid,
                        const std::vector<std::pair<int32_t, int32_t>>& cells) {
  require(grid.shape().size() == 3,
          "gather_from_grid: grid must be [d,H,W], got " + shape_str(grid.shape()));
  int64_t d = grid.dim(0), H = grid.dim(1), W = grid.dim(2);
  int64_t p = static_cast<int64_t>(cells.size());
  for (auto [ix, iy] : cells)
    require(ix >= 0 && ix < W && iy >= 0 && iy < H,
            "gather_from_grid: cell (" + std::to_string(ix) + "," + std::to_string(iy) +
                ") outside grid");
  Tensor y = Tensor::zeros({p, d}, grid.requires_grad());
  const double* gd = grid.data();
  double* yd = y.data();
  for (int64_t i = 0; i < p; ++i) {
    auto [ix, iy] = cells[static_cast<size_t>(i)];
    for (int64_t j = 0; j < d; ++j) yd[i * d + j] = gd[j * H * W + iy * W + ix];
  }
  if (!y.requires_grad()) return y;
  auto gi = grid.impl, yi = y.impl;
  auto cs = cells;
  tp.push("gather_from_grid", yi, [gi, yi, cs, p, d, H, W]() mutable {
    if (!has_g(yi)) return;
    const double* yg = yi->grad.data();
    double* gg = g(gi).data();
    for (int64_t i = 0; i < p; ++i) {
      auto [ix, iy] = cs[static_cast<size_t>(i)];
      for (int64_t j = 0; j < d; ++j) gg[j * H * W + iy * W + ix] += yg[i * d + j];
    }
  });
  return y;
}

Tensor sum_all(Tape& tp, const Tensor& x) {
  Tensor y = Tensor::zeros({1}, x.requires_grad());
  const double* xd = x.data();
  double acc = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) acc += xd[i];
  y.data()[0] = acc;
  check_finite(y, "sum_all");
  if (!y.requires_grad()) return y;
  auto xi = x.impl, yi = y.impl;
  int64_t n = x.numel();
  tp.push("sum_all", yi, [xi, yi, n]() mutable {
    if (!has_g(yi)) return;
    double s = yi->grad[0];
    double* xg = g(xi).data();
    for (int64_t i = 0; i < n; ++i) xg[i] += s;
  });
  return y;
}

// ---------------------------------------------------------------------------
// chamfer

Tensor chamfer_set_loss(Tape& tp, const Tensor& pred, const Tensor& target, int64_t kp,
                        int64_t kg) {
  require(pred.shape().size() == 2 && pred.dim(1) == 3 * kp,
          "chamfer: pred must be [M," + std::to_string(3 * kp) + "], got " +
              shape_str(pred.shape()));
  require(target.shape().size() == 2 && target.dim(1) == 3 * kg,
          "chamfer: target must be [M," + std::to_string(3 * kg) + "], got " +
              shape_str(target.shape()));
  require(pred.dim(0) == target.dim(0), "chamfer: row count mismatch " +
                                            shape_str(pred.shape()) + " vs " +
                                            shape_str(target.shape()));
  int64_t m = pred.dim(0);
  bool rg = pred.requires_grad() || target.requires_grad();
  Tensor y = Tensor::zeros({1}, rg);

  // argmin pairs kept for backward: nearest target per pred point and
  // nearest pred per target point, per row
  auto nt = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(m * kp));
  auto np = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(m * kg));

  const double* pd = pred.data();
  const double* td = target.data();
  double total = 0.0;
  for (int64_t r = 0; r < m; ++r) {
    const double* pr = pd + r * 3 * kp;
    const double* tr = td + r * 3 * kg;
    double fwd = 0.0;
    std::vector<double> min_for_t(static_cast<size_t>(kg),
                                  std::numeric_limits<double>::infinity());
    for (int64_t i = 0; i < kp; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int32_t bj = 0;
      double ax = pr[i * 3], ay = pr[i * 3 + 1], az = pr[i * 3 + 2];
      for (int64_t j = 0; j < kg; ++j) {
        double dx = ax - tr[j * 3], dy = ay - tr[j * 3 + 1], dz = az - tr[j * 3 + 2];
        double dd = dx * dx + dy * dy + dz * dz;
        if (dd < best) {
          best = dd;
          bj = static_cast<int32_t>(j);
        }
      }
      (*nt)[static_cast<size_t>(r * kp + i)] = bj;
      fwd += best;
    }
    double bwd = 0.0;
    for (int64_t j = 0; j < kg; ++j) {
      double best = std::numeric_limits<double>::infinity();
      int32_t bi = 0;
      double bx = tr[j * 3], by = tr[j * 3 + 1], bz = tr[j * 3 + 2];
      for (int64_t i = 0; i < kp; ++i) {
        double dx = pr[i * 3] - bx, dy = pr[i * 3 + 1] - by, dz = pr[i * 3 + 2] - bz;
        double dd = dx * dx + dy * dy + dz * dz;
        if (dd < best) {
          best = dd;
          bi = static_cast<int32_t>(i);
        }
      }
      (*np)[static_cast<size_t>(r * kg + j)] = bi;
      bwd += best;
    }
    total += fwd / static_cast<double>(kp) + bwd / static_cast<double>(kg);
  }
  y.data()[0] = m > 0 ? total / static_cast<double>(m) : 0.0;
  check_finite(y, "chamfer");
  if (!rg) return y;
  auto pi = pred.impl, ti = target.impl, yi = y.impl;
  tp.push("chamfer", yi, [pi, ti, yi, nt, np, m, kp, kg]() mutable {
    if (!has_g(yi) || m == 0) return;
    double s = yi->grad[0] / static_cast<double>(m);
    const double* pd = pi->data.data();
    const double* td = ti->data.data();
    // only pred-side gradients are needed in practice; targets are constants,
    // but handle both for completeness
    double* pg = pi->requires_grad ? g(pi).data() : nullptr;
    double* tg = ti->requires_grad ? g(ti).data() : nullptr;
    for (int64_t r = 0; r < m; ++r) {
      const double* pr = pd + r * 3 * kp;
      const double* tr = td + r * 3 * kg;
      double cp = 2.0 * s / static_cast<double>(kp);
      for (int64_t i = 0; i < kp; ++i) {
        int32_t j = (*nt)[static_cast<size_t>(r * kp + i)];
        for (int64_t c = 0; c < 3; ++c) {
          double diff = pr[i * 3 + c] - tr[j * 3 + c];
          if (pg) pg[(r * kp + i) * 3 + c] += cp * diff;
          if (tg) tg[(r * kg + j) * 3 + c] -= cp * diff;
        }
      }
      double cg = 2.0 * s / static_cast<double>(kg);
      for (int64_t j = 0; j < kg; ++j) {
        int32_t i = (*np)[static_cast<size_t>(r * kg + j)];
        for (int64_t c = 0; c < 3; ++c) {
          double diff = pr[i * 3 + c] - tr[j * 3 + c];
          if (pg) pg[(r * kp + i) * 3 + c] += cg * diff;
          if (tg) tg[(r * kg + j) * 3 + c] -= cg * diff;
        }
      }
    }
  });
  return y;
}

}  // namespace tmae
