#pragma once
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tmae/rng.hpp"

namespace tmae {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

// Dense row-major f64 storage. grad stays empty until backward touches it.
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::string name;  // set for parameters, used in diagnostics
};

// Value-semantics handle; copies share storage. Weight sharing between the
// two encoder passes falls out of handing the same Tensor to both.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> p) : impl(std::move(p)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double stddev,
                      bool requires_grad = false);

  bool defined() const { return impl != nullptr; }
  const Shape& shape() const { return impl->shape; }
  int64_t numel() const { return static_cast<int64_t>(impl->data.size()); }
  int64_t dim(size_t i) const { return impl->shape[i]; }
  double* data() { return impl->data.data(); }
  const double* data() const { return impl->data.data(); }
  bool requires_grad() const { return impl && impl->requires_grad; }
  const std::string& name() const { return impl->name; }
  void set_name(const std::string& n) { impl->name = n; }

  // grad as a flat buffer; allocated lazily, empty means "all zeros"
  bool has_grad() const { return impl && !impl->grad.empty(); }
  std::vector<double>& grad_buf() { return impl->grad; }
  const std::vector<double>& grad_buf() const { return impl->grad; }
  void ensure_grad();   // allocate zeros if empty
  void clear_grad() { impl->grad.clear(); }

  std::shared_ptr<TensorImpl> impl;
};

// Explicit gradient tape. Ops append nodes during the forward pass; backward
// sweeps them once in reverse. Inputs of a node always precede it because
// the graph is built define-by-run.
class Tape {
 public:
  void push(const char* op, std::shared_ptr<TensorImpl> out,
            std::function<void()> fn);
  // Seeds d(loss)/d(loss)=1 and runs every node once, newest first.
  // Errors: non-scalar loss, loss not produced by this tape, tape empty,
  // second backward without a fresh forward.
  void backward(const Tensor& loss);
  size_t num_nodes() const { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    const char* op;
    std::shared_ptr<TensorImpl> out;
    std::function<void()> fn;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// When enabled every op scans its output and throws NumericError on the
// first non-finite value, naming the op. Defaults to on in debug builds.
bool finite_checks_enabled();
void set_finite_checks(bool on);

enum class EwKind { add, sub, mul, scale, relu, gelu, tanh };

// Elementwise dispatcher. add/sub/mul take two equal-shape tensors, scale
// takes x and a scalar, relu/gelu/tanh are unary. No implicit broadcasting
// anywhere in the engine; use repeat_rows for row-wise bias.
Tensor elementwise(Tape& tp, EwKind kind, const Tensor& x,
                   const Tensor& y = Tensor(), double scalar = 0.0);

Tensor add(Tape& tp, const Tensor& x, const Tensor& y);
Tensor sub(Tape& tp, const Tensor& x, const Tensor& y);
Tensor mul(Tape& tp, const Tensor& x, const Tensor& y);
Tensor scale(Tape& tp, const Tensor& x, double s);
Tensor relu(Tape& tp, const Tensor& x);
Tensor gelu(Tape& tp, const Tensor& x);
Tensor tanh_op(Tape& tp, const Tensor& x);

Tensor matmul(Tape& tp, const Tensor& a, const Tensor& b);
Tensor transpose2d(Tape& tp, const Tensor& x);

// numerically stable (max-subtracted) softmax over the last dimension
Tensor softmax_lastdim(Tape& tp, const Tensor& x);

// per-row layer norm over the last dimension, biased variance
Tensor layer_norm(Tape& tp, const Tensor& x, const Tensor& gamma,
                  const Tensor& beta, double eps = 1e-5);

// b is [d]; result is [n,d] with b in every row
Tensor repeat_rows(Tape& tp, const Tensor& b, int64_t n);
// x*w + b for x [n,k], w [k,d], b [d]
Tensor linear(Tape& tp, const Tensor& x, const Tensor& w, const Tensor& b);

Tensor gather_rows(Tape& tp, const Tensor& x, const std::vector<int64_t>& idx);
// inverse of gather: rows[i] lands in output row idx[i]; idx must be unique,
// unfilled rows are zero
Tensor scatter_rows(Tape& tp, const Tensor& rows, const std::vector<int64_t>& idx,
                    int64_t n_total);
Tensor slice_cols(Tape& tp, const Tensor& x, int64_t c0, int64_t c1);
Tensor concat_cols(Tape& tp, const std::vector<Tensor>& parts);
Tensor concat_rows(Tape& tp, const std::vector<Tensor>& parts);

// x rows are grouped by segment: segment p is rows [offsets[p], offsets[p+1]).
// Every segment must be non-empty. Output row p is the mean of its rows.
Tensor segment_mean(Tape& tp, const Tensor& x, const std::vector<int64_t>& offsets);

// x [C,H,W], w [Co,C,3,3], b [Co] -> [Co,H,W]; zero padding 1, stride 1
Tensor conv2d_3x3(Tape& tp, const Tensor& x, const Tensor& w, const Tensor& b);

// tokens [P,d] scattered to [d,H,W] at cells[p]=(ix,iy); cells must be unique
Tensor scatter_to_grid(Tape& tp, const Tensor& tokens,
                       const std::vector<std::pair<int32_t, int32_t>>& cells,
                       int64_t H, int64_t W);
Tensor gather_from_grid(Tape& tp, const Tensor& grid,
                        const std::vector<std::pair<int32_t, int32_t>>& cells);

Tensor sum_all(Tape& tp, const Tensor& x);

// Symmetric set-to-set squared-distance loss, averaged over rows.
// pred row m holds kp points (x,y,z flattened), target row m holds kg points.
// Per row: (1/kp) sum_i min_j ||a_i-b_j||^2 + (1/kg) sum_j min_i ||a_i-b_j||^2,
// then the mean over the M rows. M = 0 yields 0.
Tensor chamfer_set_loss(Tape& tp, const Tensor& pred, const Tensor& target,
                        int64_t kp, int64_t kg);

}  // namespace tmae
