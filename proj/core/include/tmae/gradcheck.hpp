#pragma once
#include <functional>
#include <string>
#include <vector>

#include "tmae/rng.hpp"
#include "tmae/tensor.hpp"

namespace tmae {

struct GradCheckReport {
  bool pass = false;
  double max_rel_err = 0.0;
  std::string worst_tensor;
  int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  int64_t coords_checked = 0;
};

// Central-difference check of a scalar forward against tape gradients.
//
// eval(true) must run forward+backward and leave analytic gradients
// accumulated in the given tensors (from zero); eval(false) must run the
// forward alone and return the loss. The closure has to be a pure function
// of the tensor values: any internal sampling must restart from a fixed
// seed on every call.
//
// Per tensor at most max_coords coordinates are perturbed (all of them when
// the tensor is small), chosen by rng. Relative error per coordinate is
// |a-n| / max(1, |a|, |n|).
GradCheckReport grad_check(const std::function<double(bool)>& eval,
                           const std::vector<Tensor>& params, double eps, double tol,
                           Rng& rng, int64_t max_coords = 64);

std::string format_report(const GradCheckReport& r);

}  // namespace tmae
