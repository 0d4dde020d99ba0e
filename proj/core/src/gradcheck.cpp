#include "tmae/gradcheck.hpp"

#include <cmath>
#include <cstdio>

#include "tmae/error.hpp"

namespace tmae {

GradCheckReport grad_check(const std::function<double(bool)>& eval,
                           const std::vector<Tensor>& params, double eps, double tol, Rng& rng,
                           int64_t max_coords) {
  for (const auto& p : params) {
    if (!p.defined() || !p.requires_grad())
      throw NumericError("grad_check: every checked tensor must require grad");
    p.impl->grad.clear();
  }
  double base = eval(true);
  if (!std::isfinite(base)) throw NumericError("grad_check: non-finite loss in analytic pass");

  GradCheckReport rep;
  rep.pass = true;
  for (const auto& p : params) {
    int64_t n = p.numel();
    std::vector<int64_t> coords;
    if (n <= max_coords) {
      coords.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    } else {
      coords = rng.sample_without_replacement(n, max_coords);
    }
    const std::vector<double>& agrad = p.grad_buf();
    for (int64_t ci : coords) {
      double a = agrad.empty() ? 0.0 : agrad[static_cast<size_t>(ci)];
      double* slot = &p.impl->data[static_cast<size_t>(ci)];
      double saved = *slot;
      *slot = saved + eps;
      double fp = eval(false);
      *slot = saved - eps;
      double fm = eval(false);
      *slot = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericError("grad_check: non-finite loss while perturbing '" + p.name() + "'");
      double num = (fp - fm) / (2.0 * eps);
      double rel = std::fabs(a - num) / std::max({1.0, std::fabs(a), std::fabs(num)});
      ++rep.coords_checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_tensor = p.name().empty() ? "<unnamed>" : p.name();
        rep.worst_index = ci;
        rep.worst_analytic = a;
        rep.worst_numeric = num;
      }
    }
  }
  rep.pass = rep.max_rel_err <= tol;
  return rep;
}

std::string format_report(const GradCheckReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "gradcheck %s: max_rel_err=%.6e at %s[%lld] analytic=%.9e numeric=%.9e "
                "coords=%lld",
                r.pass ? "PASS" : "FAIL", r.max_rel_err, r.worst_tensor.c_str(),
                static_cast<long long>(r.worst_index), r.worst_analytic, r.worst_numeric,
                static_cast<long long>(r.coords_checked));
  return std::string(buf);
}

}  // namespace tmae
