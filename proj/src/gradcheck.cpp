#include "mvrec/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

#include "mvrec/rng.hpp"

namespace mvrec {

GradCheckResult finite_diff_check(
    const std::function<Tensor(Graph&, const std::vector<Tensor>&)>& f,
    const std::vector<Tensor>& params, double eps, int coords_per_param, uint64_t seed) {
  if (eps <= 0) throw std::invalid_argument("finite_diff_check: eps must be > 0");

  Graph g;
  std::vector<Tensor> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(g.leaf(p));
  Tensor loss = f(g, leaves);
  if (loss.size() != 1) throw std::invalid_argument("finite_diff_check: f must be scalar");
  if (!std::isfinite(loss.value())) throw std::runtime_error("finite_diff_check: non-finite f");
  auto grads = g.backward(loss);

  auto eval = [&](const std::vector<Tensor>& ps) {
    Graph fresh;
    std::vector<Tensor> ls;
    ls.reserve(ps.size());
    for (const Tensor& p : ps) ls.push_back(fresh.leaf(p));
    double v = f(fresh, ls).value();
    if (!std::isfinite(v)) throw std::runtime_error("finite_diff_check: non-finite f");
    return v;
  };

  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  GradCheckResult res;
  std::vector<Tensor> work = params;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    long long n = params[pi].size();
    std::vector<long long> coords;
    if (coords_per_param < 0 || coords_per_param >= n) {
      for (long long c = 0; c < n; ++c) coords.push_back(c);
    } else {
      for (int c = 0; c < coords_per_param; ++c) coords.push_back((long long)rng.below((uint64_t)n));
    }
    if (grads[leaves[pi].node].empty()) grads[leaves[pi].node].assign((size_t)n, 0.0);
    const std::vector<double>& ag = grads[leaves[pi].node];
    for (long long c : coords) {
      // copy-on-write so the caller's buffers stay untouched
      auto buf = std::make_shared<std::vector<double>>(*params[pi].data);
      work[pi].data = buf;
      double orig = (*buf)[c];
      (*buf)[c] = orig + eps;
      double fp = eval(work);
      (*buf)[c] = orig - eps;
      double fm = eval(work);
      (*buf)[c] = orig;
      double numeric = (fp - fm) / (2 * eps);
      double analytic = ag[(size_t)c];
      double rel = std::abs(analytic - numeric) / std::max(1e-8, std::abs(numeric));
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.where = "param " + std::to_string(pi) + " coord " + std::to_string(c);
      }
    }
    work[pi] = params[pi];
  }
  return res;
}

}  // namespace mvrec
