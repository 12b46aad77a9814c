#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mvrec/tensor.hpp"

namespace mvrec {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string where;  // "param <i> coord <j>" of the worst coordinate
};

// Central-difference oracle: binds the given values as graph leaves, runs f
// once for analytic gradients, then perturbs coordinates by +-eps and
// re-evaluates. Relative error per coordinate is
// |analytic - numeric| / max(1e-8, |numeric|); the max over coordinates is
// returned. With coords_per_param >= 0, a seeded subset of coordinates is
// checked per parameter instead of all of them.
GradCheckResult finite_diff_check(
    const std::function<Tensor(Graph&, const std::vector<Tensor>&)>& f,
    const std::vector<Tensor>& params, double eps, int coords_per_param = -1,
    uint64_t seed = 0);

}  // namespace mvrec
