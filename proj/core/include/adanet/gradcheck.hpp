#pragma once

#include <functional>
#include <string>

#include "adanet/tensor.hpp"

namespace adanet {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  bool pass = false;
};

// Central-difference check of a scalar-valued function against the
// analytic gradient at x. f must be deterministic. The relative error
// denominator is floored at 1e-3 so finite-difference noise on
// near-zero entries does not dominate.
GradCheckReport grad_check(const std::function<Value(const Value&)>& f, const Value& x,
                           double step = 1e-5, double tol = 1e-5);

}  // namespace adanet
