#include "adanet/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace adanet {

GradCheckReport grad_check(const std::function<Value(const Value&)>& f, const Value& x,
                           double step, double tol) {
  if (step <= 0) throw std::invalid_argument("grad_check: step must be positive");
  Value probe = make_value(x->shape, x->data, true, "gc_leaf");
  Value loss = f(probe);
  if (!loss->is_scalar())
    throw std::invalid_argument("grad_check: f must return a scalar, got shape " +
                                shape_str(loss->shape));
  backward(loss);

  GradCheckReport rep;
  for (std::size_t i = 0; i < x->size(); ++i) {
    Value xp = make_value(x->shape, x->data, true, "gc_leaf");
    xp->data[i] += step;
    double fp = f(xp)->item();
    Value xm = make_value(x->shape, x->data, true, "gc_leaf");
    xm->data[i] -= step;
    double fm = f(xm)->item();
    double numeric = (fp - fm) / (2.0 * step);
    double analytic = probe->grad[i];
    double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-3});
    double rel = std::abs(numeric - analytic) / denom;
    if (rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst_index = i;
    }
  }
  rep.pass = rep.max_rel_error < tol;
  return rep;
}

}  // namespace adanet
