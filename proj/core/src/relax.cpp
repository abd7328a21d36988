#include "adanet/relax.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace adanet {

RelaxedPermutation neuralsort(const Value& pi, double tau) {
  if (tau <= 0) throw std::invalid_argument("neuralsort: tau must be positive");
  if (pi->shape.size() != 1 || pi->shape[0] < 1)
    throw std::invalid_argument("neuralsort: need a non-empty 1-D logit vector, got " +
                                shape_str(pi->shape));
  int n = pi->shape[0];
  std::vector<double> coeff(n);
  for (int i = 1; i <= n; ++i) coeff[i - 1] = static_cast<double>(n + 1 - 2 * i);
  Value c = make_const({n, 1}, std::move(coeff));
  Value scores = sub(matmul(c, reshape(pi, {1, n})), sum_axis(abs_pairwise_diff(pi), 1));
  return {softmax_rows(scale(scores, 1.0 / tau)), tau};
}

double sample_gumbel_scalar(SeededRng& rng) {
  double u = std::clamp(rng.uniform(), 1e-12, 1.0 - 1e-12);
  return -std::log(-std::log(u));
}

Value sample_gumbel(SeededRng& rng, Shape shape) {
  std::vector<double> d(numel(shape));
  for (auto& x : d) x = sample_gumbel_scalar(rng);
  return make_const(std::move(shape), std::move(d));
}

SoftGateVector budget_gate(const RelaxedPermutation& P, int b, std::vector<int> offsets) {
  int n = P.matrix->shape[0];
  if (b < 0 || b > n)
    throw std::invalid_argument("budget_gate: budget " + std::to_string(b) +
                                " outside [0," + std::to_string(n) + "]");
  std::vector<double> sel(static_cast<std::size_t>(n), 0.0);
  std::fill(sel.begin(), sel.begin() + b, 1.0);
  Value ones_b = make_const({1, n}, std::move(sel));
  Value g = reshape(matmul(ones_b, P.matrix), {n});
  return {g, b, std::move(offsets)};
}

HardMask topk_mask(const std::vector<double>& pi, int b) {
  int n = static_cast<int>(pi.size());
  if (b < 0 || b > n)
    throw std::invalid_argument("topk_mask: budget " + std::to_string(b) + " outside [0," +
                                std::to_string(n) + "]");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int c) { return pi[a] > pi[c]; });
  HardMask m;
  m.bits.assign(n, 0);
  for (int i = 0; i < b; ++i) m.bits[order[i]] = 1;
  return m;
}

Value gumbel_sigmoid(const Value& d, double tau, SeededRng& rng, bool noise) {
  if (tau <= 0) throw std::invalid_argument("gumbel_sigmoid: tau must be positive");
  double shift = noise ? sample_gumbel_scalar(rng) - sample_gumbel_scalar(rng) : 0.0;
  return sigmoid(affine(d, 1.0 / tau, shift / tau));
}

SoftGateVector st_topk(const Value& pi, int b, double tau, SeededRng& rng, bool noise,
                       const std::vector<int>& force_active) {
  if (tau <= 0) throw std::invalid_argument("st_topk: tau must be positive");
  int n = pi->shape[0];
  int forced = static_cast<int>(force_active.size());
  if (b < forced || b > n)
    throw std::invalid_argument("st_topk: budget " + std::to_string(b) + " outside [" +
                                std::to_string(forced) + "," + std::to_string(n) + "]");
  // forced logits sit far below the rest so they never compete in the softmax
  std::vector<double> bias(static_cast<std::size_t>(n), 0.0);
  for (int i : force_active) bias[i] = -99.0 - pi->data[i];
  if (noise)
    for (int i = 0; i < n; ++i)
      if (bias[i] == 0.0) bias[i] = sample_gumbel_scalar(rng);
  Value perturbed = add(pi, make_const({n}, std::move(bias)));
  Value soft = reshape(softmax_rows(scale(reshape(perturbed, {1, n}), 1.0 / tau)), {n});

  std::vector<double> free_scores = perturbed->data;
  HardMask top = topk_mask(free_scores, b - forced);
  std::vector<double> hard(top.bits.begin(), top.bits.end());
  for (int i : force_active) hard[i] = 1.0;
  return {st_hard(soft, std::move(hard)), b, {}};
}

Value hinge_utilization(const std::vector<Value>& d, double beta, double beta_m) {
  if (beta <= 0 || beta_m <= 0)
    throw std::invalid_argument("hinge_utilization: beta and beta_m must be positive");
  if (d.empty()) return make_scalar(0.0);
  Value v = concat(d);
  return scale(sum_all(relu(affine(v, 1.0, beta))), 1.0 / beta_m);
}

double logit_margin(const std::vector<double>& pi, int b) {
  int n = static_cast<int>(pi.size());
  if (b <= 0 || b >= n)
    throw std::invalid_argument("logit_margin: budget must lie strictly inside (0,n)");
  std::vector<double> sorted = pi;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  return sorted[b - 1] - sorted[b];
}

}  // namespace adanet
