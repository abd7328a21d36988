#pragma once

#include <vector>

#include "adanet/rng.hpp"
#include "adanet/tensor.hpp"

namespace adanet {

// Allocation logits over all layers, partitioned per modality.
// offsets are the cumulative partition ends; the last equals n.
struct LogitVector {
  Value values;
  std::vector<int> offsets;

  int size() const { return values->shape[0]; }
};

// Row-stochastic soft permutation; row i approximates the indicator of
// the i-th largest logit (1-based row convention).
struct RelaxedPermutation {
  Value matrix;
  double tau = 1.0;
};

// Soft per-layer gates with sum(gates) == budget.
struct SoftGateVector {
  Value gates;
  int budget = 0;
  std::vector<int> offsets;
};

struct HardMask {
  std::vector<int> bits;

  int popcount() const {
    int c = 0;
    for (int b : bits) c += b;
    return c;
  }
};

// Soft permutation of the logits: row i is
// softmax(((n+1-2i)*pi - A_pi*1) / tau) with i in {1..n}.
RelaxedPermutation neuralsort(const Value& pi, double tau);
inline RelaxedPermutation neuralsort(const LogitVector& pi, double tau) {
  return neuralsort(pi.values, tau);
}

// Gumbel(0,1) draws as a constant (gradient-free) value. Uniforms are
// clamped to [1e-12, 1-1e-12] before the double log.
Value sample_gumbel(SeededRng& rng, Shape shape);
double sample_gumbel_scalar(SeededRng& rng);

// Sum of the first b rows of the soft permutation; sums to b exactly.
SoftGateVector budget_gate(const RelaxedPermutation& P, int b,
                           std::vector<int> offsets = {});

// Hard selection of the b largest logits; ties go to the lower index.
HardMask topk_mask(const std::vector<double>& pi, int b);
inline HardMask topk_mask(const LogitVector& pi, int b) { return topk_mask(pi.values->data, b); }

// sigma((d + g1 - g2) / tau). noise=false makes the op deterministic.
Value gumbel_sigmoid(const Value& d, double tau, SeededRng& rng, bool noise = true);

// Straight-through top-k baseline estimator: forward emits the hard
// top-k of softmax(pi + Gumbel, tau); backward treats discretization as
// identity onto the softmax. force_active indices are always selected
// (their logits are excluded from the softmax competition).
SoftGateVector st_topk(const Value& pi, int b, double tau, SeededRng& rng, bool noise = true,
                       const std::vector<int>& force_active = {});

// sum_l ReLU(d_l + beta) / beta_m; dead below -beta.
Value hinge_utilization(const std::vector<Value>& d, double beta, double beta_m);

// b-th largest logit minus (b+1)-th largest.
double logit_margin(const std::vector<double>& pi, int b);

}  // namespace adanet
