#pragma once

#include <vector>

#include "adanet/trace.hpp"

namespace adanet {

// Abstract cost units, not hardware FLOPs. The per-layer asymmetry
// defaults to camera-like layers costing 2.4x a lidar-like layer.
struct CostModel {
  std::vector<double> layer_cost = {1.0, 2.4};
  double token_cost = 0.01;
  double controller_overhead = 0.5;
  double skipgate_overhead = 0.1;
  double pruner_overhead = 0.1;

  void validate() const;
};

// Sum of executed-layer costs, surviving-token costs, and the fixed
// overheads of whichever modules the trace used. Additive and
// order-independent over trace entries.
double cost_of_trace(const ExecutionTrace& trace, const CostModel& cm,
                     bool used_controller = false, bool used_skipgate = false,
                     bool used_pruner = false);

// Maximum-budget semantics: fails iff more layers were controller-
// selected than the budget allows. SkipGate dropping below b still passes.
bool assert_budget(const ExecutionTrace& trace, int b);

}  // namespace adanet
