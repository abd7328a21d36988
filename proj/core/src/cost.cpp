#include "adanet/cost.hpp"

#include <stdexcept>

namespace adanet {

void CostModel::validate() const {
  for (double c : layer_cost)
    if (c <= 0) throw std::invalid_argument("CostModel: layer costs must be positive");
  if (token_cost <= 0) throw std::invalid_argument("CostModel: token cost must be positive");
}

double cost_of_trace(const ExecutionTrace& trace, const CostModel& cm, bool used_controller,
                     bool used_skipgate, bool used_pruner) {
  double total = 0.0;
  for (std::size_t m = 0; m < trace.modalities.size(); ++m) {
    double lc = m < cm.layer_cost.size() ? cm.layer_cost[m] : cm.layer_cost.back();
    total += lc * trace.modalities[m].executed_count();
    total += cm.token_cost * trace.modalities[m].tokens_kept;
  }
  if (used_controller) total += cm.controller_overhead;
  if (used_skipgate) total += cm.skipgate_overhead;
  if (used_pruner) total += cm.pruner_overhead;
  return total;
}

bool assert_budget(const ExecutionTrace& trace, int b) {
  return trace.selected_count() <= b;
}

}  // namespace adanet
