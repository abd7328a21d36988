#pragma once

#include <string>
#include <vector>

namespace adanet {

struct LayerEvent {
  int layer = 0;  // 1-based within the modality
  bool selected = false;
  bool executed = false;
};

struct ModalityTrace {
  std::vector<LayerEvent> layers;
  int tokens_total = 0;
  int tokens_kept = 0;

  int selected_count() const;
  int executed_count() const;
};

// Per-sample record of what actually ran.
struct ExecutionTrace {
  std::vector<ModalityTrace> modalities;
  int budget = 0;
  double det_loss = 0.0;
  double cost = 0.0;

  int selected_count() const;
  int executed_count() const;
  // SkipGate only filters within the allocation.
  bool executed_subset_of_selected() const;

  std::string to_json_line() const;
  static ExecutionTrace from_json_line(const std::string& line);
};

}  // namespace adanet
