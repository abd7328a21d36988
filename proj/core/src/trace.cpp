#include "adanet/trace.hpp"

#include <json.hpp>

namespace adanet {

int ModalityTrace::selected_count() const {
  int c = 0;
  for (const auto& e : layers) c += e.selected ? 1 : 0;
  return c;
}

int ModalityTrace::executed_count() const {
  int c = 0;
  for (const auto& e : layers) c += e.executed ? 1 : 0;
  return c;
}

int ExecutionTrace::selected_count() const {
  int c = 0;
  for (const auto& m : modalities) c += m.selected_count();
  return c;
}

int ExecutionTrace::executed_count() const {
  int c = 0;
  for (const auto& m : modalities) c += m.executed_count();
  return c;
}

bool ExecutionTrace::executed_subset_of_selected() const {
  for (const auto& m : modalities)
    for (const auto& e : m.layers)
      if (e.executed && !e.selected) return false;
  return true;
}

std::string ExecutionTrace::to_json_line() const {
  nlohmann::json j;
  j["budget"] = budget;
  j["det_loss"] = det_loss;
  j["cost"] = cost;
  j["modalities"] = nlohmann::json::array();
  for (const auto& m : modalities) {
    nlohmann::json jm;
    jm["tokens_total"] = m.tokens_total;
    jm["tokens_kept"] = m.tokens_kept;
    jm["layers"] = nlohmann::json::array();
    for (const auto& e : m.layers)
      jm["layers"].push_back({{"l", e.layer}, {"sel", e.selected}, {"exec", e.executed}});
    j["modalities"].push_back(std::move(jm));
  }
  return j.dump();
}

ExecutionTrace ExecutionTrace::from_json_line(const std::string& line) {
  nlohmann::json j = nlohmann::json::parse(line);
  ExecutionTrace t;
  t.budget = j.at("budget");
  t.det_loss = j.at("det_loss");
  t.cost = j.at("cost");
  for (const auto& jm : j.at("modalities")) {
    ModalityTrace m;
    m.tokens_total = jm.at("tokens_total");
    m.tokens_kept = jm.at("tokens_kept");
    for (const auto& je : jm.at("layers"))
      m.layers.push_back({je.at("l"), je.at("sel"), je.at("exec")});
    t.modalities.push_back(std::move(m));
  }
  return t;
}

}  // namespace adanet
