#include "adanet/optim.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace adanet {

ParamStore::Entry& ParamStore::insert(const std::string& name, Value v, bool trainable) {
  auto [it, fresh] = entries_.try_emplace(name);
  if (!fresh) throw std::invalid_argument("ParamStore: duplicate name '" + name + "'");
  it->second.value = std::move(v);
  it->second.trainable = trainable;
  return it->second;
}

Value ParamStore::create(const std::string& name, Shape shape, SeededRng& rng, double stddev) {
  std::vector<double> d(numel(shape));
  for (auto& x : d) x = rng.normal(0.0, stddev);
  return insert(name, make_value(std::move(shape), std::move(d), true, "param"), true).value;
}

Value ParamStore::create_zeros(const std::string& name, Shape shape) {
  return insert(name, make_zeros(std::move(shape), true), true).value;
}

Value ParamStore::create_frozen(const std::string& name, Shape shape, std::vector<double> data) {
  Entry& e = insert(name, make_value(std::move(shape), std::move(data), false, "table"), false);
  e.table = true;
  return e.value;
}

Value ParamStore::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end())
    throw std::invalid_argument("ParamStore: unknown name '" + name + "'");
  return it->second.value;
}

bool ParamStore::trainable(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end())
    throw std::invalid_argument("ParamStore: unknown name '" + name + "'");
  return it->second.trainable;
}

void ParamStore::zero_grad() {
  for (auto& [_, e] : entries_) e.value->zero_grad();
}

void ParamStore::sgd_step(double lr) {
  for (auto& [_, e] : entries_) {
    if (!e.trainable) continue;
    for (std::size_t i = 0; i < e.value->size(); ++i)
      e.value->data[i] -= lr * e.value->grad[i];
  }
}

void ParamStore::adam_step(double lr, double beta1, double beta2, double eps) {
  ++adam_t_;
  double bc1 = 1.0 - std::pow(beta1, adam_t_);
  double bc2 = 1.0 - std::pow(beta2, adam_t_);
  for (auto& [_, e] : entries_) {
    if (!e.trainable) continue;
    if (e.adam_m.size() != e.value->size()) {
      e.adam_m.assign(e.value->size(), 0.0);
      e.adam_v.assign(e.value->size(), 0.0);
    }
    for (std::size_t i = 0; i < e.value->size(); ++i) {
      double g = e.value->grad[i];
      e.adam_m[i] = beta1 * e.adam_m[i] + (1 - beta1) * g;
      e.adam_v[i] = beta2 * e.adam_v[i] + (1 - beta2) * g * g;
      e.value->data[i] -= lr * (e.adam_m[i] / bc1) / (std::sqrt(e.adam_v[i] / bc2) + eps);
    }
  }
}

void ParamStore::freeze_all() {
  for (auto& [_, e] : entries_) {
    e.trainable = false;
    e.value->requires_grad = false;
  }
}

void ParamStore::set_trainable(const std::string& prefix, bool trainable) {
  for (auto& [name, e] : entries_)
    if (name.rfind(prefix, 0) == 0 && !e.table) {
      e.trainable = trainable;
      e.value->requires_grad = trainable;
    }
}

bool ParamStore::grad_leak_outside(const std::string& prefix) const {
  for (const auto& [name, e] : entries_) {
    if (name.rfind(prefix, 0) == 0) continue;
    for (double g : e.value->grad)
      if (g != 0.0) return true;
  }
  return false;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

void ParamStore::save(const std::string& path) const { save(path, {}); }

void ParamStore::save(const std::string& path, const std::vector<std::string>& prefixes) const {
  nlohmann::json j;
  j["format"] = "adanet-params";
  j["version"] = 1;
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, e] : entries_) {
    if (e.table) continue;
    if (!prefixes.empty()) {
      bool hit = false;
      for (const auto& p : prefixes)
        if (name.rfind(p, 0) == 0) {
          hit = true;
          break;
        }
      if (!hit) continue;
    }
    params[name] = {{"shape", e.value->shape}, {"data", e.value->data}};
  }
  j["params"] = std::move(params);
  std::ofstream f(path);
  if (!f) throw std::runtime_error("ParamStore: cannot write '" + path + "'");
  f << j.dump();
}

void ParamStore::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("ParamStore: cannot read '" + path + "'");
  nlohmann::json j;
  f >> j;
  if (j.value("format", "") != "adanet-params")
    throw std::runtime_error("ParamStore: '" + path + "' is not a parameter checkpoint");
  if (j.value("version", 0) != 1)
    throw std::runtime_error("ParamStore: unsupported checkpoint version in '" + path + "'");
  for (auto& [name, entry] : j.at("params").items()) {
    Shape shape = entry.at("shape").get<Shape>();
    std::vector<double> data = entry.at("data").get<std::vector<double>>();
    auto it = entries_.find(name);
    if (it == entries_.end()) {
      insert(name, make_value(std::move(shape), std::move(data), true, "param"), true);
    } else {
      if (it->second.value->shape != shape)
        throw std::runtime_error("ParamStore: shape mismatch for '" + name + "' in '" + path +
                                 "'");
      it->second.value->data = std::move(data);
    }
  }
}

}  // namespace adanet
