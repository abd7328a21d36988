#pragma once

#include <map>
#include <string>
#include <vector>

#include "adanet/rng.hpp"
#include "adanet/tensor.hpp"

namespace adanet {

// Named map of parameters. Frozen entries keep their values through
// optimizer steps; names are unique and iteration order is sorted, so a
// store walks the same way on every run.
class ParamStore {
 public:
  struct Entry {
    Value value;
    bool trainable = true;
    bool table = false;  // fixed embedding tables, never trainable
    std::vector<double> adam_m, adam_v;
  };

  // Creates (or errors on duplicate) a gaussian-initialised parameter.
  Value create(const std::string& name, Shape shape, SeededRng& rng, double stddev);
  Value create_zeros(const std::string& name, Shape shape);
  // Fixed tables (positional encodings etc.); never updated or saved as trainable.
  Value create_frozen(const std::string& name, Shape shape, std::vector<double> data);

  Value get(const std::string& name) const;
  bool has(const std::string& name) const { return entries_.count(name) > 0; }
  bool trainable(const std::string& name) const;

  void zero_grad();
  void sgd_step(double lr);
  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // Freezing is prefix-based so whole sub-networks can be locked at once.
  void freeze_all();
  void set_trainable(const std::string& prefix, bool trainable);
  // True iff some parameter outside `prefix` carries a nonzero gradient.
  bool grad_leak_outside(const std::string& prefix) const;

  std::vector<std::string> names() const;
  std::size_t size() const { return entries_.size(); }

  // Versioned JSON checkpoint: {"format":"adanet-params","version":1,...}.
  // Fixed tables are reconstructed from code, never checkpointed. An
  // explicit prefix list narrows the dump to those sub-networks.
  void save(const std::string& path) const;
  void save(const std::string& path, const std::vector<std::string>& prefixes) const;
  // Loads values for matching names, creating missing entries. Later loads
  // override earlier ones, which is what staged initialisation relies on.
  void load(const std::string& path);

  const std::map<std::string, Entry>& entries() const { return entries_; }

 private:
  Entry& insert(const std::string& name, Value v, bool trainable);
  std::map<std::string, Entry> entries_;
  long adam_t_ = 0;
};

}  // namespace adanet
