#pragma once

#include <string>
#include <vector>

#include "adanet/data.hpp"
#include "adanet/net.hpp"
#include "adanet/optim.hpp"
#include "adanet/relax.hpp"

namespace adanet {

struct ControllerConfig {
  int z_dim = 32;  // split evenly across modalities
  int hidden = 64;
  int budget_embed_dim = 16;
  std::vector<int> budgets = {4, 6, 8, 16};
};

// Budget-conditioned layer allocator: QoI extraction per modality, an
// auxiliary corruption-class head, and an allocation MLP over
// z || e_b. One weight set serves every budget in the library.
class Controller {
 public:
  Controller(ParamStore& ps, const std::string& prefix, const BackboneSpec& spec,
             ControllerConfig cfg, SeededRng& rng);

  const ControllerConfig& config() const { return cfg_; }

  // z = Concat_m(pooled per-token features of modality m).
  Value extract_qoi(const Scene& scene) const;
  Value env_logits(const Value& z) const;
  Value env_loss(const Value& z, int y_env) const;

  // pi = MLP_alloc(z || e_b), length L, partitioned per modality.
  // b must be a library budget.
  LogitVector allocate(const Value& z, int b) const;

  // Hard inference path: top-b logits, no Gumbel noise.
  HardMask infer_allocation(const Scene& scene, int b) const;

  // Per-modality slices of a flat layer mask.
  std::vector<std::vector<int>> split_mask(const HardMask& mask) const;

 private:
  Value budget_embedding(int b) const;
  Value qoi_modality(int m, const std::vector<double>& grid, int h, int w) const;

  ControllerConfig cfg_;
  std::vector<int> layers_;
  std::vector<int> offsets_;
  struct Qoi {
    Value w1, b1, w2, b2;
  };
  std::vector<Qoi> qoi_;
  Value env_w1_, env_b1_, env_w2_, env_b2_;
  Value alloc_w1_, alloc_b1_, alloc_w2_, alloc_b2_, alloc_w3_, alloc_b3_;
  Value budget_table_;  // one fixed sinusoidal row per library budget
};

// Budget split of the naive baseline: as even as possible, odd layer to
// the modality with more layers, filling each backbone from the front.
std::vector<std::vector<int>> naive_allocation(const BackboneSpec& spec, int b);

}  // namespace adanet
