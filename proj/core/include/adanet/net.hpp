#pragma once

#include <optional>
#include <string>
#include <vector>

#include "adanet/data.hpp"
#include "adanet/optim.hpp"
#include "adanet/relax.hpp"
#include "adanet/rng.hpp"
#include "adanet/tensor.hpp"
#include "adanet/trace.hpp"

namespace adanet {

// Fixed interleaved sin/cos embedding with geometric frequencies.
std::vector<double> sinusoidal_embedding(double pos, int dim);

struct BackboneSpec {
  int modalities = 2;
  std::vector<int> layers = {8, 12};  // modality A (sharp), modality B (broad)
  int width = 32;                     // token feature size D
  int hidden = 32;
  int grid_h = 8, grid_w = 8;
  double layerdrop_rate = 0.2;
  int embed_dim = 16;  // sinusoidal context embedding size

  int total_layers() const;
  int max_layers() const;
  int tokens() const { return grid_h * grid_w; }
  // Partition ends of the flat layer index space, [L_1, L_1+L_2, ...].
  std::vector<int> partition_offsets() const;
  void validate() const;
};

// Per-modality gate module shared across that modality's layers. Maps
// (mean feature, layer index, layers remaining, other-modality
// allocation, controller embedding) to an execute/skip logit.
class SkipGate {
 public:
  SkipGate(ParamStore& ps, const std::string& prefix, int max_layers, int z_dim, int width,
           SeededRng& rng);

  // d = MLP_skip(h_mean || e_l || MLP_z(z) || e_{l_r} || e_{l_o})
  Value logit(const Value& h_mean, int l, int l_r, int l_o, const Value& z) const;
  Value table_row(int idx) const;
  int table_size() const { return table_->shape[0]; }

 private:
  Value table_;  // fixed sinusoidal rows for integers 0..max_layers
  Value zproj_w_, zproj_b_;
  Value w1_, b1_, w2_, b2_;
};

// Per-modality two-layer per-token scorer with sigmoid output.
class TokenScorer {
 public:
  TokenScorer(ParamStore& ps, const std::string& prefix, int width, SeededRng& rng);
  // h is [N,D]; result is [N] with entries in (0,1).
  Value scores(const Value& h) const;

 private:
  Value w1_, b1_, w2_, b2_;
};

// How one modality's layers are gated for a forward pass. Exactly one
// of soft/hard is set; a SkipGate may additionally filter within the
// selection.
struct ModalityGates {
  std::vector<Value> soft;  // scalar gate per layer
  std::vector<int> hard;    // binary bit per layer
  const SkipGate* skipgate = nullptr;
  Value z;                // controller embedding, required with skipgate
  int other_alloc = 0;    // l_o
  double tau_skip = 1.0;
  SeededRng* rng = nullptr;
  bool skip_noise = true;
  bool inference = false;  // threshold d > 0 instead of Gumbel-Sigmoid
  std::vector<Value>* logit_sink = nullptr;  // collects d per selected layer

  static ModalityGates all_on(int n_layers);
  static ModalityGates from_bits(std::vector<int> bits);
  static ModalityGates from_soft(std::vector<Value> gates);
};

// Tokens headed for fusion. An empty kept list means all grid positions
// are present in order; otherwise feats row k sits at grid cell kept[k].
struct ModalityTokens {
  Value feats;
  std::vector<int> kept;
  int total = 0;
};

struct PruneResult {
  ModalityTokens tokens;
  std::vector<int> kept;
  int total = 0;
};

// The layer-adaptive two-modality backbone with gated residual
// execution plus the surrogate occupancy head.
class AdaptiveNet {
 public:
  AdaptiveNet(ParamStore& ps, BackboneSpec spec, SeededRng& rng);

  const BackboneSpec& spec() const { return spec_; }

  // Raw grid to token features [N,D] (learned lift + fixed positions).
  Value embed(int m, const std::vector<double>& grid) const;

  // h_l = g_l * f_l(h_{l-1}) + (1 - g_l) * h_{l-1}. With a SkipGate the
  // training-mode gate becomes g_l * a_l; at inference a layer runs iff
  // it is selected and its logit is strictly positive.
  Value encode_modality(int m, const Value& tokens0, const ModalityGates& gates,
                        ModalityTrace* trace = nullptr) const;

  // Permutation-invariant fusion over per-cell tokens plus a global
  // sum-pooled context, then per-cell occupancy logits [H,W].
  Value fuse_and_head(const std::vector<ModalityTokens>& tokens) const;

  Value detection_loss(const Value& logits, const std::vector<double>& occupancy) const;

  // One residual block applied unconditionally (oracle building block).
  Value layer_forward(int m, int l, const Value& h) const;

 private:
  BackboneSpec spec_;
  struct Block {
    Value w1, b1, w2, b2, wc;
  };
  std::vector<Value> embed_w_, embed_b_, pos_;
  std::vector<std::vector<Block>> blocks_;
  Value head_w1_, head_wc_, head_b1_, head_w2_, head_b2_;
};

// Keep-bit per layer; drop probability = rate.
std::vector<std::vector<int>> layerdrop_mask(const BackboneSpec& spec, SeededRng& rng);

// With probability rate, zero one uniformly chosen modality in place.
void modality_dropout(Scene& scene, SeededRng& rng, double rate);

// Soft mode keeps zeroed tokens in the grid; hard mode removes them.
// Hard mode with zero survivors keeps the single highest-score token.
PruneResult prune_tokens_soft(const Value& h, const Value& w_hard);
PruneResult prune_tokens_hard(const Value& h, const std::vector<double>& w_hard,
                              const std::vector<double>& scores);

}  // namespace adanet
