#include "adanet/net.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace adanet {

namespace {

Value param(ParamStore& ps, const std::string& name, Shape shape, SeededRng& rng,
            double stddev) {
  if (ps.has(name)) return ps.get(name);
  return ps.create(name, std::move(shape), rng, stddev);
}

Value frozen_table(ParamStore& ps, const std::string& name, Shape shape,
                   std::vector<double> data) {
  if (ps.has(name)) return ps.get(name);
  return ps.create_frozen(name, std::move(shape), std::move(data));
}

double fan_std(int fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

}  // namespace

std::vector<double> sinusoidal_embedding(double pos, int dim) {
  std::vector<double> e(dim);
  for (int k = 0; 2 * k < dim; ++k) {
    double freq = std::pow(10000.0, -2.0 * k / dim);
    e[2 * k] = std::sin(pos * freq);
    if (2 * k + 1 < dim) e[2 * k + 1] = std::cos(pos * freq);
  }
  return e;
}

int BackboneSpec::total_layers() const {
  int s = 0;
  for (int l : layers) s += l;
  return s;
}

int BackboneSpec::max_layers() const { return *std::max_element(layers.begin(), layers.end()); }

std::vector<int> BackboneSpec::partition_offsets() const {
  std::vector<int> off;
  int acc = 0;
  for (int l : layers) off.push_back(acc += l);
  return off;
}

void BackboneSpec::validate() const {
  if (static_cast<int>(layers.size()) != modalities)
    throw std::invalid_argument("BackboneSpec: layer list does not match modality count");
  for (int l : layers)
    if (l < 1) throw std::invalid_argument("BackboneSpec: every modality needs >= 1 layer");
  if (layerdrop_rate < 0.0 || layerdrop_rate >= 1.0)
    throw std::invalid_argument("BackboneSpec: layerdrop rate must lie in [0,1)");
}

// ---------------------------------------------------------------------------
// SkipGate

SkipGate::SkipGate(ParamStore& ps, const std::string& prefix, int max_layers, int z_dim,
                   int width, SeededRng& rng) {
  const int ed = 16;
  std::vector<double> rows;
  for (int i = 0; i <= max_layers; ++i) {
    auto e = sinusoidal_embedding(i, ed);
    rows.insert(rows.end(), e.begin(), e.end());
  }
  table_ = frozen_table(ps, prefix + ".table", {max_layers + 1, ed}, std::move(rows));
  zproj_w_ = param(ps, prefix + ".zproj.w", {z_dim, ed}, rng, fan_std(z_dim));
  zproj_b_ = param(ps, prefix + ".zproj.b", {ed}, rng, 0.01);
  int q = width + 4 * ed;
  w1_ = param(ps, prefix + ".w1", {q, 32}, rng, fan_std(q));
  b1_ = param(ps, prefix + ".b1", {32}, rng, 0.01);
  w2_ = param(ps, prefix + ".w2", {32, 1}, rng, fan_std(32));
  b2_ = param(ps, prefix + ".b2", {1}, rng, 0.01);
}

Value SkipGate::table_row(int idx) const {
  if (idx < 0 || idx >= table_->shape[0])
    throw std::invalid_argument("SkipGate: context integer " + std::to_string(idx) +
                                " outside embedding table [0," +
                                std::to_string(table_->shape[0]) + ")");
  int ed = table_->shape[1];
  std::vector<double> row(table_->data.begin() + idx * ed,
                          table_->data.begin() + (idx + 1) * ed);
  return make_const({ed}, std::move(row));
}

Value SkipGate::logit(const Value& h_mean, int l, int l_r, int l_o, const Value& z) const {
  Value zp = add(reshape(matmul(reshape(z, {1, z->shape[0]}), zproj_w_), {zproj_b_->shape[0]}),
                 zproj_b_);
  Value q = concat({h_mean, table_row(l), zp, table_row(l_r), table_row(l_o)});
  Value hid = relu(add(reshape(matmul(reshape(q, {1, q->shape[0]}), w1_), {32}), b1_));
  return add(reshape(matmul(reshape(hid, {1, 32}), w2_), {1}), b2_);
}

// ---------------------------------------------------------------------------
// TokenScorer

TokenScorer::TokenScorer(ParamStore& ps, const std::string& prefix, int width, SeededRng& rng) {
  w1_ = param(ps, prefix + ".w1", {width, 16}, rng, fan_std(width));
  b1_ = param(ps, prefix + ".b1", {16}, rng, 0.01);
  w2_ = param(ps, prefix + ".w2", {16, 1}, rng, fan_std(16));
  // positive output bias: training starts from "keep every token", so the
  // utilization pressure has to win a token away from the detection loss
  // instead of the initial kept-set being a coin flip per token
  if (!ps.has(prefix + ".b2")) {
    b2_ = ps.create_zeros(prefix + ".b2", {1});
    b2_->data[0] = 4.0;
  } else {
    b2_ = ps.get(prefix + ".b2");
  }
}

Value TokenScorer::scores(const Value& h) const {
  Value hid = relu(add(matmul(h, w1_), b1_));
  Value logits = add(matmul(hid, w2_), b2_);  // [N,1]
  return sigmoid(reshape(logits, {h->shape[0]}));
}

// ---------------------------------------------------------------------------
// ModalityGates

ModalityGates ModalityGates::all_on(int n_layers) {
  ModalityGates g;
  g.hard.assign(n_layers, 1);
  return g;
}

ModalityGates ModalityGates::from_bits(std::vector<int> bits) {
  ModalityGates g;
  g.hard = std::move(bits);
  return g;
}

ModalityGates ModalityGates::from_soft(std::vector<Value> gates) {
  ModalityGates g;
  g.soft = std::move(gates);
  return g;
}

// ---------------------------------------------------------------------------
// AdaptiveNet

AdaptiveNet::AdaptiveNet(ParamStore& ps, BackboneSpec spec, SeededRng& rng)
    : spec_(std::move(spec)) {
  spec_.validate();
  int d = spec_.width, n = spec_.tokens();
  for (int m = 0; m < spec_.modalities; ++m) {
    std::string pre = "embed.m" + std::to_string(m);
    embed_w_.push_back(param(ps, pre + ".w", {1, d}, rng, 0.5));
    embed_b_.push_back(param(ps, pre + ".b", {d}, rng, 0.01));
    std::vector<double> pos;
    pos.reserve(static_cast<std::size_t>(n) * d);
    for (int r = 0; r < spec_.grid_h; ++r)
      for (int c = 0; c < spec_.grid_w; ++c) {
        auto er = sinusoidal_embedding(r, d / 2);
        auto ec = sinusoidal_embedding(c, d - d / 2);
        pos.insert(pos.end(), er.begin(), er.end());
        pos.insert(pos.end(), ec.begin(), ec.end());
      }
    pos_.push_back(frozen_table(ps, pre + ".pos", {n, d}, std::move(pos)));

    std::vector<Block> blocks;
    for (int l = 0; l < spec_.layers[m]; ++l) {
      std::string bp = "backbone.m" + std::to_string(m) + ".l" + std::to_string(l);
      Block b;
      b.w1 = param(ps, bp + ".w1", {d, spec_.hidden}, rng, fan_std(d));
      b.b1 = param(ps, bp + ".b1", {spec_.hidden}, rng, 0.01);
      b.w2 = param(ps, bp + ".w2", {spec_.hidden, d}, rng, fan_std(spec_.hidden));
      b.b2 = param(ps, bp + ".b2", {d}, rng, 0.01);
      b.wc = param(ps, bp + ".wc", {d, d}, rng, fan_std(d));
      blocks.push_back(std::move(b));
    }
    blocks_.push_back(std::move(blocks));
  }
  int fused = spec_.modalities * d, hh = 32;
  head_w1_ = param(ps, "head.w1", {fused, hh}, rng, fan_std(fused));
  head_wc_ = param(ps, "head.wc", {fused, hh}, rng, fan_std(fused));
  head_b1_ = param(ps, "head.b1", {hh}, rng, 0.01);
  head_w2_ = param(ps, "head.w2", {hh, 1}, rng, fan_std(hh));
  head_b2_ = param(ps, "head.b2", {1}, rng, 0.01);
}

Value AdaptiveNet::embed(int m, const std::vector<double>& grid) const {
  int n = spec_.tokens();
  if (static_cast<int>(grid.size()) != n)
    throw std::invalid_argument("embed: grid size does not match token grid");
  Value x = make_const({n, 1}, grid);
  return add(add(matmul(x, embed_w_[m]), embed_b_[m]), pos_[m]);
}

Value AdaptiveNet::layer_forward(int m, int l, const Value& h) const {
  const Block& b = blocks_[m][l];
  Value u = relu(add(matmul(h, b.w1), b.b1));
  Value v = add(matmul(u, b.w2), b.b2);
  Value ctx = reshape(matmul(reshape(mean_axis(h, 0), {1, spec_.width}), b.wc), {spec_.width});
  return add(add(h, v), ctx);
}

Value AdaptiveNet::encode_modality(int m, const Value& tokens0, const ModalityGates& gates,
                                   ModalityTrace* trace) const {
  int lm = spec_.layers[m];
  bool soft = !gates.soft.empty();
  if (soft && static_cast<int>(gates.soft.size()) != lm)
    throw std::invalid_argument("encode_modality: soft gate slice length " +
                                std::to_string(gates.soft.size()) + " != layer count " +
                                std::to_string(lm));
  if (!soft && static_cast<int>(gates.hard.size()) != lm)
    throw std::invalid_argument("encode_modality: hard mask length " +
                                std::to_string(gates.hard.size()) + " != layer count " +
                                std::to_string(lm));
  if (gates.skipgate && !gates.z)
    throw std::invalid_argument("encode_modality: SkipGate requires the controller embedding z");

  std::vector<int> selected(lm);
  for (int l = 0; l < lm; ++l)
    selected[l] = soft ? (gates.soft[l]->data[0] > 0.5 ? 1 : 0) : gates.hard[l];

  Value h = tokens0;
  for (int l = 0; l < lm; ++l) {
    bool executed = false;
    if (!gates.skipgate) {
      if (soft) {
        Value g = gates.soft[l];
        h = add(mul(layer_forward(m, l, h), g), mul(h, affine(g, -1.0, 1.0)));
        executed = true;
      } else if (gates.hard[l]) {
        h = layer_forward(m, l, h);
        executed = true;
      }
    } else {
      if (selected[l]) {
        // selected layers at or after l, so the count decrements exactly
        // when a selected layer is passed
        int l_r = 0;
        for (int k = l; k < lm; ++k) l_r += selected[k];
        Value d = gates.skipgate->logit(mean_axis(h, 0), l + 1, l_r, gates.other_alloc, gates.z);
        if (gates.logit_sink) gates.logit_sink->push_back(d);
        if (gates.inference) {
          if (d->data[0] > 0.0) {
            h = layer_forward(m, l, h);
            executed = true;
          }
        } else {
          if (!gates.rng)
            throw std::invalid_argument("encode_modality: SkipGate training needs an rng");
          Value a = gumbel_sigmoid(d, gates.tau_skip, *gates.rng, gates.skip_noise);
          Value eff = soft ? mul(gates.soft[l], a) : a;
          h = add(mul(layer_forward(m, l, h), eff), mul(h, affine(eff, -1.0, 1.0)));
          executed = true;
        }
      }
    }
    if (trace) trace->layers.push_back({l + 1, selected[l] != 0, executed});
  }
  return h;
}

Value AdaptiveNet::fuse_and_head(const std::vector<ModalityTokens>& tokens) const {
  if (static_cast<int>(tokens.size()) != spec_.modalities)
    throw std::invalid_argument("fuse_and_head: need tokens for every modality");
  int n = spec_.tokens();
  std::vector<Value> dense;
  for (const auto& t : tokens) {
    if (t.kept.empty()) {
      if (t.feats->shape[0] != n)
        throw std::invalid_argument("fuse_and_head: dense token block has wrong row count");
      dense.push_back(t.feats);
    } else {
      dense.push_back(scatter_rows(t.feats, t.kept, n));
    }
  }
  Value fused = concat_cols(dense);
  Value ctx = scale(sum_axis(fused, 0), 1.0 / n);
  Value ctx_h = reshape(matmul(reshape(ctx, {1, ctx->shape[0]}), head_wc_), {head_b1_->shape[0]});
  Value hid = relu(add(add(matmul(fused, head_w1_), ctx_h), head_b1_));
  Value logits = add(matmul(hid, head_w2_), head_b2_);
  return reshape(logits, {spec_.grid_h, spec_.grid_w});
}

Value AdaptiveNet::detection_loss(const Value& logits,
                                  const std::vector<double>& occupancy) const {
  return bce_with_logits(logits, make_const(logits->shape, occupancy));
}

// ---------------------------------------------------------------------------

std::vector<std::vector<int>> layerdrop_mask(const BackboneSpec& spec, SeededRng& rng) {
  std::vector<std::vector<int>> mask;
  for (int m = 0; m < spec.modalities; ++m) {
    std::vector<int> bits(spec.layers[m]);
    for (auto& b : bits) b = rng.uniform() < spec.layerdrop_rate ? 0 : 1;
    mask.push_back(std::move(bits));
  }
  return mask;
}

void modality_dropout(Scene& scene, SeededRng& rng, double rate) {
  if (rng.uniform() >= rate) return;
  if (rng.below(2) == 0)
    std::fill(scene.grid_a.begin(), scene.grid_a.end(), 0.0);
  else
    std::fill(scene.grid_b.begin(), scene.grid_b.end(), 0.0);
}

PruneResult prune_tokens_soft(const Value& h, const Value& w_hard) {
  PruneResult r;
  r.total = h->shape[0];
  r.tokens.feats = scale_rows(h, w_hard);
  r.tokens.total = r.total;
  for (int i = 0; i < r.total; ++i)
    if (w_hard->data[i] != 0.0) r.kept.push_back(i);
  return r;
}

PruneResult prune_tokens_hard(const Value& h, const std::vector<double>& w_hard,
                              const std::vector<double>& scores) {
  int n = h->shape[0];
  PruneResult r;
  r.total = n;
  for (int i = 0; i < n; ++i)
    if (w_hard[i] != 0.0) r.kept.push_back(i);
  if (r.kept.empty()) {
    // degenerate all-pruned case: keep the single highest-score token
    int best = static_cast<int>(std::max_element(scores.begin(), scores.end()) -
                                scores.begin());
    r.kept.push_back(best);
  }
  r.tokens.feats = gather_rows(h, r.kept);
  r.tokens.kept = r.kept;
  r.tokens.total = n;
  return r;
}

}  // namespace adanet
