#include "adanet/controller.hpp"

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

double fan_std(int fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

}  // namespace

Controller::Controller(ParamStore& ps, const std::string& prefix, const BackboneSpec& spec,
                       ControllerConfig cfg, SeededRng& rng)
    : cfg_(std::move(cfg)), layers_(spec.layers), offsets_(spec.partition_offsets()) {
  int m_count = spec.modalities;
  if (cfg_.z_dim % m_count != 0)
    throw std::invalid_argument("Controller: z_dim must divide evenly across modalities");
  int dm = cfg_.z_dim / m_count;
  int total = spec.total_layers();
  for (int b : cfg_.budgets)
    if (b < 0 || b > total)
      throw std::invalid_argument("Controller: library budget " + std::to_string(b) +
                                  " exceeds layer count " + std::to_string(total));
  if (!std::is_sorted(cfg_.budgets.begin(), cfg_.budgets.end()))
    throw std::invalid_argument("Controller: budgets must be strictly increasing");

  for (int m = 0; m < m_count; ++m) {
    std::string pre = prefix + ".qoi.m" + std::to_string(m);
    Qoi q;
    q.w1 = param(ps, pre + ".w1", {9, 16}, rng, fan_std(9));
    q.b1 = param(ps, pre + ".b1", {16}, rng, 0.01);
    q.w2 = param(ps, pre + ".w2", {16, dm}, rng, fan_std(16));
    q.b2 = param(ps, pre + ".b2", {dm}, rng, 0.01);
    qoi_.push_back(std::move(q));
  }
  env_w1_ = param(ps, prefix + ".env.w1", {cfg_.z_dim, cfg_.hidden}, rng, fan_std(cfg_.z_dim));
  env_b1_ = param(ps, prefix + ".env.b1", {cfg_.hidden}, rng, 0.01);
  env_w2_ = param(ps, prefix + ".env.w2", {cfg_.hidden, kNumEnvClasses}, rng,
                  fan_std(cfg_.hidden));
  env_b2_ = param(ps, prefix + ".env.b2", {kNumEnvClasses}, rng, 0.01);

  int in = cfg_.z_dim + cfg_.budget_embed_dim;
  alloc_w1_ = param(ps, prefix + ".alloc.w1", {in, cfg_.hidden}, rng, fan_std(in));
  alloc_b1_ = param(ps, prefix + ".alloc.b1", {cfg_.hidden}, rng, 0.01);
  alloc_w2_ = param(ps, prefix + ".alloc.w2", {cfg_.hidden, cfg_.hidden}, rng,
                    fan_std(cfg_.hidden));
  alloc_b2_ = param(ps, prefix + ".alloc.b2", {cfg_.hidden}, rng, 0.01);
  alloc_w3_ = param(ps, prefix + ".alloc.w3", {cfg_.hidden, total}, rng, fan_std(cfg_.hidden));
  alloc_b3_ = param(ps, prefix + ".alloc.b3", {total}, rng, 0.01);

  std::vector<double> rows;
  for (int b : cfg_.budgets) {
    auto e = sinusoidal_embedding(b, cfg_.budget_embed_dim);
    rows.insert(rows.end(), e.begin(), e.end());
  }
  std::string tn = prefix + ".budget_table";
  budget_table_ = ps.has(tn) ? ps.get(tn)
                             : ps.create_frozen(tn,
                                                {static_cast<int>(cfg_.budgets.size()),
                                                 cfg_.budget_embed_dim},
                                                std::move(rows));
}

Value Controller::budget_embedding(int b) const {
  auto it = std::find(cfg_.budgets.begin(), cfg_.budgets.end(), b);
  if (it == cfg_.budgets.end())
    throw std::invalid_argument("Controller: budget " + std::to_string(b) +
                                " has no library embedding");
  int idx = static_cast<int>(it - cfg_.budgets.begin());
  int ed = cfg_.budget_embed_dim;
  std::vector<double> row(budget_table_->data.begin() + idx * ed,
                          budget_table_->data.begin() + (idx + 1) * ed);
  return make_const({ed}, std::move(row));
}

Value Controller::qoi_modality(int m, const std::vector<double>& grid, int h, int w) const {
  // 3x3 zero-padded neighbourhood per token, a conv expressed as a
  // per-token MLP over flattened patches
  int n = h * w;
  std::vector<double> patches(static_cast<std::size_t>(n) * 9, 0.0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      int t = r * w + c;
      int k = 0;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc, ++k) {
          int rr = r + dr, cc = c + dc;
          if (rr >= 0 && rr < h && cc >= 0 && cc < w)
            patches[t * 9 + k] = grid[rr * w + cc];
        }
    }
  Value x = make_const({n, 9}, std::move(patches));
  Value hid = relu(add(matmul(x, qoi_[m].w1), qoi_[m].b1));
  Value feat = add(matmul(hid, qoi_[m].w2), qoi_[m].b2);
  return mean_axis(feat, 0);
}

Value Controller::extract_qoi(const Scene& scene) const {
  std::vector<Value> parts;
  parts.push_back(qoi_modality(0, scene.grid_a, scene.h, scene.w));
  parts.push_back(qoi_modality(1, scene.grid_b, scene.h, scene.w));
  return concat(parts);
}

Value Controller::env_logits(const Value& z) const {
  Value hid = relu(add(reshape(matmul(reshape(z, {1, cfg_.z_dim}), env_w1_), {cfg_.hidden}),
                       env_b1_));
  return add(reshape(matmul(reshape(hid, {1, cfg_.hidden}), env_w2_), {kNumEnvClasses}),
             env_b2_);
}

Value Controller::env_loss(const Value& z, int y_env) const {
  if (y_env < 0 || y_env >= kNumEnvClasses)
    throw std::invalid_argument("env_loss: label " + std::to_string(y_env) +
                                " outside [0," + std::to_string(kNumEnvClasses) + ")");
  return ce_with_logits(env_logits(z), y_env);
}

LogitVector Controller::allocate(const Value& z, int b) const {
  Value zb = concat({z, budget_embedding(b)});
  int in = zb->shape[0];
  Value h1 = relu(add(reshape(matmul(reshape(zb, {1, in}), alloc_w1_), {cfg_.hidden}),
                      alloc_b1_));
  Value h2 = relu(add(reshape(matmul(reshape(h1, {1, cfg_.hidden}), alloc_w2_), {cfg_.hidden}),
                      alloc_b2_));
  Value pi = add(reshape(matmul(reshape(h2, {1, cfg_.hidden}), alloc_w3_),
                         {alloc_b3_->shape[0]}),
                 alloc_b3_);
  return {pi, offsets_};
}

HardMask Controller::infer_allocation(const Scene& scene, int b) const {
  return topk_mask(allocate(extract_qoi(scene), b), b);
}

std::vector<std::vector<int>> Controller::split_mask(const HardMask& mask) const {
  std::vector<std::vector<int>> out;
  int start = 0;
  for (int end : offsets_) {
    out.emplace_back(mask.bits.begin() + start, mask.bits.begin() + end);
    start = end;
  }
  return out;
}

std::vector<std::vector<int>> naive_allocation(const BackboneSpec& spec, int b) {
  int total = spec.total_layers();
  if (b < 0 || b > total)
    throw std::invalid_argument("naive_allocation: budget " + std::to_string(b) +
                                " outside [0," + std::to_string(total) + "]");
  int m_count = spec.modalities;
  std::vector<int> share(m_count, b / m_count);
  int extra = b % m_count;
  // odd layers go to the modalities with larger backbones
  std::vector<int> order(m_count);
  for (int m = 0; m < m_count; ++m) order[m] = m;
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int c) { return spec.layers[a] > spec.layers[c]; });
  for (int i = 0; i < extra; ++i) share[order[i]] += 1;
  // spill over if a backbone is smaller than its share
  for (int m = 0; m < m_count; ++m) {
    if (share[m] > spec.layers[m]) {
      int spill = share[m] - spec.layers[m];
      share[m] = spec.layers[m];
      for (int k = 0; k < m_count && spill > 0; ++k) {
        int room = spec.layers[k] - share[k];
        int take = std::min(room, spill);
        share[k] += take;
        spill -= take;
      }
    }
  }
  std::vector<std::vector<int>> mask;
  for (int m = 0; m < m_count; ++m) {
    std::vector<int> bits(spec.layers[m], 0);
    std::fill(bits.begin(), bits.begin() + share[m], 1);
    mask.push_back(std::move(bits));
  }
  return mask;
}

}  // namespace adanet
