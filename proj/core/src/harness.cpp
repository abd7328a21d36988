#include "adanet/harness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "adanet/gradcheck.hpp"
#include "adanet/relax.hpp"
#include "adanet/trace.hpp"

namespace adanet {

namespace fs = std::filesystem;

const std::vector<std::string> kVariants = {"naive", "ctrl", "ctrl-skip", "ctrl-skip-prune",
                                            "st-baseline"};

// ---------------------------------------------------------------------------
// RunConfig

namespace {

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
  return out;
}

bool parse_bool(const std::string& s) {
  if (s == "1" || s == "true" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "no") return false;
  throw std::invalid_argument("config: not a boolean: '" + s + "'");
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void RunConfig::apply(const std::string& key, const std::string& value) {
  if (key == "seed") seed = std::stoull(value);
  else if (key == "out_dir") out_dir = value;
  else if (key == "train_scenes") train_scenes = std::stoi(value);
  else if (key == "eval_scenes_per_cell") eval_scenes_per_cell = std::stoi(value);
  else if (key == "train_sev_lo") train_sev_lo = std::stod(value);
  else if (key == "train_sev_hi") train_sev_hi = std::stod(value);
  else if (key == "eval_sev_lo") eval_sev_lo = std::stod(value);
  else if (key == "eval_sev_hi") eval_sev_hi = std::stod(value);
  else if (key == "alpha1") alpha1 = std::stod(value);
  else if (key == "alpha2") alpha2 = std::stod(value);
  else if (key == "alpha3") alpha3 = std::stod(value);
  else if (key == "beta") beta = std::stod(value);
  else if (key == "lr") lr = std::stod(value);
  else if (key == "modality_dropout") modality_dropout_rate = std::stod(value);
  else if (key == "tau_floor") tau_floor = std::stod(value);
  else if (key == "tau_floor_skip") tau_floor_skip = std::stod(value);
  else if (key == "epochs_stage1") epochs_stage1 = std::stoi(value);
  else if (key == "epochs_stage2") epochs_stage2 = std::stoi(value);
  else if (key == "epochs_stage3") epochs_stage3 = std::stoi(value);
  else if (key == "epochs_stage4") epochs_stage4 = std::stoi(value);
  else if (key == "epochs_stage5_soft") epochs_stage5_soft = std::stoi(value);
  else if (key == "epochs_stage5_hard") epochs_stage5_hard = std::stoi(value);
  else if (key == "budgets") ctrl.budgets = parse_int_list(value);
  else if (key == "layers") spec.layers = parse_int_list(value);
  else if (key == "width") spec.width = std::stoi(value);
  else if (key == "hidden") spec.hidden = std::stoi(value);
  else if (key == "grid_h") spec.grid_h = std::stoi(value);
  else if (key == "grid_w") spec.grid_w = std::stoi(value);
  else if (key == "layerdrop") spec.layerdrop_rate = std::stod(value);
  else if (key == "z_dim") ctrl.z_dim = std::stoi(value);
  else if (key == "ctrl_hidden") ctrl.hidden = std::stoi(value);
  else if (key == "layer_cost") cost.layer_cost = parse_double_list(value);
  else if (key == "token_cost") cost.token_cost = std::stod(value);
  else if (key == "controller_overhead") cost.controller_overhead = std::stod(value);
  else if (key == "skipgate_overhead") cost.skipgate_overhead = std::stod(value);
  else if (key == "pruner_overhead") cost.pruner_overhead = std::stod(value);
  else if (key == "allow_stage_skip") allow_stage_skip = parse_bool(value);
  else if (key == "retrain_full_head") retrain_full_head = parse_bool(value);
  else if (key == "detach_z") detach_z = parse_bool(value);
  else if (key == "trace_limit") trace_limit = std::stoi(value);
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot read '" + path + "'");
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    // trim
    auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    auto e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: line " + std::to_string(lineno) + " is not key=value");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    auto strip = [](std::string& s) {
      auto b2 = s.find_first_not_of(" \t");
      auto e2 = s.find_last_not_of(" \t");
      s = b2 == std::string::npos ? "" : s.substr(b2, e2 - b2 + 1);
    };
    strip(key);
    strip(value);
    cfg.apply(key, value);
  }
  cfg.validate();
  return cfg;
}

void RunConfig::validate() const {
  spec.validate();
  cost.validate();
  if (ctrl.budgets.empty()) throw std::invalid_argument("config: empty budget set");
  for (int b : ctrl.budgets)
    if (b < 1 || b > spec.total_layers())
      throw std::invalid_argument("config: budget " + std::to_string(b) +
                                  " outside [1, total layers]");
  auto sev_ok = [](double lo, double hi) { return 0.0 <= lo && lo <= hi && hi <= 1.0; };
  if (!sev_ok(train_sev_lo, train_sev_hi) || !sev_ok(eval_sev_lo, eval_sev_hi))
    throw std::invalid_argument("config: severity ranges must satisfy 0 <= lo <= hi <= 1");
  if (lr <= 0 || beta <= 0 || tau_floor <= 0 || tau_floor_skip <= 0)
    throw std::invalid_argument("config: lr, beta and tau_floor must be positive");
  if (static_cast<int>(cost.layer_cost.size()) != spec.modalities)
    throw std::invalid_argument("config: layer_cost length must match modality count");
}

// ---------------------------------------------------------------------------
// EvalReport

const EvalCell* EvalReport::find(const std::string& corruption, int budget,
                                 const std::string& variant) const {
  for (const auto& c : cells)
    if (c.corruption == corruption && c.budget == budget && c.variant == variant) return &c;
  return nullptr;
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

constexpr const char* kCk1m0 = "stage1_m0.json";
constexpr const char* kCk1m1 = "stage1_m1.json";
constexpr const char* kCk2 = "stage2.json";
constexpr const char* kCk3 = "stage3.json";
constexpr const char* kCk3St = "stage3_st.json";
constexpr const char* kCk4 = "stage4.json";
constexpr const char* kCk5 = "stage5.json";

ModalityTokens zero_tokens(int n, int d) {
  ModalityTokens t;
  t.feats = make_const({n, d}, std::vector<double>(static_cast<std::size_t>(n) * d, 0.0));
  t.total = n;
  return t;
}

const std::vector<double>& modality_grid(const Scene& s, int m) {
  return m == 0 ? s.grid_a : s.grid_b;
}

std::vector<Value> slice_gates(const Value& gates, int start, int count) {
  std::vector<Value> out;
  out.reserve(count);
  for (int l = 0; l < count; ++l) out.push_back(at(gates, start + l));
  return out;
}

std::vector<int> modality_starts(const BackboneSpec& spec) {
  std::vector<int> starts = {0};
  auto off = spec.partition_offsets();
  for (std::size_t m = 0; m + 1 < off.size(); ++m) starts.push_back(off[m]);
  return starts;
}

// Abort with a diagnostic if any parameter outside the allowed prefixes
// picked up a nonzero gradient.
void check_isolation(const ParamStore& ps, const std::vector<std::string>& allowed) {
  for (const auto& [name, e] : ps.entries()) {
    bool ok = false;
    for (const auto& p : allowed)
      if (name.rfind(p, 0) == 0) {
        ok = true;
        break;
      }
    if (ok) continue;
    for (double g : e.value->grad)
      if (g != 0.0)
        throw std::runtime_error("frozen-parameter gradient leak: '" + name +
                                 "' received a nonzero gradient while only {" +
                                 [&] {
                                   std::string s;
                                   for (const auto& p : allowed) s += p + " ";
                                   return s;
                                 }() +
                                 "} were trainable");
  }
}

int popcount_bits(const std::vector<int>& bits) {
  int c = 0;
  for (int b : bits) c += b;
  return c;
}

}  // namespace

Pipeline::Pipeline(RunConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  fs::create_directories(cfg_.out_dir);
}

std::string Pipeline::checkpoint_path(const std::string& name) const {
  return (fs::path(cfg_.out_dir) / name).string();
}

void Pipeline::require_checkpoint(const std::string& name) const {
  if (fs::exists(checkpoint_path(name))) return;
  if (cfg_.allow_stage_skip) {
    std::cout << "[pipeline] warning: checkpoint " << name
              << " missing, continuing from fresh weights (stage-skip override)\n";
    return;
  }
  throw std::runtime_error("stage ordering: prerequisite checkpoint '" + checkpoint_path(name) +
                           "' does not exist; run the earlier stage first or set "
                           "allow_stage_skip=1");
}

std::vector<Scene> Pipeline::clean_training_set(std::uint64_t stream) const {
  SeededRng rng = SeededRng(cfg_.seed).split(stream);
  SceneParams params;
  params.h = cfg_.spec.grid_h;
  params.w = cfg_.spec.grid_w;
  std::vector<Scene> scenes;
  scenes.reserve(cfg_.train_scenes);
  for (int i = 0; i < cfg_.train_scenes; ++i)
    scenes.push_back(gen_scene(rng, 1 + static_cast<int>(rng.below(params.max_targets)), params));
  return scenes;
}

std::vector<Scene> Pipeline::corrupted_training_set(std::uint64_t stream) const {
  SeededRng rng = SeededRng(cfg_.seed).split(stream);
  SceneParams params;
  params.h = cfg_.spec.grid_h;
  params.w = cfg_.spec.grid_w;
  std::vector<Scene> scenes;
  scenes.reserve(cfg_.train_scenes);
  for (int i = 0; i < cfg_.train_scenes; ++i)
    scenes.push_back(random_corrupted_scene(rng, params, cfg_.train_sev_lo, cfg_.train_sev_hi));
  return scenes;
}

void Pipeline::stage1() {
  auto scenes = clean_training_set(1);
  for (int m = 0; m < cfg_.spec.modalities; ++m) {
    ParamStore ps;
    SeededRng init = SeededRng(cfg_.seed).split(10 + m);
    AdaptiveNet net(ps, cfg_.spec, init);
    SeededRng rng = SeededRng(cfg_.seed).split(20 + m);
    std::string tag = "stage1_m" + std::to_string(m);
    auto& hist = losses_[tag];
    hist.clear();
    int n = cfg_.spec.tokens(), d = cfg_.spec.width;
    for (int epoch = 1; epoch <= cfg_.epochs_stage1; ++epoch) {
      double epoch_loss = 0.0;
      for (const Scene& scene : scenes) {
        auto mask = layerdrop_mask(cfg_.spec, rng);
        Value h = net.encode_modality(m, net.embed(m, modality_grid(scene, m)),
                                      ModalityGates::from_bits(mask[m]));
        std::vector<ModalityTokens> toks;
        for (int mm = 0; mm < cfg_.spec.modalities; ++mm)
          toks.push_back(mm == m ? ModalityTokens{h, {}, n} : zero_tokens(n, d));
        Value loss = net.detection_loss(net.fuse_and_head(toks), scene.occupancy);
        ps.zero_grad();
        backward(loss);
        ps.adam_step(cfg_.lr);
        hist.push_back(loss->item());
        epoch_loss += loss->item();
      }
      std::cout << "[" << tag << "] epoch " << epoch << "/" << cfg_.epochs_stage1
                << " mean loss " << epoch_loss / scenes.size() << "\n";
    }
    ps.save(checkpoint_path(m == 0 ? kCk1m0 : kCk1m1),
            {"embed.m" + std::to_string(m), "backbone.m" + std::to_string(m), "head."});
  }
}

void Pipeline::stage2() {
  require_checkpoint(kCk1m0);
  require_checkpoint(kCk1m1);
  ParamStore ps;
  // load the broad modality first; the sharp modality's head overrides
  if (fs::exists(checkpoint_path(kCk1m1))) ps.load(checkpoint_path(kCk1m1));
  if (fs::exists(checkpoint_path(kCk1m0))) ps.load(checkpoint_path(kCk1m0));
  SeededRng init = SeededRng(cfg_.seed).split(12);
  AdaptiveNet net(ps, cfg_.spec, init);
  SeededRng rng = SeededRng(cfg_.seed).split(22);
  auto scenes = clean_training_set(1);
  auto& hist = losses_["stage2"];
  hist.clear();
  int n = cfg_.spec.tokens();
  for (int epoch = 1; epoch <= cfg_.epochs_stage2; ++epoch) {
    double epoch_loss = 0.0;
    for (const Scene& base : scenes) {
      Scene scene = base;
      modality_dropout(scene, rng, cfg_.modality_dropout_rate);
      auto mask = layerdrop_mask(cfg_.spec, rng);
      std::vector<ModalityTokens> toks;
      for (int m = 0; m < cfg_.spec.modalities; ++m) {
        Value h = net.encode_modality(m, net.embed(m, modality_grid(scene, m)),
                                      ModalityGates::from_bits(mask[m]));
        toks.push_back({h, {}, n});
      }
      Value loss = net.detection_loss(net.fuse_and_head(toks), scene.occupancy);
      ps.zero_grad();
      backward(loss);
      ps.adam_step(cfg_.lr);
      hist.push_back(loss->item());
      epoch_loss += loss->item();
    }
    std::cout << "[stage2] epoch " << epoch << "/" << cfg_.epochs_stage2 << " mean loss "
              << epoch_loss / scenes.size() << "\n";
  }
  ps.save(checkpoint_path(kCk2));
}

void Pipeline::stage3(bool st_estimator) {
  require_checkpoint(kCk2);
  ParamStore ps;
  if (fs::exists(checkpoint_path(kCk2))) ps.load(checkpoint_path(kCk2));
  SeededRng init = SeededRng(cfg_.seed).split(13);
  AdaptiveNet net(ps, cfg_.spec, init);
  Controller ctrl(ps, "ctrl", cfg_.spec, cfg_.ctrl, init);
  ps.freeze_all();
  ps.set_trainable("ctrl.", true);

  auto scenes = corrupted_training_set(2);
  SeededRng budget_rng = SeededRng(cfg_.seed).split(33);
  SeededRng noise_rng = SeededRng(cfg_.seed).split(43);
  auto starts = modality_starts(cfg_.spec);
  std::string tag = st_estimator ? "stage3_st" : "stage3";
  auto& hist = losses_[tag];
  hist.clear();
  int n = cfg_.spec.tokens();
  // Warm-up epochs shape z with the environment-class loss alone, so the
  // allocation MLP later conditions on an already-informative z; the
  // temperature anneal starts once the detection loss joins.
  const int warmup = std::min(3, cfg_.epochs_stage3 - 1);
  // While annealing, the allocation logits are standardized to a fixed
  // gain: otherwise inflating their scale mimics a sharper temperature
  // and the ranking freezes before it conditions on z. The last few
  // epochs drop the normalization so the settled ordering can grow real
  // margins (standardization is per-sample affine, so the order carries
  // over unchanged).
  const int release = std::max(warmup + 1, cfg_.epochs_stage3 - 2);
  for (int epoch = 1; epoch <= cfg_.epochs_stage3; ++epoch) {
    double tau = std::max(0.5 / std::max(epoch - warmup, 1), cfg_.tau_floor);
    double epoch_loss = 0.0;
    for (const Scene& scene : scenes) {
      int b = cfg_.ctrl.budgets[budget_rng.below(cfg_.ctrl.budgets.size())];
      Value z = ctrl.extract_qoi(scene);
      if (epoch <= warmup) {
        Value warm = scale(ctrl.env_loss(z, scene.env_label()), cfg_.alpha1);
        ps.zero_grad();
        backward(warm);
        check_isolation(ps, {"ctrl."});
        ps.adam_step(cfg_.lr);
        hist.push_back(warm->item());
        epoch_loss += warm->item();
        continue;
      }
      Value z_alloc = cfg_.detach_z ? make_const(z->shape, z->data) : z;
      LogitVector pi = ctrl.allocate(z_alloc, b);
      // The ST baseline's hard forward is scale-invariant, so it keeps
      // the normalization for the whole run; only the soft-permutation
      // path gets the release.
      Value logits = (st_estimator || epoch < release)
                         ? scale(standardize(pi.values), 6.0)
                         : pi.values;
      SoftGateVector g =
          st_estimator
              ? st_topk(logits, b, 1.0, noise_rng, true, starts)
              : budget_gate(neuralsort(add(logits, sample_gumbel(noise_rng, {pi.size()})),
                                       tau),
                            b, pi.offsets);
      std::vector<ModalityTokens> toks;
      for (int m = 0; m < cfg_.spec.modalities; ++m) {
        auto soft = slice_gates(g.gates, starts[m], cfg_.spec.layers[m]);
        Value h = net.encode_modality(m, net.embed(m, modality_grid(scene, m)),
                                      ModalityGates::from_soft(std::move(soft)));
        toks.push_back({h, {}, n});
      }
      Value det = net.detection_loss(net.fuse_and_head(toks), scene.occupancy);
      Value loss = add(det, scale(ctrl.env_loss(z, scene.env_label()), cfg_.alpha1));
      ps.zero_grad();
      backward(loss);
      check_isolation(ps, {"ctrl."});
      ps.adam_step(cfg_.lr);
      hist.push_back(loss->item());
      epoch_loss += loss->item();
    }
    std::cout << "[" << tag << "] epoch " << epoch << "/" << cfg_.epochs_stage3 << " tau "
              << tau << " mean loss " << epoch_loss / scenes.size() << "\n";
  }
  ps.save(checkpoint_path(st_estimator ? kCk3St : kCk3));
}

void Pipeline::stage4() {
  require_checkpoint(kCk3);
  ParamStore ps;
  if (fs::exists(checkpoint_path(kCk3))) ps.load(checkpoint_path(kCk3));
  SeededRng init = SeededRng(cfg_.seed).split(15);
  AdaptiveNet net(ps, cfg_.spec, init);
  Controller ctrl(ps, "ctrl", cfg_.spec, cfg_.ctrl, init);
  std::vector<SkipGate> gates;
  for (int m = 0; m < cfg_.spec.modalities; ++m)
    gates.emplace_back(ps, "skip.m" + std::to_string(m), cfg_.spec.max_layers(), cfg_.ctrl.z_dim,
                       cfg_.spec.width, init);
  ps.freeze_all();
  ps.set_trainable("skip.", true);

  auto scenes = corrupted_training_set(2);
  SeededRng budget_rng = SeededRng(cfg_.seed).split(34);
  SeededRng noise_rng = SeededRng(cfg_.seed).split(44);
  auto& hist = losses_["stage4"];
  hist.clear();
  int n = cfg_.spec.tokens();
  // The last quarter of the run trains without gate noise, lining the
  // logits up with the d > 0 inference rule. Those epochs use a moderate
  // fixed temperature: at the annealed floor a logit that dips negative
  // saturates the sigmoid and can never climb back.
  const int noise_off = cfg_.epochs_stage4 - std::max(1, cfg_.epochs_stage4 / 4);
  for (int epoch = 1; epoch <= cfg_.epochs_stage4; ++epoch) {
    double tau = epoch <= noise_off ? std::max(0.25 / epoch, cfg_.tau_floor_skip) : 0.4;
    // The hinge weight ramps in: gates first learn which layers the
    // detection loss defends, then pressure removes the rest in value
    // order. Full pressure from the start prunes path-dependently.
    double alpha2 = cfg_.alpha2 * epoch / cfg_.epochs_stage4;
    double epoch_loss = 0.0;
    for (const Scene& scene : scenes) {
      int b = cfg_.ctrl.budgets[budget_rng.below(cfg_.ctrl.budgets.size())];
      auto bits = ctrl.split_mask(ctrl.infer_allocation(scene, b));
      Value z = ctrl.extract_qoi(scene);
      std::vector<std::vector<Value>> sinks(cfg_.spec.modalities);
      std::vector<ModalityTokens> toks;
      for (int m = 0; m < cfg_.spec.modalities; ++m) {
        ModalityGates g = ModalityGates::from_bits(bits[m]);
        g.skipgate = &gates[m];
        g.z = z;
        g.other_alloc = popcount_bits(bits[cfg_.spec.modalities - 1 - m]);
        g.tau_skip = tau;
        g.rng = &noise_rng;
        g.skip_noise = epoch <= noise_off;
        g.logit_sink = &sinks[m];
        Value h = net.encode_modality(m, net.embed(m, modality_grid(scene, m)), g);
        toks.push_back({h, {}, n});
      }
      Value loss = net.detection_loss(net.fuse_and_head(toks), scene.occupancy);
      for (int m = 0; m < cfg_.spec.modalities; ++m)
        if (!sinks[m].empty())
          loss = add(loss, scale(hinge_utilization(sinks[m], cfg_.beta,
                                                   static_cast<double>(cfg_.spec.layers[m])),
                                 alpha2));
      ps.zero_grad();
      backward(loss);
      check_isolation(ps, {"skip."});
      ps.adam_step(cfg_.lr);
      hist.push_back(loss->item());
      epoch_loss += loss->item();
    }
    std::cout << "[stage4] epoch " << epoch << "/" << cfg_.epochs_stage4 << " tau " << tau
              << " mean loss " << epoch_loss / scenes.size() << "\n";
  }
  ps.save(checkpoint_path(kCk4));
}

void Pipeline::stage5() {
  require_checkpoint(kCk4);
  ParamStore ps;
  if (fs::exists(checkpoint_path(kCk4))) ps.load(checkpoint_path(kCk4));
  SeededRng init = SeededRng(cfg_.seed).split(16);
  AdaptiveNet net(ps, cfg_.spec, init);
  Controller ctrl(ps, "ctrl", cfg_.spec, cfg_.ctrl, init);
  std::vector<SkipGate> gates;
  std::vector<TokenScorer> scorers;
  for (int m = 0; m < cfg_.spec.modalities; ++m) {
    gates.emplace_back(ps, "skip.m" + std::to_string(m), cfg_.spec.max_layers(), cfg_.ctrl.z_dim,
                       cfg_.spec.width, init);
    scorers.emplace_back(ps, "prune.m" + std::to_string(m), cfg_.spec.width, init);
  }
  auto scenes = corrupted_training_set(2);
  SeededRng budget_rng = SeededRng(cfg_.seed).split(35);
  int n = cfg_.spec.tokens();

  // Shared per-sample forward up to the per-modality features.
  auto encode = [&](const Scene& scene, int b, std::vector<Value>& hs) {
    auto bits = ctrl.split_mask(ctrl.infer_allocation(scene, b));
    Value z = ctrl.extract_qoi(scene);
    hs.clear();
    for (int m = 0; m < cfg_.spec.modalities; ++m) {
      ModalityGates g = ModalityGates::from_bits(bits[m]);
      g.skipgate = &gates[m];
      g.z = z;
      g.other_alloc = popcount_bits(bits[cfg_.spec.modalities - 1 - m]);
      g.inference = true;  // deterministic layer execution while pruning trains
      hs.push_back(net.encode_modality(m, net.embed(m, modality_grid(scene, m)), g));
    }
  };

  auto run_phase = [&](bool hard, int epochs, const std::string& tag,
                       const std::vector<std::string>& allowed) {
    auto& hist = losses_[tag];
    hist.clear();
    for (int epoch = 1; epoch <= epochs; ++epoch) {
      // same ramp-in as the SkipGate hinge: learn which tokens the
      // detection loss defends before the pressure prunes the rest
      double alpha3 = hard ? cfg_.alpha3 : cfg_.alpha3 * epoch / epochs;
      double epoch_loss = 0.0;
      for (const Scene& scene : scenes) {
        int b = cfg_.ctrl.budgets[budget_rng.below(cfg_.ctrl.budgets.size())];
        std::vector<Value> hs;
        encode(scene, b, hs);
        std::vector<ModalityTokens> toks;
        Value util;
        for (int m = 0; m < cfg_.spec.modalities; ++m) {
          Value s = scorers[m].scores(hs[m]);
          util = util ? add(util, sum_all(s)) : sum_all(s);
          if (!hard) {
            toks.push_back(prune_tokens_soft(hs[m], s).tokens);
          } else {
            // straight-through hard forward over the full token set:
            // pruned tokens contribute zero rows (same values the real
            // pruner produces after scatter) but stay in the graph, so
            // the detection loss can still push a wrongly pruned
            // token's score back above threshold
            ModalityTokens t;
            t.feats = scale_rows(hs[m], st_round(s));
            t.kept.resize(n);
            std::iota(t.kept.begin(), t.kept.end(), 0);
            t.total = n;
            toks.push_back(std::move(t));
          }
        }
        Value det = net.detection_loss(net.fuse_and_head(toks), scene.occupancy);
        Value loss = add(det, scale(util, alpha3));
        ps.zero_grad();
        backward(loss);
        check_isolation(ps, allowed);
        ps.adam_step(cfg_.lr);
        hist.push_back(loss->item());
        epoch_loss += loss->item();
      }
      std::cout << "[" << tag << "] epoch " << epoch << "/" << epochs << " mean loss "
                << epoch_loss / scenes.size() << "\n";
    }
  };

  ps.freeze_all();
  ps.set_trainable("prune.", true);
  run_phase(false, cfg_.epochs_stage5_soft, "stage5_soft", {"prune."});

  std::vector<std::string> allowed = {"prune."};
  if (cfg_.retrain_full_head) {
    ps.set_trainable("head.", true);
    allowed.push_back("head.");
  }
  run_phase(true, cfg_.epochs_stage5_hard, "stage5_hard", allowed);
  ps.save(checkpoint_path(kCk5));
}

void Pipeline::run_all() {
  stage1();
  stage2();
  stage3(false);
  stage3(true);
  stage4();
  stage5();
}

// ---------------------------------------------------------------------------
// Evaluation

EvalReport Pipeline::evaluate() {
  require_checkpoint(kCk4);
  require_checkpoint(kCk5);
  require_checkpoint(kCk3St);

  SeededRng init(0);  // only consulted for entries absent from checkpoints
  ParamStore ps4;
  if (fs::exists(checkpoint_path(kCk4))) ps4.load(checkpoint_path(kCk4));
  AdaptiveNet net4(ps4, cfg_.spec, init);
  Controller ctrl4(ps4, "ctrl", cfg_.spec, cfg_.ctrl, init);
  std::vector<SkipGate> sg4;
  for (int m = 0; m < cfg_.spec.modalities; ++m)
    sg4.emplace_back(ps4, "skip.m" + std::to_string(m), cfg_.spec.max_layers(), cfg_.ctrl.z_dim,
                     cfg_.spec.width, init);

  ParamStore ps5;
  if (fs::exists(checkpoint_path(kCk5))) ps5.load(checkpoint_path(kCk5));
  AdaptiveNet net5(ps5, cfg_.spec, init);
  Controller ctrl5(ps5, "ctrl", cfg_.spec, cfg_.ctrl, init);
  std::vector<SkipGate> sg5;
  std::vector<TokenScorer> sc5;
  for (int m = 0; m < cfg_.spec.modalities; ++m) {
    sg5.emplace_back(ps5, "skip.m" + std::to_string(m), cfg_.spec.max_layers(), cfg_.ctrl.z_dim,
                     cfg_.spec.width, init);
    sc5.emplace_back(ps5, "prune.m" + std::to_string(m), cfg_.spec.width, init);
  }

  ParamStore psst;
  if (fs::exists(checkpoint_path(kCk3St))) psst.load(checkpoint_path(kCk3St));
  AdaptiveNet netst(psst, cfg_.spec, init);
  Controller ctrlst(psst, "ctrl", cfg_.spec, cfg_.ctrl, init);

  const int mods = cfg_.spec.modalities;
  const int n = cfg_.spec.tokens();
  auto starts = modality_starts(cfg_.spec);

  // One scene list per corruption kind, shared by every budget and variant.
  std::vector<std::vector<Scene>> scenes_by_kind(kNumEnvClasses);
  {
    SceneParams params;
    params.h = cfg_.spec.grid_h;
    params.w = cfg_.spec.grid_w;
    for (int k = 0; k < kNumEnvClasses; ++k) {
      SeededRng rng = SeededRng(cfg_.seed).split(100 + k);
      auto& list = scenes_by_kind[k];
      list.reserve(cfg_.eval_scenes_per_cell);
      for (int i = 0; i < cfg_.eval_scenes_per_cell; ++i) {
        Scene clean = gen_scene(rng, 1 + static_cast<int>(rng.below(params.max_targets)), params);
        if (k == 0) {
          list.push_back(std::move(clean));
        } else {
          double sev = rng.uniform(cfg_.eval_sev_lo, cfg_.eval_sev_hi);
          list.push_back(corrupt(clean, static_cast<Corruption>(k), sev, rng));
        }
      }
    }
  }

  std::ofstream traces(fs::path(cfg_.out_dir) / "traces.jsonl");
  if (!traces)
    throw std::runtime_error("evaluate: cannot write '" +
                             (fs::path(cfg_.out_dir) / "traces.jsonl").string() + "'");
  long traces_written = 0;

  EvalReport report;
  double margin_ctrl_sum = 0.0, margin_st_sum = 0.0;
  long margin_ctrl_n = 0, margin_st_n = 0;

  struct Acc {
    double loss = 0.0, cost = 0.0;
    long tp = 0, fp = 0, fn = 0;
    std::vector<double> sel, exe;
    std::vector<long> kept, total;
    int violations = 0;
    long samples = 0;
  };

  for (int k = 0; k < kNumEnvClasses; ++k) {
    for (int b : cfg_.ctrl.budgets) {
      for (const std::string& variant : kVariants) {
        Acc acc;
        acc.sel.assign(mods, 0.0);
        acc.exe.assign(mods, 0.0);
        acc.kept.assign(mods, 0);
        acc.total.assign(mods, 0);
        for (const Scene& scene : scenes_by_kind[k]) {
          AdaptiveNet* net = &net4;
          Controller* ctrl = &ctrl4;
          bool use_ctrl = variant != "naive";
          bool use_skip = variant == "ctrl-skip" || variant == "ctrl-skip-prune";
          bool use_prune = variant == "ctrl-skip-prune";
          if (use_prune) {
            net = &net5;
            ctrl = &ctrl5;
          } else if (variant == "st-baseline") {
            net = &netst;
            ctrl = &ctrlst;
          }

          std::vector<std::vector<int>> bits;
          if (variant == "naive") {
            bits = naive_allocation(cfg_.spec, b);
          } else if (variant == "st-baseline") {
            Value z = ctrl->extract_qoi(scene);
            LogitVector pi = ctrl->allocate(z, b);
            margin_st_sum += logit_margin(pi.values->data, b);
            ++margin_st_n;
            std::vector<double> biased = pi.values->data;
            for (int s : starts) biased[s] = 1e9;  // first layers always active
            bits = ctrl->split_mask(topk_mask(biased, b));
          } else {
            if (variant == "ctrl") {
              Value z = ctrl->extract_qoi(scene);
              LogitVector pi = ctrl->allocate(z, b);
              margin_ctrl_sum += logit_margin(pi.values->data, b);
              ++margin_ctrl_n;
            }
            bits = ctrl->split_mask(ctrl->infer_allocation(scene, b));
          }

          Value z;
          if (use_skip) z = ctrl->extract_qoi(scene);

          ExecutionTrace tr;
          tr.modalities.resize(mods);
          tr.budget = b;
          std::vector<ModalityTokens> toks;
          for (int m = 0; m < mods; ++m) {
            ModalityGates g = ModalityGates::from_bits(bits[m]);
            if (use_skip) {
              g.skipgate = use_prune ? &sg5[m] : &sg4[m];
              g.z = z;
              g.other_alloc = popcount_bits(bits[mods - 1 - m]);
              g.inference = true;
            }
            Value h = net->encode_modality(m, net->embed(m, modality_grid(scene, m)), g,
                                           &tr.modalities[m]);
            tr.modalities[m].tokens_total = n;
            if (use_prune) {
              Value s = sc5[m].scores(h);
              std::vector<double> rounded(s->data.size());
              for (std::size_t i = 0; i < rounded.size(); ++i)
                rounded[i] = std::floor(s->data[i] + 0.5);
              PruneResult pr = prune_tokens_hard(h, rounded, s->data);
              tr.modalities[m].tokens_kept = static_cast<int>(pr.kept.size());
              toks.push_back(std::move(pr.tokens));
            } else {
              tr.modalities[m].tokens_kept = n;
              toks.push_back({h, {}, n});
            }
          }
          Value logits = net->fuse_and_head(toks);
          tr.det_loss = net->detection_loss(logits, scene.occupancy)->item();
          tr.cost = cost_of_trace(tr, cfg_.cost, use_ctrl, use_skip, use_prune);

          if (!assert_budget(tr, b) || !tr.executed_subset_of_selected()) ++acc.violations;

          for (std::size_t i = 0; i < scene.occupancy.size(); ++i) {
            bool pred = logits->data[i] > 0.0;
            bool truth = scene.occupancy[i] > 0.5;
            if (pred && truth) ++acc.tp;
            else if (pred) ++acc.fp;
            else if (truth) ++acc.fn;
          }
          acc.loss += tr.det_loss;
          acc.cost += tr.cost;
          for (int m = 0; m < mods; ++m) {
            acc.sel[m] += tr.modalities[m].selected_count();
            acc.exe[m] += tr.modalities[m].executed_count();
            acc.kept[m] += tr.modalities[m].tokens_kept;
            acc.total[m] += tr.modalities[m].tokens_total;
          }
          ++acc.samples;
          if (cfg_.trace_limit == 0 || traces_written < cfg_.trace_limit) {
            traces << tr.to_json_line() << "\n";
            ++traces_written;
          }
        }

        EvalCell cell;
        cell.corruption = corruption_name(static_cast<Corruption>(k));
        cell.budget = b;
        cell.variant = variant;
        cell.det_loss = acc.loss / acc.samples;
        cell.mean_cost = acc.cost / acc.samples;
        double f1_den = 2.0 * acc.tp + acc.fp + acc.fn;
        cell.f1 = f1_den > 0 ? 2.0 * acc.tp / f1_den : 1.0;
        for (int m = 0; m < mods; ++m) {
          cell.mean_selected.push_back(acc.sel[m] / acc.samples);
          cell.mean_executed.push_back(acc.exe[m] / acc.samples);
          cell.retention.push_back(static_cast<double>(acc.kept[m]) / acc.total[m]);
        }
        cell.budget_violations = acc.violations;
        report.budget_violations += acc.violations;
        report.cells.push_back(std::move(cell));
      }
      std::cout << "[eval] " << corruption_name(static_cast<Corruption>(k)) << " b=" << b
                << " done\n";
    }
  }

  report.margin_ctrl = margin_ctrl_n ? margin_ctrl_sum / margin_ctrl_n : 0.0;
  report.margin_st = margin_st_n ? margin_st_sum / margin_st_n : 0.0;
  return report;
}

// ---------------------------------------------------------------------------
// Reports

void write_metrics_csv(const std::string& path, const EvalReport& report) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("report: cannot write '" + path + "'");
  int mods = report.cells.empty() ? 0 : static_cast<int>(report.cells[0].mean_selected.size());
  f << "corruption,budget,variant,det_loss,f1";
  for (int m = 0; m < mods; ++m) f << ",selected_m" << m;
  for (int m = 0; m < mods; ++m) f << ",executed_m" << m;
  for (int m = 0; m < mods; ++m) f << ",retention_m" << m;
  f << ",mean_cost\n";
  for (const auto& c : report.cells) {
    f << c.corruption << "," << c.budget << "," << c.variant << "," << fmt(c.det_loss) << ","
      << fmt(c.f1);
    for (double v : c.mean_selected) f << "," << fmt(v);
    for (double v : c.mean_executed) f << "," << fmt(v);
    for (double v : c.retention) f << "," << fmt(v);
    f << "," << fmt(c.mean_cost) << "\n";
  }
}

void write_report_json(const std::string& path, const EvalReport& report) {
  nlohmann::json j;
  j["format"] = "adanet-report";
  j["version"] = 1;
  j["margin_ctrl"] = report.margin_ctrl;
  j["margin_st"] = report.margin_st;
  j["budget_violations"] = report.budget_violations;
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : report.cells) {
    cells.push_back({{"corruption", c.corruption},
                     {"budget", c.budget},
                     {"variant", c.variant},
                     {"det_loss", c.det_loss},
                     {"f1", c.f1},
                     {"mean_selected", c.mean_selected},
                     {"mean_executed", c.mean_executed},
                     {"retention", c.retention},
                     {"mean_cost", c.mean_cost},
                     {"budget_violations", c.budget_violations}});
  }
  j["cells"] = std::move(cells);
  std::ofstream f(path);
  if (!f) throw std::runtime_error("report: cannot write '" + path + "'");
  f << j.dump(2) << "\n";
}

EvalReport read_report_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("report: cannot read '" + path + "'");
  nlohmann::json j;
  f >> j;
  if (j.value("format", "") != "adanet-report")
    throw std::runtime_error("report: '" + path + "' is not an evaluation report");
  EvalReport r;
  r.margin_ctrl = j.at("margin_ctrl").get<double>();
  r.margin_st = j.at("margin_st").get<double>();
  r.budget_violations = j.at("budget_violations").get<int>();
  for (const auto& jc : j.at("cells")) {
    EvalCell c;
    c.corruption = jc.at("corruption").get<std::string>();
    c.budget = jc.at("budget").get<int>();
    c.variant = jc.at("variant").get<std::string>();
    c.det_loss = jc.at("det_loss").get<double>();
    c.f1 = jc.at("f1").get<double>();
    c.mean_selected = jc.at("mean_selected").get<std::vector<double>>();
    c.mean_executed = jc.at("mean_executed").get<std::vector<double>>();
    c.retention = jc.at("retention").get<std::vector<double>>();
    c.mean_cost = jc.at("mean_cost").get<double>();
    c.budget_violations = jc.at("budget_violations").get<int>();
    r.cells.push_back(std::move(c));
  }
  return r;
}

void write_utilization_csv(const std::string& path, const EvalReport& report) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("report: cannot write '" + path + "'");
  int mods = report.cells.empty() ? 0 : static_cast<int>(report.cells[0].mean_selected.size());
  f << "corruption,budget,variant";
  for (int m = 0; m < mods; ++m) f << ",selected_m" << m;
  for (int m = 0; m < mods; ++m) f << ",executed_m" << m;
  f << "\n";
  for (const auto& c : report.cells) {
    if (c.variant != "ctrl" && c.variant != "ctrl-skip") continue;
    f << c.corruption << "," << c.budget << "," << c.variant;
    for (double v : c.mean_selected) f << "," << fmt(v);
    for (double v : c.mean_executed) f << "," << fmt(v);
    f << "\n";
  }
}

void Pipeline::write_reports(const EvalReport& report) const {
  write_metrics_csv((fs::path(cfg_.out_dir) / "metrics.csv").string(), report);
  write_report_json((fs::path(cfg_.out_dir) / "report.json").string(), report);
  write_utilization_csv((fs::path(cfg_.out_dir) / "utilization.csv").string(), report);
}

// ---------------------------------------------------------------------------
// Gradient / relaxation oracle suite

namespace {

// Central differences against the analytic gradient held by a live
// parameter of a module (grad_check only covers free leaves).
double fd_param(ParamStore& ps, const std::function<Value()>& build, const Value& w,
                double step = 1e-5) {
  ps.zero_grad();
  Value loss = build();
  backward(loss);
  std::vector<double> analytic = w->grad;
  double worst = 0.0;
  for (std::size_t i = 0; i < w->size(); ++i) {
    double save = w->data[i];
    w->data[i] = save + step;
    double fp = build()->item();
    w->data[i] = save - step;
    double fm = build()->item();
    w->data[i] = save;
    double numeric = (fp - fm) / (2.0 * step);
    double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-3});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
  }
  return worst;
}

struct SuiteCheck {
  std::string name;
  bool pass;
  double err;
};

}  // namespace

int gradcheck_suite(bool verbose) {
  std::vector<SuiteCheck> checks;
  auto record = [&](const std::string& name, bool pass, double err) {
    checks.push_back({name, pass, err});
  };

  // Soft permutation: row-stochastic, and hard in the low-temperature limit.
  {
    double worst_sum = 0.0, worst_entry = 1.0;
    for (int s = 0; s < 20; ++s) {
      SeededRng rng(1000 + s);
      int nv = 2 + s % 7;
      std::vector<double> d(nv);
      for (auto& x : d) x = rng.normal(0.0, 1.0);
      RelaxedPermutation P = neuralsort(make_const({nv}, d), 0.7);
      for (int i = 0; i < nv; ++i) {
        double sum = 0.0, mx = 0.0;
        for (int jj = 0; jj < nv; ++jj) sum += P.matrix->data[i * nv + jj];
        (void)mx;
        worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
      }
      // margin-0.5 logits, shuffled
      std::vector<double> sep(nv);
      for (int i = 0; i < nv; ++i) sep[i] = 0.5 * i;
      for (int i = nv - 1; i > 0; --i)
        std::swap(sep[i], sep[rng.below(static_cast<std::uint64_t>(i) + 1)]);
      RelaxedPermutation Ph = neuralsort(make_const({nv}, sep), 0.01);
      for (int i = 0; i < nv; ++i) {
        double mx = 0.0;
        for (int jj = 0; jj < nv; ++jj) mx = std::max(mx, Ph.matrix->data[i * nv + jj]);
        worst_entry = std::min(worst_entry, mx);
      }
    }
    record("neuralsort-row-stochastic", worst_sum <= 1e-9, worst_sum);
    record("neuralsort-hard-limit", worst_entry > 0.99, 1.0 - worst_entry);
  }

  // Budget gate sums to b exactly.
  {
    double worst = 0.0;
    for (int s = 0; s < 20; ++s) {
      SeededRng rng(2000 + s);
      int nv = 3 + s % 6;
      int b = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(nv)));
      std::vector<double> d(nv);
      for (auto& x : d) x = rng.normal(0.0, 1.0);
      SoftGateVector g = budget_gate(neuralsort(make_const({nv}, d), 0.5), b);
      double sum = 0.0;
      for (double v : g.gates->data) sum += v;
      worst = std::max(worst, std::abs(sum - b));
    }
    record("budget-gate-sum", worst <= 1e-6, worst);
  }

  // Gradient of a loss through budget_gate(neuralsort(pi)) w.r.t. pi.
  for (double tau : {1.0, 0.1}) {
    SeededRng rng(31);
    int nv = 6, b = 3;
    std::vector<double> d(nv), wgt(nv);
    for (auto& x : d) x = rng.normal(0.0, 1.0);
    for (auto& x : wgt) x = rng.normal(0.0, 1.0);
    Value pi0 = make_value({nv}, d);
    Value wv = make_const({nv}, wgt);
    auto f = [&](const Value& x) {
      SoftGateVector g = budget_gate(neuralsort(x, tau), b);
      return sum_all(mul(g.gates, wv));
    };
    GradCheckReport rep = grad_check(f, pi0, 1e-5, 1e-4);
    record("alloc-grad-tau" + std::to_string(tau).substr(0, 3), rep.pass, rep.max_rel_error);
  }

  // Small shared fixture for the module-level checks.
  BackboneSpec small;
  small.layers = {3, 3};
  small.width = 8;
  small.hidden = 8;
  small.grid_h = 3;
  small.grid_w = 3;
  ParamStore ps;
  SeededRng init(7);
  AdaptiveNet net(ps, small, init);
  SkipGate sg(ps, "skip.m0", small.max_layers(), 8, small.width, init);
  TokenScorer sc(ps, "prune.m0", small.width, init);
  SeededRng srng(8);
  std::vector<double> grid(9), occ(9, 0.0);
  for (auto& x : grid) x = srng.uniform(0.0, 2.0);
  occ[2] = 1.0;
  occ[7] = 1.0;
  std::vector<double> zdata(8);
  for (auto& x : zdata) x = srng.normal(0.0, 1.0);
  Value z = make_const({8}, zdata);
  int nt = small.tokens();

  // Gated forward through the gate logits (noise off) w.r.t. gate weights.
  for (double tau : {1.0, 0.1}) {
    auto build = [&]() {
      SeededRng nrng(99);
      ModalityGates g = ModalityGates::from_bits({1, 1, 1});
      g.skipgate = &sg;
      g.z = z;
      g.other_alloc = 2;
      g.tau_skip = tau;
      g.rng = &nrng;
      g.skip_noise = false;
      Value h = net.encode_modality(0, net.embed(0, grid), g);
      std::vector<ModalityTokens> toks = {{h, {}, nt}, zero_tokens(nt, small.width)};
      return net.detection_loss(net.fuse_and_head(toks), occ);
    };
    double worst = std::max(fd_param(ps, build, ps.get("skip.m0.w1")),
                            fd_param(ps, build, ps.get("skip.m0.b2")));
    record("skipgate-grad-tau" + std::to_string(tau).substr(0, 3), worst < 1e-4, worst);
  }

  // Token-scorer path (soft weighting) w.r.t. scorer weights.
  {
    auto build = [&]() {
      Value h = net.encode_modality(0, net.embed(0, grid), ModalityGates::all_on(3));
      Value s = sc.scores(h);
      std::vector<ModalityTokens> toks = {prune_tokens_soft(h, s).tokens,
                                          zero_tokens(nt, small.width)};
      Value det = net.detection_loss(net.fuse_and_head(toks), occ);
      return add(det, scale(sum_all(s), 0.01));
    };
    double worst = std::max(fd_param(ps, build, ps.get("prune.m0.w1")),
                            fd_param(ps, build, ps.get("prune.m0.b2")));
    record("scorer-grad", worst < 1e-4, worst);
  }

  int failures = 0;
  for (const auto& c : checks) {
    if (!c.pass) ++failures;
    if (verbose)
      std::cout << (c.pass ? "[ ok ] " : "[FAIL] ") << c.name << " (max err " << c.err << ")\n";
  }
  if (verbose)
    std::cout << checks.size() - failures << "/" << checks.size() << " checks passed\n";
  return failures;
}

}  // namespace adanet
