// Acceptance gate: one pass/fail line per criterion, exit code equals
// the number of failures. Training runs use the default configuration;
// trend criteria average over three seeds.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "adanet/controller.hpp"
#include "adanet/data.hpp"
#include "adanet/harness.hpp"
#include "adanet/net.hpp"
#include "adanet/optim.hpp"
#include "adanet/relax.hpp"
#include "adanet/rng.hpp"
#include "adanet/tensor.hpp"

using namespace adanet;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void line(int id, bool pass, const char* name, const std::string& detail) {
  std::printf("[%s] criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string fmt(double v) {
  char b[64];
  std::snprintf(b, sizeof(b), "%.4g", v);
  return b;
}

double now_minus(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Mean of one cell statistic over seeds.
double seed_mean(const std::vector<EvalReport>& reps, const std::string& kind, int b,
                 const std::string& variant,
                 const std::function<double(const EvalCell&)>& stat) {
  double acc = 0.0;
  for (const auto& r : reps) {
    const EvalCell* c = r.find(kind, b, variant);
    if (!c) throw std::runtime_error("missing eval cell " + kind + "/" + variant);
    acc += stat(*c);
  }
  return acc / reps.size();
}

const std::vector<std::string> kAsymKinds = {"a-sparsify", "b-fog", "b-dark"};
const std::vector<std::string> kAllKinds = {"clean",  "a-sparsify", "b-fog",
                                            "b-blur", "b-dark",     "a-blur"};

void criterion1() {
  auto t0 = std::chrono::steady_clock::now();
  double worst_row = 0.0, worst_sum = 0.0, worst_peak = 1.0;
  for (int seed = 0; seed < 100; ++seed) {
    SeededRng rng(1000 + seed);
    int n = 3 + seed % 6;  // n <= 8
    std::vector<double> logits(n);
    for (double& v : logits) v = rng.uniform(-2.0, 2.0);
    Value pi = make_const({n}, logits);
    for (double tau : {1.0, 0.25}) {
      RelaxedPermutation P = neuralsort(pi, tau);
      for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += P.matrix->data[i * n + j];
        worst_row = std::max(worst_row, std::abs(s - 1.0));
      }
      int b = 1 + seed % (n - 1);
      SoftGateVector g = budget_gate(P, b);
      double s = 0.0;
      for (double v : g.gates->data) s += v;
      worst_sum = std::max(worst_sum, std::abs(s - b));
    }
    // margin-0.5 logits: tau = 0.01 must recover the hard permutation
    std::vector<double> spaced(n);
    for (int i = 0; i < n; ++i) spaced[i] = 0.5 * i;
    for (int i = n - 1; i > 0; --i) std::swap(spaced[i], spaced[rng.below(i + 1)]);
    RelaxedPermutation hard = neuralsort(make_const({n}, spaced), 0.01);
    for (int i = 0; i < n; ++i) {
      double peak = 0.0;
      for (int j = 0; j < n; ++j) peak = std::max(peak, hard.matrix->data[i * n + j]);
      worst_peak = std::min(worst_peak, peak);
    }
  }
  double secs = now_minus(t0);
  bool pass = worst_row <= 1e-9 && worst_sum <= 1e-6 && worst_peak > 0.99 && secs < 10.0;
  line(1, pass, "relaxation correctness",
       "row dev " + fmt(worst_row) + ", sum dev " + fmt(worst_sum) + ", min peak " +
           fmt(worst_peak) + ", " + fmt(secs) + " s");
}

void criterion2() {
  auto t0 = std::chrono::steady_clock::now();
  int fails = gradcheck_suite(false);
  double secs = now_minus(t0);
  line(2, fails == 0 && secs < 60.0, "gradient fidelity vs finite differences",
       std::to_string(fails) + " oracle failures, " + fmt(secs) + " s");
}

void criterion3() {
  BackboneSpec spec;
  spec.layers = {6, 2};
  spec.width = 8;
  spec.hidden = 8;
  spec.grid_h = 3;
  spec.grid_w = 3;
  ParamStore ps;
  SeededRng rng(7);
  AdaptiveNet net(ps, spec, rng);
  Scene s = gen_scene(rng, 2, SceneParams{.h = 3, .w = 3});
  Value h0 = net.embed(0, s.grid_a);
  double worst = 0.0;
  for (int mask = 0; mask < (1 << 6); ++mask) {
    std::vector<int> bits(6);
    for (int l = 0; l < 6; ++l) bits[l] = (mask >> l) & 1;
    Value gated = net.encode_modality(0, h0, ModalityGates::from_bits(bits));
    Value direct = h0;
    for (int l = 0; l < 6; ++l)
      if (bits[l]) direct = net.layer_forward(0, l, direct);
    for (std::size_t i = 0; i < gated->size(); ++i)
      worst = std::max(worst, std::abs(gated->data[i] - direct->data[i]));
  }
  line(3, worst <= 1e-9, "hard/soft gated forward consistency",
       "max deviation " + fmt(worst) + " over 64 masks");
}

}  // namespace

int main() {
  criterion1();
  criterion2();
  criterion3();

  const std::string root = "acceptance_out";
  fs::create_directories(root);

  // Full default pipelines over three seeds; every trend criterion below
  // reads these reports.
  std::vector<EvalReport> reps;
  double seed1_secs = 0.0;
  std::string seed1_dir;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    RunConfig cfg;
    cfg.seed = seed;
    cfg.out_dir = root + "/seed" + std::to_string(seed);
    if (seed == 1) seed1_dir = cfg.out_dir;
    std::fprintf(stderr, "-- training full pipeline, seed %llu\n",
                 static_cast<unsigned long long>(seed));
    auto t0 = std::chrono::steady_clock::now();
    Pipeline pipe(cfg);
    pipe.run_all();
    EvalReport rep = pipe.evaluate();
    double secs = now_minus(t0);
    if (seed == 1) {
      seed1_secs = secs;
      pipe.write_reports(rep);
    }
    std::fprintf(stderr, "-- seed %llu done in %.1f s\n",
                 static_cast<unsigned long long>(seed), secs);
    reps.push_back(std::move(rep));
  }

  {  // 4: budget guarantee over the full grid
    int violations = 0;
    long long cells = 0;
    for (const auto& r : reps) {
      violations += r.budget_violations;
      cells += static_cast<long long>(r.cells.size());
    }
    line(4, violations == 0, "budget guarantee on every trace",
         std::to_string(violations) + " violations over " + std::to_string(cells) +
             " grid cells x 500 samples");
  }

  {  // 5: controller beats naive on asymmetric corruptions at b=4
    bool pass = seed1_secs < 900.0;
    std::string detail = "pipeline " + fmt(seed1_secs) + " s;";
    for (const auto& kind : kAsymKinds) {
      double ctrl = seed_mean(reps, kind, 4, "ctrl", [](const EvalCell& c) { return c.det_loss; });
      double naive =
          seed_mean(reps, kind, 4, "naive", [](const EvalCell& c) { return c.det_loss; });
      int uncorrupted = kind[0] == 'a' ? 1 : 0;
      double share = seed_mean(reps, kind, 4, "ctrl", [&](const EvalCell& c) {
                       return c.mean_selected[uncorrupted];
                     }) /
                     4.0;
      pass = pass && ctrl < naive && share > 0.6;
      detail += " " + kind + ": ctrl " + fmt(ctrl) + " vs naive " + fmt(naive) + ", share " +
                fmt(share) + ";";
    }
    line(5, pass, "controller allocation trend at b=4", detail);
  }

  {  // 6: skipgate saves layers at b=16 and abstains at b=4
    double exec16 = 0.0, loss_skip = 0.0, loss_ctrl = 0.0, exec4 = 0.0;
    for (const auto& kind : kAllKinds) {
      exec16 += seed_mean(reps, kind, 16, "ctrl-skip", [](const EvalCell& c) {
        return c.mean_executed[0] + c.mean_executed[1];
      });
      loss_skip +=
          seed_mean(reps, kind, 16, "ctrl-skip", [](const EvalCell& c) { return c.det_loss; });
      loss_ctrl += seed_mean(reps, kind, 16, "ctrl", [](const EvalCell& c) { return c.det_loss; });
      exec4 += seed_mean(reps, kind, 4, "ctrl-skip", [](const EvalCell& c) {
        return c.mean_executed[0] + c.mean_executed[1];
      });
    }
    exec16 /= kAllKinds.size();
    exec4 /= kAllKinds.size();
    double ratio = loss_skip / loss_ctrl;
    bool pass = exec16 <= 0.85 * 16 && ratio <= 1.10 && exec4 >= 0.95 * 4;
    line(6, pass, "layer-skipping trend",
         "b=16 executed " + fmt(exec16) + "/16, loss ratio " + fmt(ratio) + ", b=4 executed " +
             fmt(exec4) + "/4");
  }

  {  // 7: token pruning saves tokens without hurting F1; alpha3=0 keeps them
    double ret = 0.0, f1_prune = 0.0, f1_skip = 0.0;
    int cells = 0;
    for (const auto& kind : kAllKinds)
      for (int b : {4, 6, 8, 16}) {
        ret += seed_mean(reps, kind, b, "ctrl-skip-prune", [](const EvalCell& c) {
          return 0.5 * (c.retention[0] + c.retention[1]);
        });
        f1_prune +=
            seed_mean(reps, kind, b, "ctrl-skip-prune", [](const EvalCell& c) { return c.f1; });
        f1_skip += seed_mean(reps, kind, b, "ctrl-skip", [](const EvalCell& c) { return c.f1; });
        ++cells;
      }
    ret /= cells;
    f1_prune /= cells;
    f1_skip /= cells;

    // alpha3 = 0 twin: reuse the seed-1 checkpoints, retrain stage 5 only
    RunConfig cfg0;
    cfg0.seed = 1;
    cfg0.alpha3 = 0.0;
    cfg0.out_dir = root + "/alpha0";
    cfg0.eval_scenes_per_cell = 100;
    fs::create_directories(cfg0.out_dir);
    for (const char* ck : {"stage1_m0.json", "stage1_m1.json", "stage2.json", "stage3.json",
                           "stage3_st.json", "stage4.json"})
      fs::copy_file(fs::path(seed1_dir) / ck, fs::path(cfg0.out_dir) / ck,
                    fs::copy_options::overwrite_existing);
    std::fprintf(stderr, "-- retraining token pruner with alpha3 = 0\n");
    Pipeline pipe0(cfg0);
    pipe0.stage5();
    EvalReport rep0 = pipe0.evaluate();
    double ret0 = 0.0;
    int n0 = 0;
    for (const auto& c : rep0.cells)
      if (c.variant == "ctrl-skip-prune") {
        ret0 += 0.5 * (c.retention[0] + c.retention[1]);
        ++n0;
      }
    ret0 /= n0;

    bool pass = ret < 0.60 && f1_prune >= 0.95 * f1_skip && ret0 >= 0.95;
    line(7, pass, "token-pruning trend",
         "retention " + fmt(ret) + ", F1 " + fmt(f1_prune) + " vs unpruned " + fmt(f1_skip) +
             ", alpha3=0 retention " + fmt(ret0));
  }

  {  // 8: soft-permutation estimator beats straight-through top-k
    double m_ctrl = 0.0, m_st = 0.0;
    for (const auto& r : reps) {
      m_ctrl += r.margin_ctrl;
      m_st += r.margin_st;
    }
    m_ctrl /= reps.size();
    m_st /= reps.size();
    int kinds_better = 0;
    std::string losses;
    for (const auto& kind : kAsymKinds) {
      double ctrl = seed_mean(reps, kind, 4, "ctrl", [](const EvalCell& c) { return c.det_loss; });
      double st =
          seed_mean(reps, kind, 4, "st-baseline", [](const EvalCell& c) { return c.det_loss; });
      kinds_better += ctrl <= st;
      losses += " " + kind + " " + fmt(ctrl) + "/" + fmt(st);
    }
    line(8, m_ctrl > m_st, "allocation estimator comparison",
         "margin " + fmt(m_ctrl) + " vs " + fmt(m_st) + "; b=4 loss better on " +
             std::to_string(kinds_better) + "/3 kinds (reported):" + losses);
  }

  {  // 9: layerdrop training pays off under random half-budget masks
    RunConfig cfg9;
    cfg9.seed = 1;
    cfg9.spec.layerdrop_rate = 0.0;
    cfg9.out_dir = root + "/nodrop";
    std::fprintf(stderr, "-- training layerdrop-free twin\n");
    Pipeline pipe9(cfg9);
    pipe9.stage1();
    pipe9.stage2();

    RunConfig base;  // matches the seed-1 model
    auto masked_loss = [&](const std::string& ckpt) {
      ParamStore ps;
      SeededRng init(99);
      AdaptiveNet net(ps, base.spec, init);
      ps.load(ckpt);
      SceneParams params;
      params.h = base.spec.grid_h;
      params.w = base.spec.grid_w;
      SeededRng scene_rng(555);
      std::vector<Scene> scenes;
      for (int i = 0; i < 10; ++i)
        scenes.push_back(gen_scene(scene_rng, 1 + static_cast<int>(scene_rng.below(4)), params));
      SeededRng mask_rng(777);
      int total = base.spec.total_layers();
      double acc = 0.0;
      int count = 0;
      for (int trial = 0; trial < 100; ++trial) {
        // random half-budget subset of the flat layer index space
        std::vector<int> idx(total);
        for (int i = 0; i < total; ++i) idx[i] = i;
        for (int i = total - 1; i > 0; --i)
          std::swap(idx[i], idx[mask_rng.below(i + 1)]);
        std::vector<int> flat(total, 0);
        for (int i = 0; i < total / 2; ++i) flat[idx[i]] = 1;
        std::vector<std::vector<int>> bits = {
            {flat.begin(), flat.begin() + base.spec.layers[0]},
            {flat.begin() + base.spec.layers[0], flat.end()}};
        const Scene& s = scenes[trial % scenes.size()];
        std::vector<ModalityTokens> toks;
        for (int m = 0; m < 2; ++m)
          toks.push_back({net.encode_modality(m, net.embed(m, m == 0 ? s.grid_a : s.grid_b),
                                              ModalityGates::from_bits(bits[m])),
                          {},
                          base.spec.tokens()});
        acc += net.detection_loss(net.fuse_and_head(toks), s.occupancy)->item();
        ++count;
      }
      return acc / count;
    };
    double with_drop = masked_loss(seed1_dir + "/stage2.json");
    double without = masked_loss(cfg9.out_dir + "/stage2.json");
    line(9, with_drop < without, "layerdrop robustness under half-budget masks",
         "drop-0.2 loss " + fmt(with_drop) + " vs drop-0 loss " + fmt(without));
  }

  {  // 10: bitwise-identical metrics across repeated runs
    auto run_once = [&](const std::string& dir) {
      RunConfig cfg;
      cfg.seed = 5;
      cfg.train_scenes = 60;
      cfg.eval_scenes_per_cell = 20;
      cfg.epochs_stage1 = 3;
      cfg.epochs_stage2 = 2;
      cfg.epochs_stage3 = 2;
      cfg.epochs_stage4 = 2;
      cfg.epochs_stage5_soft = 1;
      cfg.epochs_stage5_hard = 1;
      cfg.out_dir = dir;
      Pipeline pipe(cfg);
      pipe.run_all();
      pipe.write_reports(pipe.evaluate());
      std::ifstream f(dir + "/metrics.csv");
      return std::string(std::istreambuf_iterator<char>(f), {});
    };
    std::fprintf(stderr, "-- determinism: two identical pipeline runs\n");
    std::string a = run_once(root + "/det_a");
    std::string b = run_once(root + "/det_b");
    line(10, !a.empty() && a == b, "run-to-run determinism",
         a == b ? "metrics.csv byte-identical" : "metrics.csv differs");
  }

  std::printf("%s: %d/10 criteria passed\n", g_failures == 0 ? "ACCEPTED" : "REJECTED",
              10 - g_failures);
  return g_failures;
}
