#pragma once

#include <map>
#include <string>
#include <vector>

#include "adanet/controller.hpp"
#include "adanet/cost.hpp"
#include "adanet/data.hpp"
#include "adanet/net.hpp"
#include "adanet/optim.hpp"
#include "adanet/rng.hpp"

namespace adanet {

// Everything a run needs, readable from a key=value file. Epoch counts,
// dataset sizes and loss weights are all overridable; the loss-weight
// defaults are the ones every reported number was produced with.
struct RunConfig {
  BackboneSpec spec;
  ControllerConfig ctrl;
  CostModel cost;

  int train_scenes = 320;
  int eval_scenes_per_cell = 500;
  double train_sev_lo = 0.4, train_sev_hi = 1.0;
  double eval_sev_lo = 0.7, eval_sev_hi = 1.0;

  double alpha1 = 1.0;   // corruption-class auxiliary loss weight
  double alpha2 = 0.0003;  // layer-utilization hinge weight
  double alpha3 = 0.0001;  // token-utilization weight
  double beta = 2.0;     // hinge slack; the per-modality cap is that
                         // modality's layer count
  double lr = 1e-3;
  double modality_dropout_rate = 0.3;
  double tau_floor = 0.2;       // allocation anneal (stage 3)
  double tau_floor_skip = 0.1;  // Gumbel-Sigmoid anneal (stage 4)

  int epochs_stage1 = 20;
  int epochs_stage2 = 12;
  int epochs_stage3 = 26;
  int epochs_stage4 = 24;
  int epochs_stage5_soft = 16;
  int epochs_stage5_hard = 16;

  std::uint64_t seed = 1;
  std::string out_dir = "out";
  bool allow_stage_skip = false;   // stage ordering override
  bool retrain_full_head = true;   // stage-5 hard phase scope
  bool detach_z = false;           // ablation: cut the detection-loss path into
                                   // the QoI extractor during controller training
  int trace_limit = 0;             // 0 = keep every eval trace

  void apply(const std::string& key, const std::string& value);
  static RunConfig from_file(const std::string& path);
  void validate() const;
};

// One evaluation grid cell: (corruption, budget, variant) with the
// aggregate detection quality, utilization and cost over its samples.
struct EvalCell {
  std::string corruption;
  int budget = 0;
  std::string variant;
  double det_loss = 0.0;
  double f1 = 0.0;
  std::vector<double> mean_selected;  // per modality
  std::vector<double> mean_executed;  // per modality
  std::vector<double> retention;      // kept / total tokens per modality
  double mean_cost = 0.0;
  int budget_violations = 0;
};

struct EvalReport {
  std::vector<EvalCell> cells;
  // Mean (b-th minus (b+1)-th logit) over all eval samples and budgets,
  // per allocation estimator.
  double margin_ctrl = 0.0;
  double margin_st = 0.0;
  int budget_violations = 0;

  const EvalCell* find(const std::string& corruption, int budget,
                       const std::string& variant) const;
};

// Variant names used throughout reports, in grid order.
extern const std::vector<std::string> kVariants;  // naive, ctrl, ctrl-skip,
                                                  // ctrl-skip-prune, st-baseline

// Staged training driver. Each stage loads its prerequisite checkpoint
// from cfg.out_dir, trains the stage's sub-network with everything else
// frozen, and saves its own checkpoint:
//   stage1_m0.json stage1_m1.json stage2.json stage3.json stage3_st.json
//   stage4.json stage5.json
class Pipeline {
 public:
  explicit Pipeline(RunConfig cfg);

  const RunConfig& config() const { return cfg_; }

  void stage1();
  void stage2();
  // st_estimator switches the allocation gradient estimator from the
  // soft-permutation gate to straight-through top-k with forced first
  // layers; everything else (architecture, data, seeds) is identical.
  void stage3(bool st_estimator = false);
  void stage4();
  void stage5();
  void run_all();

  EvalReport evaluate();
  void write_reports(const EvalReport& report) const;

  // Per-sample training losses of the last run of each stage, keyed
  // "stage1_m0", "stage1_m1", "stage2", ..., "stage5_hard".
  const std::map<std::string, std::vector<double>>& loss_history() const {
    return losses_;
  }

  std::string checkpoint_path(const std::string& name) const;

 private:
  void require_checkpoint(const std::string& name) const;
  std::vector<Scene> clean_training_set(std::uint64_t stream) const;
  std::vector<Scene> corrupted_training_set(std::uint64_t stream) const;

  RunConfig cfg_;
  std::map<std::string, std::vector<double>> losses_;
};

// Report writers / readers (stable column order, lossless JSON round-trip).
void write_metrics_csv(const std::string& path, const EvalReport& report);
void write_report_json(const std::string& path, const EvalReport& report);
EvalReport read_report_json(const std::string& path);
void write_utilization_csv(const std::string& path, const EvalReport& report);

// Runs every registered analytic-gradient and relaxation oracle with
// fixed seeds; returns the number of failures (0 = all green).
int gradcheck_suite(bool verbose = true);

}  // namespace adanet
