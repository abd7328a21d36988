#pragma once

#include <string>
#include <utility>
#include <vector>

#include "adanet/rng.hpp"

namespace adanet {

// Environment classes: clean plus five corruption kinds. Each corruption
// degrades exactly one modality.
enum class Corruption {
  kClean = 0,
  kASparsify,  // modality A loses signal rows
  kBFog,       // haze and contrast loss on modality B
  kBBlur,
  kBDark,
  kABlur,
};

constexpr int kNumEnvClasses = 6;

const char* corruption_name(Corruption c);
Corruption corruption_from_name(const std::string& name);

// Two-modality synthetic observation. Modality A renders targets as
// sharp narrow blobs, modality B as broad textured blobs; both see the
// same world. Occupancy marks exactly one cell per target.
struct Scene {
  int h = 8, w = 8;
  std::vector<double> grid_a;
  std::vector<double> grid_b;
  std::vector<double> occupancy;
  std::vector<std::pair<int, int>> targets;
  Corruption kind = Corruption::kClean;
  double severity = 0.0;

  int env_label() const { return static_cast<int>(kind); }
};

struct SceneParams {
  int h = 8, w = 8;
  int max_targets = 5;
  double noise_sigma = 0.05;
};

Scene gen_scene(SeededRng& rng, int n_targets, const SceneParams& params = {});

// Applies one corruption kind at the given severity. Severity 0 leaves
// the scene bit-identical; the untargeted modality is never touched and
// the occupancy target never changes.
Scene corrupt(const Scene& scene, Corruption kind, double severity, SeededRng& rng);

// Convenience: random scene with random corruption drawn from all six
// kinds; severity drawn from [sev_lo, sev_hi] for non-clean kinds.
Scene random_corrupted_scene(SeededRng& rng, const SceneParams& params, double sev_lo,
                             double sev_hi);

// JSON-lines dataset dump/load so runs are replayable.
void save_scenes(const std::string& path, const std::vector<Scene>& scenes);
std::vector<Scene> load_scenes(const std::string& path);

}  // namespace adanet
