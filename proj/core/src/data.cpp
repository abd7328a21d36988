#include "adanet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace adanet {

namespace {

const char* kNames[kNumEnvClasses] = {"clean",  "a-sparsify", "b-fog",
                                      "b-blur", "b-dark",     "a-blur"};

// Separable gaussian blur, zero-padded. sigma 0 is the identity.
std::vector<double> gaussian_blur(const std::vector<double>& g, int h, int w, double sigma) {
  if (sigma <= 0.0) return g;
  int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double s = 0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    s += kernel[i + radius];
  }
  for (auto& k : kernel) k /= s;
  std::vector<double> tmp(g.size(), 0.0), out(g.size(), 0.0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) {
        int cc = c + i;
        if (cc >= 0 && cc < w) acc += kernel[i + radius] * g[r * w + cc];
      }
      tmp[r * w + c] = acc;
    }
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) {
        int rr = r + i;
        if (rr >= 0 && rr < h) acc += kernel[i + radius] * tmp[rr * w + c];
      }
      out[r * w + c] = acc;
    }
  return out;
}

}  // namespace

const char* corruption_name(Corruption c) { return kNames[static_cast<int>(c)]; }

Corruption corruption_from_name(const std::string& name) {
  for (int i = 0; i < kNumEnvClasses; ++i)
    if (name == kNames[i]) return static_cast<Corruption>(i);
  throw std::invalid_argument("unknown corruption kind '" + name + "'");
}

Scene gen_scene(SeededRng& rng, int n_targets, const SceneParams& params) {
  if (n_targets < 0 || n_targets > params.max_targets)
    throw std::invalid_argument("gen_scene: target count " + std::to_string(n_targets) +
                                " outside [0," + std::to_string(params.max_targets) + "]");
  Scene s;
  s.h = params.h;
  s.w = params.w;
  std::size_t n = static_cast<std::size_t>(s.h) * s.w;
  s.grid_a.assign(n, 0.0);
  s.grid_b.assign(n, 0.0);
  s.occupancy.assign(n, 0.0);

  // distinct target cells
  std::vector<int> cells(n);
  std::iota(cells.begin(), cells.end(), 0);
  for (int t = 0; t < n_targets; ++t) {
    int pick = t + static_cast<int>(rng.below(n - t));
    std::swap(cells[t], cells[pick]);
  }
  for (int t = 0; t < n_targets; ++t) {
    int r = cells[t] / s.w, c = cells[t] % s.w;
    double intensity = rng.uniform(1.5, 3.0);
    s.targets.emplace_back(r, c);
    s.occupancy[r * s.w + c] = 1.0;
    // A: sharp spike plus faint 4-neighbourhood
    s.grid_a[r * s.w + c] += intensity;
    const int dr[] = {-1, 1, 0, 0}, dc[] = {0, 0, -1, 1};
    for (int k = 0; k < 4; ++k) {
      int rr = r + dr[k], cc = c + dc[k];
      if (rr >= 0 && rr < s.h && cc >= 0 && cc < s.w)
        s.grid_a[rr * s.w + cc] += 0.25 * intensity;
    }
    // B: broad textured blob
    for (int rr = 0; rr < s.h; ++rr)
      for (int cc = 0; cc < s.w; ++cc) {
        double d2 = (rr - r) * (rr - r) + (cc - c) * (cc - c);
        if (d2 > 9.0) continue;
        double texture = 1.0 + 0.1 * rng.uniform(-1.0, 1.0);
        s.grid_b[rr * s.w + cc] += intensity * std::exp(-d2 / (2.0 * 0.9 * 0.9)) * texture;
      }
  }
  // ghost returns: sub-target spikes only modality A sees, no
  // 4-neighbour halo and no B blob — telling them from targets takes a
  // calibrated threshold, not just "any energy"
  int n_ghosts = 2 + static_cast<int>(rng.below(4));
  for (int t = n_targets; t < n_targets + n_ghosts && t < static_cast<int>(n); ++t) {
    int pick = t + static_cast<int>(rng.below(n - t));
    std::swap(cells[t], cells[pick]);
    s.grid_a[cells[t]] += rng.uniform(0.5, 1.2);
  }
  for (auto& v : s.grid_a) v += rng.normal(0.0, params.noise_sigma);
  for (auto& v : s.grid_b) v += rng.normal(0.0, params.noise_sigma);
  return s;
}

Scene corrupt(const Scene& scene, Corruption kind, double severity, SeededRng& rng) {
  if (severity < 0.0 || severity > 1.0)
    throw std::invalid_argument("corrupt: severity must lie in [0,1]");
  Scene out = scene;
  out.kind = kind;
  out.severity = kind == Corruption::kClean ? 0.0 : severity;
  if (kind == Corruption::kClean || severity == 0.0) {
    out.kind = Corruption::kClean;
    out.severity = 0.0;
    return out;
  }
  int h = scene.h, w = scene.w;
  switch (kind) {
    case Corruption::kASparsify: {
      // beam loss: zero a severity-fraction of rows, signal-bearing
      // rows first (beams die where the return was strongest)
      int kill = static_cast<int>(std::lround(severity * h));
      std::vector<int> has_signal(h, 0);
      for (const auto& t : scene.targets) has_signal[t.first] = 1;
      std::vector<int> rows(h);
      std::iota(rows.begin(), rows.end(), 0);
      for (int i = 0; i < h; ++i) {  // shuffle, then stable-sort signal rows first
        int pick = i + static_cast<int>(rng.below(h - i));
        std::swap(rows[i], rows[pick]);
      }
      std::stable_sort(rows.begin(), rows.end(),
                       [&](int a, int b) { return has_signal[a] > has_signal[b]; });
      for (int i = 0; i < kill; ++i)
        std::fill_n(out.grid_a.begin() + rows[i] * w, w, 0.0);
      break;
    }
    case Corruption::kBFog: {
      // low-frequency haze plus contrast loss
      double mean = std::accumulate(out.grid_b.begin(), out.grid_b.end(), 0.0) /
                    static_cast<double>(h * w);
      std::vector<double> haze(out.grid_b.size());
      for (auto& v : haze) v = rng.uniform(0.6, 1.4);
      haze = gaussian_blur(haze, h, w, 1.5);
      double contrast = std::max(0.0, 1.0 - 2.0 * severity);
      for (std::size_t i = 0; i < out.grid_b.size(); ++i)
        out.grid_b[i] = mean + contrast * (out.grid_b[i] - mean) +
                        1.5 * severity * haze[i] + severity * rng.normal(0.0, 0.3);
      break;
    }
    case Corruption::kBDark:
      for (auto& v : out.grid_b)
        v = (1.0 - severity) * v + severity * rng.normal(0.0, 0.3);
      break;
    case Corruption::kBBlur:
      out.grid_b = gaussian_blur(out.grid_b, h, w, 1.6 * severity);
      break;
    case Corruption::kABlur:
      out.grid_a = gaussian_blur(out.grid_a, h, w, 1.6 * severity);
      break;
    case Corruption::kClean:
      break;
  }
  return out;
}

Scene random_corrupted_scene(SeededRng& rng, const SceneParams& params, double sev_lo,
                             double sev_hi) {
  int n_targets = 1 + static_cast<int>(rng.below(params.max_targets));
  Scene s = gen_scene(rng, n_targets, params);
  auto kind = static_cast<Corruption>(rng.below(kNumEnvClasses));
  double sev = kind == Corruption::kClean ? 0.0 : rng.uniform(sev_lo, sev_hi);
  return corrupt(s, kind, sev, rng);
}

void save_scenes(const std::string& path, const std::vector<Scene>& scenes) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_scenes: cannot write '" + path + "'");
  for (const auto& s : scenes) {
    nlohmann::json j{{"h", s.h},
                     {"w", s.w},
                     {"grid_a", s.grid_a},
                     {"grid_b", s.grid_b},
                     {"occupancy", s.occupancy},
                     {"targets", s.targets},
                     {"kind", corruption_name(s.kind)},
                     {"severity", s.severity}};
    f << j.dump() << "\n";
  }
}

std::vector<Scene> load_scenes(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_scenes: cannot read '" + path + "'");
  std::vector<Scene> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    Scene s;
    s.h = j.at("h");
    s.w = j.at("w");
    s.grid_a = j.at("grid_a").get<std::vector<double>>();
    s.grid_b = j.at("grid_b").get<std::vector<double>>();
    s.occupancy = j.at("occupancy").get<std::vector<double>>();
    s.targets = j.at("targets").get<std::vector<std::pair<int, int>>>();
    s.kind = corruption_from_name(j.at("kind"));
    s.severity = j.at("severity");
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace adanet
