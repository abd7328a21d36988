#include <doctest.h>

#include <cmath>

#include "adanet/data.hpp"
#include "adanet/gradcheck.hpp"
#include "adanet/net.hpp"
#include "adanet/optim.hpp"
#include "adanet/relax.hpp"
#include "adanet/rng.hpp"
#include "adanet/tensor.hpp"

using namespace adanet;

namespace {

BackboneSpec tiny_spec(std::vector<int> layers = {6, 2}) {
  BackboneSpec s;
  s.layers = std::move(layers);
  s.width = 8;
  s.hidden = 8;
  s.grid_h = 3;
  s.grid_w = 3;
  return s;
}

std::vector<double> random_grid(int n, SeededRng& rng) {
  std::vector<double> g(n);
  for (auto& x : g) x = rng.uniform(0.0, 2.0);
  return g;
}

}  // namespace

TEST_CASE("sinusoidal embedding basics") {
  auto e = sinusoidal_embedding(0.0, 4);
  CHECK(e[0] == doctest::Approx(0.0));
  CHECK(e[1] == doctest::Approx(1.0));
  CHECK(e[2] == doctest::Approx(0.0));
  CHECK(e[3] == doctest::Approx(1.0));
  // distinct integer positions give distinct embeddings
  auto a = sinusoidal_embedding(3.0, 16);
  auto b = sinusoidal_embedding(4.0, 16);
  double diff = 0.0;
  for (int i = 0; i < 16; ++i) diff += std::abs(a[i] - b[i]);
  CHECK(diff > 0.1);
}

TEST_CASE("BackboneSpec validation") {
  BackboneSpec s;
  CHECK(s.total_layers() == 20);
  CHECK(s.max_layers() == 12);
  CHECK(s.partition_offsets() == std::vector<int>{8, 20});
  s.layers = {8};
  CHECK_THROWS(s.validate());
  s = BackboneSpec{};
  s.layerdrop_rate = 1.0;
  CHECK_THROWS(s.validate());
}

TEST_CASE("all-zero gates leave the embedded input untouched") {
  ParamStore ps;
  SeededRng rng(3);
  BackboneSpec spec = tiny_spec();
  AdaptiveNet net(ps, spec, rng);
  Value x = net.embed(0, random_grid(9, rng));
  Value h = net.encode_modality(0, x, ModalityGates::from_bits({0, 0, 0, 0, 0, 0}));
  for (std::size_t i = 0; i < x->size(); ++i) CHECK(h->data[i] == x->data[i]);
}

TEST_CASE("hard-mask forward equals direct composition, exhaustively over 2^6 masks") {
  ParamStore ps;
  SeededRng rng(4);
  BackboneSpec spec = tiny_spec();
  AdaptiveNet net(ps, spec, rng);
  Value x = net.embed(0, random_grid(9, rng));
  for (int mask = 0; mask < (1 << 6); ++mask) {
    std::vector<int> bits(6);
    for (int l = 0; l < 6; ++l) bits[l] = (mask >> l) & 1;
    Value got = net.encode_modality(0, x, ModalityGates::from_bits(bits));
    Value want = x;
    for (int l = 0; l < 6; ++l)
      if (bits[l]) want = net.layer_forward(0, l, want);
    double dev = 0.0;
    for (std::size_t i = 0; i < got->size(); ++i)
      dev = std::max(dev, std::abs(got->data[i] - want->data[i]));
    CHECK(dev <= 1e-9);
  }
}

TEST_CASE("soft gates at {0,1} reproduce the hard path") {
  ParamStore ps;
  SeededRng rng(5);
  BackboneSpec spec = tiny_spec();
  AdaptiveNet net(ps, spec, rng);
  Value x = net.embed(0, random_grid(9, rng));
  std::vector<int> bits = {1, 0, 1, 1, 0, 0};
  std::vector<Value> soft;
  for (int b : bits) soft.push_back(make_scalar(static_cast<double>(b)));
  Value hard = net.encode_modality(0, x, ModalityGates::from_bits(bits));
  Value relaxed = net.encode_modality(0, x, ModalityGates::from_soft(soft));
  for (std::size_t i = 0; i < hard->size(); ++i)
    CHECK(relaxed->data[i] == doctest::Approx(hard->data[i]).epsilon(1e-12));
}

TEST_CASE("gate slice length is checked") {
  ParamStore ps;
  SeededRng rng(6);
  AdaptiveNet net(ps, tiny_spec(), rng);
  Value x = net.embed(0, random_grid(9, rng));
  CHECK_THROWS(net.encode_modality(0, x, ModalityGates::from_bits({1, 0})));
}

TEST_CASE("layerdrop mask frequency and determinism") {
  BackboneSpec spec;
  spec.layerdrop_rate = 0.2;
  SeededRng rng(9);
  long drops = 0, total = 0;
  for (int i = 0; i < 10000; ++i) {
    auto mask = layerdrop_mask(spec, rng);
    for (const auto& bits : mask)
      for (int b : bits) {
        drops += 1 - b;
        ++total;
      }
  }
  CHECK(std::abs(static_cast<double>(drops) / total - 0.2) < 0.01);
  spec.layerdrop_rate = 0.0;
  auto full = layerdrop_mask(spec, rng);
  for (const auto& bits : full)
    for (int b : bits) CHECK(b == 1);
  SeededRng r1(33), r2(33);
  spec.layerdrop_rate = 0.5;
  CHECK(layerdrop_mask(spec, r1) == layerdrop_mask(spec, r2));
}

TEST_CASE("modality dropout zeroes exactly one modality at rate 1") {
  SeededRng rng(10);
  SceneParams params;
  for (int i = 0; i < 20; ++i) {
    Scene s = gen_scene(rng, 3, params);
    Scene dropped = s;
    modality_dropout(dropped, rng, 1.0);
    bool a_zero = true, b_zero = true;
    for (double v : dropped.grid_a) a_zero &= v == 0.0;
    for (double v : dropped.grid_b) b_zero &= v == 0.0;
    CHECK(a_zero != b_zero);  // exactly one modality zeroed
    Scene same = s;
    modality_dropout(same, rng, 0.0);
    CHECK(same.grid_a == s.grid_a);
    CHECK(same.grid_b == s.grid_b);
  }
}

TEST_CASE("skipgate logit is a pure function and depends on l_r") {
  ParamStore ps;
  SeededRng rng(11);
  BackboneSpec spec = tiny_spec();
  AdaptiveNet net(ps, spec, rng);
  SkipGate sg(ps, "skip.m0", spec.max_layers(), 8, spec.width, rng);
  std::vector<double> zd(8);
  for (auto& v : zd) v = rng.normal(0.0, 1.0);
  Value z = make_const({8}, zd);
  Value hmean = mean_axis(net.embed(0, random_grid(9, rng)), 0);
  double d1 = sg.logit(hmean, 2, 3, 1, z)->item();
  double d1again = sg.logit(hmean, 2, 3, 1, z)->item();
  double d2 = sg.logit(hmean, 2, 4, 1, z)->item();
  CHECK(d1 == d1again);
  CHECK(d1 != d2);
  CHECK_THROWS(sg.logit(hmean, spec.max_layers() + 1, 0, 0, z));
  CHECK_THROWS(sg.logit(hmean, -1, 0, 0, z));
}

TEST_CASE("skipgate inference runs a layer iff selected and logit positive") {
  ParamStore ps;
  SeededRng rng(12);
  BackboneSpec spec = tiny_spec();
  AdaptiveNet net(ps, spec, rng);
  SkipGate sg(ps, "skip.m0", spec.max_layers(), 8, spec.width, rng);
  std::vector<double> zd(8, 0.3);
  ModalityGates g = ModalityGates::from_bits({1, 1, 0, 1, 0, 1});
  g.skipgate = &sg;
  g.z = make_const({8}, zd);
  g.other_alloc = 2;
  g.inference = true;
  std::vector<Value> sink;
  g.logit_sink = &sink;
  ModalityTrace trace;
  net.encode_modality(0, net.embed(0, random_grid(9, rng)), g, &trace);
  CHECK(trace.layers.size() == 6);
  CHECK(sink.size() == 4);  // one logit per selected layer
  int si = 0;
  for (const auto& ev : trace.layers) {
    if (!ev.selected) {
      CHECK_FALSE(ev.executed);
    } else {
      CHECK(ev.executed == (sink[si]->item() > 0.0));
      ++si;
    }
  }
  CHECK(trace.executed_count() <= trace.selected_count());
}

TEST_CASE("skipgate requires z and an rng in training mode") {
  ParamStore ps;
  SeededRng rng(13);
  BackboneSpec spec = tiny_spec();
  AdaptiveNet net(ps, spec, rng);
  SkipGate sg(ps, "skip.m0", spec.max_layers(), 8, spec.width, rng);
  Value x = net.embed(0, random_grid(9, rng));
  ModalityGates g = ModalityGates::from_bits({1, 1, 1, 1, 1, 1});
  g.skipgate = &sg;
  CHECK_THROWS(net.encode_modality(0, x, g));  // missing z
  g.z = make_const({8}, std::vector<double>(8, 0.1));
  CHECK_THROWS(net.encode_modality(0, x, g));  // missing rng in training mode
}

TEST_CASE("token scores live in (0,1) and zero weights give 0.5") {
  ParamStore ps;
  SeededRng rng(14);
  BackboneSpec spec = tiny_spec();
  AdaptiveNet net(ps, spec, rng);
  TokenScorer sc(ps, "prune.m0", spec.width, rng);
  Value h = net.embed(0, random_grid(9, rng));
  Value s = sc.scores(h);
  CHECK(s->shape == Shape{9});
  double mean = 0.0;
  for (double v : s->data) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
    mean += v;
  }
  // fresh scorers start biased toward keeping tokens
  CHECK(mean / s->shape[0] > 0.6);
  CHECK(ps.get("prune.m0.b2")->data[0] == doctest::Approx(4.0));
  for (const char* name : {"prune.m0.w1", "prune.m0.b1", "prune.m0.w2", "prune.m0.b2"})
    std::fill(ps.get(name)->data.begin(), ps.get(name)->data.end(), 0.0);
  Value s0 = sc.scores(h);
  for (double v : s0->data) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("pruning: identity, popcount, fallback") {
  ParamStore ps;
  SeededRng rng(15);
  BackboneSpec spec = tiny_spec();
  AdaptiveNet net(ps, spec, rng);
  Value h = net.embed(0, random_grid(9, rng));

  PruneResult all = prune_tokens_hard(h, std::vector<double>(9, 1.0),
                                      std::vector<double>(9, 0.9));
  CHECK(all.kept.size() == 9);
  for (std::size_t i = 0; i < h->size(); ++i) CHECK(all.tokens.feats->data[i] == h->data[i]);

  std::vector<double> w = {1, 0, 0, 1, 0, 0, 0, 1, 0};
  PruneResult some = prune_tokens_hard(h, w, w);
  CHECK(some.kept == std::vector<int>{0, 3, 7});

  std::vector<double> scores = {0.1, 0.2, 0.45, 0.3, 0.1, 0.2, 0.1, 0.1, 0.1};
  PruneResult none = prune_tokens_hard(h, std::vector<double>(9, 0.0), scores);
  CHECK(none.kept == std::vector<int>{2});  // argmax score survives
}

TEST_CASE("soft and hard pruning agree through the head on matched masks") {
  ParamStore ps;
  SeededRng rng(16);
  BackboneSpec spec = tiny_spec({3, 3});
  AdaptiveNet net(ps, spec, rng);
  Value h0 = net.encode_modality(0, net.embed(0, random_grid(9, rng)),
                                 ModalityGates::all_on(3));
  Value h1 = net.encode_modality(1, net.embed(1, random_grid(9, rng)),
                                 ModalityGates::all_on(3));
  std::vector<double> w0 = {1, 0, 1, 1, 0, 1, 0, 1, 0};
  std::vector<double> w1 = {0, 1, 1, 0, 1, 0, 1, 0, 1};
  Value soft_logits = net.fuse_and_head(
      {prune_tokens_soft(h0, make_const({9}, w0)).tokens,
       prune_tokens_soft(h1, make_const({9}, w1)).tokens});
  Value hard_logits = net.fuse_and_head(
      {prune_tokens_hard(h0, w0, w0).tokens, prune_tokens_hard(h1, w1, w1).tokens});
  for (std::size_t i = 0; i < soft_logits->size(); ++i)
    CHECK(std::abs(soft_logits->data[i] - hard_logits->data[i]) <= 1e-6);
}

TEST_CASE("fuse_and_head: all-zero tokens give pure bias response") {
  ParamStore ps;
  SeededRng rng(17);
  BackboneSpec spec = tiny_spec({3, 3});
  AdaptiveNet net(ps, spec, rng);
  std::vector<double> zeros(9 * spec.width, 0.0);
  std::vector<ModalityTokens> toks = {{make_const({9, spec.width}, zeros), {}, 9},
                                      {make_const({9, spec.width}, zeros), {}, 9}};
  Value logits = net.fuse_and_head(toks);
  for (std::size_t i = 1; i < logits->size(); ++i)
    CHECK(logits->data[i] == doctest::Approx(logits->data[0]));
}

TEST_CASE("detection loss oracles") {
  ParamStore ps;
  SeededRng rng(18);
  BackboneSpec spec = tiny_spec();
  AdaptiveNet net(ps, spec, rng);
  std::vector<double> occ(9, 0.0);
  occ[4] = 1.0;
  CHECK(net.detection_loss(make_zeros({3, 3}), occ)->item() == doctest::Approx(std::log(2.0)));
  std::vector<double> strong(9, -50.0);
  strong[4] = 50.0;
  CHECK(net.detection_loss(make_const({3, 3}, strong), occ)->item() ==
        doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("gradient reaches skipgate weights through the gated forward") {
  ParamStore ps;
  SeededRng rng(19);
  BackboneSpec spec = tiny_spec({1, 1});
  AdaptiveNet net(ps, spec, rng);
  SkipGate sg(ps, "skip.m0", spec.max_layers(), 4, spec.width, rng);
  std::vector<double> occ(9, 0.0);
  occ[3] = 1.0;
  auto grid = random_grid(9, rng);
  SeededRng noise(50);
  ModalityGates g = ModalityGates::from_bits({1});
  g.skipgate = &sg;
  g.z = make_const({4}, {0.1, -0.2, 0.3, 0.0});
  g.rng = &noise;
  g.skip_noise = false;
  Value h = net.encode_modality(0, net.embed(0, grid), g);
  std::vector<double> zeros(9 * spec.width, 0.0);
  Value loss = net.detection_loss(
      net.fuse_and_head({{h, {}, 9}, {make_const({9, spec.width}, zeros), {}, 9}}), occ);
  ps.zero_grad();
  backward(loss);
  double gsum = 0.0;
  for (double v : ps.get("skip.m0.w1")->grad) gsum += std::abs(v);
  CHECK(gsum > 0.0);
}
