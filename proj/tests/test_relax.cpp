#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "adanet/gradcheck.hpp"
#include "adanet/relax.hpp"
#include "adanet/rng.hpp"
#include "adanet/tensor.hpp"

using namespace adanet;

namespace {

std::vector<double> random_logits(int n, SeededRng& rng) {
  std::vector<double> d(n);
  for (auto& x : d) x = rng.normal(0.0, 1.0);
  return d;
}

// Independent scalar evaluation of Eq.-3-style row scores:
// score(i,j) = ((n+1-2i)*pi_j - sum_k |pi_j - pi_k|) / tau, i 1-based.
double row_score(const std::vector<double>& pi, int i, int j, double tau) {
  int n = static_cast<int>(pi.size());
  double asum = 0.0;
  for (double v : pi) asum += std::abs(pi[j] - v);
  return ((n + 1.0 - 2.0 * i) * pi[j] - asum) / tau;
}

}  // namespace

TEST_CASE("neuralsort single element") {
  RelaxedPermutation P = neuralsort(make_const({1}, {5.0}), 1.0);
  CHECK(P.matrix->data[0] == doctest::Approx(1.0));
}

TEST_CASE("neuralsort hand oracle: pi=[2,1,0] row 1 pre-softmax [1,0,-3]") {
  std::vector<double> pi = {2, 1, 0};
  CHECK(row_score(pi, 1, 0, 1.0) == doctest::Approx(1.0));
  CHECK(row_score(pi, 1, 1, 1.0) == doctest::Approx(0.0));
  CHECK(row_score(pi, 1, 2, 1.0) == doctest::Approx(-3.0));
  // the produced row equals softmax of those scores
  RelaxedPermutation P = neuralsort(make_const({3}, pi), 1.0);
  double z = std::exp(1.0) + std::exp(0.0) + std::exp(-3.0);
  CHECK(P.matrix->data[0] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-12));
  CHECK(P.matrix->data[1] == doctest::Approx(std::exp(0.0) / z).epsilon(1e-12));
  CHECK(P.matrix->data[2] == doctest::Approx(std::exp(-3.0) / z).epsilon(1e-12));
}

TEST_CASE("neuralsort matches the scalar oracle on random logits") {
  for (int seed = 0; seed < 10; ++seed) {
    SeededRng rng(500 + seed);
    int n = 2 + seed % 7;
    auto pi = random_logits(n, rng);
    for (double tau : {1.0, 0.3}) {
      RelaxedPermutation P = neuralsort(make_const({n}, pi), tau);
      for (int i = 1; i <= n; ++i) {
        double z = 0.0, mx = -1e300;
        for (int j = 0; j < n; ++j) mx = std::max(mx, row_score(pi, i, j, tau));
        for (int j = 0; j < n; ++j) z += std::exp(row_score(pi, i, j, tau) - mx);
        for (int j = 0; j < n; ++j) {
          double want = std::exp(row_score(pi, i, j, tau) - mx) / z;
          CHECK(P.matrix->data[(i - 1) * n + j] == doctest::Approx(want).epsilon(1e-9));
        }
      }
    }
  }
}

TEST_CASE("neuralsort rows sum to one; 100 seeds, n <= 8") {
  for (int seed = 0; seed < 100; ++seed) {
    SeededRng rng(1000 + seed);
    int n = 1 + static_cast<int>(rng.below(8));
    double tau = 0.05 + rng.uniform() * 2.0;
    RelaxedPermutation P = neuralsort(make_const({n}, random_logits(n, rng)), tau);
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) {
        double e = P.matrix->data[i * n + j];
        CHECK(e >= 0.0);
        CHECK(e <= 1.0);
        s += e;
      }
      CHECK(std::abs(s - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("neuralsort hard limit on well-separated logits") {
  RelaxedPermutation P = neuralsort(make_const({3}, {10, 0, -10}), 0.01);
  std::vector<double> want = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  for (int i = 0; i < 9; ++i) CHECK(std::abs(P.matrix->data[i] - want[i]) < 1e-6);
}

TEST_CASE("neuralsort at tau 0.01: margin-0.5 rows are one-hot at the sorted index") {
  for (int seed = 0; seed < 100; ++seed) {
    SeededRng rng(2000 + seed);
    int n = 2 + static_cast<int>(rng.below(7));
    std::vector<double> pi(n);
    for (int i = 0; i < n; ++i) pi[i] = 0.5 * i;
    for (int i = n - 1; i > 0; --i)
      std::swap(pi[i], pi[rng.below(static_cast<std::uint64_t>(i) + 1)]);
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return pi[a] > pi[b]; });
    RelaxedPermutation P = neuralsort(make_const({n}, pi), 0.01);
    for (int i = 0; i < n; ++i) {
      int arg = 0;
      double mx = -1.0;
      for (int j = 0; j < n; ++j)
        if (P.matrix->data[i * n + j] > mx) {
          mx = P.matrix->data[i * n + j];
          arg = j;
        }
      CHECK(mx > 0.99);
      CHECK(arg == order[i]);
    }
  }
}

TEST_CASE("neuralsort rejects non-positive tau") {
  CHECK_THROWS(neuralsort(make_const({2}, {1, 0}), 0.0));
}

TEST_CASE("budget_gate: sum is exactly b; b=0 zero; hard limit") {
  for (int seed = 0; seed < 40; ++seed) {
    SeededRng rng(3000 + seed);
    int n = 2 + static_cast<int>(rng.below(7));
    int b = static_cast<int>(rng.below(static_cast<std::uint64_t>(n) + 1));
    double tau = 0.05 + rng.uniform();
    SoftGateVector g = budget_gate(neuralsort(make_const({n}, random_logits(n, rng)), tau), b);
    double s = 0.0;
    for (double v : g.gates->data) {
      CHECK(v >= 0.0);
      CHECK(v <= b + 1e-9);
      s += v;
    }
    CHECK(std::abs(s - b) <= 1e-6);
  }
  SoftGateVector z = budget_gate(neuralsort(make_const({3}, {1, 2, 3}), 1.0), 0);
  for (double v : z.gates->data) CHECK(v == 0.0);
  SoftGateVector h = budget_gate(neuralsort(make_const({3}, {10, 0, -10}), 0.01), 2);
  CHECK(h.gates->data[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(h.gates->data[1] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(h.gates->data[2] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK_THROWS(budget_gate(neuralsort(make_const({3}, {1, 2, 3}), 1.0), 4));
}

TEST_CASE("topk_mask basics and tie-break") {
  CHECK(topk_mask({3, 1, 2}, 2).bits == std::vector<int>{1, 0, 1});
  CHECK(topk_mask({3, 1, 2}, 0).bits == std::vector<int>{0, 0, 0});
  CHECK(topk_mask({1, 1, 1}, 2).bits == std::vector<int>{1, 1, 0});
  CHECK(topk_mask({1, 1, 1}, 2).popcount() == 2);
  CHECK_THROWS(topk_mask({1, 2}, 3));
}

TEST_CASE("topk_mask equals rounded budget_gate in the tau->0 limit") {
  for (int seed = 0; seed < 50; ++seed) {
    SeededRng rng(4000 + seed);
    int n = 2 + static_cast<int>(rng.below(7));
    // distinct logits with a safe margin
    std::vector<double> pi(n);
    for (int i = 0; i < n; ++i) pi[i] = 0.4 * i + 0.05 * rng.uniform();
    for (int i = n - 1; i > 0; --i)
      std::swap(pi[i], pi[rng.below(static_cast<std::uint64_t>(i) + 1)]);
    int b = static_cast<int>(rng.below(static_cast<std::uint64_t>(n) + 1));
    HardMask hard = topk_mask(pi, b);
    SoftGateVector g = budget_gate(neuralsort(make_const({n}, pi), 0.005), b);
    for (int i = 0; i < n; ++i)
      CHECK(static_cast<int>(std::floor(g.gates->data[i] + 0.5)) == hard.bits[i]);
  }
}

TEST_CASE("sample_gumbel: Monte-Carlo mean near Euler-Mascheroni") {
  SeededRng rng(7);
  Value g = sample_gumbel(rng, {100000});
  CHECK_FALSE(g->requires_grad);
  double mean = 0.0;
  for (double v : g->data) mean += v;
  mean /= g->size();
  CHECK(mean == doctest::Approx(0.5772).epsilon(0.02));
  // determinism after reset
  SeededRng a(123), b(123);
  CHECK(sample_gumbel(a, {16})->data == sample_gumbel(b, {16})->data);
}

TEST_CASE("gumbel_sigmoid scalar oracles with noise off") {
  SeededRng rng(1);
  CHECK(gumbel_sigmoid(make_scalar(0.0), 1.0, rng, false)->item() == doctest::Approx(0.5));
  CHECK(gumbel_sigmoid(make_scalar(2.0), 0.5, rng, false)->item() ==
        doctest::Approx(1.0 / (1.0 + std::exp(-4.0))).epsilon(1e-9));
  CHECK(gumbel_sigmoid(make_scalar(1.0), 0.01, rng, false)->item() > 0.999);
  CHECK_THROWS(gumbel_sigmoid(make_scalar(1.0), 0.0, rng, false));
  // differentiable w.r.t. d
  Value d0 = make_scalar(0.3, true);
  CHECK(grad_check([&](const Value& x) { return gumbel_sigmoid(x, 0.7, rng, false); }, d0,
                   1e-5, 1e-6)
            .pass);
}

TEST_CASE("st_topk: hard forward, relaxed backward, forced first layers") {
  SeededRng rng(5);
  Value pi = make_value({3}, {10, 0, -10});
  SoftGateVector g = st_topk(pi, 1, 1.0, rng, false);
  CHECK(g.gates->data == std::vector<double>{1, 0, 0});

  // sum of the forward values is exactly b
  SeededRng rng2(6);
  Value pi2 = make_value({6}, {0.3, -1.2, 0.8, 2.0, -0.5, 0.1});
  SoftGateVector g2 = st_topk(pi2, 3, 1.0, rng2, true);
  double s = 0.0;
  for (double v : g2.gates->data) s += v;
  CHECK(s == doctest::Approx(3.0));

  // gradient flows to every logit through the softmax, selected or not
  backward(sum_all(mul(g2.gates, make_const({6}, {1, 2, 3, 4, 5, 6}))));
  int nonzero = 0;
  for (double gr : pi2->grad)
    if (gr != 0.0) ++nonzero;
  CHECK(nonzero == 6);

  // forced indices are always on and excluded from the competition
  SeededRng rng3(7);
  Value pi3 = make_value({5}, {5, -3, 4, 1, 2});
  SoftGateVector g3 = st_topk(pi3, 3, 1.0, rng3, false, {1});
  CHECK(g3.gates->data[1] == doctest::Approx(1.0));
  // remaining picks are the top-2 free logits: indices 0 and 2
  CHECK(g3.gates->data[0] == doctest::Approx(1.0));
  CHECK(g3.gates->data[2] == doctest::Approx(1.0));
  CHECK(g3.gates->data[3] + g3.gates->data[4] == doctest::Approx(0.0));

  CHECK_THROWS(st_topk(pi3, 0, 1.0, rng3, false, {1}));  // b < forced count
}

TEST_CASE("hinge_utilization values and dead zone") {
  CHECK(hinge_utilization({make_scalar(-2.0)}, 2.0, 1.0)->item() == doctest::Approx(0.0));
  CHECK(hinge_utilization({make_scalar(-5.0)}, 2.0, 1.0)->item() == doctest::Approx(0.0));
  CHECK(hinge_utilization({make_scalar(1.0)}, 2.0, 4.0)->item() == doctest::Approx(0.75));
  Value a = make_scalar(0.7, true);
  Value dead = make_scalar(-3.1, true);
  backward(hinge_utilization({a, dead}, 2.0, 8.0));
  CHECK(a->grad[0] == doctest::Approx(1.0 / 8.0));
  CHECK(dead->grad[0] == doctest::Approx(0.0));
}

TEST_CASE("logit_margin") {
  CHECK(logit_margin({3, 2, 1}, 1) == doctest::Approx(1.0));
  CHECK(logit_margin({1, 1, 1}, 1) == doctest::Approx(0.0));
  CHECK(logit_margin({0.5, 4.0, -1.0, 2.0}, 2) == doctest::Approx(1.5));
}

TEST_CASE("gradients through budget_gate(neuralsort) match finite differences") {
  SeededRng rng(88);
  int n = 6, b = 3;
  Value pi0 = make_value({n}, random_logits(n, rng));
  Value w = make_const({n}, random_logits(n, rng));
  for (double tau : {1.0, 0.5, 0.1}) {
    auto f = [&](const Value& x) {
      return sum_all(mul(budget_gate(neuralsort(x, tau), b).gates, w));
    };
    GradCheckReport rep = grad_check(f, pi0, 1e-5, 1e-4);
    INFO("tau ", tau, " err ", rep.max_rel_error);
    CHECK(rep.pass);
  }
}
