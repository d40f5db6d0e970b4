#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lgmoe/ctc.hpp"
#include "testutil.hpp"

using namespace lgmoe;

namespace {

// exp-space path enumeration: collapse repeats, then drop blanks
double brute_force_neg_log_p(const Tensor& log_probs, const std::vector<int>& labels) {
  const int frames = log_probs.dim(0);
  const int classes = log_probs.dim(1);
  double p = 0.0;
  std::vector<int> path(static_cast<size_t>(frames), 0);
  while (true) {
    std::vector<int> collapsed;
    int prev = -1;
    for (int t = 0; t < frames; ++t) {
      int c = path[static_cast<size_t>(t)];
      if (c != prev && c != kCtcBlank) collapsed.push_back(c);
      prev = c;
    }
    if (collapsed == labels) {
      double lp = 0.0;
      for (int t = 0; t < frames; ++t) lp += log_probs.at(t, path[static_cast<size_t>(t)]);
      p += std::exp(lp);
    }
    int pos = frames - 1;
    while (pos >= 0 && ++path[static_cast<size_t>(pos)] == classes) {
      path[static_cast<size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
  }
  return -std::log(p);
}

Tensor random_log_probs(int frames, int classes, Rng& rng) {
  Tensor lp({frames, classes});
  for (int t = 0; t < frames; ++t) {
    double mx = -HUGE_VAL, s = 0.0;
    for (int c = 0; c < classes; ++c) {
      lp.at(t, c) = rng.normal(0.0, 1.5);
      mx = std::max(mx, lp.at(t, c));
    }
    for (int c = 0; c < classes; ++c) s += std::exp(lp.at(t, c) - mx);
    double lse = mx + std::log(s);
    for (int c = 0; c < classes; ++c) lp.at(t, c) -= lse;
  }
  return lp;
}

}  // namespace

TEST_CASE("label sequence rejects blanks") {
  CHECK_THROWS_AS(CtcLabelSeq({1, 0, 2}), Error);
}

TEST_CASE("single frame, uniform distribution") {
  Tensor lp = Tensor::full({1, 3}, std::log(1.0 / 3));
  double loss = ctc_forward_backward(lp, CtcLabelSeq({1}), nullptr);
  CHECK(loss == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("two frames, two classes: three alignments") {
  Rng rng(7);
  Tensor lp = random_log_probs(2, 2, rng);
  double loss = ctc_forward_backward(lp, CtcLabelSeq({1}), nullptr);
  double paa = std::exp(lp.at(0, 1) + lp.at(1, 1));
  double pab = std::exp(lp.at(0, 1) + lp.at(1, 0));
  double pba = std::exp(lp.at(0, 0) + lp.at(1, 1));
  CHECK(loss == doctest::Approx(-std::log(paa + pab + pba)).epsilon(1e-12));
}

TEST_CASE("empty labels: all-blank alignment only") {
  Rng rng(9);
  for (int frames : {1, 3, 5}) {
    Tensor lp = random_log_probs(frames, 4, rng);
    double expect = 0.0;
    for (int t = 0; t < frames; ++t) expect -= lp.at(t, kCtcBlank);
    double loss = ctc_forward_backward(lp, CtcLabelSeq(std::vector<int>{}), nullptr);
    CHECK(loss == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("forward algorithm equals brute-force enumeration") {
  Rng rng(11);
  int checked = 0;
  while (checked < 60) {
    int frames = rng.uniform_int(1, 6);
    int classes = rng.uniform_int(2, 4);
    int u = rng.uniform_int(0, 3);
    std::vector<int> labels;
    for (int i = 0; i < u; ++i) labels.push_back(rng.uniform_int(1, classes - 1));
    Tensor lp = random_log_probs(frames, classes, rng);
    double ours = ctc_forward_backward(lp, CtcLabelSeq(labels), nullptr);
    if (ours > 1e29) {  // infeasible: oracle would find no path
      double oracle = brute_force_neg_log_p(lp, labels);
      CHECK(std::isinf(oracle));
      continue;
    }
    double oracle = brute_force_neg_log_p(lp, labels);
    CHECK(std::abs(ours - oracle) < 1e-9);
    ++checked;
  }
}

TEST_CASE("loss is non-negative for normalized rows") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor lp = random_log_probs(5, 4, rng);
    std::vector<int> labels{rng.uniform_int(1, 3), rng.uniform_int(1, 3)};
    double loss = ctc_forward_backward(lp, CtcLabelSeq(labels), nullptr);
    CHECK(loss > -1e-9);
  }
}

TEST_CASE("gradient matches finite differences") {
  Rng rng(17);
  Tensor lp = random_log_probs(5, 4, rng);
  CtcLabelSeq labels({2, 1});
  Tensor grad;
  ctc_forward_backward(lp, labels, &grad);
  auto loss = [&](const std::vector<Tensor>& in) {
    return ctc_forward_backward(in[0], labels, nullptr);
  };
  Tensor fd = testutil::fd_grad(loss, {lp}, 0);
  CHECK(testutil::max_rel_err(grad, fd) < 1e-4);
}

TEST_CASE("tape integration: upstream scaling and feasibility flag") {
  Rng rng(19);
  Tensor lp = random_log_probs(4, 3, rng);
  Tape t;
  Var vlp = t.leaf(lp, true);
  CtcLoss r = ctc_loss(vlp, CtcLabelSeq({1, 2}));
  CHECK(r.feasible);
  t.backward(scale(r.loss, 2.0));
  Tensor grad_direct;
  ctc_forward_backward(lp, CtcLabelSeq({1, 2}), &grad_direct);
  Tensor g = t.grad(vlp);
  for (int64_t i = 0; i < g.numel(); ++i)
    CHECK(g.data()[i] == doctest::Approx(2.0 * grad_direct.data()[i]).epsilon(1e-12));

  // U > T: no alignment
  CtcLoss bad = ctc_loss(t.leaf(random_log_probs(1, 3, rng), true), CtcLabelSeq({1, 2}));
  CHECK_FALSE(bad.feasible);
  CHECK(t.value(bad.loss).item() > 1e29);
}

TEST_CASE("NaN inputs are a contract error") {
  Tensor lp = Tensor::full({2, 3}, std::log(1.0 / 3));
  lp.at(1, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(ctc_forward_backward(lp, CtcLabelSeq({1}), nullptr), Error);
}

TEST_CASE("greedy decode collapse rules") {
  auto one_hot = [](const std::vector<int>& ids, int classes) {
    Tensor lp = Tensor::full({static_cast<int>(ids.size()), classes}, -10.0);
    for (size_t t = 0; t < ids.size(); ++t) lp.at(static_cast<int>(t), ids[t]) = 0.0;
    return lp;
  };
  CHECK(ctc_greedy_decode(one_hot({0, 1, 1, 0, 2}, 3)) == std::vector<int>{1, 2});
  CHECK(ctc_greedy_decode(one_hot({0, 0, 0}, 3)).empty());
  CHECK(ctc_greedy_decode(one_hot({1, 1, 0, 1}, 3)) == std::vector<int>{1, 1});
}

TEST_CASE("decode of a constructed alignment recovers the labels") {
  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    int u = rng.uniform_int(1, 4);
    std::vector<int> labels;
    for (int i = 0; i < u; ++i) labels.push_back(rng.uniform_int(1, 5));
    // build an alignment: optional blanks, forced blank between repeats
    std::vector<int> frames;
    for (int i = 0; i < u; ++i) {
      bool repeat = i > 0 && labels[static_cast<size_t>(i)] == labels[static_cast<size_t>(i - 1)];
      if (repeat || rng.bernoulli(0.5)) frames.push_back(kCtcBlank);
      int reps = rng.uniform_int(1, 3);
      for (int r = 0; r < reps; ++r) frames.push_back(labels[static_cast<size_t>(i)]);
    }
    Tensor lp = Tensor::full({static_cast<int>(frames.size()), 6}, -12.0);
    for (size_t t = 0; t < frames.size(); ++t) lp.at(static_cast<int>(t), frames[t]) = 0.0;
    CHECK(ctc_greedy_decode(lp) == labels);
  }
}

TEST_CASE("shift invariance through log_softmax leaves the loss unchanged") {
  Rng rng(29);
  Tensor logits = testutil::random_tensor({5, 4}, rng, 2.0);
  Tensor shifted = logits;
  for (int64_t i = 0; i < shifted.numel(); ++i) shifted.data()[i] += 7.5;
  CtcLabelSeq labels({1, 3});
  Tape t;
  double a = t.value(ctc_loss(log_softmax(t.constant(logits), 1), labels).loss).item();
  double b = t.value(ctc_loss(log_softmax(t.constant(shifted), 1), labels).loss).item();
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}
