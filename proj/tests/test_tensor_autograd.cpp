#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lgmoe/autograd.hpp"
#include "lgmoe/mask.hpp"
#include "testutil.hpp"

using namespace lgmoe;
using testutil::fd_grad;
using testutil::max_rel_err;
using testutil::random_tensor;

TEST_CASE("tensor invariants") {
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.at(1, 2) == 6.0);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), Error);
  CHECK(t.all_finite());
  t.at(0, 1) = std::numeric_limits<double>::infinity();
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("matmul identity and hand arithmetic") {
  Tape tape;
  Var i3 = tape.constant(Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  Rng rng(5);
  Tensor x = random_tensor({3, 4}, rng);
  Var vx = tape.constant(x);
  const Tensor& out = tape.value(matmul(i3, vx));
  CHECK(testutil::max_abs_diff(out, x) == 0.0);

  Var a = tape.constant(Tensor::from({2, 2}, {1, 2, 3, 4}));
  Var b = tape.constant(Tensor::from({2, 1}, {1, 1}));
  const Tensor& c = tape.value(matmul(a, b));
  CHECK(c.at(0, 0) == 3.0);
  CHECK(c.at(1, 0) == 7.0);

  CHECK_THROWS_AS(matmul(a, tape.constant(Tensor::zeros({3, 1}))), Error);
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(17);
  Tensor a = random_tensor({4, 5}, rng);
  Tensor b = random_tensor({5, 2}, rng);
  auto loss = [](const std::vector<Tensor>& in) {
    Tape t;
    Var va = t.leaf(in[0], true);
    Var vb = t.leaf(in[1], true);
    return t.value(sum(matmul(va, vb))).item();
  };
  Tape t;
  Var va = t.leaf(a, true);
  Var vb = t.leaf(b, true);
  t.backward(sum(matmul(va, vb)));
  CHECK(max_rel_err(t.grad(va), fd_grad(loss, {a, b}, 0)) < 1e-6);
  CHECK(max_rel_err(t.grad(vb), fd_grad(loss, {a, b}, 1)) < 1e-6);
}

TEST_CASE("softmax golden values and properties") {
  Tape t;
  const Tensor& u = t.value(softmax(t.constant(Tensor::from({3}, {0, 0, 0})), 0));
  for (int i = 0; i < 3; ++i) CHECK(u.at(i) == doctest::Approx(1.0 / 3).epsilon(1e-12));

  const Tensor& s = t.value(softmax(t.constant(Tensor::from({2}, {2, 1})), 0));
  CHECK(s.at(0) == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(s.at(1) == doctest::Approx(0.2689).epsilon(1e-4));

  // shift invariance
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = random_tensor({3, 6}, rng, 3.0);
    Tensor xc = x;
    double shift = rng.normal() * 10;
    for (int64_t i = 0; i < xc.numel(); ++i) xc.data()[i] += shift;
    const Tensor& a = t.value(softmax(t.constant(x), 1));
    const Tensor& b = t.value(softmax(t.constant(xc), 1));
    CHECK(testutil::max_abs_diff(a, b) < 1e-12);
    // rows sum to one
    for (int r = 0; r < 3; ++r) {
      double acc = 0;
      for (int c = 0; c < 6; ++c) acc += a.at(r, c);
      CHECK(std::abs(acc - 1.0) < 1e-12);
    }
  }
  CHECK_THROWS_AS(softmax(t.constant(Tensor::from({3}, {1, 2, 3})), 2), Error);
}

TEST_CASE("log_softmax rows exp-sum to one") {
  Tape t;
  Rng rng(29);
  Tensor x = random_tensor({4, 7}, rng, 2.0);
  const Tensor& ls = t.value(log_softmax(t.constant(x), 1));
  for (int r = 0; r < 4; ++r) {
    double acc = 0;
    for (int c = 0; c < 7; ++c) acc += std::exp(ls.at(r, c));
    CHECK(std::abs(acc - 1.0) < 1e-12);
  }
}

TEST_CASE("layer_norm of a constant vector is zero before affine") {
  Tape t;
  Var gamma = t.constant(Tensor::full({5}, 1.0));
  Var beta = t.constant(Tensor::zeros({5}));
  const Tensor& out = t.value(layer_norm(t.constant(Tensor::full({2, 5}, 3.7)), gamma, beta));
  for (int64_t i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == 0.0);
}

TEST_CASE("every op's gradient matches finite differences") {
  Rng rng(31);
  Tensor x = random_tensor({3, 6}, rng);
  Tensor y = random_tensor({3, 6}, rng);
  Tensor w = random_tensor({3, 6}, rng);  // weighting makes grads non-uniform
  Tensor bias = random_tensor({6}, rng);
  Tensor srow = random_tensor({3, 1}, rng);
  Tensor cw = random_tensor({6, 3}, rng, 0.5);
  Tensor cb = random_tensor({6}, rng, 0.1);

  // weight the output so gradients are non-uniform, whatever its shape
  auto weighted_sum = [](Tape& t, Var out) {
    const Tensor& ov = t.value(out);
    Rng wr(12345);
    Tensor wt(ov.shape());
    for (int64_t i = 0; i < wt.numel(); ++i) wt.data()[i] = wr.normal();
    return sum(mul(out, t.constant(wt)));
  };

  auto check_unary = [&](auto build) {
    auto loss = [&](const std::vector<Tensor>& in) {
      Tape t;
      Var vx = t.leaf(in[0], true);
      return t.value(weighted_sum(t, build(t, vx))).item();
    };
    Tape t;
    Var vx = t.leaf(x, true);
    t.backward(weighted_sum(t, build(t, vx)));
    CHECK(max_rel_err(t.grad(vx), fd_grad(loss, {x}, 0)) < 1e-5);
  };

  check_unary([](Tape&, Var v) { return scale(v, 1.3); });
  check_unary([](Tape&, Var v) { return relu(v); });
  check_unary([](Tape&, Var v) { return swish(v); });
  check_unary([](Tape&, Var v) { return softmax(v, 1); });
  check_unary([](Tape&, Var v) { return log_softmax(v, 1); });
  check_unary([](Tape&, Var v) { return softmax(v, 0); });
  check_unary([](Tape&, Var v) { return transpose(transpose(v)); });
  check_unary([](Tape&, Var v) { return slice_rows(v, 1, 3); });
  check_unary([](Tape&, Var v) { return gather_rows(v, {2, 0, 0, 1}); });
  check_unary([](Tape&, Var v) { return gather_cols(v, {{1, 4}, {0, 0}, {5, 2}}); });
  BoolMatrix m = chunk_mask(3, 1);
  BoolMatrix m6(3, 6, 0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 6; ++j) m6.set(i, j, (i + j) % 3 != 0 || i == j);
  check_unary([&](Tape&, Var v) { return masked_softmax_rows(v, m6); });

  // binary ops
  auto check_binary = [&](auto build, const Tensor& second) {
    auto loss = [&](const std::vector<Tensor>& in) {
      Tape t;
      Var vx = t.leaf(in[0], true);
      Var vy = t.leaf(in[1], true);
      return t.value(weighted_sum(t, build(t, vx, vy))).item();
    };
    Tape t;
    Var vx = t.leaf(x, true);
    Var vy = t.leaf(second, true);
    t.backward(weighted_sum(t, build(t, vx, vy)));
    CHECK(max_rel_err(t.grad(vx), fd_grad(loss, {x, second}, 0)) < 1e-5);
    CHECK(max_rel_err(t.grad(vy), fd_grad(loss, {x, second}, 1)) < 1e-5);
  };
  check_binary([](Tape&, Var a, Var b) { return add(a, b); }, y);
  check_binary([](Tape&, Var a, Var b) { return sub(a, b); }, y);
  check_binary([](Tape&, Var a, Var b) { return mul(a, b); }, y);
  check_binary([](Tape&, Var a, Var b) { return add_bias(a, b); }, bias);
  check_binary([](Tape&, Var a, Var b) { return scale_rows(a, b); }, srow);
  check_binary([](Tape&, Var a, Var b) { return concat_rows({slice_rows(a, 0, 2), b}); },
               random_tensor({3, 6}, rng));

  // layer_norm w.r.t. input, gamma, beta
  {
    Tensor gamma = random_tensor({6}, rng);
    Tensor beta = random_tensor({6}, rng);
    auto loss = [&](const std::vector<Tensor>& in) {
      Tape t;
      Var vx = t.leaf(in[0], true);
      Var vg = t.leaf(in[1], true);
      Var vb = t.leaf(in[2], true);
      return t.value(sum(mul(layer_norm(vx, vg, vb), t.constant(w)))).item();
    };
    Tape t;
    Var vx = t.leaf(x, true);
    Var vg = t.leaf(gamma, true);
    Var vb = t.leaf(beta, true);
    t.backward(sum(mul(layer_norm(vx, vg, vb), t.constant(w))));
    CHECK(max_rel_err(t.grad(vx), fd_grad(loss, {x, gamma, beta}, 0)) < 1e-5);
    CHECK(max_rel_err(t.grad(vg), fd_grad(loss, {x, gamma, beta}, 1)) < 1e-5);
    CHECK(max_rel_err(t.grad(vb), fd_grad(loss, {x, gamma, beta}, 2)) < 1e-5);
  }

  // causal depthwise conv
  {
    Tensor xin = random_tensor({5, 6}, rng);
    Tensor wfull = random_tensor({5, 6}, rng);
    auto loss = [&](const std::vector<Tensor>& in) {
      Tape t;
      Var vx = t.leaf(in[0], true);
      Var vw = t.leaf(in[1], true);
      Var vb = t.leaf(in[2], true);
      return t.value(sum(mul(dwconv_causal(vx, vw, vb), t.constant(wfull)))).item();
    };
    Tape t;
    Var vx = t.leaf(xin, true);
    Var vw = t.leaf(cw, true);
    Var vb = t.leaf(cb, true);
    t.backward(sum(mul(dwconv_causal(vx, vw, vb), t.constant(wfull))));
    CHECK(max_rel_err(t.grad(vx), fd_grad(loss, {xin, cw, cb}, 0)) < 1e-5);
    CHECK(max_rel_err(t.grad(vw), fd_grad(loss, {xin, cw, cb}, 1)) < 1e-5);
    CHECK(max_rel_err(t.grad(vb), fd_grad(loss, {xin, cw, cb}, 2)) < 1e-5);
  }

  // matmul_nt and combine_rows
  {
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({5, 4}, rng);
    Tensor wnt = random_tensor({3, 5}, rng);
    auto loss = [&](const std::vector<Tensor>& in) {
      Tape t;
      Var va = t.leaf(in[0], true);
      Var vb = t.leaf(in[1], true);
      return t.value(sum(mul(matmul_nt(va, vb), t.constant(wnt)))).item();
    };
    Tape t;
    Var va = t.leaf(a, true);
    Var vb = t.leaf(b, true);
    t.backward(sum(mul(matmul_nt(va, vb), t.constant(wnt))));
    CHECK(max_rel_err(t.grad(va), fd_grad(loss, {a, b}, 0)) < 1e-5);
    CHECK(max_rel_err(t.grad(vb), fd_grad(loss, {a, b}, 1)) < 1e-5);
  }
  {
    auto loss = [&](const std::vector<Tensor>& in) {
      Tape t;
      Var vx = t.leaf(in[0], true);
      Var p0 = gather_rows(vx, {0, 2});
      Var p1 = gather_rows(vx, {1, 1});  // overlapping scatter accumulates
      Var c = combine_rows({p0, p1}, {{1, 0}, {2, 2}}, 3);
      return t.value(sum(mul(c, t.constant(w)))).item();
    };
    Tape t;
    Var vx = t.leaf(x, true);
    Var p0 = gather_rows(vx, {0, 2});
    Var p1 = gather_rows(vx, {1, 1});
    t.backward(sum(mul(combine_rows({p0, p1}, {{1, 0}, {2, 2}}, 3), t.constant(w))));
    CHECK(max_rel_err(t.grad(vx), fd_grad(loss, {x}, 0)) < 1e-5);
  }
}

TEST_CASE("backward basics") {
  Rng rng(41);
  Tensor x = random_tensor({4, 3}, rng);
  SUBCASE("sum gives ones") {
    Tape t;
    Var vx = t.leaf(x, true);
    t.backward(sum(vx));
    const Tensor g = t.grad(vx);
    for (int64_t i = 0; i < g.numel(); ++i) CHECK(g.data()[i] == 1.0);
  }
  SUBCASE("sum of squares gives 2x") {
    Tape t;
    Var vx = t.leaf(x, true);
    t.backward(sum(mul(vx, vx)));
    const Tensor g = t.grad(vx);
    for (int64_t i = 0; i < g.numel(); ++i)
      CHECK(g.data()[i] == doctest::Approx(2 * x.data()[i]).epsilon(1e-12));
  }
  SUBCASE("non-scalar loss is a contract error") {
    Tape t;
    Var vx = t.leaf(x, true);
    CHECK_THROWS_AS(t.backward(vx), Error);
  }
  SUBCASE("shared subexpressions accumulate: y = f(x) + g(x)") {
    Tape t;
    Var vx = t.leaf(x, true);
    Var f = scale(vx, 2.0);
    Var g = mul(vx, vx);
    t.backward(sum(add(f, g)));
    const Tensor gr = t.grad(vx);
    for (int64_t i = 0; i < gr.numel(); ++i)
      CHECK(gr.data()[i] == doctest::Approx(2.0 + 2 * x.data()[i]).epsilon(1e-12));
  }
  SUBCASE("non-participating leaf keeps zero gradient") {
    Tape t;
    Var vx = t.leaf(x, true);
    Var vy = t.leaf(x, true);
    t.backward(sum(vx));
    const Tensor g = t.grad(vy);
    for (int64_t i = 0; i < g.numel(); ++i) CHECK(g.data()[i] == 0.0);
  }
}

TEST_CASE("two-layer FFN gradient matches finite differences") {
  Rng rng(43);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor w1 = random_tensor({4, 8}, rng, 0.5);
  Tensor b1 = random_tensor({8}, rng, 0.1);
  Tensor w2 = random_tensor({8, 4}, rng, 0.5);
  Tensor b2 = random_tensor({4}, rng, 0.1);
  auto forward = [](Tape&, Var vx, Var vw1, Var vb1, Var vw2, Var vb2) {
    Var h = swish(add_bias(matmul(vx, vw1), vb1));
    return sum(add_bias(matmul(h, vw2), vb2));
  };
  auto loss = [&](const std::vector<Tensor>& in) {
    Tape t;
    Var vx = t.leaf(in[0], true);
    Var vw1 = t.leaf(in[1], true);
    Var vb1 = t.leaf(in[2], true);
    Var vw2 = t.leaf(in[3], true);
    Var vb2 = t.leaf(in[4], true);
    return t.value(forward(t, vx, vw1, vb1, vw2, vb2)).item();
  };
  Tape t;
  Var vx = t.leaf(x, true);
  Var vw1 = t.leaf(w1, true);
  Var vb1 = t.leaf(b1, true);
  Var vw2 = t.leaf(w2, true);
  Var vb2 = t.leaf(b2, true);
  t.backward(forward(t, vx, vw1, vb1, vw2, vb2));
  std::vector<Tensor> in{x, w1, b1, w2, b2};
  CHECK(max_rel_err(t.grad(vx), fd_grad(loss, in, 0)) < 1e-4);
  CHECK(max_rel_err(t.grad(vw1), fd_grad(loss, in, 1)) < 1e-4);
  CHECK(max_rel_err(t.grad(vb1), fd_grad(loss, in, 2)) < 1e-4);
  CHECK(max_rel_err(t.grad(vw2), fd_grad(loss, in, 3)) < 1e-4);
  CHECK(max_rel_err(t.grad(vb2), fd_grad(loss, in, 4)) < 1e-4);
}

TEST_CASE("non-finite op results surface as errors") {
  Tape t;
  Var big = t.constant(Tensor::full({2}, 1e308));
  CHECK_THROWS_AS(mul(big, big), Error);
  CHECK_THROWS_AS(t.leaf(Tensor::full({1}, std::numeric_limits<double>::quiet_NaN())), Error);
}

TEST_CASE("shape mismatches raise dimension errors with both shapes") {
  Tape t;
  Var a = t.constant(Tensor::zeros({2, 3}));
  Var b = t.constant(Tensor::zeros({3, 2}));
  try {
    add(a, b);
    CHECK(false);
  } catch (const Error& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[3x2]") != std::string::npos);
  }
}
