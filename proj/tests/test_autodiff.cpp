#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "avseg/graph.hpp"
#include "support/gradcheck.hpp"

using namespace avseg;
using avseg::test::check_gradient;

namespace {

// Scalar objective: fixed random projection of the op output, so every output
// element influences the loss.
Tensor random_weights(const Shape& s, Rng& rng) {
  return rng.uniform_tensor(s, -1.0, 1.0);
}

double weighted(const Tensor& out, const Tensor& w) {
  double s = 0.0;
  for (long i = 0; i < out.size(); ++i) s += out[i] * w[i];
  return s;
}

// Runs a finite-difference check of `build` (graph construction from a leaf
// holding `x`) against the tape gradient.
template <typename BuildFn>
void op_gradcheck(Tensor x, BuildFn build, double h = 1e-5) {
  Rng wrng(99);
  Tensor w;  // projection weights, fixed after first forward
  auto forward = [&](const Tensor& xv) {
    Graph g;
    Var in = g.input(xv, true);
    Var out = build(g, in);
    if (w.empty()) w = random_weights(g.shape(out), wrng);
    return std::pair<double, Tensor>{weighted(g.value(out), w), Tensor()};
  };
  // Analytic gradient via the tape.
  Graph g;
  Var in = g.input(x, true);
  Var out = build(g, in);
  if (w.empty()) w = random_weights(g.shape(out), wrng);
  Var proj = g.sum_all(g.mul(out, g.input(w, false)));
  g.backward(proj);
  Tensor analytic = g.grad(in);

  auto loss = [&]() { return forward(x).first; };
  auto res = check_gradient(x.vec(), analytic, loss, h);
  INFO(res.detail);
  CHECK(res.ok);
}

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
  Rng rng(7);
  Tensor x = rng.uniform_tensor({2, 3, 4}, -2.0, 2.0);

  op_gradcheck(x, [](Graph& g, Var a) { return g.mul_scalar(g.add_scalar(a, 0.7), -1.3); });
  Tensor bfix = rng.uniform_tensor({2, 3, 4}, -1.0, 1.0);
  op_gradcheck(x, [bfix](Graph& g, Var a) {
    Var b = g.input(bfix, false);
    return g.mul(g.add(a, b), g.sub(a, b));
  });
  op_gradcheck(x, [](Graph& g, Var a) { return g.sigmoid(a); });
  // Keep relu inputs away from the kink.
  Tensor xr = rng.uniform_tensor({3, 5}, 0.2, 2.0);
  for (long i = 0; i < xr.size(); ++i)
    if (i % 2 == 0) xr[i] = -xr[i];
  op_gradcheck(xr, [](Graph& g, Var a) { return g.relu(a); }, 1e-6);
  Tensor xp = rng.uniform_tensor({4, 4}, 0.5, 3.0);
  op_gradcheck(xp, [](Graph& g, Var a) { return g.log(a); });
  op_gradcheck(x, [](Graph& g, Var a) { return g.softmax_lastdim(a); });
}

TEST_CASE("both operands of a binary op receive gradients") {
  Rng rng(11);
  Tensor a = rng.uniform_tensor({2, 3}, -1.0, 1.0);
  Tensor b = rng.uniform_tensor({2, 3}, -1.0, 1.0);
  Tensor w = rng.uniform_tensor({2, 3}, -1.0, 1.0);

  auto loss_value = [&](const Tensor& av, const Tensor& bv) {
    Graph g;
    Var out = g.mul(g.input(av, true), g.input(bv, true));
    return weighted(g.value(out), w);
  };
  Graph g;
  Var va = g.input(a, true), vb = g.input(b, true);
  Var proj = g.sum_all(g.mul(g.mul(va, vb), g.input(w, false)));
  g.backward(proj);

  auto ra = check_gradient(a.vec(), g.grad(va), [&]() { return loss_value(a, b); });
  auto rb = check_gradient(b.vec(), g.grad(vb), [&]() { return loss_value(a, b); });
  CHECK(ra.ok);
  CHECK(rb.ok);
}

TEST_CASE("shape and broadcast ops match finite differences") {
  Rng rng(21);
  Tensor x4 = rng.uniform_tensor({2, 4, 4, 3}, -1.0, 1.0);

  op_gradcheck(x4, [](Graph& g, Var a) { return g.spatial_mean(a); });
  Tensor x2 = rng.uniform_tensor({2, 5}, -1.0, 1.0);
  op_gradcheck(x2, [](Graph& g, Var a) { return g.spatial_broadcast(a, 3, 2); });
  op_gradcheck(x4, [](Graph& g, Var a) { return g.avg_pool2d(a, 2, 2); });
  op_gradcheck(x4, [](Graph& g, Var a) { return g.upsample_nearest2x(a); });
  op_gradcheck(x4, [](Graph& g, Var a) { return g.upsample_bilinear(a, 7, 9); });
  op_gradcheck(x4, [](Graph& g, Var a) { return g.upsample_bilinear(a, 3, 2); });
  op_gradcheck(x4, [](Graph& g, Var a) { return g.reshape(a, {8, 12}); });
  op_gradcheck(x2, [](Graph& g, Var a) { return g.select_rows(a, {1, 0, 1, 1}); });
  Tensor mfix = rng.uniform_tensor({2, 4, 4, 1}, -1.0, 1.0);
  op_gradcheck(x4, [mfix](Graph& g, Var a) {
    return g.mul_pixelwise(a, g.input(mfix, false));
  });
  Tensor cfix = rng.uniform_tensor({2, 4, 4, 2}, -1.0, 1.0);
  op_gradcheck(x4, [cfix](Graph& g, Var a) {
    return g.concat_lastdim({a, g.input(cfix, false), a});
  });
}

TEST_CASE("mul_pixelwise weight gradient matches finite differences") {
  Rng rng(31);
  Tensor x = rng.uniform_tensor({2, 3, 3, 4}, -1.0, 1.0);
  Tensor m = rng.uniform_tensor({2, 3, 3, 1}, -1.0, 1.0);
  Tensor w = rng.uniform_tensor({2, 3, 3, 4}, -1.0, 1.0);

  Graph g;
  Var vm = g.input(m, true);
  Var out = g.mul_pixelwise(g.input(x, false), vm);
  g.backward(g.sum_all(g.mul(out, g.input(w, false))));

  auto loss = [&]() {
    Graph h;
    Var o = h.mul_pixelwise(h.input(x, false), h.input(m, true));
    return weighted(h.value(o), w);
  };
  auto res = check_gradient(m.vec(), g.grad(vm), loss);
  INFO(res.detail);
  CHECK(res.ok);
}

TEST_CASE("matmul in all transpose modes matches finite differences") {
  Rng rng(41);
  Tensor a = rng.uniform_tensor({3, 4}, -1.0, 1.0);
  Tensor b34 = rng.uniform_tensor({3, 4}, -1.0, 1.0);
  Tensor b43 = rng.uniform_tensor({4, 3}, -1.0, 1.0);

  op_gradcheck(a, [&](Graph& g, Var x) { return g.matmul(x, g.input(b43, false)); });
  op_gradcheck(a, [&](Graph& g, Var x) { return g.matmul(x, g.input(b34, false), false, true); });
  op_gradcheck(a, [&](Graph& g, Var x) { return g.matmul(x, g.input(b34, false), true, false); });
  op_gradcheck(a, [&](Graph& g, Var x) { return g.matmul(x, g.input(b43, false), true, true); });

  // Gradient w.r.t. the second operand.
  Tensor w = rng.uniform_tensor({3, 3}, -1.0, 1.0);
  Graph g;
  Var vb = g.input(b43, true);
  Var out = g.matmul(g.input(a, false), vb);
  g.backward(g.sum_all(g.mul(out, g.input(w, false))));
  auto loss = [&]() {
    Graph h;
    Var o = h.matmul(h.input(a, false), h.input(b43, true));
    return weighted(h.value(o), w);
  };
  auto res = check_gradient(b43.vec(), g.grad(vb), loss);
  CHECK(res.ok);
}

TEST_CASE("linear layer gradients match finite differences") {
  Rng rng(51);
  Tensor x = rng.uniform_tensor({5, 3}, -1.0, 1.0);
  Tensor w = rng.uniform_tensor({3, 4}, -1.0, 1.0);
  Tensor b = rng.uniform_tensor({4}, -0.5, 0.5);
  Tensor pw = rng.uniform_tensor({5, 4}, -1.0, 1.0);

  Graph g;
  Var vx = g.input(x, true), vw = g.input(w, true), vb = g.input(b, true);
  Var out = g.linear(vx, vw, vb);
  g.backward(g.sum_all(g.mul(out, g.input(pw, false))));

  auto loss = [&]() {
    Graph h;
    Var o = h.linear(h.input(x, false), h.input(w, false), h.input(b, false));
    return weighted(h.value(o), pw);
  };
  CHECK(check_gradient(x.vec(), g.grad(vx), loss).ok);
  CHECK(check_gradient(w.vec(), g.grad(vw), loss).ok);
  CHECK(check_gradient(b.vec(), g.grad(vb), loss).ok);
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(61);
  struct Cfg {
    long kh, stride, pad, dil;
  };
  for (Cfg c : {Cfg{3, 1, 1, 1}, Cfg{3, 2, 1, 1}, Cfg{1, 1, 0, 1}, Cfg{3, 1, 2, 2}}) {
    Tensor x = rng.uniform_tensor({2, 5, 5, 3}, -1.0, 1.0);
    Tensor w = rng.uniform_tensor({c.kh, c.kh, 3, 4}, -0.5, 0.5);
    Tensor b = rng.uniform_tensor({4}, -0.2, 0.2);

    Graph g;
    Var vx = g.input(x, true), vw = g.input(w, true), vb = g.input(b, true);
    Var out = g.conv2d(vx, vw, vb, c.stride, c.pad, c.dil);
    Tensor pw = rng.uniform_tensor(g.shape(out), -1.0, 1.0);
    g.backward(g.sum_all(g.mul(out, g.input(pw, false))));

    auto loss = [&]() {
      Graph h;
      Var o = h.conv2d(h.input(x, false), h.input(w, false), h.input(b, false),
                       c.stride, c.pad, c.dil);
      return weighted(h.value(o), pw);
    };
    INFO("kh=" << c.kh << " stride=" << c.stride << " pad=" << c.pad
               << " dil=" << c.dil);
    CHECK(check_gradient(x.vec(), g.grad(vx), loss).ok);
    CHECK(check_gradient(w.vec(), g.grad(vw), loss).ok);
    CHECK(check_gradient(b.vec(), g.grad(vb), loss).ok);
  }
}

TEST_CASE("conv2d matches a direct nested-loop convolution") {
  Rng rng(71);
  Tensor x = rng.uniform_tensor({2, 6, 5, 3}, -1.0, 1.0);
  Tensor w = rng.uniform_tensor({3, 3, 3, 2}, -1.0, 1.0);
  Tensor b = rng.uniform_tensor({2}, -1.0, 1.0);
  long stride = 2, pad = 1, dil = 1;

  Graph g;
  Var out = g.conv2d(g.input(x, false), g.input(w, false), g.input(b, false),
                     stride, pad, dil);
  const Tensor& got = g.value(out);

  long Ho = (6 + 2 * pad - 3) / stride + 1, Wo = (5 + 2 * pad - 3) / stride + 1;
  REQUIRE(g.shape(out) == Shape{2, Ho, Wo, 2});
  for (long t = 0; t < 2; ++t)
    for (long oy = 0; oy < Ho; ++oy)
      for (long ox = 0; ox < Wo; ++ox)
        for (long co = 0; co < 2; ++co) {
          double acc = b[co];
          for (long ky = 0; ky < 3; ++ky)
            for (long kx = 0; kx < 3; ++kx) {
              long iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= 6 || ix < 0 || ix >= 5) continue;
              for (long ci = 0; ci < 3; ++ci)
                acc += x.at(t, iy, ix, ci) * w.at(ky, kx, ci, co);
            }
          CHECK_THAT(got.at(t, oy, ox, co), Catch::Matchers::WithinAbs(acc, 1e-12));
        }
}

TEST_CASE("softmax rows sum to one and shift invariance holds") {
  Rng rng(81);
  Tensor x = rng.uniform_tensor({4, 6}, -3.0, 3.0);
  Graph g;
  Var p = g.softmax_lastdim(g.input(x, false));
  for (long r = 0; r < 4; ++r) {
    double s = 0.0;
    for (long c = 0; c < 6; ++c) s += g.value(p).at(r, c);
    CHECK_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-12));
  }

  Tensor shifted = x;
  for (long r = 0; r < 4; ++r)
    for (long c = 0; c < 6; ++c) shifted.at(r, c) += 10.0;
  Graph h;
  Var q = h.softmax_lastdim(h.input(shifted, false));
  CHECK(max_abs_diff(g.value(p), h.value(q)) < 1e-12);
}

TEST_CASE("backward accumulates through reused nodes") {
  // loss = sum(x * x): gradient must be 2x, exercising multiple uses of x.
  Tensor x = Tensor::from({3}, {1.0, -2.0, 0.5});
  Graph g;
  Var vx = g.input(x, true);
  g.backward(g.sum_all(g.mul(vx, vx)));
  Tensor grad = g.grad(vx);
  for (long i = 0; i < 3; ++i)
    CHECK_THAT(grad[i], Catch::Matchers::WithinAbs(2.0 * x[i], 1e-12));
}
