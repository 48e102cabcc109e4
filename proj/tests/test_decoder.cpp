#include <catch2/catch_amalgamated.hpp>

#include "avseg/decoder.hpp"
#include "support/param_gradcheck.hpp"

using namespace avseg;

namespace {

std::vector<Var> make_pyramid(Graph& g, Rng& rng, long t, long hw, long c) {
  std::vector<Var> zs;
  for (int i = 0; i < 4; ++i)
    zs.push_back(g.input(rng.normal_tensor({t, hw >> (i + 2), hw >> (i + 2), c}, 0.5)));
  return zs;
}

}  // namespace

TEST_CASE("decode emits full-resolution K-channel scores") {
  Rng rng(51);
  DecoderConfig cfg;
  cfg.width = 8;

  SECTION("binary masks at 64 and 224") {
    for (long hw : {64L, 224L}) {
      ParamDict params;
      init_decoder(params, "dec", 6, cfg, rng);
      Graph g;
      BoundParams bound(g, params);
      Var scores = decode(g, bound, "dec", make_pyramid(g, rng, 2, hw, 6), cfg);
      REQUIRE(g.shape(scores) == Shape{2, hw, hw, 1});
      CHECK(g.value(scores).all_finite());
    }
  }

  SECTION("a 71-class AVSS head keeps the channel axis") {
    DecoderConfig wide = cfg;
    wide.num_classes = 71;
    ParamDict params;
    init_decoder(params, "dec", 6, wide, rng);
    Graph g;
    BoundParams bound(g, params);
    Var scores = decode(g, bound, "dec", make_pyramid(g, rng, 1, 64, 6), wide);
    REQUIRE(g.shape(scores) == Shape{1, 64, 64, 71});
  }
}

TEST_CASE("decode validates the pyramid it is given") {
  Rng rng(52);
  DecoderConfig cfg;
  cfg.width = 4;
  ParamDict params;
  init_decoder(params, "dec", 3, cfg, rng);

  Graph g;
  BoundParams bound(g, params);
  auto zs = make_pyramid(g, rng, 1, 32, 3);
  zs.pop_back();
  CHECK_THROWS_WITH(decode(g, bound, "dec", zs, cfg),
                    Catch::Matchers::ContainsSubstring("4 fused stages"));

  Graph g2;
  BoundParams b2(g2, params);
  auto bad = make_pyramid(g2, rng, 1, 32, 3);
  bad[2] = g2.input(Tensor({1, 5, 5, 3}));  // breaks the halving chain
  CHECK_THROWS_WITH(decode(g2, b2, "dec", bad, cfg),
                    Catch::Matchers::ContainsSubstring("half the resolution"));
}

TEST_CASE("decoder gradients match finite differences") {
  Rng rng(53);
  DecoderConfig cfg;
  cfg.width = 3;
  cfg.num_classes = 2;
  ParamDict params;
  init_decoder(params, "dec", 2, cfg, rng);

  std::array<Tensor, 4> zt;
  for (int i = 0; i < 4; ++i)
    zt[i] = rng.normal_tensor({1, 32L >> (i + 2), 32L >> (i + 2), 2}, 0.5);
  Tensor mix = rng.normal_tensor({1, 32, 32, 2}, 1.0);

  auto build = [&](Graph& g, BoundParams& b) {
    std::vector<Var> zs;
    for (int i = 0; i < 4; ++i) zs.push_back(g.input(zt[i]));
    return g.sum_all(g.mul(decode(g, b, "dec", zs, cfg), g.input(mix)));
  };
  std::map<std::string, Tensor> analytic;
  {
    Graph g;
    BoundParams b(g, params);
    g.backward(build(g, b));
    for (const std::string& n : params.names()) analytic[n] = b.grad(n);
  }
  auto loss = [&]() {
    Graph g;
    BoundParams b(g, params);
    return g.value(build(g, b))[0];
  };
  test::require_param_gradients(params, analytic, loss);
}

TEST_CASE("sigmoid activation thresholds at strictly 0.5") {
  Tensor scores({1, 2, 2, 1}, 0.0);
  ActivationResult res = activate(scores, TaskSetting::ms3(1));
  for (long i = 0; i < 4; ++i) {
    CHECK(res.probabilities.scores[i] == 0.5);
    CHECK(res.hard.ids[i] == 0);  // exact 0.5 is background
  }
  CHECK(res.probabilities.activation == MaskActivation::Sigmoid);

  scores[2] = 3.0;
  res = activate(scores, TaskSetting::ms3(1));
  CHECK(res.hard.ids[2] == 1);
  CHECK(res.probabilities.scores[2] == Catch::Approx(1.0 / (1.0 + std::exp(-3.0))));
}

TEST_CASE("softmax activation reproduces the worked 3-class example") {
  TaskSetting setting = TaskSetting::avss(2, 1);  // K = 3
  Tensor scores({1, 1, 2, 3}, 0.0);
  scores[2] = std::log(2.0);
  scores[5] = std::log(2.0);
  ActivationResult res = activate(scores, setting);
  for (long px = 0; px < 2; ++px) {
    CHECK(res.probabilities.scores[px * 3 + 0] == Catch::Approx(0.25).margin(1e-12));
    CHECK(res.probabilities.scores[px * 3 + 1] == Catch::Approx(0.25).margin(1e-12));
    CHECK(res.probabilities.scores[px * 3 + 2] == Catch::Approx(0.5).margin(1e-12));
    CHECK(res.hard.ids[px] == 2);
  }
  CHECK_NOTHROW(validate_activated(res.probabilities));
}

TEST_CASE("argmax masks are invariant to per-pixel constant shifts") {
  Rng rng(54);
  TaskSetting setting = TaskSetting::avss(3, 2);  // K = 4
  Tensor scores = rng.normal_tensor({2, 4, 4, 4}, 2.0);
  ActivationResult base = activate(scores, setting);

  Tensor shifted = scores;
  for (long px = 0; px < 2 * 4 * 4; ++px) {
    double c = rng.normal(0.0, 5.0);
    for (long k = 0; k < 4; ++k) shifted[px * 4 + k] += c;
  }
  ActivationResult moved = activate(shifted, setting);
  CHECK(moved.hard.ids == base.hard.ids);
  CHECK_NOTHROW(validate_activated(moved.probabilities));
}

TEST_CASE("argmax ties resolve to the smallest class id") {
  TaskSetting setting = TaskSetting::avss(2, 1);
  Tensor scores({1, 1, 1, 3}, 0.7);  // all classes equal
  ActivationResult res = activate(scores, setting);
  CHECK(res.hard.ids[0] == 0);
}

TEST_CASE("raising a score never turns foreground into background") {
  Rng rng(55);
  TaskSetting setting = TaskSetting::ms3(1);
  Tensor scores = rng.normal_tensor({1, 6, 6, 1}, 1.5);
  ActivationResult before = activate(scores, setting);
  Tensor raised = scores;
  for (long i = 0; i < raised.size(); ++i) raised[i] += rng.uniform(0.0, 2.0);
  ActivationResult after = activate(raised, setting);
  for (size_t i = 0; i < before.hard.ids.size(); ++i)
    if (before.hard.ids[i] == 1) CHECK(after.hard.ids[i] == 1);
}

TEST_CASE("activate validates scores and setting agreement") {
  Tensor scores({1, 2, 2, 1}, 0.0);
  scores[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH(activate(scores, TaskSetting::ms3(1)),
                    Catch::Matchers::ContainsSubstring("non-finite"));
  CHECK_THROWS_WITH(activate(Tensor({1, 2, 2, 3}, 0.0), TaskSetting::ms3(1)),
                    Catch::Matchers::ContainsSubstring("K="));
}
