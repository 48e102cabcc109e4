// Panoptic-FPN style decoder: lateral projections, top-down merges with 2x
// upsampling, 1x1 classifier, final bilinear 4x to full resolution — plus the
// inference-side activation to probabilities and hard masks.
#pragma once

#include <string>
#include <vector>

#include "avseg/core_types.hpp"
#include "avseg/graph.hpp"
#include "avseg/params.hpp"

namespace avseg {

struct DecoderConfig {
  long width = 128;       // common decoder channel width
  long num_classes = 1;   // K

  void validate() const {
    if (width < 1) throw Error("decoder: width must be positive");
    if (num_classes < 1) throw Error("decoder: K must be positive");
  }
};

inline void init_decoder(ParamDict& p, const std::string& prefix, long in_channels,
                         const DecoderConfig& cfg, Rng& rng) {
  cfg.validate();
  long D = cfg.width;
  for (int i = 1; i <= 4; ++i) {
    std::string si = std::to_string(i);
    p.add(prefix + ".lat" + si + ".w", conv_init(rng, 1, 1, in_channels, D));
    p.add(prefix + ".lat" + si + ".b", bias_init(rng, D));
    p.add(prefix + ".proc" + si + ".w", conv_init(rng, 3, 3, D, D));
    p.add(prefix + ".proc" + si + ".b", bias_init(rng, D));
  }
  p.add(prefix + ".cls.w", conv_init(rng, 1, 1, D, cfg.num_classes));
  p.add(prefix + ".cls.b", bias_init(rng, cfg.num_classes));
}

/// Fused stages Z1..Z4 (zs[i] = stage i+1) -> raw mask scores (T,H,W,K).
inline Var decode(Graph& g, BoundParams& p, const std::string& prefix,
                  const std::vector<Var>& zs, const DecoderConfig& cfg) {
  cfg.validate();
  if (zs.size() != 4)
    throw Error("decode: expected exactly 4 fused stages, got " +
                std::to_string(zs.size()));
  std::vector<Shape> shapes;
  for (Var z : zs) shapes.push_back(g.shape(z));
  for (int i = 0; i < 4; ++i) {
    if (shapes[i].size() != 4) throw Error("decode: stages must be rank 4");
    if (i > 0 && (shapes[i][1] * 2 != shapes[i - 1][1] ||
                  shapes[i][2] * 2 != shapes[i - 1][2]))
      throw Error("decode: stage " + std::to_string(i + 1) +
                  " is not half the resolution of stage " + std::to_string(i));
  }

  auto lat = [&](int stage, Var z) {
    std::string b = prefix + ".lat" + std::to_string(stage);
    return g.conv2d(z, p.use(b + ".w"), p.use(b + ".b"));
  };
  auto proc = [&](int stage, Var x) {
    std::string b = prefix + ".proc" + std::to_string(stage);
    return g.relu(g.conv2d(x, p.use(b + ".w"), p.use(b + ".b"),
                           /*stride=*/1, /*pad=*/1));
  };

  Var d = proc(4, lat(4, zs[3]));
  for (int stage = 3; stage >= 1; --stage)
    d = proc(stage, g.add(g.upsample_nearest2x(d), lat(stage, zs[stage - 1])));

  Var scores = g.conv2d(d, p.use(prefix + ".cls.w"), p.use(prefix + ".cls.b"));
  long H = shapes[0][1] * 4, W = shapes[0][2] * 4;
  return g.upsample_bilinear(scores, H, W);
}

// ---------------------------------------------------------------------------
// Activation (inference side, no tape)
// ---------------------------------------------------------------------------

struct ActivationResult {
  MaskPrediction probabilities;  // (T,H,W,K)
  MaskArray hard;                // class ids; K=1 stores {0,1}
};

/// K=1: sigmoid, foreground iff p > 0.5 (exact 0.5 resolves to background).
/// K>1: softmax over K, argmax class (ties resolve to the smallest id).
inline ActivationResult activate(const Tensor& scores, const TaskSetting& setting) {
  setting.validate();
  if (scores.rank() != 4)
    throw Error("activate: scores must be (T,H,W,K)");
  long K = scores.dim(3);
  if (K != setting.num_classes)
    throw Error("activate: scores have K=" + std::to_string(K) +
                ", setting expects K=" + std::to_string(setting.num_classes));
  if (!scores.all_finite()) throw Error("activate: non-finite scores");

  long T = scores.dim(0), H = scores.dim(1), W = scores.dim(2);
  ActivationResult res;
  res.probabilities.scores = Tensor(scores.shape());
  res.probabilities.activation =
      K == 1 ? MaskActivation::Sigmoid : MaskActivation::SoftmaxOverK;
  res.hard = MaskArray(T, H, W);

  Tensor& prob = res.probabilities.scores;
  long pixels = T * H * W;
  for (long px = 0; px < pixels; ++px) {
    const double* s = scores.data() + px * K;
    double* q = prob.data() + px * K;
    if (K == 1) {
      double p = 1.0 / (1.0 + std::exp(-s[0]));
      q[0] = p;
      res.hard.ids[px] = p > 0.5 ? 1 : 0;
    } else {
      double mx = s[0];
      for (long k = 1; k < K; ++k) mx = std::max(mx, s[k]);
      double sum = 0.0;
      for (long k = 0; k < K; ++k) sum += std::exp(s[k] - mx);
      int best = 0;
      for (long k = 0; k < K; ++k) {
        q[k] = std::exp(s[k] - mx) / sum;
        if (q[k] > q[best]) best = static_cast<int>(k);
      }
      res.hard.ids[px] = best;
    }
  }
  return res;
}

}  // namespace avseg
