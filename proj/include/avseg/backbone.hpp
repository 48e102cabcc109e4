// Hierarchical 4-stage visual encoder producing the feature pyramid F1..F4.
#pragma once

#include <array>
#include <string>

#include "avseg/core_types.hpp"
#include "avseg/graph.hpp"
#include "avseg/params.hpp"

namespace avseg {

struct BackboneConfig {
  std::array<long, 4> channels = {32, 64, 128, 256};  // desk-scale default
  long stem_downsample = 2;
  long blocks_per_stage = 1;

  static BackboneConfig resnet_scale() { return {{256, 512, 1024, 2048}, 2, 1}; }
  static BackboneConfig pvt_scale() { return {{64, 128, 320, 512}, 2, 1}; }
  static BackboneConfig tiny() { return {{8, 16, 32, 64}, 2, 1}; }

  void validate() const {
    for (long c : channels)
      if (c < 1) throw Error("backbone: channels must be positive");
    if (blocks_per_stage < 1) throw Error("backbone: blocks per stage must be >= 1");
    // One halving per stage on top of the stem must land on the
    // (H,W)/2^(i+1) law, which pins the stem factor.
    if (stem_downsample != 2)
      throw Error("backbone: stem downsample factor must be 2 to satisfy the "
                  "stage resolution law");
  }
};

inline void init_backbone(ParamDict& p, const std::string& prefix,
                          const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  p.add(prefix + ".stem.w", conv_init(rng, 3, 3, 3, cfg.channels[0]));
  p.add(prefix + ".stem.b", bias_init(rng, cfg.channels[0]));
  long in = cfg.channels[0];
  for (int s = 0; s < 4; ++s) {
    long out = cfg.channels[s];
    for (long b = 0; b < cfg.blocks_per_stage; ++b) {
      std::string base = prefix + ".stage" + std::to_string(s + 1) + ".block" +
                         std::to_string(b + 1);
      long bin = b == 0 ? in : out;
      p.add(base + ".conv1.w", conv_init(rng, 3, 3, bin, out));
      p.add(base + ".conv1.b", bias_init(rng, out));
      p.add(base + ".conv2.w", conv_init(rng, 3, 3, out, out));
      p.add(base + ".conv2.b", bias_init(rng, out));
      if (b == 0) {  // strided block re-projects the skip path
        p.add(base + ".skip.w", conv_init(rng, 1, 1, bin, out));
        p.add(base + ".skip.b", bias_init(rng, out));
      }
    }
    in = out;
  }
}

namespace detail {

inline Var residual_block(Graph& g, BoundParams& p, const std::string& base,
                          Var x, bool strided) {
  long stride = strided ? 2 : 1;
  Var h = g.relu(g.conv2d(x, p.use(base + ".conv1.w"), p.use(base + ".conv1.b"),
                          stride, /*pad=*/1));
  h = g.conv2d(h, p.use(base + ".conv2.w"), p.use(base + ".conv2.b"),
               /*stride=*/1, /*pad=*/1);
  Var skip = strided ? g.conv2d(x, p.use(base + ".skip.w"), p.use(base + ".skip.b"),
                                /*stride=*/2, /*pad=*/0)
                     : x;
  return g.relu(g.add(h, skip));
}

}  // namespace detail

/// frames (T,H,W,3) -> four per-stage feature maps; frames are processed
/// independently (the batch axis is time).
inline std::array<Var, 4> encode_frames(Graph& g, BoundParams& p,
                                        const std::string& prefix, Var frames,
                                        const BackboneConfig& cfg) {
  cfg.validate();
  Shape s = g.shape(frames);
  if (s.size() != 4 || s[3] != 3)
    throw Error("encode_frames: expected (T,H,W,3), got " + shape_str(s));
  if (s[1] % 32 != 0 || s[2] % 32 != 0)
    throw Error("encode_frames: H and W must be divisible by 32, got " +
                std::to_string(s[1]) + "x" + std::to_string(s[2]));

  Var x = g.relu(g.conv2d(frames, p.use(prefix + ".stem.w"),
                          p.use(prefix + ".stem.b"), /*stride=*/2, /*pad=*/1));
  std::array<Var, 4> stages{};
  for (int st = 0; st < 4; ++st) {
    for (long b = 0; b < cfg.blocks_per_stage; ++b) {
      std::string base = prefix + ".stage" + std::to_string(st + 1) + ".block" +
                         std::to_string(b + 1);
      x = detail::residual_block(g, p, base, x, /*strided=*/b == 0);
    }
    stages[st] = x;
  }
  return stages;
}

/// Snapshot of stage values with the resolution law checked.
inline FeaturePyramid pyramid_values(Graph& g, const std::array<Var, 4>& stages,
                                     long base_h, long base_w) {
  FeaturePyramid p;
  p.base_h = base_h;
  p.base_w = base_w;
  for (int i = 0; i < 4; ++i) p.stages[i] = g.value(stages[i]);
  p.validate();
  return p;
}

}  // namespace avseg
