// Cross-modal fusion: per-stage ASPP context and the TPAVI attention block
//   Z = V + mu(alpha · g(V)),  alpha = theta(V) · phi(A_hat)^T / N,
// with N = T·h·w flattened audio-visual positions.
#pragma once

#include <string>
#include <vector>

#include "avseg/graph.hpp"
#include "avseg/params.hpp"

namespace avseg {

// ---------------------------------------------------------------------------
// ASPP
// ---------------------------------------------------------------------------

struct AsppConfig {
  std::vector<long> rates = {1, 6, 12, 18};  // rate 1 is a 1x1 branch
  long out_channels = 256;

  void validate() const {
    if (rates.empty()) throw Error("aspp: at least one branch rate required");
    for (long r : rates)
      if (r < 1) throw Error("aspp: rates must be >= 1");
    if (out_channels < 1) throw Error("aspp: output channels must be positive");
  }
};

inline void init_aspp(ParamDict& p, const std::string& prefix, long in_channels,
                      const AsppConfig& cfg, Rng& rng) {
  cfg.validate();
  long C = cfg.out_channels;
  for (size_t i = 0; i < cfg.rates.size(); ++i) {
    std::string b = prefix + ".branch" + std::to_string(i);
    long k = cfg.rates[i] == 1 ? 1 : 3;
    p.add(b + ".w", conv_init(rng, k, k, in_channels, C));
    p.add(b + ".b", bias_init(rng, C));
  }
  p.add(prefix + ".pool.w", linear_init(rng, in_channels, C));
  p.add(prefix + ".pool.b", bias_init(rng, C));
  long concat = C * static_cast<long>(cfg.rates.size() + 1);
  p.add(prefix + ".proj.w", conv_init(rng, 1, 1, concat, C));
  p.add(prefix + ".proj.b", bias_init(rng, C));
}

/// Stage feature (T,h,w,Cin) -> context feature V (T,h,w,C): parallel dilated
/// branches plus a global-pool branch, concatenated and projected.
inline Var aspp(Graph& g, BoundParams& p, const std::string& prefix, Var f,
                const AsppConfig& cfg) {
  cfg.validate();
  Shape s = g.shape(f);  // copy: op pushes below invalidate references
  if (s.size() != 4) throw Error("aspp: rank-4 input required");
  long expected_in = g.shape(p.use(prefix + ".branch0.w"))[2];
  if (s[3] != expected_in)
    throw Error("aspp: input has " + std::to_string(s[3]) +
                " channels, params expect " + std::to_string(expected_in));

  std::vector<Var> branches;
  for (size_t i = 0; i < cfg.rates.size(); ++i) {
    std::string b = prefix + ".branch" + std::to_string(i);
    long r = cfg.rates[i];
    Var y = r == 1 ? g.conv2d(f, p.use(b + ".w"), p.use(b + ".b"))
                   : g.conv2d(f, p.use(b + ".w"), p.use(b + ".b"),
                              /*stride=*/1, /*pad=*/r, /*dilation=*/r);
    branches.push_back(g.relu(y));
  }
  Var pooled = g.linear(g.spatial_mean(f), p.use(prefix + ".pool.w"),
                        p.use(prefix + ".pool.b"));
  branches.push_back(g.relu(g.spatial_broadcast(pooled, s[1], s[2])));
  Var cat = g.concat_lastdim(branches);
  return g.relu(g.conv2d(cat, p.use(prefix + ".proj.w"), p.use(prefix + ".proj.b")));
}

// ---------------------------------------------------------------------------
// TPAVI
// ---------------------------------------------------------------------------

struct TpaviConfig {
  long channels = 256;      // C, matches ASPP output
  long inner_channels = 0;  // C-bar; 0 means C/2
  long audio_dim = 128;     // d

  long inner() const { return inner_channels > 0 ? inner_channels : channels / 2; }
  void validate() const {
    if (channels < 1 || audio_dim < 1)
      throw Error("tpavi: channels and audio dim must be positive");
    if (inner() < 1) throw Error("tpavi: inner channel must be >= 1");
  }
};

inline void init_tpavi(ParamDict& p, const std::string& prefix,
                       const TpaviConfig& cfg, Rng& rng) {
  cfg.validate();
  long C = cfg.channels, Cb = cfg.inner();
  p.add(prefix + ".audio.w", linear_init(rng, cfg.audio_dim, C));
  p.add(prefix + ".audio.b", bias_init(rng, C));
  for (const char* name : {"theta", "phi", "g"}) {
    p.add(prefix + "." + name + ".w", linear_init(rng, C, Cb));
    p.add(prefix + "." + name + ".b", bias_init(rng, Cb));
  }
  // Zero map at start: the block begins as the identity residual.
  p.add(prefix + ".mu.w", Tensor({Cb, C}));
  p.add(prefix + ".mu.b", Tensor({C}));
}

/// A (T,d) -> A-hat (T,h,w,C): linear projection duplicated over all pixels.
inline Var broadcast_audio(Graph& g, BoundParams& p, const std::string& prefix,
                           Var a, long h, long w) {
  Shape s = g.shape(a);
  if (s.size() != 2)
    throw Error("broadcast_audio: audio must be (T,d), got " + shape_str(s));
  Var rows = g.linear(a, p.use(prefix + ".audio.w"), p.use(prefix + ".audio.b"));
  return g.spatial_broadcast(rows, h, w);
}

struct TpaviOut {
  Var z;      // (T,h,w,C)
  Var alpha;  // (N,N), N = T·h·w
};

/// Eq. 1: every visual position attends to every audio position with a plain
/// 1/N-scaled dot product (no softmax).
inline TpaviOut tpavi(Graph& g, BoundParams& p, const std::string& prefix, Var v,
                      Var a, const TpaviConfig& cfg) {
  cfg.validate();
  Shape vs = g.shape(v);
  if (vs.size() != 4 || vs[3] != cfg.channels)
    throw Error("tpavi: V must be (T,h,w," + std::to_string(cfg.channels) +
                "), got " + shape_str(vs));
  Shape as = g.shape(a);
  if (as.size() != 2 || as[0] != vs[0] || as[1] != cfg.audio_dim)
    throw Error("tpavi: A must be (" + std::to_string(vs[0]) + "," +
                std::to_string(cfg.audio_dim) + "), got " + shape_str(as));
  long T = vs[0], h = vs[1], w = vs[2], C = vs[3];
  long N = T * h * w;

  Var a_hat = broadcast_audio(g, p, prefix, a, h, w);  // (T,h,w,C)
  Var vf = g.reshape(v, {N, C});
  Var af = g.reshape(a_hat, {N, C});
  Var th = g.linear(vf, p.use(prefix + ".theta.w"), p.use(prefix + ".theta.b"));
  Var ph = g.linear(af, p.use(prefix + ".phi.w"), p.use(prefix + ".phi.b"));
  Var gv = g.linear(vf, p.use(prefix + ".g.w"), p.use(prefix + ".g.b"));

  Var alpha = g.mul_scalar(g.matmul(th, ph, false, true), 1.0 / double(N));
  Var mixed = g.linear(g.matmul(alpha, gv),
                       p.use(prefix + ".mu.w"), p.use(prefix + ".mu.b"));
  Var z = g.add(v, g.reshape(mixed, {T, h, w, C}));
  if (!g.value(z).all_finite() || !g.value(alpha).all_finite())
    throw Error("tpavi: non-finite activation");
  return {z, alpha};
}

/// Table-4 ablation baseline: Z = V + A-hat, no attention.
inline Var naive_fusion(Graph& g, BoundParams& p, const std::string& prefix,
                        Var v, Var a) {
  Shape vs = g.shape(v);
  if (vs.size() != 4) throw Error("naive_fusion: V must be rank 4");
  Var a_hat = broadcast_audio(g, p, prefix, a, vs[1], vs[2]);
  if (g.shape(a_hat)[3] != vs[3])
    throw Error("naive_fusion: audio projection channels " +
                std::to_string(g.shape(a_hat)[3]) + " do not match V channels " +
                std::to_string(vs[3]));
  return g.add(v, a_hat);
}

/// Collapses a stage's attention matrix to one heat value per (pixel, time):
/// how strongly pixel (y,x) of frame t attends to the audio of frame t2.
/// Columns sharing a time index are identical, so any representative works.
inline Tensor attention_heat(const Tensor& alpha, long T, long h, long w) {
  if (alpha.rank() != 2 || alpha.dim(0) != T * h * w || alpha.dim(1) != T * h * w)
    throw Error("attention_heat: alpha shape does not match T*h*w");
  Tensor heat({T, h, w, T});
  for (long t = 0; t < T; ++t)
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        long row = (t * h + y) * w + x;
        for (long t2 = 0; t2 < T; ++t2)
          heat.at(t, y, x, t2) = alpha.at(row, t2 * h * w);
      }
  return heat;
}

}  // namespace avseg
