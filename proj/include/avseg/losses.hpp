// Training objective: BCE / cross-entropy main loss over supervised frames,
// plus the audio-visual mapping (AVM) regularizer in its AV and VV variants.
#pragma once

#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "avseg/core_types.hpp"
#include "avseg/graph.hpp"
#include "avseg/params.hpp"

namespace avseg {

enum class AvmVariant { None, AV, VV };

inline AvmVariant avm_variant_from(const std::string& s) {
  if (s == "none") return AvmVariant::None;
  if (s == "av") return AvmVariant::AV;
  if (s == "vv") return AvmVariant::VV;
  throw Error("unknown avm variant: " + s);
}

inline std::string avm_variant_name(AvmVariant v) {
  switch (v) {
    case AvmVariant::None: return "none";
    case AvmVariant::AV: return "av";
    case AvmVariant::VV: return "vv";
  }
  throw Error("unknown avm variant");
}

struct LossConfig {
  double lambda = 0.5;
  AvmVariant variant = AvmVariant::AV;
  double eps = 1e-7;  // probability clamp for logs

  void validate() const {
    if (lambda < 0.0) throw Error("loss config: lambda must be non-negative");
    if (!(eps > 0.0 && eps < 0.5)) throw Error("loss config: eps out of range");
  }
};

/// Effective balance weight: the S4 setting trains with lambda = 0.
inline double effective_lambda(const LossConfig& cfg, const TaskSetting& setting) {
  return setting.kind == TaskKind::S4 ? 0.0 : cfg.lambda;
}

// ---------------------------------------------------------------------------
// Main supervision
// ---------------------------------------------------------------------------

/// Mean binary/categorical cross-entropy over the pixels of supervised frames.
/// Unsupervised frames contribute nothing — their weight constants are zero,
/// so their gradients vanish identically.
inline Var main_loss(Graph& g, Var scores, const MaskArray& gt,
                     const TaskSetting& setting,
                     const std::vector<uint8_t>& supervised, double eps = 1e-7) {
  setting.validate();
  Shape s = g.shape(scores);
  if (s.size() != 4 || s[3] != setting.num_classes)
    throw Error("main_loss: scores must be (T,H,W,K)");
  long T = s[0], H = s[1], W = s[2], K = s[3];
  if (gt.T != T || gt.H != H || gt.W != W)
    throw Error("main_loss: ground-truth mask shape mismatch");
  if (static_cast<long>(supervised.size()) != T)
    throw Error("main_loss: supervised flag count != T");
  long frames_on = 0;
  for (uint8_t f : supervised) frames_on += f ? 1 : 0;
  if (frames_on == 0) throw Error("main_loss: no supervised frames");
  double count = static_cast<double>(frames_on) * H * W;

  if (K == 1) {
    Tensor wy({T, H, W, 1}), wny({T, H, W, 1});
    for (long t = 0; t < T; ++t) {
      double wt = supervised[t] ? 1.0 : 0.0;
      for (long px = 0; px < H * W; ++px) {
        double y = gt.ids[t * H * W + px] != 0 ? 1.0 : 0.0;
        wy[t * H * W + px] = wt * y;
        wny[t * H * W + px] = wt * (1.0 - y);
      }
    }
    Var p = g.clamp(g.sigmoid(scores), eps, 1.0 - eps);
    Var one_minus = g.add_scalar(g.mul_scalar(p, -1.0), 1.0);
    Var pos = g.sum_all(g.mul(g.input(std::move(wy)), g.log(p)));
    Var neg = g.sum_all(g.mul(g.input(std::move(wny)), g.log(one_minus)));
    return g.mul_scalar(g.add(pos, neg), -1.0 / count);
  }

  Tensor onehot({T, H, W, K});
  for (long t = 0; t < T; ++t) {
    double wt = supervised[t] ? 1.0 : 0.0;
    for (long px = 0; px < H * W; ++px) {
      int id = gt.ids[t * H * W + px];
      onehot[(t * H * W + px) * K + id] = wt;
    }
  }
  Var q = g.clamp(g.softmax_lastdim(scores), eps, 1.0);
  Var ll = g.sum_all(g.mul(g.input(std::move(onehot)), g.log(q)));
  return g.mul_scalar(ll, -1.0 / count);
}

/// Foreground probability map (T,H,W,1) from raw scores: sigmoid for K=1,
/// 1 - P(background) for semantic heads.
inline Var mask_probability(Graph& g, Var scores, const TaskSetting& setting) {
  Shape s = g.shape(scores);
  if (s.size() != 4) throw Error("mask_probability: rank-4 scores required");
  long K = s[3];
  if (K != setting.num_classes)
    throw Error("mask_probability: K mismatch with setting");
  if (K == 1) return g.sigmoid(scores);
  long N = s[0] * s[1] * s[2];
  Tensor selector({K, 1});
  selector[0] = 1.0;  // background channel
  Var soft = g.softmax_lastdim(scores);
  Var p_bg = g.matmul(g.reshape(soft, {N, K}), g.input(std::move(selector)));
  Var fg = g.add_scalar(g.mul_scalar(p_bg, -1.0), 1.0);
  return g.reshape(fg, {s[0], s[1], s[2], 1});
}

// ---------------------------------------------------------------------------
// AVM losses
// ---------------------------------------------------------------------------

/// Fused stage features entering the AVM loss: stage index (1-based) plus Z.
using StageFeatures = std::vector<std::pair<int, Var>>;

inline void init_avm_projections(ParamDict& p, const std::string& prefix,
                                 const std::vector<int>& stages, long audio_dim,
                                 long channels, Rng& rng) {
  for (int s : stages) {
    std::string base = prefix + ".stage" + std::to_string(s);
    p.add(base + ".w", linear_init(rng, audio_dim, channels));
    p.add(base + ".b", bias_init(rng, channels));
  }
}

namespace detail {

/// Masked, pooled stage feature: avg over pixels of M_i ⊙ Z_i -> (T,C).
inline Var masked_pooled(Graph& g, Var mask_prob, Var z) {
  Shape zs = g.shape(z);
  Shape ms = g.shape(mask_prob);
  if (ms[1] % zs[1] != 0 || ms[2] % zs[2] != 0)
    throw Error("avm: mask resolution is not a multiple of the stage grid");
  Var mi = g.avg_pool2d(mask_prob, ms[1] / zs[1], ms[2] / zs[2]);
  return g.spatial_mean(g.mul_pixelwise(z, mi));
}

/// Mean over rows of KL(P_row || Q_row) for row-stochastic P, Q.
inline Var kl_rows(Graph& g, Var p, Var q) {
  constexpr double kFloor = 1e-30;  // guards log(0); softmax outputs are positive
  Var logp = g.log(g.clamp(p, kFloor, 1.0));
  Var logq = g.log(g.clamp(q, kFloor, 1.0));
  Var per = g.mul(p, g.sub(logp, logq));
  long T = g.shape(p)[0];
  return g.mul_scalar(g.sum_all(per), 1.0 / double(T));
}

}  // namespace detail

/// Eq. 3 (AV variant): per stage, KL between the channel distribution of the
/// masked pooled visual feature and the projected audio feature, averaged
/// over clips and summed over stages.
inline Var avm_av_loss(Graph& g, BoundParams& p, const std::string& prefix,
                       Var mask_prob, const StageFeatures& stages, Var a) {
  if (stages.empty()) throw Error("avm_av_loss: no stages given");
  Var total;
  bool first = true;
  for (const auto& [idx, z] : stages) {
    Var zm = detail::masked_pooled(g, mask_prob, z);
    std::string base = prefix + ".stage" + std::to_string(idx);
    Var ai = g.linear(a, p.use(base + ".w"), p.use(base + ".b"));
    Var kl = detail::kl_rows(g, g.softmax_lastdim(zm), g.softmax_lastdim(ai));
    total = first ? kl : g.add(total, kl);
    first = false;
  }
  return total;
}

/// Nearest-audio partner for every clip: argmin over t' != t of the Euclidean
/// distance between raw audio rows; ties resolve to the smallest t'.
inline std::vector<long> nearest_audio_pairing(const Tensor& a) {
  if (a.rank() != 2) throw Error("nearest_audio_pairing: audio must be (T,d)");
  long T = a.dim(0), d = a.dim(1);
  if (T < 2) throw Error("nearest_audio_pairing: need at least 2 clips");
  std::vector<long> pair(T);
  for (long t = 0; t < T; ++t) {
    double best = std::numeric_limits<double>::infinity();
    long arg = -1;
    for (long u = 0; u < T; ++u) {
      if (u == t) continue;
      double dist = 0.0;
      for (long j = 0; j < d; ++j) {
        double diff = a.at(t, j) - a.at(u, j);
        dist += diff * diff;
      }
      if (dist < best) {
        best = dist;
        arg = u;
      }
    }
    pair[t] = arg;
  }
  return pair;
}

/// Table-5 VV variant: pair each clip with its nearest-audio partner, then
/// KL between the two clips' masked pooled visual distributions per stage.
/// The pairing itself is non-differentiable and treated as a constant.
inline Var avm_vv_loss(Graph& g, Var mask_prob, const StageFeatures& stages,
                       const Tensor& audio_rows) {
  if (stages.empty()) throw Error("avm_vv_loss: no stages given");
  std::vector<long> pairing = nearest_audio_pairing(audio_rows);
  Var total;
  bool first = true;
  for (const auto& [idx, z] : stages) {
    (void)idx;
    Var zm = detail::masked_pooled(g, mask_prob, z);
    Var p = g.softmax_lastdim(zm);
    Var q = g.select_rows(p, pairing);
    Var kl = detail::kl_rows(g, p, q);
    total = first ? kl : g.add(total, kl);
    first = false;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Total
// ---------------------------------------------------------------------------

struct TotalLossInputs {
  Var scores;                 // decoder output (T,H,W,K)
  const MaskArray* gt = nullptr;
  std::vector<uint8_t> supervised;
  StageFeatures stages;       // fused stages entering AVM
  Var audio;                  // (T,d)
};

/// Eq. 2: main + lambda * AVM. The AVM branch is skipped entirely when the
/// variant is none or the effective lambda is 0 (always for S4).
inline Var total_loss(Graph& g, BoundParams& p, const std::string& avm_prefix,
                      const TotalLossInputs& in, const TaskSetting& setting,
                      const LossConfig& cfg) {
  cfg.validate();
  Var main = main_loss(g, in.scores, *in.gt, setting, in.supervised, cfg.eps);
  double lam = effective_lambda(cfg, setting);
  if (cfg.variant == AvmVariant::None || lam == 0.0) return main;
  Var m = mask_probability(g, in.scores, setting);
  Var avm;
  if (cfg.variant == AvmVariant::AV) {
    avm = avm_av_loss(g, p, avm_prefix, m, in.stages, in.audio);
  } else {
    Tensor rows = g.value(in.audio);  // copy: later ops may invalidate the ref
    avm = avm_vv_loss(g, m, in.stages, rows);
  }
  return g.add(main, g.mul_scalar(avm, lam));
}

}  // namespace avseg
