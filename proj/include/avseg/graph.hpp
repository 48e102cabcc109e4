// Tape-based reverse-mode autodiff over dense double tensors.
//
// A Graph owns the nodes of one forward evaluation. Ops compute their value
// eagerly and record a backward closure; Graph::backward walks the tape in
// reverse creation order, which is already a topological order.
#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "avseg/tensor.hpp"

namespace avseg {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var input(Tensor value, bool requires_grad = false) {
    return push(std::move(value), requires_grad, nullptr);
  }

  // The returned references live inside the node vector: recording any
  // further op may reallocate and invalidate them. Copy before mixing reads
  // with op calls.
  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Shape& shape(Var v) const { return nodes_[v.id].value.shape(); }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Gradient of the last backward() target w.r.t. v. Zero tensor if the
  /// node is unreached.
  Tensor grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.empty()) return Tensor::zeros(n.value.shape());
    return n.grad;
  }

  // ---- elementwise ----

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    Tensor out = value(a);
    out.as_vector() += value(b).as_vector();
    return binary_carry(a, b, std::move(out), [this](int ai, int bi, int oi) {
      const Tensor& go = nodes_[oi].grad;
      if (wants(ai)) gbuf(ai).as_vector() += go.as_vector();
      if (wants(bi)) gbuf(bi).as_vector() += go.as_vector();
    });
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    Tensor out = value(a);
    out.as_vector() -= value(b).as_vector();
    return binary_carry(a, b, std::move(out), [this](int ai, int bi, int oi) {
      const Tensor& go = nodes_[oi].grad;
      if (wants(ai)) gbuf(ai).as_vector() += go.as_vector();
      if (wants(bi)) gbuf(bi).as_vector() -= go.as_vector();
    });
  }

  Var mul(Var a, Var b) {
    check_same(a, b, "mul");
    Tensor out = value(a);
    out.as_vector().array() *= value(b).as_vector().array();
    return binary_carry(a, b, std::move(out), [this](int ai, int bi, int oi) {
      const Tensor& go = nodes_[oi].grad;
      if (wants(ai))
        gbuf(ai).as_vector().array() +=
            go.as_vector().array() * nodes_[bi].value.as_vector().array();
      if (wants(bi))
        gbuf(bi).as_vector().array() +=
            go.as_vector().array() * nodes_[ai].value.as_vector().array();
    });
  }

  Var add_scalar(Var a, double c) {
    Tensor out = value(a);
    out.as_vector().array() += c;
    return unary_carry(a, std::move(out), [this](int ai, int oi) {
      gbuf(ai).as_vector() += nodes_[oi].grad.as_vector();
    });
  }

  Var mul_scalar(Var a, double c) {
    Tensor out = value(a);
    out.as_vector() *= c;
    return unary_carry(a, std::move(out), [this, c](int ai, int oi) {
      gbuf(ai).as_vector() += c * nodes_[oi].grad.as_vector();
    });
  }

  Var relu(Var a) {
    Tensor out = value(a);
    for (long i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
    return unary_carry(a, std::move(out), [this](int ai, int oi) {
      const Tensor& x = nodes_[ai].value;
      const Tensor& go = nodes_[oi].grad;
      Tensor& ga = gbuf(ai);
      for (long i = 0; i < x.size(); ++i)
        if (x[i] > 0.0) ga[i] += go[i];
    });
  }

  Var sigmoid(Var a) {
    Tensor out = value(a);
    for (long i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    return unary_carry(a, std::move(out), [this](int ai, int oi) {
      const Tensor& p = nodes_[oi].value;
      const Tensor& go = nodes_[oi].grad;
      Tensor& ga = gbuf(ai);
      for (long i = 0; i < p.size(); ++i) ga[i] += go[i] * p[i] * (1.0 - p[i]);
    });
  }

  Var log(Var a) {
    Tensor out = value(a);
    for (long i = 0; i < out.size(); ++i) out[i] = std::log(out[i]);
    return unary_carry(a, std::move(out), [this](int ai, int oi) {
      const Tensor& x = nodes_[ai].value;
      const Tensor& go = nodes_[oi].grad;
      Tensor& ga = gbuf(ai);
      for (long i = 0; i < x.size(); ++i) ga[i] += go[i] / x[i];
    });
  }

  /// Clamp to [lo, hi]; gradient passes through strictly inside the interval.
  Var clamp(Var a, double lo, double hi) {
    Tensor out = value(a);
    for (long i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, out[i]));
    return unary_carry(a, std::move(out), [this, lo, hi](int ai, int oi) {
      const Tensor& x = nodes_[ai].value;
      const Tensor& go = nodes_[oi].grad;
      Tensor& ga = gbuf(ai);
      for (long i = 0; i < x.size(); ++i)
        if (x[i] > lo && x[i] < hi) ga[i] += go[i];
    });
  }

  // ---- shape ----

  Var reshape(Var a, Shape shape) {
    Tensor out = value(a).reshaped(std::move(shape));
    return unary_carry(a, std::move(out), [this](int ai, int oi) {
      gbuf(ai).as_vector() += nodes_[oi].grad.as_vector();
    });
  }

  Var concat_lastdim(const std::vector<Var>& parts) {
    if (parts.empty()) throw Error("concat_lastdim: no inputs");
    Shape s0 = shape(parts[0]);
    long rows = 1;
    for (size_t i = 0; i + 1 < s0.size(); ++i) rows *= s0[i];
    long total_c = 0;
    for (Var p : parts) {
      const Shape& s = shape(p);
      if (s.size() != s0.size() ||
          !std::equal(s.begin(), s.end() - 1, s0.begin()))
        throw Error("concat_lastdim: leading dims mismatch");
      total_c += s.back();
    }
    Shape os = s0;
    os.back() = total_c;
    Tensor out(os);
    long off = 0;
    for (Var p : parts) {
      long c = shape(p).back();
      const Tensor& x = value(p);
      for (long r = 0; r < rows; ++r)
        std::copy(x.data() + r * c, x.data() + (r + 1) * c,
                  out.data() + r * total_c + off);
      off += c;
    }
    bool rg = false;
    for (Var p : parts) rg = rg || requires_grad(p);
    std::vector<int> pids;
    for (Var p : parts) pids.push_back(p.id);
    Var o = push(std::move(out), rg, nullptr);
    if (rg) {
      int oi = o.id;
      nodes_[oi].backward = [this, pids, rows, total_c, oi]() {
        const Tensor& go = nodes_[oi].grad;
        long off2 = 0;
        for (int pid : pids) {
          long c = nodes_[pid].value.shape().back();
          if (wants(pid)) {
            Tensor& gp = gbuf(pid);
            for (long r = 0; r < rows; ++r)
              for (long k = 0; k < c; ++k)
                gp[r * c + k] += go[r * total_c + off2 + k];
          }
          off2 += c;
        }
      };
    }
    return o;
  }

  /// Gather rows of a 2-D tensor; duplicate indices accumulate on backward.
  Var select_rows(Var a, std::vector<long> idx) {
    const Tensor& x = value(a);
    if (x.rank() != 2) throw Error("select_rows: rank-2 input required");
    long cols = x.dim(1);
    Tensor out({static_cast<long>(idx.size()), cols});
    for (size_t r = 0; r < idx.size(); ++r) {
      long src = idx[r];
      if (src < 0 || src >= x.dim(0)) throw Error("select_rows: index out of range");
      std::copy(x.data() + src * cols, x.data() + (src + 1) * cols,
                out.data() + static_cast<long>(r) * cols);
    }
    return unary_carry(a, std::move(out), [this, idx, cols](int ai, int oi) {
      const Tensor& go = nodes_[oi].grad;
      Tensor& ga = gbuf(ai);
      for (size_t r = 0; r < idx.size(); ++r)
        for (long k = 0; k < cols; ++k)
          ga[idx[r] * cols + k] += go[static_cast<long>(r) * cols + k];
    });
  }

  // ---- reductions / broadcasts ----

  Var sum_all(Var a) {
    Tensor out = Tensor::scalar(value(a).as_vector().sum());
    return unary_carry(a, std::move(out), [this](int ai, int oi) {
      gbuf(ai).as_vector().array() += nodes_[oi].grad[0];
    });
  }

  /// (T,h,w,C) -> (T,C), mean over the spatial axes.
  Var spatial_mean(Var a) {
    const Tensor& x = value(a);
    if (x.rank() != 4) throw Error("spatial_mean: rank-4 input required");
    long T = x.dim(0), h = x.dim(1), w = x.dim(2), C = x.dim(3);
    long hw = h * w;
    Tensor out({T, C});
    for (long t = 0; t < T; ++t)
      for (long p = 0; p < hw; ++p)
        for (long c = 0; c < C; ++c) out.at(t, c) += x[(t * hw + p) * C + c];
    out.scale_(1.0 / static_cast<double>(hw));
    return unary_carry(a, std::move(out), [this, T, hw, C](int ai, int oi) {
      const Tensor& go = nodes_[oi].grad;
      Tensor& ga = gbuf(ai);
      double inv = 1.0 / static_cast<double>(hw);
      for (long t = 0; t < T; ++t)
        for (long p = 0; p < hw; ++p)
          for (long c = 0; c < C; ++c) ga[(t * hw + p) * C + c] += inv * go.at(t, c);
    });
  }

  /// (T,C) -> (T,h,w,C), value repeated at every spatial position.
  Var spatial_broadcast(Var a, long h, long w) {
    const Tensor& x = value(a);
    if (x.rank() != 2) throw Error("spatial_broadcast: rank-2 input required");
    long T = x.dim(0), C = x.dim(1), hw = h * w;
    Tensor out({T, h, w, C});
    for (long t = 0; t < T; ++t)
      for (long p = 0; p < hw; ++p)
        std::copy(x.data() + t * C, x.data() + (t + 1) * C,
                  out.data() + (t * hw + p) * C);
    return unary_carry(a, std::move(out), [this, T, hw, C](int ai, int oi) {
      const Tensor& go = nodes_[oi].grad;
      Tensor& ga = gbuf(ai);
      for (long t = 0; t < T; ++t)
        for (long p = 0; p < hw; ++p)
          for (long c = 0; c < C; ++c) ga[t * C + c] += go[(t * hw + p) * C + c];
    });
  }

  /// Multiply (T,h,w,C) by a per-pixel weight (T,h,w,1) broadcast over C.
  Var mul_pixelwise(Var a, Var m) {
    const Tensor& x = value(a);
    const Tensor& w = value(m);
    if (x.rank() != 4 || w.rank() != 4 || w.dim(3) != 1 || w.dim(0) != x.dim(0) ||
        w.dim(1) != x.dim(1) || w.dim(2) != x.dim(2))
      throw Error("mul_pixelwise: weight must be (T,h,w,1) matching input");
    long P = x.dim(0) * x.dim(1) * x.dim(2), C = x.dim(3);
    Tensor out = x;
    for (long p = 0; p < P; ++p)
      for (long c = 0; c < C; ++c) out[p * C + c] *= w[p];
    return binary_carry(a, m, std::move(out), [this, P, C](int ai, int mi, int oi) {
      const Tensor& go = nodes_[oi].grad;
      if (wants(ai)) {
        const Tensor& wv = nodes_[mi].value;
        Tensor& ga = gbuf(ai);
        for (long p = 0; p < P; ++p)
          for (long c = 0; c < C; ++c) ga[p * C + c] += go[p * C + c] * wv[p];
      }
      if (wants(mi)) {
        const Tensor& xv = nodes_[ai].value;
        Tensor& gm = gbuf(mi);
        for (long p = 0; p < P; ++p) {
          double s = 0.0;
          for (long c = 0; c < C; ++c) s += go[p * C + c] * xv[p * C + c];
          gm[p] += s;
        }
      }
    });
  }

  /// Softmax along the last axis.
  Var softmax_lastdim(Var a) {
    const Tensor& x = value(a);
    long C = x.shape().back();
    long rows = x.size() / C;
    Tensor out = x;
    for (long r = 0; r < rows; ++r) {
      double* row = out.data() + r * C;
      double mx = *std::max_element(row, row + C);
      double s = 0.0;
      for (long c = 0; c < C; ++c) {
        row[c] = std::exp(row[c] - mx);
        s += row[c];
      }
      for (long c = 0; c < C; ++c) row[c] /= s;
    }
    return unary_carry(a, std::move(out), [this, rows, C](int ai, int oi) {
      const Tensor& p = nodes_[oi].value;
      const Tensor& go = nodes_[oi].grad;
      Tensor& ga = gbuf(ai);
      for (long r = 0; r < rows; ++r) {
        const double* pr = p.data() + r * C;
        const double* gr = go.data() + r * C;
        double dot = 0.0;
        for (long c = 0; c < C; ++c) dot += pr[c] * gr[c];
        for (long c = 0; c < C; ++c) ga[r * C + c] += pr[c] * (gr[c] - dot);
      }
    });
  }

  // ---- dense linear algebra ----

  /// x:(M,K) w:(K,N) b:(N) -> (M,N)
  Var linear(Var x, Var w, Var b) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const Tensor& bv = value(b);
    if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(0) ||
        bv.size() != wv.dim(1))
      throw Error("linear: shape mismatch x" + shape_str(xv.shape()) + " w" +
                  shape_str(wv.shape()));
    long M = xv.dim(0), K = xv.dim(1), N = wv.dim(1);
    Tensor out({M, N});
    out.as_matrix(M, N).noalias() = xv.as_matrix(M, K) * wv.as_matrix(K, N);
    out.as_matrix(M, N).rowwise() += bv.as_vector().transpose();
    std::vector<int> ps = {x.id, w.id, b.id};
    bool rg = requires_grad(x) || requires_grad(w) || requires_grad(b);
    Var o = push(std::move(out), rg, nullptr);
    if (rg) {
      int xi = x.id, wi = w.id, bi = b.id, oi = o.id;
      nodes_[oi].backward = [this, xi, wi, bi, oi, M, K, N]() {
        const Tensor& go = nodes_[oi].grad;
        if (wants(xi))
          gbuf(xi).as_matrix(M, K).noalias() +=
              go.as_matrix(M, N) * nodes_[wi].value.as_matrix(K, N).transpose();
        if (wants(wi))
          gbuf(wi).as_matrix(K, N).noalias() +=
              nodes_[xi].value.as_matrix(M, K).transpose() * go.as_matrix(M, N);
        if (wants(bi))
          gbuf(bi).as_vector() += go.as_matrix(M, N).colwise().sum().transpose();
      };
    }
    return o;
  }

  /// C = op(A)·op(B) with optional transposes on 2-D inputs.
  Var matmul(Var a, Var b, bool ta = false, bool tb = false) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.rank() != 2 || bv.rank() != 2) throw Error("matmul: rank-2 inputs required");
    long M = ta ? av.dim(1) : av.dim(0);
    long Ka = ta ? av.dim(0) : av.dim(1);
    long Kb = tb ? bv.dim(1) : bv.dim(0);
    long N = tb ? bv.dim(0) : bv.dim(1);
    if (Ka != Kb) throw Error("matmul: inner dimension mismatch");
    Tensor out({M, N});
    auto A = av.as_matrix(av.dim(0), av.dim(1));
    auto B = bv.as_matrix(bv.dim(0), bv.dim(1));
    auto Co = out.as_matrix(M, N);
    if (!ta && !tb) Co.noalias() = A * B;
    else if (!ta && tb) Co.noalias() = A * B.transpose();
    else if (ta && !tb) Co.noalias() = A.transpose() * B;
    else Co.noalias() = A.transpose() * B.transpose();
    return binary_carry(a, b, std::move(out), [this, ta, tb, M, N](int ai, int bi, int oi) {
      const Tensor& go = nodes_[oi].grad;
      auto G = go.as_matrix(M, N);
      const Tensor& av2 = nodes_[ai].value;
      const Tensor& bv2 = nodes_[bi].value;
      auto A = av2.as_matrix(av2.dim(0), av2.dim(1));
      auto B = bv2.as_matrix(bv2.dim(0), bv2.dim(1));
      if (wants(ai)) {
        Tensor& ga = gbuf(ai);
        auto GA = ga.as_matrix(av2.dim(0), av2.dim(1));
        if (!ta && !tb) GA.noalias() += G * B.transpose();
        else if (!ta && tb) GA.noalias() += G * B;
        else if (ta && !tb) GA.noalias() += B * G.transpose();
        else GA.noalias() += B.transpose() * G.transpose();
      }
      if (wants(bi)) {
        Tensor& gb = gbuf(bi);
        auto GB = gb.as_matrix(bv2.dim(0), bv2.dim(1));
        if (!ta && !tb) GB.noalias() += A.transpose() * G;
        else if (!ta && tb) GB.noalias() += G.transpose() * A;
        else if (ta && !tb) GB.noalias() += A * G;
        else GB.noalias() += G.transpose() * A.transpose();
      }
    });
  }

  /// NHWC conv2d via im2col + GEMM. x:(T,H,W,Ci) w:(kh,kw,Ci,Co) b:(Co).
  Var conv2d(Var x, Var w, Var b, long stride = 1, long pad = 0, long dilation = 1) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const Tensor& bv = value(b);
    if (xv.rank() != 4 || wv.rank() != 4) throw Error("conv2d: rank-4 x and w required");
    long T = xv.dim(0), H = xv.dim(1), W = xv.dim(2), Ci = xv.dim(3);
    long kh = wv.dim(0), kw = wv.dim(1), Co = wv.dim(3);
    if (wv.dim(2) != Ci)
      throw Error("conv2d: input channels " + std::to_string(Ci) +
                  " do not match kernel channels " + std::to_string(wv.dim(2)));
    if (bv.size() != Co) throw Error("conv2d: bias size mismatch");
    long eff_kh = (kh - 1) * dilation + 1, eff_kw = (kw - 1) * dilation + 1;
    long Ho = (H + 2 * pad - eff_kh) / stride + 1;
    long Wo = (W + 2 * pad - eff_kw) / stride + 1;
    if (Ho < 1 || Wo < 1) throw Error("conv2d: kernel larger than padded input");

    long rows = T * Ho * Wo, cols = kh * kw * Ci;
    auto col = std::make_shared<Tensor>(Shape{rows, cols});
    im2col(xv, kh, kw, stride, pad, dilation, Ho, Wo, *col);

    Tensor out({T, Ho, Wo, Co});
    out.as_matrix(rows, Co).noalias() =
        col->as_matrix(rows, cols) * wv.as_matrix(cols, Co);
    out.as_matrix(rows, Co).rowwise() += bv.as_vector().transpose();

    bool rg = requires_grad(x) || requires_grad(w) || requires_grad(b);
    Var o = push(std::move(out), rg, nullptr);
    if (rg) {
      int xi = x.id, wi = w.id, bi = b.id, oi = o.id;
      nodes_[oi].backward = [this, xi, wi, bi, oi, col, rows, cols, Co, kh, kw,
                             stride, pad, dilation, Ho, Wo]() {
        const Tensor& go = nodes_[oi].grad;
        auto G = go.as_matrix(rows, Co);
        if (wants(wi))
          gbuf(wi).as_matrix(cols, Co).noalias() +=
              col->as_matrix(rows, cols).transpose() * G;
        if (wants(bi)) gbuf(bi).as_vector() += G.colwise().sum().transpose();
        if (wants(xi)) {
          Tensor dcol({rows, cols});
          dcol.as_matrix(rows, cols).noalias() =
              G * nodes_[wi].value.as_matrix(cols, Co).transpose();
          col2im_add(dcol, kh, kw, stride, pad, dilation, Ho, Wo, gbuf(xi));
        }
      };
    }
    return o;
  }

  Var avg_pool2d(Var a, long fy, long fx) {
    const Tensor& x = value(a);
    if (x.rank() != 4) throw Error("avg_pool2d: rank-4 input required");
    long T = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    if (H % fy != 0 || W % fx != 0)
      throw Error("avg_pool2d: input " + shape_str(x.shape()) +
                  " not divisible by window " + std::to_string(fy) + "x" +
                  std::to_string(fx));
    long Ho = H / fy, Wo = W / fx;
    double inv = 1.0 / static_cast<double>(fy * fx);
    Tensor out({T, Ho, Wo, C});
    for (long t = 0; t < T; ++t)
      for (long oy = 0; oy < Ho; ++oy)
        for (long ox = 0; ox < Wo; ++ox)
          for (long dy = 0; dy < fy; ++dy)
            for (long dx = 0; dx < fx; ++dx)
              for (long c = 0; c < C; ++c)
                out.at(t, oy, ox, c) += inv * x.at(t, oy * fy + dy, ox * fx + dx, c);
    return unary_carry(a, std::move(out),
                       [this, T, Ho, Wo, fy, fx, C, inv](int ai, int oi) {
      const Tensor& go = nodes_[oi].grad;
      Tensor& ga = gbuf(ai);
      for (long t = 0; t < T; ++t)
        for (long oy = 0; oy < Ho; ++oy)
          for (long ox = 0; ox < Wo; ++ox)
            for (long dy = 0; dy < fy; ++dy)
              for (long dx = 0; dx < fx; ++dx)
                for (long c = 0; c < C; ++c)
                  ga.at(t, oy * fy + dy, ox * fx + dx, c) += inv * go.at(t, oy, ox, c);
    });
  }

  Var upsample_nearest2x(Var a) {
    const Tensor& x = value(a);
    if (x.rank() != 4) throw Error("upsample_nearest2x: rank-4 input required");
    long T = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    Tensor out({T, 2 * H, 2 * W, C});
    for (long t = 0; t < T; ++t)
      for (long y = 0; y < 2 * H; ++y)
        for (long xx = 0; xx < 2 * W; ++xx)
          for (long c = 0; c < C; ++c)
            out.at(t, y, xx, c) = x.at(t, y / 2, xx / 2, c);
    return unary_carry(a, std::move(out), [this, T, H, W, C](int ai, int oi) {
      const Tensor& go = nodes_[oi].grad;
      Tensor& ga = gbuf(ai);
      for (long t = 0; t < T; ++t)
        for (long y = 0; y < 2 * H; ++y)
          for (long xx = 0; xx < 2 * W; ++xx)
            for (long c = 0; c < C; ++c)
              ga.at(t, y / 2, xx / 2, c) += go.at(t, y, xx, c);
    });
  }

  /// Bilinear resize to (Ho,Wo), half-pixel-center convention.
  Var upsample_bilinear(Var a, long Ho, long Wo) {
    const Tensor& x = value(a);
    if (x.rank() != 4) throw Error("upsample_bilinear: rank-4 input required");
    long T = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    // Precompute per-axis sample positions and weights.
    auto axis = [](long in, long out) {
      std::vector<std::tuple<long, long, double>> m(out);  // lo index, hi index, hi weight
      double scale = static_cast<double>(in) / static_cast<double>(out);
      for (long o = 0; o < out; ++o) {
        double s = (static_cast<double>(o) + 0.5) * scale - 0.5;
        s = std::max(0.0, std::min(s, static_cast<double>(in - 1)));
        long lo = static_cast<long>(std::floor(s));
        long hi = std::min(lo + 1, in - 1);
        m[o] = {lo, hi, s - static_cast<double>(lo)};
      }
      return m;
    };
    auto ym = axis(H, Ho), xm = axis(W, Wo);
    Tensor out({T, Ho, Wo, C});
    for (long t = 0; t < T; ++t)
      for (long oy = 0; oy < Ho; ++oy) {
        auto [y0, y1, wy] = ym[oy];
        for (long ox = 0; ox < Wo; ++ox) {
          auto [x0, x1, wx] = xm[ox];
          for (long c = 0; c < C; ++c)
            out.at(t, oy, ox, c) =
                (1 - wy) * ((1 - wx) * x.at(t, y0, x0, c) + wx * x.at(t, y0, x1, c)) +
                wy * ((1 - wx) * x.at(t, y1, x0, c) + wx * x.at(t, y1, x1, c));
        }
      }
    return unary_carry(a, std::move(out), [this, T, Ho, Wo, C, ym, xm](int ai, int oi) {
      const Tensor& go = nodes_[oi].grad;
      Tensor& ga = gbuf(ai);
      for (long t = 0; t < T; ++t)
        for (long oy = 0; oy < Ho; ++oy) {
          auto [y0, y1, wy] = ym[oy];
          for (long ox = 0; ox < Wo; ++ox) {
            auto [x0, x1, wx] = xm[ox];
            for (long c = 0; c < C; ++c) {
              double g = go.at(t, oy, ox, c);
              ga.at(t, y0, x0, c) += (1 - wy) * (1 - wx) * g;
              ga.at(t, y0, x1, c) += (1 - wy) * wx * g;
              ga.at(t, y1, x0, c) += wy * (1 - wx) * g;
              ga.at(t, y1, x1, c) += wy * wx * g;
            }
          }
        }
    });
  }

  /// Backpropagate from a scalar node.
  void backward(Var loss) {
    if (value(loss).size() != 1) throw Error("backward: loss must be scalar");
    gbuf(loss.id)[0] += 1.0;
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.grad.empty() && n.backward) n.backward();
    }
  }

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  std::vector<Node> nodes_;

  Var push(Tensor value, bool requires_grad, std::function<void()> bw) {
    nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, std::move(bw)});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  bool wants(int id) const { return nodes_[id].requires_grad; }

  Tensor& gbuf(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
    return n.grad;
  }

  void check_same(Var a, Var b, const char* op) const {
    if (!value(a).same_shape(value(b)))
      throw Error(std::string(op) + ": shape mismatch " + shape_str(shape(a)) +
                  " vs " + shape_str(shape(b)));
  }

  template <typename F>
  Var unary_carry(Var a, Tensor out, F&& fn) {
    bool rg = requires_grad(a);
    Var o = push(std::move(out), rg, nullptr);
    if (rg) {
      int ai = a.id, oi = o.id;
      nodes_[oi].backward = [fn = std::forward<F>(fn), ai, oi]() { fn(ai, oi); };
    }
    return o;
  }

  template <typename F>
  Var binary_carry(Var a, Var b, Tensor out, F&& fn) {
    bool rg = requires_grad(a) || requires_grad(b);
    Var o = push(std::move(out), rg, nullptr);
    if (rg) {
      int ai = a.id, bi = b.id, oi = o.id;
      nodes_[oi].backward = [fn = std::forward<F>(fn), ai, bi, oi]() { fn(ai, bi, oi); };
    }
    return o;
  }

  static void im2col(const Tensor& x, long kh, long kw, long stride, long pad,
                     long dil, long Ho, long Wo, Tensor& col) {
    long T = x.dim(0), H = x.dim(1), W = x.dim(2), Ci = x.dim(3);
    long cols = kh * kw * Ci;
    double* cd = col.data();
    const double* xd = x.data();
    for (long t = 0; t < T; ++t)
      for (long oy = 0; oy < Ho; ++oy)
        for (long ox = 0; ox < Wo; ++ox) {
          double* row = cd + ((t * Ho + oy) * Wo + ox) * cols;
          for (long ky = 0; ky < kh; ++ky) {
            long iy = oy * stride - pad + ky * dil;
            for (long kx = 0; kx < kw; ++kx) {
              long ix = ox * stride - pad + kx * dil;
              double* dst = row + (ky * kw + kx) * Ci;
              if (iy >= 0 && iy < H && ix >= 0 && ix < W) {
                const double* src = xd + ((t * H + iy) * W + ix) * Ci;
                std::copy(src, src + Ci, dst);
              } else {
                std::fill(dst, dst + Ci, 0.0);
              }
            }
          }
        }
  }

  void col2im_add(const Tensor& dcol, long kh, long kw, long stride, long pad,
                  long dil, long Ho, long Wo, Tensor& dx) {
    long T = dx.dim(0), H = dx.dim(1), W = dx.dim(2), Ci = dx.dim(3);
    long cols = kh * kw * Ci;
    const double* cd = dcol.data();
    double* xd = dx.data();
    for (long t = 0; t < T; ++t)
      for (long oy = 0; oy < Ho; ++oy)
        for (long ox = 0; ox < Wo; ++ox) {
          const double* row = cd + ((t * Ho + oy) * Wo + ox) * cols;
          for (long ky = 0; ky < kh; ++ky) {
            long iy = oy * stride - pad + ky * dil;
            if (iy < 0 || iy >= H) continue;
            for (long kx = 0; kx < kw; ++kx) {
              long ix = ox * stride - pad + kx * dil;
              if (ix < 0 || ix >= W) continue;
              const double* src = row + (ky * kw + kx) * Ci;
              double* dst = xd + ((t * H + iy) * W + ix) * Ci;
              for (long c = 0; c < Ci; ++c) dst[c] += src[c];
            }
          }
        }
  }
};

}  // namespace avseg
