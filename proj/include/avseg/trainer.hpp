// Training engine: Adam with gradient accumulation, per-epoch validation,
// best/last checkpointing, plus the analysis passes (mask prediction,
// attention heatmap export, audio-embedding clustering).
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "avseg/checkpoint.hpp"
#include "avseg/dataset.hpp"
#include "avseg/metrics.hpp"
#include "avseg/model.hpp"

namespace avseg {

struct TrainConfig {
  ModelConfig model;
  LossConfig loss;
  double learning_rate = 1e-4;
  long batch_size = 4;  // gradient-accumulation window
  long epochs = 0;      // 0 picks the per-setting default
  bool cosine_decay = false;
  bool hflip = false;
  unsigned long long seed = 1;

  long resolved_epochs() const {
    if (epochs > 0) return epochs;
    switch (model.setting.kind) {
      case TaskKind::S4: return 15;
      case TaskKind::MS3: return 30;
      case TaskKind::AVSS: return 60;
    }
    throw Error("unknown task kind");
  }

  void validate() const {
    model.validate();
    loss.validate();
    if (learning_rate <= 0.0) throw Error("train config: learning rate <= 0");
    if (batch_size < 1) throw Error("train config: batch size < 1");
    if (epochs < 0) throw Error("train config: negative epoch count");
  }
};

/// Adam with per-parameter moment buffers and shared step counter.
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamDict& params, const std::map<std::string, Tensor>& grads,
            double lr) {
    ++t_;
    double c1 = 1.0 - std::pow(beta1_, double(t_));
    double c2 = 1.0 - std::pow(beta2_, double(t_));
    for (const auto& [name, g] : grads) {
      Tensor& p = params.at(name);
      if (!(p.shape() == g.shape()))
        throw Error("adam: gradient shape mismatch for " + name);
      Tensor& m = buffer(m_, name, p);
      Tensor& v = buffer(v_, name, p);
      for (long i = 0; i < p.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

  void reset() {
    m_.clear();
    v_.clear();
    t_ = 0;
  }

 private:
  static Tensor& buffer(std::map<std::string, Tensor>& store,
                        const std::string& name, const Tensor& like) {
    auto it = store.find(name);
    if (it == store.end())
      it = store.emplace(name, Tensor(like.shape())).first;
    return it->second;
  }

  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

namespace train_detail {

inline Tensor hflip_frames(const Tensor& frames) {
  long T = frames.dim(0), H = frames.dim(1), W = frames.dim(2);
  Tensor out(frames.shape());
  for (long t = 0; t < T; ++t)
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x)
        for (long c = 0; c < 3; ++c)
          out.at(t, y, x, c) = frames.at(t, y, W - 1 - x, c);
  return out;
}

inline MaskArray hflip_mask(const MaskArray& mask) {
  MaskArray out(mask.T, mask.H, mask.W);
  for (long t = 0; t < mask.T; ++t)
    for (long y = 0; y < mask.H; ++y)
      for (long x = 0; x < mask.W; ++x)
        out.at(t, y, x) = mask.at(t, y, mask.W - 1 - x);
  return out;
}

inline void check_training_set(const std::vector<AudibleSample>& samples,
                               const TaskSetting& setting) {
  if (samples.empty()) throw Error("train: empty dataset");
  for (const AudibleSample& s : samples) {
    if (s.clips() != setting.clips_per_video)
      throw Error("train: sample '" + s.video_id + "' has " +
                  std::to_string(s.clips()) + " clips but the setting wants " +
                  std::to_string(setting.clips_per_video));
    if (!s.gt_masks)
      throw Error("train: sample '" + s.video_id + "' has no ground truth");
  }
}

}  // namespace train_detail

struct EpochStats {
  long epoch = 0;
  double train_loss = 0.0;
  double val_miou = 0.0;
  double val_f = 0.0;
  double lr = 0.0;
};

struct TrainOutput {
  Checkpoint last;
  Checkpoint best;  // highest validation mIoU
  std::vector<EpochStats> stats;
};

/// Hard mask prediction for one sample.
inline ActivationResult predict_sample(const AvsModel& model,
                                       const AudibleSample& sample) {
  Graph g;
  ParamDict& params = const_cast<ParamDict&>(model.params);
  BoundParams bp(g, params);
  Var frames = g.input(sample.frames);
  Var lm = g.input(model.logmel(sample.waveform));
  ForwardOut out = model.forward(g, bp, frames, lm);
  return activate(g.value(out.scores), model.cfg.setting);
}

/// Metrics over a labeled sample set; videos are processed in id order so the
/// report does not depend on the incoming ordering.
inline MetricReport evaluate(const AvsModel& model,
                             const std::vector<AudibleSample>& samples) {
  if (samples.empty()) throw Error("evaluate: empty dataset");
  std::vector<size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return samples[a].video_id < samples[b].video_id;
  });
  std::vector<MaskArray> preds, gts;
  for (size_t i : order) {
    const AudibleSample& s = samples[i];
    if (s.clips() != model.cfg.setting.clips_per_video)
      throw Error("evaluate: sample '" + s.video_id +
                  "' does not match the checkpoint setting");
    if (!s.gt_masks)
      throw Error("evaluate: sample '" + s.video_id + "' has no ground truth");
    preds.push_back(predict_sample(model, s).hard);
    gts.push_back(*s.gt_masks);
  }
  MetricReport r;
  r.miou = miou(preds, gts, model.cfg.setting.num_classes);
  r.f_score = f_score(preds, gts, model.cfg.setting.num_classes);
  r.videos = static_cast<long>(preds.size());
  return r;
}

/// Full training run. `init_from` (e.g. a pretraining checkpoint's params)
/// seeds every shared parameter before the first step.
inline TrainOutput train(const TrainConfig& cfg,
                         const std::vector<AudibleSample>& train_set,
                         const std::vector<AudibleSample>& valid_set,
                         std::ostream* log = nullptr,
                         const ParamDict* init_from = nullptr) {
  cfg.validate();
  const TaskSetting& setting = cfg.model.setting;
  train_detail::check_training_set(train_set, setting);
  train_detail::check_training_set(valid_set, setting);

  AvsModel model = AvsModel::init(cfg.model, cfg.seed);
  if (init_from) transfer_init(model.params, *init_from);
  Adam opt;
  Rng rng(cfg.seed ^ 0x517cc1b727220a95ULL);

  std::vector<Tensor> logmels;
  logmels.reserve(train_set.size());
  for (const AudibleSample& s : train_set)
    logmels.push_back(model.logmel(s.waveform));

  long E = cfg.resolved_epochs();
  TrainOutput out;
  double best_miou = -1.0;
  std::map<std::string, Tensor> acc;
  auto flush = [&](long in_batch, double lr) {
    if (in_batch == 0) return;
    for (auto& [name, g] : acc)
      for (long i = 0; i < g.size(); ++i) g[i] /= double(in_batch);
    opt.step(model.params, acc, lr);
    acc.clear();
  };

  for (long epoch = 1; epoch <= E; ++epoch) {
    double lr = cfg.cosine_decay
                    ? cfg.learning_rate * 0.5 *
                          (1.0 + std::cos(M_PI * double(epoch - 1) / double(E)))
                    : cfg.learning_rate;
    std::vector<size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    double epoch_loss = 0.0;
    long in_batch = 0;
    for (size_t idx : order) {
      const AudibleSample& s = train_set[idx];
      bool flip = cfg.hflip && rng.uniform_int(0, 1) == 1;
      Tensor frames = flip ? train_detail::hflip_frames(s.frames) : s.frames;
      MaskArray gt = flip ? train_detail::hflip_mask(*s.gt_masks) : *s.gt_masks;

      Graph g;
      BoundParams bp(g, model.params);
      ForwardOut fwd =
          model.forward(g, bp, g.input(std::move(frames)), g.input(logmels[idx]));
      TotalLossInputs inputs;
      inputs.scores = fwd.scores;
      inputs.gt = &gt;
      inputs.supervised = s.supervised_frames;
      inputs.stages = fwd.stages;
      inputs.audio = fwd.audio_embed;
      Var loss = total_loss(g, bp, "avm", inputs, setting, cfg.loss);
      double lv = g.value(loss)[0];
      if (!std::isfinite(lv))
        throw Error("train: loss diverged at epoch " + std::to_string(epoch));
      epoch_loss += lv;
      g.backward(loss);
      for (const std::string& name : model.params.names()) {
        if (!bp.used(name) || !bp.trainable(name)) continue;
        Tensor grad = bp.grad(name);
        auto it = acc.find(name);
        if (it == acc.end()) {
          acc.emplace(name, std::move(grad));
        } else {
          Tensor& a = it->second;
          for (long i = 0; i < a.size(); ++i) a[i] += grad[i];
        }
      }
      if (++in_batch == cfg.batch_size) {
        flush(in_batch, lr);
        in_batch = 0;
      }
    }
    flush(in_batch, lr);

    MetricReport val = evaluate(model, valid_set);
    EpochStats st;
    st.epoch = epoch;
    st.train_loss = epoch_loss / double(train_set.size());
    st.val_miou = val.miou;
    st.val_f = val.f_score;
    st.lr = lr;
    out.stats.push_back(st);
    if (log) {
      (*log) << "epoch " << epoch << " train_loss " << std::setprecision(6)
             << st.train_loss << " val_miou " << st.val_miou << " val_f "
             << st.val_f << " lr " << st.lr << "\n";
      log->flush();
    }
    if (val.miou > best_miou) {
      best_miou = val.miou;
      out.best.model = cfg.model;
      out.best.epoch = epoch;
      out.best.params = model.params;
    }
  }

  out.last.model = cfg.model;
  out.last.epoch = E;
  out.last.params = model.params;
  for (const EpochStats& st : out.stats) {
    std::string base = "ep" + std::to_string(st.epoch) + ".";
    out.last.history.emplace_back(base + "train_loss", st.train_loss);
    out.last.history.emplace_back(base + "val_miou", st.val_miou);
    out.last.history.emplace_back(base + "val_f", st.val_f);
  }
  out.best.history = out.last.history;
  return out;
}

// ---------------------------------------------------------------------------
// Attention heatmaps
// ---------------------------------------------------------------------------

/// Writes one grayscale heatmap per second for the given fused stage: the
/// frame's own-time attention column, min-max normalized and upsampled to the
/// frame size. Returns the written paths.
inline std::vector<std::string> export_heatmaps(const AvsModel& model,
                                                const AudibleSample& sample,
                                                int stage,
                                                const std::string& out_dir) {
  if (model.cfg.fusion != FusionMode::Tpavi || !model.cfg.fused_stage(stage))
    throw Error("heatmaps: stage " + std::to_string(stage) +
                " has no attention (fusion absent)");
  Graph g;
  ParamDict& params = const_cast<ParamDict&>(model.params);
  BoundParams bp(g, params);
  ForwardOut out = model.forward(g, bp, g.input(sample.frames),
                                 g.input(model.logmel(sample.waveform)));
  long T = sample.clips(), H = sample.height(), W = sample.width();
  long h = H >> (stage + 1), w = W >> (stage + 1);
  Tensor heat = attention_heat(g.value(out.alpha[stage - 1]), T, h, w);

  std::vector<std::string> paths;
  for (long t = 0; t < T; ++t) {
    Tensor own({1, h, w, 1});
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) own.at(0, y, x, 0) = heat.at(t, y, x, t);
    double lo = own[0], hi = own[0];
    for (long i = 0; i < own.size(); ++i) {
      lo = std::min(lo, own[i]);
      hi = std::max(hi, own[i]);
    }
    for (long i = 0; i < own.size(); ++i)
      own[i] = hi > lo ? (own[i] - lo) / (hi - lo) : 0.0;

    Graph up;
    Tensor big = up.value(up.upsample_bilinear(up.input(std::move(own)), H, W));
    Image img(W, H, 1);
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x)
        img.at(y, x, 0) =
            static_cast<uint8_t>(std::lround(big.at(0, y, x, 0) * 255.0));
    std::string path = out_dir + "/heat_stage" + std::to_string(stage) + "_t" +
                       std::to_string(t) + ".png";
    write_png(path, img);
    paths.push_back(path);
  }
  return paths;
}

// ---------------------------------------------------------------------------
// Audio-embedding clustering
// ---------------------------------------------------------------------------

struct ClusterResult {
  std::vector<std::string> clip_ids;  // "<video_id>#<second>"
  Tensor coords;                      // (N,2) principal-component projection
  std::vector<long> labels;           // (N) cluster assignments
};

/// PCA to two components followed by seeded Lloyd K-means on the projection.
inline ClusterResult cluster_audio_embeddings(
    const AvsModel& model, const std::vector<AudibleSample>& samples, long K,
    unsigned long long seed) {
  if (K < 1) throw Error("cluster: K must be positive");
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;
  ParamDict& params = const_cast<ParamDict&>(model.params);
  for (const AudibleSample& s : samples) {
    Graph g;
    BoundParams bp(g, params);
    Var a = encode_audio(g, bp, "audio", g.input(model.logmel(s.waveform)),
                         model.cfg.audio);
    Tensor emb = g.value(a);
    for (long t = 0; t < emb.dim(0); ++t) {
      ids.push_back(s.video_id + "#" + std::to_string(t));
      std::vector<double> row(emb.dim(1));
      for (long j = 0; j < emb.dim(1); ++j) row[j] = emb.at(t, j);
      rows.push_back(std::move(row));
    }
  }
  long N = static_cast<long>(rows.size());
  if (N < K)
    throw Error("cluster: " + std::to_string(N) + " clips is fewer than K=" +
                std::to_string(K));
  long d = static_cast<long>(rows[0].size());

  Eigen::MatrixXd X(N, d);
  for (long i = 0; i < N; ++i)
    for (long j = 0; j < d; ++j) X(i, j) = rows[i][j];
  Eigen::RowVectorXd mean = X.colwise().mean();
  X.rowwise() -= mean;
  Eigen::MatrixXd cov = (X.transpose() * X) / double(std::max<long>(N - 1, 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  // Eigenvalues ascend: the last two columns span the top-2 subspace.
  Eigen::MatrixXd basis(d, 2);
  basis.col(0) = eig.eigenvectors().col(d - 1);
  basis.col(1) = d > 1 ? eig.eigenvectors().col(d - 2) : eig.eigenvectors().col(0);
  Eigen::MatrixXd proj = X * basis;  // (N,2)

  ClusterResult res;
  res.clip_ids = std::move(ids);
  res.coords = Tensor({N, 2});
  for (long i = 0; i < N; ++i) {
    res.coords.at(i, 0) = proj(i, 0);
    res.coords.at(i, 1) = proj(i, 1);
  }

  // Seeded K-means: initial centroids are K distinct points.
  Rng rng(seed);
  std::vector<size_t> order(static_cast<size_t>(N));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  Eigen::MatrixXd cent(K, 2);
  for (long k = 0; k < K; ++k) cent.row(k) = proj.row(static_cast<long>(order[k]));

  res.labels.assign(static_cast<size_t>(N), 0);
  for (int iter = 0; iter < 100; ++iter) {
    bool moved = false;
    for (long i = 0; i < N; ++i) {
      long arg = 0;
      double best = (proj.row(i) - cent.row(0)).squaredNorm();
      for (long k = 1; k < K; ++k) {
        double dist = (proj.row(i) - cent.row(k)).squaredNorm();
        if (dist < best) {
          best = dist;
          arg = k;
        }
      }
      if (res.labels[i] != arg) {
        res.labels[i] = arg;
        moved = true;
      }
    }
    if (!moved && iter > 0) break;
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(K, 2);
    Eigen::VectorXd count = Eigen::VectorXd::Zero(K);
    for (long i = 0; i < N; ++i) {
      sum.row(res.labels[i]) += proj.row(i);
      count(res.labels[i]) += 1.0;
    }
    for (long k = 0; k < K; ++k)
      if (count(k) > 0.0) cent.row(k) = sum.row(k) / count(k);
  }
  return res;
}

}  // namespace avseg
