// Segmentation quality metrics: mean IoU and the weighted F-score.
#pragma once

#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "avseg/core_types.hpp"

namespace avseg {
namespace detail {

struct BinaryCounts {
  long inter = 0;
  long pred = 0;
  long gt = 0;
  long union_() const { return pred + gt - inter; }
};

inline BinaryCounts count_frame(const MaskArray& pred, const MaskArray& gt,
                                long t, int cls) {
  BinaryCounts c;
  long hw = pred.H * pred.W;
  for (long px = 0; px < hw; ++px) {
    bool p = pred.ids[t * hw + px] == cls;
    bool g = gt.ids[t * hw + px] == cls;
    c.pred += p;
    c.gt += g;
    c.inter += p && g;
  }
  return c;
}

inline double fbeta(const BinaryCounts& c, double beta2) {
  if (c.pred == 0 && c.gt == 0) return 1.0;  // nothing to find, nothing found
  if (c.inter == 0) return 0.0;
  double precision = double(c.inter) / double(c.pred);
  double recall = double(c.inter) / double(c.gt);
  double denom = beta2 * precision + recall;
  if (denom == 0.0) return 0.0;
  return (1.0 + beta2) * precision * recall / denom;
}

inline std::set<int> classes_present(const MaskArray& pred,
                                     const MaskArray& gt) {
  std::set<int> cls;
  for (int id : pred.ids)
    if (id != 0) cls.insert(id);
  for (int id : gt.ids)
    if (id != 0) cls.insert(id);
  return cls;
}

}  // namespace detail

/// Per-video mean IoU. Binary heads (K=1): per-frame foreground IoU averaged
/// over frames, with empty-union frames scoring 1. Semantic heads: per-class
/// IoU over all frame pixels for classes present in gt or prediction,
/// background excluded; a video with no foreground anywhere scores 1.
inline double video_miou(const MaskArray& pred, const MaskArray& gt, long K) {
  if (!pred.same_shape(gt)) throw Error("miou: shape mismatch");
  if (K == 1) {
    double sum = 0.0;
    for (long t = 0; t < pred.T; ++t) {
      auto c = detail::count_frame(pred, gt, t, 1);
      long u = c.union_();
      sum += u == 0 ? 1.0 : double(c.inter) / double(u);
    }
    return sum / double(pred.T);
  }
  std::set<int> cls = detail::classes_present(pred, gt);
  if (cls.empty()) return 1.0;
  double sum = 0.0;
  for (int c : cls) {
    detail::BinaryCounts total;
    for (long t = 0; t < pred.T; ++t) {
      auto fc = detail::count_frame(pred, gt, t, c);
      total.inter += fc.inter;
      total.pred += fc.pred;
      total.gt += fc.gt;
    }
    long u = total.union_();
    sum += u == 0 ? 1.0 : double(total.inter) / double(u);
  }
  return sum / double(cls.size());
}

/// Per-video F-score with beta^2 = 0.3. Same frame/class conventions as
/// video_miou; a frame (or class) that predicts nothing against a nonempty
/// target scores 0, and an empty target matched by an empty prediction
/// scores 1.
inline double video_f_score(const MaskArray& pred, const MaskArray& gt, long K,
                            double beta2 = 0.3) {
  if (!pred.same_shape(gt)) throw Error("f_score: shape mismatch");
  if (K == 1) {
    double sum = 0.0;
    for (long t = 0; t < pred.T; ++t)
      sum += detail::fbeta(detail::count_frame(pred, gt, t, 1), beta2);
    return sum / double(pred.T);
  }
  std::set<int> cls = detail::classes_present(pred, gt);
  if (cls.empty()) return 1.0;
  double sum = 0.0;
  for (int c : cls) {
    detail::BinaryCounts total;
    for (long t = 0; t < pred.T; ++t) {
      auto fc = detail::count_frame(pred, gt, t, c);
      total.inter += fc.inter;
      total.pred += fc.pred;
      total.gt += fc.gt;
    }
    sum += detail::fbeta(total, beta2);
  }
  return sum / double(cls.size());
}

/// Dataset-level metrics: video scores averaged with equal weight per video.
inline double miou(const std::vector<MaskArray>& preds,
                   const std::vector<MaskArray>& gts, long K) {
  if (preds.size() != gts.size() || preds.empty())
    throw Error("miou: need matching non-empty prediction/target lists");
  double sum = 0.0;
  for (size_t i = 0; i < preds.size(); ++i)
    sum += video_miou(preds[i], gts[i], K);
  return sum / double(preds.size());
}

inline double f_score(const std::vector<MaskArray>& preds,
                      const std::vector<MaskArray>& gts, long K,
                      double beta2 = 0.3) {
  if (preds.size() != gts.size() || preds.empty())
    throw Error("f_score: need matching non-empty prediction/target lists");
  double sum = 0.0;
  for (size_t i = 0; i < preds.size(); ++i)
    sum += video_f_score(preds[i], gts[i], K, beta2);
  return sum / double(preds.size());
}

struct MetricReport {
  double miou = 0.0;
  double f_score = 0.0;
  long videos = 0;
  std::map<std::string, double> extra;  // e.g. per-class IoU, losses

  std::string to_text() const {
    std::ostringstream os;
    os.precision(10);
    os << "miou " << miou << "\n";
    os << "f_score " << f_score << "\n";
    os << "videos " << videos << "\n";
    for (const auto& [k, v] : extra) os << k << " " << v << "\n";
    return os.str();
  }

  static MetricReport from_text(const std::string& text) {
    MetricReport r;
    std::istringstream is(text);
    std::string key;
    double value;
    while (is >> key >> value) {
      if (key == "miou")
        r.miou = value;
      else if (key == "f_score")
        r.f_score = value;
      else if (key == "videos")
        r.videos = static_cast<long>(value);
      else
        r.extra[key] = value;
    }
    return r;
  }
};

}  // namespace avseg
