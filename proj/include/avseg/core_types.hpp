// Shared data model: task settings, samples, feature pyramids, predictions
// and the semantic-mask palette.
#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "avseg/image_io.hpp"
#include "avseg/tensor.hpp"

namespace avseg {

enum class TaskKind { S4, MS3, AVSS };

inline std::string task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::S4: return "s4";
    case TaskKind::MS3: return "ms3";
    case TaskKind::AVSS: return "avss";
  }
  return "?";
}

inline TaskKind task_kind_from(const std::string& s) {
  if (s == "s4") return TaskKind::S4;
  if (s == "ms3") return TaskKind::MS3;
  if (s == "avss") return TaskKind::AVSS;
  throw Error("unknown task setting: " + s);
}

/// Which benchmark setting the model runs under, with the mask class count K
/// and the number of 1-second clips per video.
struct TaskSetting {
  TaskKind kind = TaskKind::MS3;
  long num_classes = 1;     // K; includes the background class for AVSS
  long clips_per_video = 5; // T

  static TaskSetting s4(long t = 5) { return {TaskKind::S4, 1, t}; }
  static TaskSetting ms3(long t = 5) { return {TaskKind::MS3, 1, t}; }
  static TaskSetting avss(long categories, long t = 10) {
    return {TaskKind::AVSS, categories + 1, t};
  }

  void validate() const {
    if (num_classes < 1 || clips_per_video < 1)
      throw Error("task setting: K and T must be positive");
    bool object_level = kind == TaskKind::S4 || kind == TaskKind::MS3;
    if (object_level != (num_classes == 1))
      throw Error("task setting: K must be 1 exactly for S4/MS3 and >1 for AVSS");
  }
};

/// Integer class-id mask stack, background = 0.
struct MaskArray {
  long T = 0, H = 0, W = 0;
  std::vector<int> ids;

  MaskArray() = default;
  MaskArray(long t, long h, long w) : T(t), H(h), W(w),
                                      ids(static_cast<size_t>(t) * h * w, 0) {}
  int& at(long t, long y, long x) {
    return ids[static_cast<size_t>((t * H + y) * W + x)];
  }
  int at(long t, long y, long x) const {
    return ids[static_cast<size_t>((t * H + y) * W + x)];
  }
  long frame_size() const { return H * W; }
  bool same_shape(const MaskArray& o) const {
    return T == o.T && H == o.H && W == o.W;
  }
};

/// One dataset element: T synchronized (frame, audio) seconds plus optional
/// ground-truth masks.
struct AudibleSample {
  std::string video_id;
  Tensor frames;                  // (T,H,W,3), values in [0,1]
  std::vector<double> waveform;   // mono, spans T seconds
  long sample_rate = 16000;
  std::optional<MaskArray> gt_masks;
  std::vector<uint8_t> supervised_frames;  // length T

  long clips() const { return frames.empty() ? 0 : frames.dim(0); }
  long height() const { return frames.dim(1); }
  long width() const { return frames.dim(2); }
};

/// The four per-stage visual feature maps F1..F4 (and later V, Z).
struct FeaturePyramid {
  std::array<Tensor, 4> stages;  // stage i: (T, H/2^(i+2), W/2^(i+2), C_i)
  long base_h = 0, base_w = 0;

  void validate() const {
    for (int i = 0; i < 4; ++i) {
      const Tensor& s = stages[i];
      if (s.rank() != 4) throw Error("pyramid stage must be rank 4");
      long div = 1L << (i + 2);  // 2^(i+1) with 1-based stage numbering
      if (s.dim(1) != base_h / div || s.dim(2) != base_w / div)
        throw Error("pyramid stage " + std::to_string(i + 1) +
                    " violates the (H,W)/2^(i+1) resolution law");
      if (s.dim(0) != stages[0].dim(0))
        throw Error("pyramid stages disagree on T");
    }
  }
};

/// Per-second audio features A, one d-vector per clip.
struct AudioEmbedding {
  Tensor a;  // (T, d)

  long clips() const { return a.dim(0); }
  long dim() const { return a.dim(1); }
  void validate(long expected_t) const {
    if (a.rank() != 2) throw Error("audio embedding must be rank 2");
    if (a.dim(0) != expected_t)
      throw Error("audio embedding T=" + std::to_string(a.dim(0)) +
                  " does not match sample T=" + std::to_string(expected_t));
    if (!a.all_finite()) throw Error("audio embedding contains non-finite values");
  }
};

enum class MaskActivation { Sigmoid, SoftmaxOverK };

/// Raw or activated mask scores, (T,H,W,K).
struct MaskPrediction {
  Tensor scores;
  MaskActivation activation = MaskActivation::Sigmoid;
};

// ---------------------------------------------------------------------------
// Palette
// ---------------------------------------------------------------------------

namespace detail {

inline Rgb hsv_to_rgb(double h, double s, double v) {
  double r = 0, g = 0, b = 0;
  double i = std::floor(h * 6.0);
  double f = h * 6.0 - i;
  double p = v * (1.0 - s), q = v * (1.0 - f * s), t = v * (1.0 - (1.0 - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    case 5: r = v; g = p; b = q; break;
  }
  auto c = [](double x) { return static_cast<uint8_t>(std::lround(x * 255.0)); };
  return {c(r), c(g), c(b)};
}

}  // namespace detail

/// Bijection between class ids and mask colors. Id 0 is always black
/// (background); the remaining colors step around the hue circle by the
/// golden angle, which keeps consecutive categories far apart.
class Palette {
 public:
  struct Entry {
    int id = 0;
    std::string name;
    Rgb rgb{0, 0, 0};
  };

  static Palette generate(int num_categories, std::vector<std::string> names = {}) {
    Palette p;
    p.add(0, "background", {0, 0, 0});
    constexpr double kGoldenRatioFrac = 0.61803398874989485;
    for (int k = 1; k <= num_categories; ++k) {
      double hue = std::fmod(static_cast<double>(k) * kGoldenRatioFrac, 1.0);
      double value = 0.95;
      Rgb rgb = detail::hsv_to_rgb(hue, 0.72, value);
      while (p.color_to_id_.count(pack(rgb))) {  // nudge until injective
        value -= 0.04;
        rgb = detail::hsv_to_rgb(hue, 0.72, value);
      }
      std::string name = (k - 1) < static_cast<int>(names.size())
                             ? names[k - 1]
                             : "category" + std::to_string(k);
      p.add(k, name, rgb);
    }
    return p;
  }

  int size() const { return static_cast<int>(entries_.size()); }
  const std::vector<Entry>& entries() const { return entries_; }

  bool has_id(int id) const { return id_to_index_.count(id) > 0; }

  Rgb color_of(int id) const {
    auto it = id_to_index_.find(id);
    if (it == id_to_index_.end())
      throw Error("palette: unknown class id " + std::to_string(id));
    return entries_[it->second].rgb;
  }

  const std::string& name_of(int id) const {
    auto it = id_to_index_.find(id);
    if (it == id_to_index_.end())
      throw Error("palette: unknown class id " + std::to_string(id));
    return entries_[it->second].name;
  }

  int id_of(Rgb rgb) const {
    auto it = color_to_id_.find(pack(rgb));
    if (it == color_to_id_.end()) {
      std::ostringstream os;
      os << "palette: unknown color (" << int(rgb[0]) << "," << int(rgb[1])
         << "," << int(rgb[2]) << ")";
      throw Error(os.str());
    }
    return it->second;
  }

  /// Dense color table indexed by id, for indexed-PNG serialization.
  std::vector<Rgb> color_table() const {
    int max_id = 0;
    for (const Entry& e : entries_) max_id = std::max(max_id, e.id);
    std::vector<Rgb> table(max_id + 1, Rgb{0, 0, 0});
    for (const Entry& e : entries_) table[e.id] = e.rgb;
    return table;
  }

  std::string serialize() const {
    std::ostringstream os;
    os << "# avseg palette v1\n";
    for (const Entry& e : entries_)
      os << e.id << " " << e.name << " " << int(e.rgb[0]) << " " << int(e.rgb[1])
         << " " << int(e.rgb[2]) << "\n";
    return os.str();
  }

  static Palette parse(std::istream& in) {
    Palette p;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      int id, r, g, b;
      std::string name;
      if (!(ls >> id >> name >> r >> g >> b))
        throw Error("palette: malformed line: " + line);
      p.add(id, name, {static_cast<uint8_t>(r), static_cast<uint8_t>(g),
                       static_cast<uint8_t>(b)});
    }
    if (!p.has_id(0) || p.color_of(0) != Rgb{0, 0, 0})
      throw Error("palette: id 0 must map to black");
    return p;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write palette: " + path);
    out << serialize();
  }

  static Palette load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read palette: " + path);
    return parse(in);
  }

  bool operator==(const Palette& o) const {
    if (entries_.size() != o.entries_.size()) return false;
    for (size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].id != o.entries_[i].id || entries_[i].rgb != o.entries_[i].rgb)
        return false;
    return true;
  }

 private:
  static uint32_t pack(Rgb c) {
    return (static_cast<uint32_t>(c[0]) << 16) | (static_cast<uint32_t>(c[1]) << 8) |
           c[2];
  }

  void add(int id, std::string name, Rgb rgb) {
    if (id_to_index_.count(id))
      throw Error("palette: duplicate id " + std::to_string(id));
    if (color_to_id_.count(pack(rgb)))
      throw Error("palette: color collision at id " + std::to_string(id));
    id_to_index_[id] = entries_.size();
    color_to_id_[pack(rgb)] = id;
    entries_.push_back({id, std::move(name), rgb});
  }

  std::vector<Entry> entries_;
  std::map<int, size_t> id_to_index_;
  std::map<uint32_t, int> color_to_id_;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Checks every structural invariant of a sample under a setting and returns
/// it unchanged. `training` additionally enforces the S4 first-frame-only
/// supervision rule.
inline const AudibleSample& validate_sample(const AudibleSample& sample,
                                            const TaskSetting& setting,
                                            bool training = false) {
  setting.validate();
  if (sample.frames.rank() != 4 || sample.frames.dim(3) != 3)
    throw Error("sample '" + sample.video_id + "': frames must be (T,H,W,3)");
  long T = sample.clips();
  if (T != setting.clips_per_video)
    throw Error("sample '" + sample.video_id + "': has T=" + std::to_string(T) +
                " frames, setting expects T=" + std::to_string(setting.clips_per_video));
  for (long i = 0; i < sample.frames.size(); ++i) {
    double v = sample.frames[i];
    if (!(v >= 0.0 && v <= 1.0))
      throw Error("sample '" + sample.video_id + "': frame values must lie in [0,1]");
  }
  for (double v : sample.waveform)
    if (!std::isfinite(v))
      throw Error("sample '" + sample.video_id + "': waveform has non-finite values");
  if (static_cast<long>(sample.supervised_frames.size()) != T)
    throw Error("sample '" + sample.video_id + "': supervised_frames length != T");
  if (sample.gt_masks) {
    const MaskArray& gt = *sample.gt_masks;
    if (gt.T != T || gt.H != sample.height() || gt.W != sample.width())
      throw Error("sample '" + sample.video_id + "': gt mask shape (" +
                  std::to_string(gt.T) + "," + std::to_string(gt.H) + "," +
                  std::to_string(gt.W) + ") does not match frames");
    // Binary settings store {0,1}; AVSS stores class ids below K.
    int max_id = setting.num_classes == 1 ? 1 : static_cast<int>(setting.num_classes) - 1;
    for (int id : gt.ids)
      if (id < 0 || id > max_id)
        throw Error("sample '" + sample.video_id + "': gt class id " +
                    std::to_string(id) + " out of range for K=" +
                    std::to_string(setting.num_classes));
  }
  if (training && setting.kind == TaskKind::S4) {
    for (long t = 0; t < T; ++t) {
      bool want = (t == 0);
      if (static_cast<bool>(sample.supervised_frames[t]) != want)
        throw Error("sample '" + sample.video_id +
                    "': S4 training supervises exactly the first frame");
    }
  }
  return sample;
}

/// Pixel-exact colorization of a class-id mask stack.
inline std::vector<Image> encode_semantic_mask(const MaskArray& mask,
                                               const Palette& palette) {
  std::vector<Image> out;
  out.reserve(mask.T);
  for (long t = 0; t < mask.T; ++t) {
    Image img(mask.W, mask.H, 3);
    for (long y = 0; y < mask.H; ++y)
      for (long x = 0; x < mask.W; ++x) {
        Rgb c = palette.color_of(mask.at(t, y, x));
        img.at(y, x, 0) = c[0];
        img.at(y, x, 1) = c[1];
        img.at(y, x, 2) = c[2];
      }
    out.push_back(std::move(img));
  }
  return out;
}

/// Inverse of encode_semantic_mask; every pixel color must be in the palette.
inline MaskArray decode_semantic_mask(const std::vector<Image>& images,
                                      const Palette& palette) {
  if (images.empty()) throw Error("decode_semantic_mask: no images");
  long H = images[0].height, W = images[0].width;
  MaskArray mask(static_cast<long>(images.size()), H, W);
  for (size_t t = 0; t < images.size(); ++t) {
    const Image& img = images[t];
    if (img.height != H || img.width != W || img.channels != 3)
      throw Error("decode_semantic_mask: inconsistent image shapes");
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x)
        mask.at(static_cast<long>(t), y, x) =
            palette.id_of({img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)});
  }
  return mask;
}

/// Range/normalization checks on activated mask probabilities.
inline void validate_activated(const MaskPrediction& pred, double tol = 1e-5) {
  const Tensor& p = pred.scores;
  if (p.rank() != 4) throw Error("mask prediction must be rank 4");
  long K = p.dim(3);
  if (pred.activation == MaskActivation::Sigmoid) {
    for (long i = 0; i < p.size(); ++i)
      if (!(p[i] >= 0.0 && p[i] <= 1.0))
        throw Error("sigmoid-activated values must lie in [0,1]");
  } else {
    long pixels = p.size() / K;
    for (long px = 0; px < pixels; ++px) {
      double s = 0.0;
      for (long k = 0; k < K; ++k) s += p[px * K + k];
      if (std::abs(s - 1.0) > tol)
        throw Error("softmax-activated values must sum to 1 over K");
    }
  }
}

}  // namespace avseg
