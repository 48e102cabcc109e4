// Synthetic sounding-shapes corpus: static scenes of colored shapes where a
// per-second schedule decides which shapes emit their tone. Masks cover
// exactly the shapes that sound in that second.
#pragma once

#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "avseg/dataset.hpp"

namespace avseg {

struct SynthConfig {
  Subset subset = Subset::MultiSource;
  long image_size = 64;
  int num_categories = 6;
  std::vector<double> tones_hz = {300, 600, 900, 1200, 1500, 1800};
  int shapes_min = 1;
  int shapes_max = 3;
  long train_videos = 200;
  long valid_videos = 40;
  long test_videos = 40;
  double tone_amplitude = 0.25;
  double noise_level = 0.003;
  long sample_rate = 16000;
  unsigned long long seed = 1;

  void validate() const {
    if (image_size < 32 || image_size % 32 != 0)
      throw Error("synth config: image size must be a positive multiple of 32");
    if (num_categories < 1 || num_categories > 64)
      throw Error("synth config: need 1..64 categories");
    if (static_cast<int>(tones_hz.size()) != num_categories)
      throw Error("synth config: one tone per category required");
    std::set<double> uniq(tones_hz.begin(), tones_hz.end());
    if (static_cast<int>(uniq.size()) != num_categories)
      throw Error("synth config: tones must be distinct");
    for (double f : tones_hz)
      if (!(f > 0.0 && f < double(sample_rate) / 2.0))
        throw Error("synth config: tone outside (0, Nyquist)");
    if (shapes_min < 1 || shapes_max < shapes_min ||
        shapes_max > num_categories)
      throw Error("synth config: bad shapes-per-scene range");
    if (subset == Subset::MultiSource && shapes_max < 2)
      throw Error("synth config: multi-source scenes need room for two shapes");
    if (train_videos < 1 || valid_videos < 1 || test_videos < 1)
      throw Error("synth config: every split needs at least one video");
    if (tone_amplitude <= 0.0 || tone_amplitude * shapes_max > 1.0)
      throw Error("synth config: tone amplitudes must stay within [-1,1]");
    if (noise_level < 0.0) throw Error("synth config: negative noise level");
  }

  long clips() const { return subset_clips(subset); }
  /// Mask palette: one entry for the object-level subsets, one per category
  /// for the semantic one.
  Palette palette() const {
    return subset == Subset::Semantic
               ? Palette::generate(num_categories)
               : Palette::generate(1, {"sounding"});
  }
};

namespace synth_detail {

struct Shape {
  int category = 1;  // 1-based semantic id; fixes color and tone
  int kind = 0;      // 0 circle, 1 square, 2 triangle
  double cy = 0, cx = 0, r = 0;

  bool covers(double y, double x) const {
    double dy = y - cy, dx = x - cx;
    switch (kind) {
      case 0: return dy * dy + dx * dx <= r * r;
      case 1: return std::max(std::abs(dy), std::abs(dx)) <= r * 0.85;
      default:  // upward triangle: apex at cy - r, base at cy + r
        return dy >= -r && dy <= r && std::abs(dx) <= (dy + r) * 0.5;
    }
  }
};

struct Scene {
  std::vector<Shape> shapes;
  // schedule[t] = indices into `shapes` that sound during second t
  std::vector<std::vector<int>> schedule;
};

inline std::vector<Shape> sample_shapes(Rng& rng, const SynthConfig& cfg) {
  // Multi-source scenes hold at least two shapes, otherwise swapped schedules
  // would too often coincide on a lone on/off pattern.
  long lo = cfg.subset == Subset::MultiSource
                ? std::max<long>(cfg.shapes_min, 2)
                : cfg.shapes_min;
  long n = rng.uniform_int(lo, cfg.shapes_max);
  std::vector<int> cats(cfg.num_categories);
  std::iota(cats.begin(), cats.end(), 1);
  rng.shuffle(cats);
  std::vector<Shape> shapes;
  double size = double(cfg.image_size);
  for (long i = 0; i < n; ++i) {
    Shape s;
    s.category = cats[i];
    s.kind = static_cast<int>(rng.uniform_int(0, 2));
    for (int attempt = 0; attempt < 50; ++attempt) {
      s.r = rng.uniform(size / 8.0, size / 5.0);
      s.cy = rng.uniform(s.r + 1.0, size - s.r - 1.0);
      s.cx = rng.uniform(s.r + 1.0, size - s.r - 1.0);
      bool clear = true;
      for (const Shape& o : shapes) {
        double dy = s.cy - o.cy, dx = s.cx - o.cx;
        if (std::sqrt(dy * dy + dx * dx) < s.r + o.r + 2.0) clear = false;
      }
      if (clear) break;
    }
    shapes.push_back(s);
  }
  return shapes;
}

inline std::vector<std::vector<int>> sample_schedule(Rng& rng,
                                                     const SynthConfig& cfg,
                                                     long num_shapes) {
  long T = cfg.clips();
  std::vector<std::vector<int>> schedule(T);
  if (cfg.subset == Subset::SingleSource) {
    // One source sounding for the whole clip; extra shapes stay silent.
    int who = static_cast<int>(rng.uniform_int(0, num_shapes - 1));
    for (long t = 0; t < T; ++t) schedule[t] = {who};
    return schedule;
  }
  for (long t = 0; t < T; ++t)
    for (long i = 0; i < num_shapes; ++i)
      if (rng.uniform_int(0, 1)) schedule[t].push_back(static_cast<int>(i));
  return schedule;
}

inline Tensor render_frames(Rng& rng, const SynthConfig& cfg,
                            const std::vector<Shape>& shapes) {
  long S = cfg.image_size, T = cfg.clips();
  // Colors come from the semantic palette even for binary subsets, so that a
  // category always looks the same on screen.
  Palette colors = Palette::generate(cfg.num_categories);
  Tensor frame({S, S, 3});
  for (long y = 0; y < S; ++y)
    for (long x = 0; x < S; ++x) {
      double base = 0.78 + 0.1 * double(y) / double(S);
      for (long c = 0; c < 3; ++c)
        frame.at(y, x, c) = base + rng.uniform(-0.04, 0.04);
      for (const Shape& s : shapes)
        if (s.covers(double(y) + 0.5, double(x) + 0.5)) {
          Rgb rgb = colors.color_of(s.category);
          for (long c = 0; c < 3; ++c)
            frame.at(y, x, c) = double(rgb[c]) / 255.0;
        }
    }
  // A deterministic per-second lighting tint. The scene itself never moves,
  // but the global hue cycling gives every second a distinct visual stamp
  // that carries no information about the sounding schedule.
  Tensor frames({T, S, S, 3});
  for (long t = 0; t < T; ++t) {
    Rgb tint = detail::hsv_to_rgb(double(t) / double(T), 0.35, 1.0);
    for (long i = 0; i < S * S * 3; ++i)
      frames[t * S * S * 3 + i] = frame[i] * (double(tint[i % 3]) / 255.0);
  }
  return frames;
}

inline MaskArray render_masks(const SynthConfig& cfg, const Scene& scene) {
  long S = cfg.image_size, T = cfg.clips();
  MaskArray mask(T, S, S);
  for (long t = 0; t < T; ++t)
    for (int idx : scene.schedule[t]) {
      const Shape& s = scene.shapes[idx];
      int id = cfg.subset == Subset::Semantic ? s.category : 1;
      for (long y = 0; y < S; ++y)
        for (long x = 0; x < S; ++x)
          if (s.covers(double(y) + 0.5, double(x) + 0.5)) mask.at(t, y, x) = id;
    }
  return mask;
}

inline std::vector<double> render_audio(Rng& rng, const SynthConfig& cfg,
                                        const Scene& scene) {
  long sr = cfg.sample_rate, T = cfg.clips();
  std::vector<double> wave(static_cast<size_t>(T * sr), 0.0);
  for (long t = 0; t < T; ++t)
    for (long i = 0; i < sr; ++i) {
      long g = t * sr + i;
      double v = rng.normal(0.0, cfg.noise_level);
      for (int idx : scene.schedule[t]) {
        double f = cfg.tones_hz[scene.shapes[idx].category - 1];
        v += cfg.tone_amplitude * std::sin(2.0 * M_PI * f * double(g) / sr);
      }
      wave[g] = std::min(1.0, std::max(-1.0, v));
    }
  return wave;
}

inline void write_video(const std::string& dir, const SynthConfig& cfg,
                        const Tensor& frames, const MaskArray& masks,
                        const std::vector<double>& wave,
                        const Palette& palette) {
  namespace fs = std::filesystem;
  fs::create_directories(dir + "/frames");
  fs::create_directories(dir + "/masks");
  std::vector<Rgb> table = palette.color_table();
  for (long t = 0; t < cfg.clips(); ++t) {
    write_png(dir + "/frames/" + std::to_string(t) + ".png",
              frame_to_image(frames, t));
    std::vector<uint8_t> idx(static_cast<size_t>(masks.frame_size()));
    for (long i = 0; i < masks.frame_size(); ++i)
      idx[i] = static_cast<uint8_t>(masks.ids[t * masks.frame_size() + i]);
    write_png_indexed(dir + "/masks/" + std::to_string(t) + ".png",
                      masks.W, masks.H, idx, table);
  }
  write_wav(dir + "/audio.wav", wave, cfg.sample_rate);
}

inline Rng video_rng(const SynthConfig& cfg, long index) {
  unsigned long long s = cfg.seed * 6364136223846793005ULL +
                         static_cast<unsigned long long>(index + 1) *
                             1442695040888963407ULL;
  return Rng(s);
}

}  // namespace synth_detail

struct SynthResult {
  DatasetManifest train, valid, test;
};

/// Materializes the corpus under `root` and returns per-split manifests.
/// Fully deterministic in cfg.seed. The test split of the multi-source
/// subset is built as audio-swap pairs: consecutive videos share a scene
/// (byte-identical frames) but follow different schedules.
inline SynthResult generate_synthetic(const std::string& root,
                                      const SynthConfig& cfg) {
  cfg.validate();
  namespace fs = std::filesystem;
  using synth_detail::Scene;
  std::string base = root + "/" + subset_dir(cfg.subset);
  fs::create_directories(base);
  Palette palette = cfg.palette();
  palette.save(base + "/palette.txt");

  struct SplitPlan {
    Split split;
    long count;
  };
  SplitPlan plan[3] = {{Split::Train, cfg.train_videos},
                       {Split::Valid, cfg.valid_videos},
                       {Split::Test, cfg.test_videos}};
  std::vector<ManifestEntry> entries;
  long global_index = 0;
  for (const SplitPlan& sp : plan) {
    std::string sname = split_name(sp.split);
    bool swap_split =
        cfg.subset == Subset::MultiSource && sp.split == Split::Test;
    for (long i = 0; i < sp.count; ++i, ++global_index) {
      Rng rng = synth_detail::video_rng(cfg, global_index);
      Scene scene;
      Tensor frames;
      bool partner_of_previous = swap_split && i % 2 == 1;
      if (partner_of_previous) {
        // Replay the previous video's rng stream to reproduce its scene and
        // frames byte-for-byte, then draw a schedule that differs.
        Rng prev = synth_detail::video_rng(cfg, global_index - 1);
        scene.shapes = synth_detail::sample_shapes(prev, cfg);
        auto prev_schedule =
            synth_detail::sample_schedule(prev, cfg, scene.shapes.size());
        frames = synth_detail::render_frames(prev, cfg, scene.shapes);
        scene.schedule =
            synth_detail::sample_schedule(rng, cfg, scene.shapes.size());
        for (int tries = 0;
             scene.schedule == prev_schedule && tries < 64; ++tries)
          scene.schedule =
              synth_detail::sample_schedule(rng, cfg, scene.shapes.size());
      } else {
        scene.shapes = synth_detail::sample_shapes(rng, cfg);
        scene.schedule =
            synth_detail::sample_schedule(rng, cfg, scene.shapes.size());
        frames = synth_detail::render_frames(rng, cfg, scene.shapes);
      }

      ManifestEntry e;
      e.video_id = sname + "_" + std::to_string(i);
      e.split = sp.split;
      e.clips = cfg.clips();
      for (const synth_detail::Shape& s : scene.shapes)
        e.categories.push_back(s.category);
      std::sort(e.categories.begin(), e.categories.end());
      if (swap_split) {
        long mate = i % 2 == 0 ? i + 1 : i - 1;
        if (mate < sp.count)
          e.swap_partner = sname + "_" + std::to_string(mate);
      }

      MaskArray masks = synth_detail::render_masks(cfg, scene);
      std::vector<double> wave = synth_detail::render_audio(rng, cfg, scene);
      std::string dir = base + "/" + sname + "/" + e.video_id;
      synth_detail::write_video(dir, cfg, frames, masks, wave, palette);
      entries.push_back(std::move(e));
    }
  }
  write_manifest(root, cfg.subset, entries);

  SynthResult res;
  res.train = load_manifest(root, cfg.subset, Split::Train);
  res.valid = load_manifest(root, cfg.subset, Split::Valid);
  res.test = load_manifest(root, cfg.subset, Split::Test);
  return res;
}

}  // namespace avseg
