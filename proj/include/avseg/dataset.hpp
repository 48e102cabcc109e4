// Corpus layout, manifest parsing, and the sample loader.
//
// Layout: <root>/<subset>/<split>/<video_id>/frames/<t>.png
//                                           /masks/<t>.png   (indexed color)
//                                           /audio.wav
// plus <root>/<subset>/manifest.txt and <root>/<subset>/palette.txt.
#pragma once

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "avseg/core_types.hpp"
#include "avseg/image_io.hpp"
#include "avseg/wav_io.hpp"

namespace avseg {

enum class Subset { SingleSource, MultiSource, Semantic };

inline std::string subset_dir(Subset s) {
  switch (s) {
    case Subset::SingleSource: return "single_source";
    case Subset::MultiSource: return "multi_source";
    case Subset::Semantic: return "semantic";
  }
  throw Error("unknown subset");
}

inline Subset subset_from(const std::string& s) {
  if (s == "single_source") return Subset::SingleSource;
  if (s == "multi_source") return Subset::MultiSource;
  if (s == "semantic") return Subset::Semantic;
  throw Error("unknown subset: " + s);
}

/// Seconds per video is fixed by the subset: 5 for the object-level settings,
/// 10 for the semantic one.
inline long subset_clips(Subset s) {
  return s == Subset::Semantic ? 10 : 5;
}

inline TaskSetting subset_setting(Subset s, long categories) {
  switch (s) {
    case Subset::SingleSource: return TaskSetting::s4(5);
    case Subset::MultiSource: return TaskSetting::ms3(5);
    case Subset::Semantic: return TaskSetting::avss(categories, 10);
  }
  throw Error("unknown subset");
}

enum class Split { Train, Valid, Test };

inline std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  throw Error("unknown split");
}

inline Split split_from(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "valid") return Split::Valid;
  if (s == "test") return Split::Test;
  throw Error("unknown split: " + s);
}

struct ManifestEntry {
  std::string video_id;
  Split split = Split::Train;
  long clips = 5;
  std::vector<int> categories;  // semantic category ids present in the scene
  std::string swap_partner;     // same-split video with identical frames
};

/// Manifest category tokens are palette-style names ("category3").
inline std::string category_name(int id) {
  return "category" + std::to_string(id);
}

inline int category_id_from(const std::string& name) {
  if (name.rfind("category", 0) != 0)
    throw Error("manifest: bad category token: " + name);
  return std::stoi(name.substr(8));
}

struct DatasetManifest {
  std::string root;
  Subset subset = Subset::MultiSource;
  Split split = Split::Train;
  std::vector<ManifestEntry> entries;

  std::string subset_path() const { return root + "/" + subset_dir(subset); }
  std::string video_dir(const ManifestEntry& e) const {
    return subset_path() + "/" + split_name(e.split) + "/" + e.video_id;
  }
};

inline void write_manifest(const std::string& root, Subset subset,
                           const std::vector<ManifestEntry>& all) {
  std::string path = root + "/" + subset_dir(subset) + "/manifest.txt";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write manifest: " + path);
  out << "# video_id split clips categories swap_partner\n";
  for (const ManifestEntry& e : all) {
    out << e.video_id << " " << split_name(e.split) << " " << e.clips << " ";
    if (e.categories.empty()) out << "-";
    for (size_t i = 0; i < e.categories.size(); ++i)
      out << (i ? "," : "") << category_name(e.categories[i]);
    out << " " << (e.swap_partner.empty() ? "-" : e.swap_partner) << "\n";
  }
}

/// Parses the subset manifest and returns the entries of one split. The whole
/// file is checked for unique video ids and the subset's clip count.
inline DatasetManifest load_manifest(const std::string& root, Subset subset,
                                     Split split) {
  std::string path = root + "/" + subset_dir(subset) + "/manifest.txt";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read manifest: " + path);
  DatasetManifest m{root, subset, split, {}};
  std::set<std::string> seen;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ManifestEntry e;
    std::string split_tok, cats, partner;
    if (!(ls >> e.video_id >> split_tok >> e.clips >> cats >> partner))
      throw Error("manifest: malformed line in " + path + ": " + line);
    e.split = split_from(split_tok);
    if (e.clips != subset_clips(subset))
      throw Error("manifest: clip count " + std::to_string(e.clips) +
                  " does not match subset in " + path);
    if (!seen.insert(e.video_id).second)
      throw Error("manifest: duplicate video id " + e.video_id + " in " + path);
    if (cats != "-") {
      std::istringstream cs(cats);
      std::string tok;
      while (std::getline(cs, tok, ','))
        e.categories.push_back(category_id_from(tok));
    }
    if (partner != "-") e.swap_partner = partner;
    if (e.split == split) m.entries.push_back(e);
  }
  return m;
}

inline Palette load_palette(const DatasetManifest& m) {
  return Palette::load(m.subset_path() + "/palette.txt");
}

/// Relative file locations inside a video directory; "{t}" expands to the
/// zero-based second index. Override to adapt to foreign layouts.
struct PathLayout {
  std::string frames = "frames/{t}.png";
  std::string masks = "masks/{t}.png";
  std::string audio = "audio.wav";

  static std::string expand(const std::string& tpl, long t) {
    std::string out = tpl;
    size_t pos = out.find("{t}");
    if (pos != std::string::npos)
      out.replace(pos, 3, std::to_string(t));
    return out;
  }
};

namespace detail {

inline Tensor stack_frames(const std::string& dir, const PathLayout& layout,
                           long T) {
  Tensor frames;
  for (long t = 0; t < T; ++t) {
    std::string path = dir + "/" + PathLayout::expand(layout.frames, t);
    PngContent png = read_png(path);
    if (png.indexed || png.image.channels != 3)
      throw Error("frame is not an RGB image: " + path);
    if (t == 0) frames = Tensor({T, png.height, png.width, 3});
    if (png.height != frames.dim(1) || png.width != frames.dim(2))
      throw Error("frame size changes mid-video: " + path);
    for (long i = 0; i < png.height * png.width * 3; ++i)
      frames[t * frames.dim(1) * frames.dim(2) * 3 + i] =
          double(png.image.pixels[i]) / 255.0;
  }
  return frames;
}

inline MaskArray stack_masks(const std::string& dir, const PathLayout& layout,
                             long T, const Palette& palette) {
  std::vector<Rgb> table = palette.color_table();
  MaskArray mask;
  for (long t = 0; t < T; ++t) {
    std::string path = dir + "/" + PathLayout::expand(layout.masks, t);
    PngContent png = read_png(path);
    if (t == 0) mask = MaskArray(T, png.height, png.width);
    if (png.height != mask.H || png.width != mask.W)
      throw Error("mask size changes mid-video: " + path);
    long hw = png.height * png.width;
    if (png.indexed) {
      size_t common = std::min(png.palette.size(), table.size());
      for (size_t i = 0; i < common; ++i)
        if (png.palette[i] != table[i])
          throw Error("palette mismatch at index " + std::to_string(i) + ": " +
                      path);
      for (long i = 0; i < hw; ++i) {
        uint8_t idx = png.indices[i];
        if (idx >= table.size())
          throw Error("corrupt mask (index out of palette): " + path);
        mask.ids[t * hw + i] = idx;
      }
    } else if (png.image.channels == 3) {
      for (long y = 0; y < png.height; ++y)
        for (long x = 0; x < png.width; ++x) {
          Rgb c{png.image.at(y, x, 0), png.image.at(y, x, 1),
                png.image.at(y, x, 2)};
          try {
            mask.at(t, y, x) = palette.id_of(c);
          } catch (const Error& e) {
            throw Error(std::string(e.what()) + " in " + path);
          }
        }
    } else {
      throw Error("corrupt mask (unsupported format): " + path);
    }
  }
  return mask;
}

}  // namespace detail

/// Loads one manifest entry into a validated AudibleSample. Ground truth is
/// attached whenever mask files are present; S4 training marks only the first
/// frame as supervised.
inline AudibleSample load_sample(const DatasetManifest& m,
                                 const ManifestEntry& e,
                                 const TaskSetting& setting,
                                 const Palette& palette,
                                 const PathLayout& layout = {}) {
  std::string dir = m.video_dir(e);
  AudibleSample sample;
  sample.video_id = e.video_id;
  sample.frames = detail::stack_frames(dir, layout, e.clips);
  WavData wav = read_wav(dir + "/" + layout.audio);
  sample.sample_rate = wav.sample_rate;
  sample.waveform = std::move(wav.samples);
  sample.gt_masks = detail::stack_masks(dir, layout, e.clips, palette);
  bool training = m.split == Split::Train;
  bool first_only = training && setting.kind == TaskKind::S4;
  sample.supervised_frames.assign(static_cast<size_t>(e.clips), 1);
  if (first_only)
    for (long t = 1; t < e.clips; ++t) sample.supervised_frames[t] = 0;
  validate_sample(sample, setting, training);
  return sample;
}

inline std::vector<AudibleSample> load_dataset(const DatasetManifest& m,
                                               const TaskSetting& setting,
                                               const PathLayout& layout = {}) {
  Palette palette = load_palette(m);
  std::vector<AudibleSample> out;
  out.reserve(m.entries.size());
  for (const ManifestEntry& e : m.entries)
    out.push_back(load_sample(m, e, setting, palette, layout));
  return out;
}

}  // namespace avseg
