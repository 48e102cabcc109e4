#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "avseg/synth.hpp"

using namespace avseg;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::map<std::string, std::string> corpus_snapshot(const std::string& root) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root))
    if (entry.is_regular_file())
      files[fs::relative(entry.path(), root).string()] =
          read_bytes(entry.path());
  return files;
}

SynthConfig tiny_config(Subset subset) {
  SynthConfig cfg;
  cfg.subset = subset;
  cfg.image_size = 32;
  cfg.num_categories = 3;
  cfg.tones_hz = {400, 800, 1600};
  cfg.shapes_min = 1;
  cfg.shapes_max = 2;
  cfg.train_videos = 2;
  cfg.valid_videos = 1;
  cfg.test_videos = 2;
  cfg.seed = 9;
  return cfg;
}

/// Goertzel amplitude estimate of frequency f over one second of samples.
double tone_amplitude_at(const std::vector<double>& wave, long start, long n,
                         double f, long sr) {
  double w = 2.0 * M_PI * f / double(sr);
  double coeff = 2.0 * std::cos(w);
  double s0 = 0.0, s1 = 0.0, s2 = 0.0;
  for (long i = 0; i < n; ++i) {
    s0 = wave[start + i] + coeff * s1 - s2;
    s2 = s1;
    s1 = s0;
  }
  double power = s1 * s1 + s2 * s2 - coeff * s1 * s2;
  return 2.0 * std::sqrt(std::max(0.0, power)) / double(n);
}

}  // namespace

TEST_CASE("synth config is validated") {
  SynthConfig cfg = tiny_config(Subset::MultiSource);
  SECTION("accepts the tiny baseline") { cfg.validate(); }
  SECTION("rejects duplicate tones") {
    cfg.tones_hz = {400, 400, 1600};
    REQUIRE_THROWS_WITH(cfg.validate(),
                        Catch::Matchers::ContainsSubstring("distinct"));
  }
  SECTION("rejects tone counts that do not match categories") {
    cfg.tones_hz = {400, 800};
    REQUIRE_THROWS_AS(cfg.validate(), Error);
  }
  SECTION("rejects non-multiple-of-32 sizes") {
    cfg.image_size = 48;
    REQUIRE_THROWS_AS(cfg.validate(), Error);
  }
  SECTION("rejects clipping amplitudes") {
    cfg.tone_amplitude = 0.6;  // 2 shapes * 0.6 > 1
    REQUIRE_THROWS_AS(cfg.validate(), Error);
  }
  SECTION("rejects tones beyond Nyquist") {
    cfg.tones_hz = {400, 800, 9000};
    REQUIRE_THROWS_AS(cfg.validate(), Error);
  }
}

TEST_CASE("same seed produces a byte-identical corpus") {
  SynthConfig cfg = tiny_config(Subset::MultiSource);
  std::string a = fresh_dir("avseg_synth_a");
  std::string b = fresh_dir("avseg_synth_b");
  generate_synthetic(a, cfg);
  generate_synthetic(b, cfg);
  auto sa = corpus_snapshot(a), sb = corpus_snapshot(b);
  REQUIRE(sa.size() == sb.size());
  REQUIRE(sa == sb);

  SECTION("a different seed changes the corpus") {
    cfg.seed = 10;
    std::string c = fresh_dir("avseg_synth_c");
    generate_synthetic(c, cfg);
    REQUIRE(corpus_snapshot(c) != sa);
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("manifest round-trips and splits stay disjoint") {
  SynthConfig cfg = tiny_config(Subset::MultiSource);
  std::string root = fresh_dir("avseg_synth_manifest");
  SynthResult res = generate_synthetic(root, cfg);
  REQUIRE(res.train.entries.size() == 2);
  REQUIRE(res.valid.entries.size() == 1);
  REQUIRE(res.test.entries.size() == 2);

  std::set<std::string> ids;
  for (const auto* m : {&res.train, &res.valid, &res.test})
    for (const ManifestEntry& e : m->entries) {
      REQUIRE(ids.insert(e.video_id).second);
      REQUIRE(e.clips == 5);
      REQUIRE_FALSE(e.categories.empty());
      for (int c : e.categories) {
        REQUIRE(c >= 1);
        REQUIRE(c <= 3);
      }
    }

  SECTION("test split forms symmetric audio-swap pairs") {
    REQUIRE(res.test.entries[0].swap_partner == res.test.entries[1].video_id);
    REQUIRE(res.test.entries[1].swap_partner == res.test.entries[0].video_id);
    REQUIRE(res.train.entries[0].swap_partner.empty());
  }
  fs::remove_all(root);
}

TEST_CASE("swap pairs share frames but not masks") {
  SynthConfig cfg = tiny_config(Subset::MultiSource);
  cfg.test_videos = 4;
  std::string root = fresh_dir("avseg_synth_swap");
  SynthResult res = generate_synthetic(root, cfg);
  for (size_t i = 0; i + 1 < res.test.entries.size(); i += 2) {
    const auto& a = res.test.entries[i];
    const auto& b = res.test.entries[i + 1];
    REQUIRE(a.swap_partner == b.video_id);
    REQUIRE(a.categories == b.categories);
    fs::path da = res.test.video_dir(a), db = res.test.video_dir(b);
    bool masks_differ = false;
    for (long t = 0; t < 5; ++t) {
      std::string fa = read_bytes(da / "frames" / (std::to_string(t) + ".png"));
      std::string fb = read_bytes(db / "frames" / (std::to_string(t) + ".png"));
      REQUIRE(fa == fb);
      masks_differ |=
          read_bytes(da / "masks" / (std::to_string(t) + ".png")) !=
          read_bytes(db / "masks" / (std::to_string(t) + ".png"));
    }
    REQUIRE(masks_differ);
  }
  fs::remove_all(root);
}

TEST_CASE("generated corpus loads back as valid samples") {
  SynthConfig cfg = tiny_config(Subset::MultiSource);
  std::string root = fresh_dir("avseg_synth_load");
  SynthResult res = generate_synthetic(root, cfg);
  TaskSetting setting = subset_setting(cfg.subset, cfg.num_categories);
  for (const auto* m : {&res.train, &res.valid, &res.test}) {
    std::vector<AudibleSample> samples = load_dataset(*m, setting);
    REQUIRE(samples.size() == m->entries.size());
    for (const AudibleSample& s : samples) {
      REQUIRE(s.clips() == 5);
      REQUIRE(s.height() == 32);
      REQUIRE(s.width() == 32);
      REQUIRE(static_cast<long>(s.waveform.size()) == 5 * 16000);
      REQUIRE(s.gt_masks.has_value());
      REQUIRE(s.supervised_frames ==
              std::vector<uint8_t>(5, 1));  // MS3: every frame annotated
    }
  }
  fs::remove_all(root);
}

TEST_CASE("single-source corpus supervises only the first training frame") {
  SynthConfig cfg = tiny_config(Subset::SingleSource);
  std::string root = fresh_dir("avseg_synth_s4");
  SynthResult res = generate_synthetic(root, cfg);
  TaskSetting setting = subset_setting(cfg.subset, cfg.num_categories);
  std::vector<AudibleSample> train = load_dataset(res.train, setting);
  for (const AudibleSample& s : train) {
    REQUIRE(s.supervised_frames == std::vector<uint8_t>{1, 0, 0, 0, 0});
    // One constant source: the mask never changes over time.
    const MaskArray& gt = *s.gt_masks;
    for (long t = 1; t < 5; ++t)
      for (long i = 0; i < gt.frame_size(); ++i)
        REQUIRE(gt.ids[t * gt.frame_size() + i] == gt.ids[i]);
  }
  std::vector<AudibleSample> valid = load_dataset(res.valid, setting);
  REQUIRE(valid[0].supervised_frames == std::vector<uint8_t>(5, 1));
  fs::remove_all(root);
}

TEST_CASE("masked categories are exactly the audible ones") {
  // The semantic subset carries category ids in its masks, so each second's
  // mask content can be checked against the tones present in the waveform.
  SynthConfig cfg = tiny_config(Subset::Semantic);
  std::string root = fresh_dir("avseg_synth_spectral");
  SynthResult res = generate_synthetic(root, cfg);
  TaskSetting setting = subset_setting(cfg.subset, cfg.num_categories);
  long checked = 0;
  for (const auto* m : {&res.train, &res.valid, &res.test})
    for (const AudibleSample& s : load_dataset(*m, setting)) {
      const MaskArray& gt = *s.gt_masks;
      for (long t = 0; t < s.clips(); ++t) {
        std::set<int> masked;
        for (long i = 0; i < gt.frame_size(); ++i)
          if (int id = gt.ids[t * gt.frame_size() + i]; id != 0)
            masked.insert(id);
        for (int cat = 1; cat <= cfg.num_categories; ++cat) {
          double amp = tone_amplitude_at(s.waveform, t * s.sample_rate,
                                         s.sample_rate,
                                         cfg.tones_hz[cat - 1],
                                         s.sample_rate);
          if (masked.count(cat)) {
            REQUIRE(amp > 0.1);  // tone_amplitude 0.25 minus leakage
            ++checked;
          } else {
            REQUIRE(amp < 0.02);
          }
        }
      }
    }
  REQUIRE(checked > 0);  // at least one sounding (category, second) seen
  fs::remove_all(root);
}

TEST_CASE("loader reports broken corpora with file paths") {
  SynthConfig cfg = tiny_config(Subset::MultiSource);
  std::string root = fresh_dir("avseg_synth_broken");
  SynthResult res = generate_synthetic(root, cfg);
  TaskSetting setting = subset_setting(cfg.subset, cfg.num_categories);
  Palette palette = load_palette(res.train);

  SECTION("missing frame") {
    fs::path victim =
        fs::path(res.train.video_dir(res.train.entries[0])) / "frames/3.png";
    fs::remove(victim);
    REQUIRE_THROWS_WITH(
        load_sample(res.train, res.train.entries[0], setting, palette),
        Catch::Matchers::ContainsSubstring("3.png"));
  }
  SECTION("palette mismatch") {
    std::istringstream text("0 background 0 0 0\n1 sounding 10 20 30\n");
    Palette other = Palette::parse(text);
    REQUIRE_THROWS_WITH(
        load_sample(res.train, res.train.entries[0], setting, other),
        Catch::Matchers::ContainsSubstring("palette mismatch"));
  }
  SECTION("path template override finds relocated frames") {
    fs::path dir = res.train.video_dir(res.train.entries[1]);
    fs::rename(dir / "frames", dir / "imgs");
    PathLayout layout;
    layout.frames = "imgs/{t}.png";
    AudibleSample s =
        load_sample(res.train, res.train.entries[1], setting, palette, layout);
    REQUIRE(s.clips() == 5);
  }
  fs::remove_all(root);
}
