#include <catch2/catch_amalgamated.hpp>

#include <complex>

#include "avseg/audio.hpp"
#include "support/param_gradcheck.hpp"

using namespace avseg;

namespace {

std::vector<double> tone(double hz, double seconds, long sr, double amp = 0.5) {
  std::vector<double> w(static_cast<size_t>(seconds * sr));
  for (size_t i = 0; i < w.size(); ++i)
    w[i] = amp * std::sin(2.0 * M_PI * hz * double(i) / double(sr));
  return w;
}

}  // namespace

TEST_CASE("spectrogram config rejects inconsistent settings") {
  SpectrogramConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.frames_per_second() == 98);

  SpectrogramConfig bad = cfg;
  bad.hop = 500;  // > window
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.mel_bins = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.log_floor = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("fft power spectrum matches a naive dft") {
  Rng rng(3);
  std::vector<double> frame(400);
  for (auto& v : frame) v = rng.normal();

  std::vector<double> got = power_spectrum(frame, 512);
  REQUIRE(got.size() == 257);

  // Independent O(n^2) oracle.
  for (long k = 0; k <= 256; k += 16) {
    std::complex<double> acc(0.0, 0.0);
    for (size_t n = 0; n < frame.size(); ++n) {
      double ang = -2.0 * M_PI * double(k) * double(n) / 512.0;
      acc += frame[n] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    double expect = std::norm(acc);
    CHECK(std::abs(got[k] - expect) <= 1e-9 * (1.0 + expect));
  }
}

TEST_CASE("silence maps every bin to log of the floor") {
  SpectrogramConfig cfg;
  std::vector<double> silence(2 * cfg.sample_rate, 0.0);
  Tensor lm = waveform_to_logmel(silence, cfg);
  REQUIRE(lm.shape() == Shape{2, 98, 64});
  double expect = std::log(cfg.log_floor);
  for (long i = 0; i < lm.size(); ++i) REQUIRE(lm[i] == expect);
}

TEST_CASE("a pure 440 Hz tone peaks in the mel bin containing 440 Hz") {
  SpectrogramConfig cfg;
  Tensor lm = waveform_to_logmel(tone(440.0, 1.0, cfg.sample_rate), cfg);

  // Average energy over frames, then find the loudest mel bin.
  std::vector<double> by_bin(cfg.mel_bins, 0.0);
  for (long f = 0; f < lm.dim(1); ++f)
    for (long m = 0; m < cfg.mel_bins; ++m) by_bin[m] += lm.at(0, f, m);
  long argmax = std::max_element(by_bin.begin(), by_bin.end()) - by_bin.begin();

  // Closed-form oracle: recompute the triangular filter edges from the HTK
  // mel formula and require that 440 Hz lies inside the winning filter.
  auto hz2mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto mel2hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  double mel_max = hz2mel(cfg.sample_rate / 2.0);
  double lo = mel2hz(mel_max * double(argmax) / double(cfg.mel_bins + 1));
  double mid = mel2hz(mel_max * double(argmax + 1) / double(cfg.mel_bins + 1));
  double hi = mel2hz(mel_max * double(argmax + 2) / double(cfg.mel_bins + 1));
  INFO("argmax bin " << argmax << " spans [" << lo << ", " << hi << "] Hz");
  CHECK(lo < 440.0);
  CHECK(440.0 < hi);
  CHECK(std::abs(mid - 440.0) <= (hi - lo));  // near the filter center too
}

TEST_CASE("identical seconds give identical spectrogram slices") {
  SpectrogramConfig cfg;
  std::vector<double> second = tone(700.0, 1.0, cfg.sample_rate);
  std::vector<double> twice = second;
  twice.insert(twice.end(), second.begin(), second.end());

  Tensor lm = waveform_to_logmel(twice, cfg);
  REQUIRE(lm.dim(0) == 2);
  for (long f = 0; f < lm.dim(1); ++f)
    for (long m = 0; m < lm.dim(2); ++m)
      REQUIRE(lm.at(0, f, m) == lm.at(1, f, m));

  // Determinism across calls is bitwise.
  CHECK(bitwise_equal(lm, waveform_to_logmel(twice, cfg)));
}

TEST_CASE("trailing silence shorter than one hop changes nothing") {
  SpectrogramConfig cfg;
  std::vector<double> wave = tone(523.0, 2.0, cfg.sample_rate);
  Tensor base = waveform_to_logmel(wave, cfg);

  std::vector<double> padded = wave;
  padded.resize(wave.size() + cfg.hop - 1, 0.0);
  Tensor got = waveform_to_logmel(padded, cfg);
  REQUIRE(got.shape() == base.shape());
  CHECK(bitwise_equal(got, base));
}

TEST_CASE("waveform_to_logmel input validation") {
  SpectrogramConfig cfg;
  std::vector<double> tiny(cfg.window - 1, 0.1);
  CHECK_THROWS_WITH(waveform_to_logmel(tiny, cfg),
                    Catch::Matchers::ContainsSubstring("too short"));

  std::vector<double> bad(cfg.sample_rate, 0.0);
  bad[123] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_WITH(waveform_to_logmel(bad, cfg),
                    Catch::Matchers::ContainsSubstring("non-finite"));
}

TEST_CASE("encode_audio produces a finite T x 128 embedding") {
  Rng rng(5);
  AudioEncoderConfig cfg;
  ParamDict params;
  init_audio_encoder(params, "audio", cfg, rng);

  Graph g;
  BoundParams bound(g, params);
  Var logmel = g.input(rng.normal_tensor({5, 98, 64}, 1.0));
  Var a = encode_audio(g, bound, "audio", logmel, cfg);
  REQUIRE(g.shape(a) == Shape{5, 128});
  CHECK(g.value(a).all_finite());

  Graph g2;
  BoundParams bound2(g2, params);
  CHECK_THROWS_AS(encode_audio(g2, bound2, "audio",
                               g2.input(Tensor({5, 98, 64, 1})), cfg),
                  Error);
}

TEST_CASE("encode_audio is a pure per-slice function") {
  Rng rng(6);
  AudioEncoderConfig cfg;
  cfg.channels = {2, 3, 4};
  ParamDict params;
  init_audio_encoder(params, "audio", cfg, rng);

  Tensor lm = rng.normal_tensor({4, 9, 8}, 1.0);
  // Make slices 1 and 3 identical.
  long slice = 9 * 8;
  for (long i = 0; i < slice; ++i) lm[3 * slice + i] = lm[1 * slice + i];

  Graph g;
  BoundParams bound(g, params);
  Tensor a = g.value(encode_audio(g, bound, "audio", g.input(lm), cfg));
  for (long j = 0; j < a.dim(1); ++j) REQUIRE(a.at(1, j) == a.at(3, j));

  // Permuting slices permutes rows identically.
  std::vector<long> perm = {2, 0, 3, 1};
  Tensor lm_perm({4, 9, 8});
  for (long t = 0; t < 4; ++t)
    for (long i = 0; i < slice; ++i)
      lm_perm[t * slice + i] = lm[perm[t] * slice + i];
  Graph g2;
  BoundParams bound2(g2, params);
  Tensor a_perm = g2.value(encode_audio(g2, bound2, "audio", g2.input(lm_perm), cfg));
  for (long t = 0; t < 4; ++t)
    for (long j = 0; j < a.dim(1); ++j)
      REQUIRE(a_perm.at(t, j) == a.at(perm[t], j));
}

TEST_CASE("audio encoder gradients match finite differences") {
  Rng rng(7);
  AudioEncoderConfig cfg;
  cfg.channels = {2, 3, 4};
  ParamDict params;
  init_audio_encoder(params, "audio", cfg, rng);

  Tensor lm = rng.normal_tensor({2, 9, 8}, 1.0);
  Tensor mix = rng.normal_tensor({2, 128}, 1.0);  // fixed mixing weights

  auto loss_value = [&]() {
    Graph g;
    BoundParams bound(g, params);
    Var a = encode_audio(g, bound, "audio", g.input(lm), cfg);
    return g.value(g.sum_all(g.mul(a, g.input(mix))))[0];
  };

  std::map<std::string, Tensor> analytic;
  {
    Graph g;
    BoundParams bound(g, params);
    Var a = encode_audio(g, bound, "audio", g.input(lm), cfg);
    g.backward(g.sum_all(g.mul(a, g.input(mix))));
    for (const std::string& name : params.names()) analytic[name] = bound.grad(name);
  }
  test::require_param_gradients(params, analytic, loss_value);
}

TEST_CASE("freezing the audio prefix removes its gradients") {
  Rng rng(8);
  AudioEncoderConfig cfg;
  cfg.channels = {2, 2, 2};
  ParamDict params;
  init_audio_encoder(params, "audio", cfg, rng);

  Graph g;
  BoundParams bound(g, params);
  bound.freeze_prefix("audio.");
  Var a = encode_audio(g, bound, "audio", g.input(rng.normal_tensor({2, 9, 8}, 1.0)), cfg);
  g.backward(g.sum_all(a));
  for (const std::string& name : params.names()) {
    CHECK(bound.used(name));
    CHECK_FALSE(bound.trainable(name));
  }
}
