// Waveform -> per-second log-mel spectrograms -> T×d audio embedding.
#pragma once

#include <complex>
#include <string>
#include <vector>

#include "avseg/graph.hpp"
#include "avseg/params.hpp"
#include "avseg/tensor.hpp"

namespace avseg {

struct SpectrogramConfig {
  long sample_rate = 16000;
  long window = 400;
  long hop = 160;
  long mel_bins = 64;
  double log_floor = 1e-6;

  void validate() const {
    if (sample_rate <= 0 || window <= 0 || hop <= 0)
      throw Error("spectrogram config: sizes must be positive");
    if (hop > window) throw Error("spectrogram config: hop must be <= window");
    if (mel_bins < 1) throw Error("spectrogram config: mel bins must be >= 1");
    if (!(log_floor > 0.0)) throw Error("spectrogram config: log floor must be > 0");
  }

  long frames_per_second() const { return 1 + (sample_rate - window) / hop; }
};

namespace detail {

inline long next_pow2(long n) {
  long p = 1;
  while (p < n) p <<= 1;
  return p;
}

/// Iterative radix-2 Cooley–Tukey; size must be a power of two.
inline void fft_inplace(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw Error("fft: size must be a power of two");
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * M_PI / static_cast<double>(len);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

}  // namespace detail

/// One-sided power spectrum |X_k|^2 of a frame zero-padded to n_fft points.
inline std::vector<double> power_spectrum(const std::vector<double>& frame,
                                          long n_fft) {
  std::vector<std::complex<double>> buf(static_cast<size_t>(n_fft), {0.0, 0.0});
  for (size_t i = 0; i < frame.size() && i < buf.size(); ++i) buf[i] = frame[i];
  detail::fft_inplace(buf);
  std::vector<double> power(static_cast<size_t>(n_fft / 2 + 1));
  for (size_t k = 0; k < power.size(); ++k) power[k] = std::norm(buf[k]);
  return power;
}

/// Triangular HTK-mel filterbank over one-sided FFT bins.
struct MelFilterbank {
  long n_fft = 0;
  Tensor weights;                  // (mel_bins, n_fft/2 + 1)
  std::vector<double> center_hz;   // per mel bin

  static MelFilterbank build(const SpectrogramConfig& cfg) {
    cfg.validate();
    MelFilterbank fb;
    fb.n_fft = detail::next_pow2(cfg.window);
    long bins = fb.n_fft / 2 + 1;
    double f_max = static_cast<double>(cfg.sample_rate) / 2.0;
    double mel_max = detail::hz_to_mel(f_max);
    std::vector<double> points(cfg.mel_bins + 2);
    for (long m = 0; m < cfg.mel_bins + 2; ++m)
      points[m] = detail::mel_to_hz(mel_max * static_cast<double>(m) /
                                    static_cast<double>(cfg.mel_bins + 1));
    fb.weights = Tensor({cfg.mel_bins, bins});
    fb.center_hz.resize(cfg.mel_bins);
    for (long m = 0; m < cfg.mel_bins; ++m) {
      double lo = points[m], mid = points[m + 1], hi = points[m + 2];
      fb.center_hz[m] = mid;
      for (long k = 0; k < bins; ++k) {
        double f = static_cast<double>(k) * cfg.sample_rate / fb.n_fft;
        double w = 0.0;
        if (f > lo && f < hi)
          w = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
        fb.weights.at(m, k) = w;
      }
    }
    return fb;
  }
};

/// Splits the waveform into 1-second chunks (nearest-second count; the tail is
/// zero-padded or, within the ±hop tolerance, dropped) and computes log-mel
/// frames per chunk. Output: (T, frames_per_second, mel_bins).
inline Tensor waveform_to_logmel(const std::vector<double>& waveform,
                                 const SpectrogramConfig& cfg) {
  cfg.validate();
  long len = static_cast<long>(waveform.size());
  if (len < cfg.window)
    throw Error("waveform too short: " + std::to_string(len) + " < window " +
                std::to_string(cfg.window));
  for (double v : waveform)
    if (!std::isfinite(v)) throw Error("waveform contains non-finite samples");

  long T = std::max<long>(1, (len + cfg.sample_rate / 2) / cfg.sample_rate);
  long frames = cfg.frames_per_second();
  MelFilterbank fb = MelFilterbank::build(cfg);
  long n_bins = fb.n_fft / 2 + 1;

  std::vector<double> hann(static_cast<size_t>(cfg.window));
  for (long i = 0; i < cfg.window; ++i)
    hann[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / cfg.window));

  Tensor out({T, frames, cfg.mel_bins});
  std::vector<double> frame(static_cast<size_t>(cfg.window));
  for (long t = 0; t < T; ++t) {
    for (long f = 0; f < frames; ++f) {
      long start = t * cfg.sample_rate + f * cfg.hop;
      for (long i = 0; i < cfg.window; ++i) {
        long idx = start + i;
        frame[i] = idx < len ? hann[i] * waveform[idx] : 0.0;
      }
      std::vector<double> power = power_spectrum(frame, fb.n_fft);
      for (long m = 0; m < cfg.mel_bins; ++m) {
        double acc = 0.0;
        for (long k = 0; k < n_bins; ++k) acc += fb.weights.at(m, k) * power[k];
        out.at(t, f, m) = std::log(acc + cfg.log_floor);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Audio encoder: 3 strided conv layers -> global pool -> linear, d=128.
// ---------------------------------------------------------------------------

struct AudioEncoderConfig {
  std::array<long, 3> channels = {16, 32, 64};
  long embed_dim = 128;
  bool frozen_after_init = false;

  void validate() const {
    for (long c : channels)
      if (c < 1) throw Error("audio encoder: channels must be positive");
    if (embed_dim != 128)
      throw Error("audio encoder: output dimension must be d=128");
  }
};

inline void init_audio_encoder(ParamDict& p, const std::string& prefix,
                               const AudioEncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  long in = 1;
  for (int i = 0; i < 3; ++i) {
    std::string layer = prefix + ".conv" + std::to_string(i + 1);
    p.add(layer + ".w", conv_init(rng, 3, 3, in, cfg.channels[i]));
    p.add(layer + ".b", bias_init(rng, cfg.channels[i]));
    in = cfg.channels[i];
  }
  p.add(prefix + ".proj.w", linear_init(rng, in, cfg.embed_dim));
  p.add(prefix + ".proj.b", bias_init(rng, cfg.embed_dim));
}

/// (T, frames, mel_bins) log-mel -> (T, d) embedding.
inline Var encode_audio(Graph& g, BoundParams& p, const std::string& prefix,
                        Var logmel, const AudioEncoderConfig& cfg) {
  cfg.validate();
  Shape s = g.shape(logmel);  // copy: later ops invalidate references
  if (s.size() != 3)
    throw Error("encode_audio: expected rank-3 log-mel input, got " +
                shape_str(s));
  Var x = g.reshape(logmel, {s[0], s[1], s[2], 1});
  for (int i = 0; i < 3; ++i) {
    std::string layer = prefix + ".conv" + std::to_string(i + 1);
    x = g.relu(g.conv2d(x, p.use(layer + ".w"), p.use(layer + ".b"),
                        /*stride=*/2, /*pad=*/1));
  }
  Var pooled = g.spatial_mean(x);  // (T, C3)
  return g.linear(pooled, p.use(prefix + ".proj.w"), p.use(prefix + ".proj.b"));
}

}  // namespace avseg
