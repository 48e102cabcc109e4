// Full segmentation model: frame backbone + ASPP necks, audio encoder,
// per-stage audio-visual fusion, and the FPN-style decoder head.
#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "avseg/audio.hpp"
#include "avseg/backbone.hpp"
#include "avseg/core_types.hpp"
#include "avseg/decoder.hpp"
#include "avseg/fusion.hpp"
#include "avseg/losses.hpp"

namespace avseg {

enum class FusionMode { None, Naive, Tpavi };

inline std::string fusion_mode_name(FusionMode m) {
  switch (m) {
    case FusionMode::None: return "none";
    case FusionMode::Naive: return "naive";
    case FusionMode::Tpavi: return "tpavi";
  }
  throw Error("unknown fusion mode");
}

inline FusionMode fusion_mode_from(const std::string& s) {
  if (s == "none") return FusionMode::None;
  if (s == "naive") return FusionMode::Naive;
  if (s == "tpavi") return FusionMode::Tpavi;
  throw Error("unknown fusion mode: " + s);
}

struct ModelConfig {
  TaskSetting setting = TaskSetting::ms3(5);
  FusionMode fusion = FusionMode::Tpavi;
  std::vector<int> fusion_stages = {1, 2, 3, 4};

  BackboneConfig backbone = BackboneConfig::tiny();
  AudioEncoderConfig audio;
  SpectrogramConfig spectrogram;
  std::vector<long> aspp_rates = {1, 6, 12, 18};
  long fusion_channels = 16;  // C: ASPP output and TPAVI width
  long tpavi_inner = 0;       // C-bar; 0 means C/2
  long decoder_width = 16;

  /// Laptop-friendly default used by the synthetic experiments.
  static ModelConfig desk(TaskSetting s) {
    ModelConfig cfg;
    cfg.setting = s;
    return cfg;
  }

  /// Channel counts from the reference architecture. Constructible, but far
  /// too slow to train without accelerators.
  static ModelConfig paper_scale(TaskSetting s) {
    ModelConfig cfg;
    cfg.setting = s;
    cfg.backbone = BackboneConfig::resnet_scale();
    cfg.fusion_channels = 256;
    cfg.decoder_width = 128;
    return cfg;
  }

  void validate() const {
    setting.validate();
    backbone.validate();
    audio.validate();
    spectrogram.validate();
    if (fusion != FusionMode::None) {
      if (fusion_stages.empty())
        throw Error("model config: fusion needs at least one stage");
      for (int s : fusion_stages)
        if (s < 1 || s > 4)
          throw Error("model config: fusion stages must lie in 1..4");
      std::vector<int> sorted = fusion_stages;
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw Error("model config: duplicate fusion stage");
    }
    if (fusion_channels < 1 || decoder_width < 1 || tpavi_inner < 0)
      throw Error("model config: channel widths must be positive");
    aspp().validate();
    tpavi_config().validate();
    decoder().validate();
  }

  bool fused_stage(int stage) const {
    return fusion != FusionMode::None &&
           std::find(fusion_stages.begin(), fusion_stages.end(), stage) !=
               fusion_stages.end();
  }

  AsppConfig aspp() const { return {aspp_rates, fusion_channels}; }
  TpaviConfig tpavi_config() const {
    return {fusion_channels, tpavi_inner, audio.embed_dim};
  }
  DecoderConfig decoder() const {
    return {decoder_width, setting.num_classes};
  }

  // -- flat key=value serialization (checkpoint header, config snapshots) --

  std::map<std::string, std::string> to_kv() const {
    auto join = [](const auto& xs) {
      std::ostringstream os;
      for (size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << xs[i];
      return os.str();
    };
    std::map<std::string, std::string> kv;
    kv["task"] = task_kind_name(setting.kind);
    kv["num_classes"] = std::to_string(setting.num_classes);
    kv["clips"] = std::to_string(setting.clips_per_video);
    kv["fusion"] = fusion_mode_name(fusion);
    kv["fusion_stages"] = join(fusion_stages);
    kv["backbone_channels"] = join(backbone.channels);
    kv["blocks_per_stage"] = std::to_string(backbone.blocks_per_stage);
    kv["audio_channels"] = join(audio.channels);
    kv["audio_frozen"] = audio.frozen_after_init ? "1" : "0";
    kv["aspp_rates"] = join(aspp_rates);
    kv["fusion_channels"] = std::to_string(fusion_channels);
    kv["tpavi_inner"] = std::to_string(tpavi_inner);
    kv["decoder_width"] = std::to_string(decoder_width);
    return kv;
  }

  static ModelConfig from_kv(const std::map<std::string, std::string>& kv) {
    auto get = [&](const std::string& k) -> const std::string& {
      auto it = kv.find(k);
      if (it == kv.end()) throw Error("model config: missing key " + k);
      return it->second;
    };
    auto split_longs = [](const std::string& s) {
      std::vector<long> out;
      std::istringstream is(s);
      std::string tok;
      while (std::getline(is, tok, ',')) out.push_back(std::stol(tok));
      return out;
    };
    ModelConfig cfg;
    cfg.setting.kind = task_kind_from(get("task"));
    cfg.setting.num_classes = std::stol(get("num_classes"));
    cfg.setting.clips_per_video = std::stol(get("clips"));
    cfg.fusion = fusion_mode_from(get("fusion"));
    cfg.fusion_stages.clear();
    for (long v : split_longs(get("fusion_stages")))
      cfg.fusion_stages.push_back(static_cast<int>(v));
    std::vector<long> bc = split_longs(get("backbone_channels"));
    if (bc.size() != 4) throw Error("model config: need 4 backbone channels");
    std::copy(bc.begin(), bc.end(), cfg.backbone.channels.begin());
    cfg.backbone.blocks_per_stage = std::stol(get("blocks_per_stage"));
    std::vector<long> ac = split_longs(get("audio_channels"));
    if (ac.size() != 3) throw Error("model config: need 3 audio channels");
    std::copy(ac.begin(), ac.end(), cfg.audio.channels.begin());
    cfg.audio.frozen_after_init = get("audio_frozen") == "1";
    cfg.aspp_rates = split_longs(get("aspp_rates"));
    cfg.fusion_channels = std::stol(get("fusion_channels"));
    cfg.tpavi_inner = std::stol(get("tpavi_inner"));
    cfg.decoder_width = std::stol(get("decoder_width"));
    cfg.validate();
    return cfg;
  }
};

/// One forward pass worth of graph handles.
struct ForwardOut {
  Var scores;                // (T,H,W,K) raw decoder output
  StageFeatures stages;      // fused Z per stage, 1-based stage index
  std::array<Var, 4> alpha;  // attention maps; valid() only on fused stages
  Var audio_embed;           // (T,d)
};

struct AvsModel {
  ModelConfig cfg;
  ParamDict params;

  static AvsModel init(const ModelConfig& cfg, unsigned long long seed) {
    cfg.validate();
    AvsModel m;
    m.cfg = cfg;
    Rng rng(seed);
    init_audio_encoder(m.params, "audio", cfg.audio, rng);
    init_backbone(m.params, "backbone", cfg.backbone, rng);
    for (int s = 1; s <= 4; ++s)
      init_aspp(m.params, "neck.stage" + std::to_string(s),
                cfg.backbone.channels[s - 1], cfg.aspp(), rng);
    for (int s = 1; s <= 4; ++s) {
      if (!cfg.fused_stage(s)) continue;
      std::string base = "fusion.stage" + std::to_string(s);
      if (cfg.fusion == FusionMode::Tpavi)
        init_tpavi(m.params, base, cfg.tpavi_config(), rng);
      else {  // naive addition still needs the audio projection
        m.params.add(base + ".audio.w",
                     linear_init(rng, cfg.audio.embed_dim, cfg.fusion_channels));
        m.params.add(base + ".audio.b", bias_init(rng, cfg.fusion_channels));
      }
    }
    init_decoder(m.params, "decoder", cfg.fusion_channels, cfg.decoder(), rng);
    init_avm_projections(m.params, "avm", {1, 2, 3, 4}, cfg.audio.embed_dim,
                         cfg.fusion_channels, rng);
    return m;
  }

  Tensor logmel(const std::vector<double>& waveform) const {
    return waveform_to_logmel(waveform, cfg.spectrogram);
  }

  ForwardOut forward(Graph& g, BoundParams& bp, Var frames, Var logmel) const {
    if (cfg.audio.frozen_after_init) bp.freeze_prefix("audio.");
    ForwardOut out;
    out.audio_embed = encode_audio(g, bp, "audio", logmel, cfg.audio);
    std::array<Var, 4> feats = encode_frames(g, bp, "backbone", frames,
                                             cfg.backbone);
    std::vector<Var> zs;
    for (int s = 1; s <= 4; ++s) {
      Var f = aspp(g, bp, "neck.stage" + std::to_string(s), feats[s - 1],
                   cfg.aspp());
      Var z = f;
      if (cfg.fused_stage(s)) {
        std::string base = "fusion.stage" + std::to_string(s);
        if (cfg.fusion == FusionMode::Tpavi) {
          TpaviOut t = tpavi(g, bp, base, f, out.audio_embed,
                             cfg.tpavi_config());
          z = t.z;
          out.alpha[s - 1] = t.alpha;
        } else {
          z = naive_fusion(g, bp, base, f, out.audio_embed);
        }
      }
      zs.push_back(z);
      out.stages.push_back({s, z});
    }
    out.scores = decode(g, bp, "decoder", zs, cfg.decoder());
    return out;
  }
};

}  // namespace avseg
