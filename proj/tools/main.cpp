// Command-line workbench: corpus synthesis, training, evaluation, mask
// prediction, attention heatmaps, and audio-embedding clustering.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "avseg/synth.hpp"
#include "avseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace avseg;

namespace {

std::vector<long> parse_longs(const std::string& csv) {
  std::vector<long> out;
  std::istringstream is(csv);
  std::string tok;
  while (std::getline(is, tok, ',')) out.push_back(std::stol(tok));
  return out;
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    std::string key, value;
    if (!(is >> key >> value))
      throw Error("config file: malformed line '" + line + "'");
    kv[key] = value;
  }
  return kv;
}

/// Applies `kv` on top of a default-constructed config for the setting.
TrainConfig build_train_config(const TaskSetting& setting,
                               const std::map<std::string, std::string>& kv) {
  TrainConfig tc;
  tc.model = ModelConfig::desk(setting);
  for (const auto& [key, v] : kv) {
    if (key == "fusion") tc.model.fusion = fusion_mode_from(v);
    else if (key == "fusion_stages") {
      tc.model.fusion_stages.clear();
      for (long s : parse_longs(v))
        tc.model.fusion_stages.push_back(static_cast<int>(s));
    } else if (key == "avm") tc.loss.variant = avm_variant_from(v);
    else if (key == "lambda") tc.loss.lambda = std::stod(v);
    else if (key == "learning_rate") tc.learning_rate = std::stod(v);
    else if (key == "batch_size") tc.batch_size = std::stol(v);
    else if (key == "epochs") tc.epochs = std::stol(v);
    else if (key == "cosine_decay") tc.cosine_decay = v == "1";
    else if (key == "hflip") tc.hflip = v == "1";
    else if (key == "seed") tc.seed = std::stoull(v);
    else if (key == "freeze_audio") tc.model.audio.frozen_after_init = v == "1";
    else if (key == "fusion_channels") tc.model.fusion_channels = std::stol(v);
    else if (key == "tpavi_inner") tc.model.tpavi_inner = std::stol(v);
    else if (key == "decoder_width") tc.model.decoder_width = std::stol(v);
    else if (key == "blocks_per_stage")
      tc.model.backbone.blocks_per_stage = std::stol(v);
    else if (key == "backbone_channels") {
      std::vector<long> c = parse_longs(v);
      if (c.size() != 4) throw Error("config: need 4 backbone channels");
      std::copy(c.begin(), c.end(), tc.model.backbone.channels.begin());
    } else if (key == "audio_channels") {
      std::vector<long> c = parse_longs(v);
      if (c.size() != 3) throw Error("config: need 3 audio channels");
      std::copy(c.begin(), c.end(), tc.model.audio.channels.begin());
    } else if (key == "aspp_rates") tc.model.aspp_rates = parse_longs(v);
    else throw Error("unknown config key: " + key);
  }
  tc.validate();
  return tc;
}

struct DataArgs {
  std::string root;
  std::string subset = "multi_source";
  std::string split = "test";

  Subset subset_id() const { return subset_from(subset); }
  Split split_id() const { return split_from(split); }
};

void add_data_options(CLI::App* sub, DataArgs& d, bool with_split) {
  sub->add_option("--root", d.root, "corpus root directory")->required();
  sub->add_option("--subset", d.subset,
                  "single_source, multi_source, or semantic");
  if (with_split)
    sub->add_option("--split", d.split, "train, valid, or test");
}

struct LoadedSplit {
  TaskSetting setting;
  Palette palette;
  std::vector<AudibleSample> samples;
};

LoadedSplit load_split(const DataArgs& d, Split split) {
  DatasetManifest m = load_manifest(d.root, d.subset_id(), split);
  LoadedSplit out;
  out.palette = load_palette(m);
  out.setting = subset_setting(d.subset_id(), out.palette.size() - 1);
  out.samples = load_dataset(m, out.setting);
  return out;
}

AvsModel load_model(const std::string& path, const TaskSetting& expect) {
  Checkpoint ck = load_checkpoint(path);
  const TaskSetting& s = ck.model.setting;
  if (s.kind != expect.kind || s.num_classes != expect.num_classes ||
      s.clips_per_video != expect.clips_per_video)
    throw Error("checkpoint task " + task_kind_name(s.kind) +
                " does not match the requested corpus");
  return AvsModel{ck.model, std::move(ck.params)};
}

// ---------------------------------------------------------------------------

int run_synth(const std::string& root, SynthConfig cfg) {
  SynthResult res = generate_synthetic(root, cfg);
  std::cout << "wrote " << root << "/" << subset_dir(cfg.subset) << ": train "
            << res.train.entries.size() << " valid "
            << res.valid.entries.size() << " test "
            << res.test.entries.size() << " (image " << cfg.image_size
            << ", clips " << subset_clips(cfg.subset) << ")\n";
  return 0;
}

int run_train(const DataArgs& d, const std::string& out_dir,
              const std::map<std::string, std::string>& kv,
              const std::string& init_path) {
  Subset subset = d.subset_id();
  DatasetManifest train_m = load_manifest(d.root, subset, Split::Train);
  DatasetManifest valid_m = load_manifest(d.root, subset, Split::Valid);
  Palette palette = load_palette(train_m);
  TaskSetting setting = subset_setting(subset, palette.size() - 1);
  TrainConfig cfg = build_train_config(setting, kv);

  std::vector<AudibleSample> train_set = load_dataset(train_m, setting);
  std::vector<AudibleSample> valid_set = load_dataset(valid_m, setting);

  ParamDict warm;
  const ParamDict* init_from = nullptr;
  if (!init_path.empty()) {
    warm = load_checkpoint(init_path).params;
    init_from = &warm;
  }

  fs::create_directories(out_dir);
  {
    std::map<std::string, std::string> snap = cfg.model.to_kv();
    snap["avm"] = avm_variant_name(cfg.loss.variant);
    snap["lambda"] = std::to_string(cfg.loss.lambda);
    snap["learning_rate"] = std::to_string(cfg.learning_rate);
    snap["batch_size"] = std::to_string(cfg.batch_size);
    snap["epochs"] = std::to_string(cfg.resolved_epochs());
    snap["cosine_decay"] = cfg.cosine_decay ? "1" : "0";
    snap["hflip"] = cfg.hflip ? "1" : "0";
    snap["seed"] = std::to_string(cfg.seed);
    snap["root"] = d.root;
    snap["subset"] = subset_dir(subset);
    snap["init"] = init_path.empty() ? "-" : init_path;
    std::ofstream os(fs::path(out_dir) / "config.txt");
    for (const auto& [k, v] : snap) os << k << " " << v << "\n";
  }

  std::ofstream log(fs::path(out_dir) / "metrics.log");
  TrainOutput res = train(cfg, train_set, valid_set, &log, init_from);
  save_checkpoint((fs::path(out_dir) / "best.ckpt").string(), res.best);
  save_checkpoint((fs::path(out_dir) / "last.ckpt").string(), res.last);

  const EpochStats& fin = res.stats.back();
  std::cout << "trained " << res.stats.size() << " epochs on "
            << train_set.size() << " videos\n"
            << "last: train_loss " << fin.train_loss << " val_miou "
            << fin.val_miou << " val_f " << fin.val_f << "\n"
            << "best: epoch " << res.best.epoch << " (checkpoints in "
            << out_dir << ")\n";
  return 0;
}

int run_eval(const DataArgs& d, const std::string& ckpt,
             const std::string& out_path) {
  LoadedSplit data = load_split(d, d.split_id());
  AvsModel model = load_model(ckpt, data.setting);
  MetricReport r = evaluate(model, data.samples);
  std::cout << r.to_text();
  if (!out_path.empty()) {
    std::ofstream os(out_path);
    os << r.to_text();
  }
  return 0;
}

int run_predict(const DataArgs& d, const std::string& ckpt,
                const std::string& out_dir) {
  LoadedSplit data = load_split(d, d.split_id());
  AvsModel model = load_model(ckpt, data.setting);
  std::vector<Rgb> table = data.palette.color_table();
  long written = 0;
  for (const AudibleSample& s : data.samples) {
    MaskArray hard = predict_sample(model, s).hard;
    fs::path dir = fs::path(out_dir) / s.video_id;
    fs::create_directories(dir);
    for (long t = 0; t < hard.T; ++t) {
      std::vector<uint8_t> ids(hard.ids.begin() + t * hard.H * hard.W,
                               hard.ids.begin() + (t + 1) * hard.H * hard.W);
      write_png_indexed((dir / (std::to_string(t) + ".png")).string(), hard.W,
                        hard.H, ids, table);
      ++written;
    }
  }
  std::cout << "wrote " << written << " masks for " << data.samples.size()
            << " videos to " << out_dir << "\n";
  return 0;
}

int run_heatmap(const DataArgs& d, const std::string& ckpt,
                const std::string& video, int stage,
                const std::string& out_dir) {
  LoadedSplit data = load_split(d, d.split_id());
  AvsModel model = load_model(ckpt, data.setting);
  for (const AudibleSample& s : data.samples) {
    if (s.video_id != video) continue;
    fs::create_directories(out_dir);
    std::vector<std::string> paths = export_heatmaps(model, s, stage, out_dir);
    std::cout << "wrote " << paths.size() << " heatmaps to " << out_dir << "\n";
    return 0;
  }
  throw Error("video '" + video + "' is not in the " + d.split + " split");
}

int run_cluster(const DataArgs& d, const std::string& ckpt, long k,
                unsigned long long seed, const std::string& out_path) {
  LoadedSplit data = load_split(d, d.split_id());
  AvsModel model = load_model(ckpt, data.setting);
  ClusterResult r = cluster_audio_embeddings(model, data.samples, k, seed);
  std::ofstream os(out_path);
  if (!os) throw Error("cannot write " + out_path);
  os << "# clip pc1 pc2 cluster\n";
  os << std::setprecision(10);
  for (size_t i = 0; i < r.clip_ids.size(); ++i)
    os << r.clip_ids[i] << " " << r.coords.at(long(i), 0) << " "
       << r.coords.at(long(i), 1) << " " << r.labels[i] << "\n";
  std::cout << "clustered " << r.clip_ids.size() << " clips into " << k
            << " groups: " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sounding-object segmentation workbench"};
  app.require_subcommand(1);
  int rc = 0;

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  std::string synth_root;
  SynthConfig synth_cfg;
  std::string synth_subset = "multi_source";
  synth->add_option("--root", synth_root, "corpus root directory")->required();
  synth->add_option("--subset", synth_subset,
                    "single_source, multi_source, or semantic");
  synth->add_option("--image-size", synth_cfg.image_size, "frame edge length");
  synth->add_option("--categories", synth_cfg.num_categories,
                    "number of shape categories");
  synth->add_option("--train", synth_cfg.train_videos, "training videos");
  synth->add_option("--valid", synth_cfg.valid_videos, "validation videos");
  synth->add_option("--test", synth_cfg.test_videos, "test videos");
  synth->add_option("--shapes-min", synth_cfg.shapes_min, "fewest shapes");
  synth->add_option("--shapes-max", synth_cfg.shapes_max, "most shapes");
  synth->add_option("--seed", synth_cfg.seed, "corpus seed");
  synth->callback([&] {
    synth_cfg.subset = subset_from(synth_subset);
    if (static_cast<long>(synth_cfg.tones_hz.size()) != synth_cfg.num_categories) {
      synth_cfg.tones_hz.clear();
      for (long k = 1; k <= synth_cfg.num_categories; ++k)
        synth_cfg.tones_hz.push_back(300.0 * double(k));
    }
    rc = run_synth(synth_root, synth_cfg);
  });

  // train
  auto* tr = app.add_subcommand("train", "train a model on a corpus");
  DataArgs tr_data;
  std::string tr_out, tr_config, tr_init;
  std::string tr_fusion, tr_stages, tr_avm, tr_backbone;
  double tr_lambda = 0, tr_lr = 0;
  long tr_batch = 0, tr_epochs = 0, tr_channels = 0, tr_width = 0;
  unsigned long long tr_seed = 0;
  bool tr_hflip = false, tr_cosine = false, tr_freeze = false;
  add_data_options(tr, tr_data, false);
  tr->add_option("--out", tr_out, "run directory")->required();
  tr->add_option("--config", tr_config, "key/value config file");
  tr->add_option("--init", tr_init, "checkpoint to transfer from");
  tr->add_option("--fusion", tr_fusion, "none, naive, or tpavi");
  tr->add_option("--fusion-stages", tr_stages, "comma list, e.g. 1,2,3,4");
  tr->add_option("--avm", tr_avm, "mapping loss: none, av, or vv");
  tr->add_option("--lambda", tr_lambda, "mapping loss weight");
  tr->add_option("--lr", tr_lr, "learning rate");
  tr->add_option("--batch", tr_batch, "videos per optimizer step");
  tr->add_option("--epochs", tr_epochs, "epoch count (0 = setting default)");
  tr->add_option("--seed", tr_seed, "training seed");
  tr->add_option("--fusion-channels", tr_channels, "fusion width");
  tr->add_option("--decoder-width", tr_width, "decoder width");
  tr->add_option("--backbone-channels", tr_backbone, "comma list of 4 widths");
  tr->add_flag("--hflip", tr_hflip, "random horizontal flip");
  tr->add_flag("--cosine", tr_cosine, "cosine learning-rate decay");
  tr->add_flag("--freeze-audio", tr_freeze, "freeze the audio encoder");
  tr->callback([&] {
    std::map<std::string, std::string> kv;
    if (!tr_config.empty()) kv = read_config_file(tr_config);
    if (tr->count("--fusion")) kv["fusion"] = tr_fusion;
    if (tr->count("--fusion-stages")) kv["fusion_stages"] = tr_stages;
    if (tr->count("--avm")) kv["avm"] = tr_avm;
    if (tr->count("--lambda")) kv["lambda"] = std::to_string(tr_lambda);
    if (tr->count("--lr")) kv["learning_rate"] = std::to_string(tr_lr);
    if (tr->count("--batch")) kv["batch_size"] = std::to_string(tr_batch);
    if (tr->count("--epochs")) kv["epochs"] = std::to_string(tr_epochs);
    if (tr->count("--seed")) kv["seed"] = std::to_string(tr_seed);
    if (tr->count("--fusion-channels"))
      kv["fusion_channels"] = std::to_string(tr_channels);
    if (tr->count("--decoder-width"))
      kv["decoder_width"] = std::to_string(tr_width);
    if (tr->count("--backbone-channels")) kv["backbone_channels"] = tr_backbone;
    if (tr_hflip) kv["hflip"] = "1";
    if (tr_cosine) kv["cosine_decay"] = "1";
    if (tr_freeze) kv["freeze_audio"] = "1";
    rc = run_train(tr_data, tr_out, kv, tr_init);
  });

  // eval
  auto* ev = app.add_subcommand("eval", "report metrics for a checkpoint");
  DataArgs ev_data;
  std::string ev_ckpt, ev_out;
  add_data_options(ev, ev_data, true);
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--out", ev_out, "also write the report here");
  ev->callback([&] { rc = run_eval(ev_data, ev_ckpt, ev_out); });

  // predict
  auto* pr = app.add_subcommand("predict", "write predicted masks as PNGs");
  DataArgs pr_data;
  std::string pr_ckpt, pr_out;
  add_data_options(pr, pr_data, true);
  pr->add_option("--ckpt", pr_ckpt, "checkpoint path")->required();
  pr->add_option("--out", pr_out, "output directory")->required();
  pr->callback([&] { rc = run_predict(pr_data, pr_ckpt, pr_out); });

  // heatmap
  auto* hm = app.add_subcommand("heatmap", "export attention heatmaps");
  DataArgs hm_data;
  std::string hm_ckpt, hm_video, hm_out;
  int hm_stage = 4;
  add_data_options(hm, hm_data, true);
  hm->add_option("--ckpt", hm_ckpt, "checkpoint path")->required();
  hm->add_option("--video", hm_video, "video id")->required();
  hm->add_option("--stage", hm_stage, "fused stage, 1..4");
  hm->add_option("--out", hm_out, "output directory")->required();
  hm->callback(
      [&] { rc = run_heatmap(hm_data, hm_ckpt, hm_video, hm_stage, hm_out); });

  // cluster
  auto* cl = app.add_subcommand("cluster", "cluster audio embeddings");
  DataArgs cl_data;
  std::string cl_ckpt, cl_out;
  long cl_k = 20;
  unsigned long long cl_seed = 1;
  add_data_options(cl, cl_data, true);
  cl->add_option("--ckpt", cl_ckpt, "checkpoint path")->required();
  cl->add_option("--k", cl_k, "cluster count");
  cl->add_option("--seed", cl_seed, "k-means seed");
  cl->add_option("--out", cl_out, "output table path")->required();
  cl->callback([&] { rc = run_cluster(cl_data, cl_ckpt, cl_k, cl_seed, cl_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
