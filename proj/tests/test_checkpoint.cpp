#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "avseg/checkpoint.hpp"
#include "avseg/model.hpp"

using namespace avseg;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "avseg_ckpt_test";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

Checkpoint make_checkpoint(unsigned long long seed) {
  ModelConfig cfg = ModelConfig::desk(TaskSetting::ms3(2));
  AvsModel model = AvsModel::init(cfg, seed);
  Checkpoint ck;
  ck.model = cfg;
  ck.epoch = 7;
  ck.history = {{"ep1.train_loss", 0.6931471805599453},
                {"ep1.val_miou", 0.25},
                {"ep7.val_miou", 0.875}};
  ck.params = model.params;
  return ck;
}

}  // namespace

TEST_CASE("checkpoints round-trip bit exactly") {
  Checkpoint ck = make_checkpoint(13);
  fs::path path = temp_file("round.ckpt");
  save_checkpoint(path.string(), ck);

  Checkpoint back = load_checkpoint(path.string());
  REQUIRE(back.epoch == ck.epoch);
  REQUIRE(back.history == ck.history);
  REQUIRE(back.model.to_kv() == ck.model.to_kv());
  REQUIRE(back.params.names() == ck.params.names());
  for (const std::string& name : ck.params.names()) {
    const Tensor& a = ck.params.at(name);
    const Tensor& b = back.params.at(name);
    REQUIRE(a.shape() == b.shape());
    for (long i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
  }

  // Save-load-save must reproduce the file byte for byte.
  fs::path again = temp_file("round2.ckpt");
  save_checkpoint(again.string(), back);
  REQUIRE(slurp(path) == slurp(again));
}

TEST_CASE("loaded parameters reproduce the forward pass bitwise") {
  Checkpoint ck = make_checkpoint(29);
  fs::path path = temp_file("forward.ckpt");
  save_checkpoint(path.string(), ck);
  Checkpoint back = load_checkpoint(path.string());

  Rng rng(5);
  Tensor frames = rng.uniform_tensor({2, 32, 32, 3}, 0.0, 1.0);
  std::vector<double> wave(32000);
  for (size_t i = 0; i < wave.size(); ++i)
    wave[i] = 0.2 * std::sin(0.07 * double(i));

  AvsModel m1{ck.model, ck.params};
  AvsModel m2{back.model, back.params};
  Tensor s1, s2;
  {
    Graph g;
    BoundParams bp(g, m1.params);
    s1 = g.value(m1.forward(g, bp, g.input(frames), g.input(m1.logmel(wave))).scores);
  }
  {
    Graph g;
    BoundParams bp(g, m2.params);
    s2 = g.value(m2.forward(g, bp, g.input(frames), g.input(m2.logmel(wave))).scores);
  }
  REQUIRE(s1.size() == s2.size());
  for (long i = 0; i < s1.size(); ++i) REQUIRE(s1[i] == s2[i]);
}

TEST_CASE("checkpoint loader rejects foreign and truncated files") {
  fs::path bogus = temp_file("bogus.ckpt");
  {
    std::ofstream out(bogus, std::ios::binary);
    out << "definitely not a checkpoint";
  }
  REQUIRE_THROWS_WITH(load_checkpoint(bogus.string()),
                      Catch::Matchers::ContainsSubstring("not a checkpoint"));

  Checkpoint ck = make_checkpoint(3);
  fs::path full = temp_file("full.ckpt");
  save_checkpoint(full.string(), ck);
  std::string bytes = slurp(full);
  fs::path cut = temp_file("cut.ckpt");
  {
    std::ofstream out(cut, std::ios::binary);
    out.write(bytes.data(), static_cast<long>(bytes.size()) - 64);
  }
  REQUIRE_THROWS_WITH(load_checkpoint(cut.string()),
                      Catch::Matchers::ContainsSubstring("truncated"));

  REQUIRE_THROWS_AS(load_checkpoint(temp_file("missing.ckpt").string()), Error);
}

TEST_CASE("transfer initialization copies matching parameters only") {
  ModelConfig cfg = ModelConfig::desk(TaskSetting::ms3(2));
  AvsModel src = AvsModel::init(cfg, 77);
  AvsModel dst = AvsModel::init(cfg, 78);

  ParamDict pruned;  // source without the decoder head
  for (const std::string& name : src.params.names())
    if (name.rfind("decoder.", 0) != 0) pruned.add(name, src.params.at(name));

  ParamDict before = dst.params;
  std::vector<std::string> copied = transfer_init(dst.params, pruned);
  REQUIRE(copied.size() == pruned.size());
  for (const std::string& name : dst.params.names()) {
    const Tensor& now = dst.params.at(name);
    const Tensor& want = name.rfind("decoder.", 0) == 0 ? before.at(name)
                                                        : src.params.at(name);
    for (long i = 0; i < now.size(); ++i) REQUIRE(now[i] == want[i]);
  }
}

TEST_CASE("transfer rejects shape-incompatible sources") {
  ModelConfig a = ModelConfig::desk(TaskSetting::ms3(2));
  ModelConfig b = a;
  b.fusion_channels = 8;  // narrower necks and decoder input
  AvsModel src = AvsModel::init(a, 1);
  AvsModel dst = AvsModel::init(b, 2);
  REQUIRE_THROWS_WITH(
      transfer_init(dst.params, src.params),
      Catch::Matchers::ContainsSubstring("incompatible parameter shapes"));
}

TEST_CASE("task transfer between S4 and MS3 shares every parameter") {
  AvsModel s4 = AvsModel::init(ModelConfig::desk(TaskSetting::s4(2)), 5);
  AvsModel ms3 = AvsModel::init(ModelConfig::desk(TaskSetting::ms3(2)), 6);
  std::vector<std::string> copied = transfer_init(ms3.params, s4.params);
  REQUIRE(copied.size() == ms3.params.size());
  for (const std::string& name : ms3.params.names())
    for (long i = 0; i < ms3.params.at(name).size(); ++i)
      REQUIRE(ms3.params.at(name)[i] == s4.params.at(name)[i]);
}
