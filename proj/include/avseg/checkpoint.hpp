// Checkpoint container: magic, line-oriented text header (config snapshot,
// epoch, metric history, parameter table), then raw little-endian f64 data
// in declaration order. Round-trips are bit-exact.
#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "avseg/model.hpp"

namespace avseg {

struct Checkpoint {
  ModelConfig model;
  long epoch = 0;
  std::vector<std::pair<std::string, double>> history;  // e.g. ep3.val_miou
  ParamDict params;
};

namespace ckpt_detail {

constexpr char kMagic[8] = {'A', 'V', 'S', 'G', 'C', 'K', 'P', '1'};

inline void put_u64(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ostringstream header;
  header.precision(17);
  for (const auto& [k, v] : ck.model.to_kv()) header << "kv " << k << " " << v << "\n";
  header << "epoch " << ck.epoch << "\n";
  for (const auto& [name, value] : ck.history)
    header << "hist " << name << " " << value << "\n";
  for (const std::string& name : ck.params.names()) {
    const Tensor& t = ck.params.at(name);
    header << "param " << name << " " << t.rank();
    for (long d = 0; d < t.rank(); ++d) header << " " << t.dim(d);
    header << "\n";
  }
  std::string htext = header.str();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint: " + path);
  out.write(ckpt_detail::kMagic, 8);
  ckpt_detail::put_u64(out, htext.size());
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const std::string& name : ck.params.names()) {
    const Tensor& t = ck.params.at(name);
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw Error("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, ckpt_detail::kMagic, 8) != 0)
    throw Error("not a checkpoint file: " + path);
  uint64_t hlen = ckpt_detail::get_u64(in);
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw Error("truncated checkpoint header: " + path);

  Checkpoint ck;
  std::map<std::string, std::string> kv;
  std::vector<std::pair<std::string, Shape>> layout;
  std::istringstream hs(htext);
  std::string line;
  while (std::getline(hs, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "kv") {
      std::string k, v;
      ls >> k >> v;
      kv[k] = v;
    } else if (tag == "epoch") {
      ls >> ck.epoch;
    } else if (tag == "hist") {
      std::string name;
      double value;
      ls >> name >> value;
      ck.history.emplace_back(name, value);
    } else if (tag == "param") {
      std::string name;
      long rank;
      ls >> name >> rank;
      Shape shape(rank);
      for (long d = 0; d < rank; ++d) ls >> shape[d];
      layout.emplace_back(name, shape);
    } else if (!tag.empty()) {
      throw Error("unknown checkpoint header tag '" + tag + "': " + path);
    }
  }
  ck.model = ModelConfig::from_kv(kv);
  for (auto& [name, shape] : layout) {
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.vec().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw Error("truncated checkpoint data: " + path);
    ck.params.add(name, std::move(t));
  }
  return ck;
}

/// Copies every parameter shared by name from `src` into `dst`. Shared names
/// with different shapes abort with a list of offenders; parameters missing
/// from `src` keep their fresh initialization. Returns the copied names.
inline std::vector<std::string> transfer_init(ParamDict& dst,
                                              const ParamDict& src) {
  std::vector<std::string> copied, mismatched;
  for (const std::string& name : dst.names()) {
    if (!src.has(name)) continue;
    const Tensor& from = src.at(name);
    Tensor& to = dst.at(name);
    if (!(from.shape() == to.shape())) {
      mismatched.push_back(name + " " + shape_str(from.shape()) + " vs " +
                           shape_str(to.shape()));
      continue;
    }
    to = from;
    copied.push_back(name);
  }
  if (!mismatched.empty()) {
    std::string msg = "transfer: incompatible parameter shapes:";
    for (const std::string& m : mismatched) msg += "\n  " + m;
    throw Error(msg);
  }
  return copied;
}

}  // namespace avseg
