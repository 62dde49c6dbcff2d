#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "carnas/config.hpp"
#include "carnas/errors.hpp"
#include "carnas/model.hpp"

namespace carnas {

// Checkpoint layout, all integers little-endian u64 unless noted:
//
//   "CRNS1"                      5 magic bytes
//   version                      u32 (= 1)
//   config_hash                  FNV-1a of the config JSON below
//   config_len, config bytes     resolved TrainConfig as compact JSON
//   feature_dim, num_classes
//   epoch                        completed epochs
//   rng_seed                     base seed; every stream derives from (seed, epoch, batch)
//   record_count
//   record_count x {
//     name_len, name bytes
//     rank, dims[rank]
//     count, count x f64         little-endian IEEE-754
//   }
//
// Each parameter "<name>" is followed by "<name>@m" and "<name>@v" (Adam
// moments) and "<name>@step" (rank 0, the update count as f64).

inline constexpr std::string_view kCheckpointMagic = "CRNS1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Model model;
  std::size_t epoch = 0;
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put_le(v, 4); }
  void u64(std::uint64_t v) { put_le(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { out_.append(s); }
  void str(std::string_view s) {
    u64(s.size());
    bytes(s);
  }
  std::string take() { return std::move(out_); }

 private:
  void put_le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view in) : in_(in) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
  std::uint64_t u64() { return get_le(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() {
    const std::uint64_t n = u64();
    return std::string(bytes(static_cast<std::size_t>(n)));
  }
  bool at_end() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::uint64_t get_le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

inline void write_record(ByteWriter& w, const std::string& name, const Tensor& t) {
  w.str(name);
  w.u64(t.rank());
  for (std::size_t d : t.shape()) w.u64(d);
  w.u64(t.size());
  for (double v : t.data()) w.f64(v);
}

}  // namespace detail

inline std::string serialize_checkpoint(const Model& m, std::size_t epoch) {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u64(m.cfg.hash());
  w.str(m.cfg.to_json().dump());
  w.u64(m.feature_dim);
  w.u64(m.num_classes);
  w.u64(epoch);
  w.u64(m.cfg.seed);
  w.u64(4 * m.params.size());
  for (const auto& [name, p] : m.params) {
    detail::write_record(w, name, p.value);
    detail::write_record(w, name + "@m", p.first_moment);
    detail::write_record(w, name + "@v", p.second_moment);
    detail::write_record(w, name + "@step", Tensor::scalar(static_cast<double>(p.step)));
  }
  return w.take();
}

/// Parses a checkpoint completely before building anything, so a corrupt
/// file never yields a partially restored model. When `expected_hash` is
/// given, a config-hash mismatch is an error unless `allow_config_mismatch`.
inline Checkpoint deserialize_checkpoint(std::string_view bytes, std::optional<std::uint64_t> expected_hash = {},
                                         bool allow_config_mismatch = false) {
  detail::ByteReader r(bytes);
  if (r.bytes(kCheckpointMagic.size()) != kCheckpointMagic) throw CheckpointError("not a checkpoint (bad magic)");
  if (const auto v = r.u32(); v != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(v));
  }
  const std::uint64_t hash = r.u64();
  const std::string cfg_text = r.str();
  TrainConfig cfg;
  try {
    cfg = TrainConfig::from_json(nlohmann::json::parse(cfg_text));
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint config unreadable: ") + e.what());
  }
  if (cfg.hash() != hash) throw CheckpointError("checkpoint config hash does not match its config");
  if (expected_hash && *expected_hash != hash && !allow_config_mismatch) {
    throw CheckpointError("checkpoint was written with a different config");
  }
  const std::uint64_t feature_dim = r.u64();
  const std::uint64_t num_classes = r.u64();
  const std::uint64_t epoch = r.u64();
  const std::uint64_t seed = r.u64();
  if (seed != cfg.seed) throw CheckpointError("checkpoint seed does not match its config");
  const std::uint64_t count = r.u64();
  std::map<std::string, Tensor> records;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint64_t rank = r.u64();
    if (rank > 2) throw CheckpointError("record '" + name + "' has rank " + std::to_string(rank));
    Shape shape;
    for (std::uint64_t d = 0; d < rank; ++d) shape.push_back(static_cast<std::size_t>(r.u64()));
    const std::uint64_t n = r.u64();
    if (n != shape_size(shape)) throw CheckpointError("record '" + name + "' size does not match its shape");
    std::vector<double> data(static_cast<std::size_t>(n));
    for (double& v : data) v = r.f64();
    if (!records.emplace(std::move(name), Tensor(std::move(shape), std::move(data))).second) {
      throw CheckpointError("duplicate checkpoint record");
    }
  }
  if (!r.at_end()) throw CheckpointError("trailing bytes after checkpoint records");

  Checkpoint ck{Model::create(cfg, static_cast<std::size_t>(feature_dim), static_cast<std::size_t>(num_classes)),
                static_cast<std::size_t>(epoch)};
  if (records.size() != 4 * ck.model.params.size()) throw CheckpointError("checkpoint record set does not match the model");
  auto take = [&](const std::string& key, const Tensor& like) {
    auto it = records.find(key);
    if (it == records.end()) throw CheckpointError("checkpoint lacks record '" + key + "'");
    if (it->second.shape() != like.shape()) {
      throw CheckpointError("record '" + key + "' has shape " + shape_str(it->second.shape()) + ", model expects " +
                            shape_str(like.shape()));
    }
    return it->second;
  };
  for (auto& [name, p] : ck.model.params) {
    p.value = take(name, p.value);
    p.first_moment = take(name + "@m", p.first_moment);
    p.second_moment = take(name + "@v", p.second_moment);
    p.step = static_cast<std::uint64_t>(take(name + "@step", Tensor::scalar(0)).item());
  }
  return ck;
}

inline void save_checkpoint(const Model& m, std::size_t epoch, const std::string& path) {
  const std::string bytes = serialize_checkpoint(m, epoch);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path, std::optional<std::uint64_t> expected_hash = {},
                                  bool allow_config_mismatch = false) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, expected_hash, allow_config_mismatch);
}

}  // namespace carnas
