#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "roadfix/errors.hpp"
#include "roadfix/hash.hpp"
#include "roadfix/model.hpp"
#include "roadfix/nn/layers.hpp"

namespace roadfix {

/// Binary layout (little-endian):
///   "RFXCKPT\0" u32 version
///   u64 len + config JSON, u64 config hash, u64 len + meta JSON
///   u32 count, then per tensor: u32 len + name, 4 x i32 shape, float32 data
///   u64 FNV-1a of every preceding byte
inline constexpr char kCheckpointMagic[8] = {'R', 'F', 'X', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  std::array<int, 4> shape{};
  std::vector<float> data;
};

struct Checkpoint {
  nlohmann::json config;
  std::uint64_t config_hash = 0;
  nlohmann::json meta;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

namespace detail {

class ByteWriter {
 public:
  template <typename V>
  void pod(const V& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof v);
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint64_t>(s.size()));
    buf_.append(s);
  }
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& b) : b_(b) {}
  template <typename V>
  V pod() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, b_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, b_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > b_.size() - pos_) throw CheckpointError("checkpoint truncated");
  }
  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& c) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.pod(kCheckpointVersion);
  w.str(c.config.dump());
  w.pod(c.config_hash);
  w.str(c.meta.dump());
  w.pod(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    w.pod(static_cast<std::uint32_t>(t.name.size()));
    w.raw(t.name.data(), t.name.size());
    for (int d : t.shape) w.pod(static_cast<std::int32_t>(d));
    w.raw(t.data.data(), t.data.size() * sizeof(float));
  }
  std::string out = w.bytes();
  const std::uint64_t sum = fnv1a64(out);
  out.append(reinterpret_cast<const char*>(&sum), sizeof sum);
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kCheckpointMagic + sizeof(std::uint64_t) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - sizeof stored, sizeof stored);
  const std::string body = bytes.substr(0, bytes.size() - sizeof stored);
  if (fnv1a64(body) != stored) throw CheckpointError("checkpoint checksum mismatch (file corrupted)");
  detail::ByteReader r(body);
  char magic[8];
  r.raw(magic, sizeof magic);
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  try {
    c.config = nlohmann::json::parse(r.str());
    c.config_hash = r.pod<std::uint64_t>();
    c.meta = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header: ") + e.what());
  }
  const auto count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name.resize(r.pod<std::uint32_t>());
    r.raw(t.name.data(), t.name.size());
    std::size_t n = 1;
    for (int& d : t.shape) {
      d = r.pod<std::int32_t>();
      if (d < 0) throw CheckpointError("negative dimension in tensor '" + t.name + "'");
      n *= static_cast<std::size_t>(d);
    }
    if (n > body.size()) throw CheckpointError("checkpoint truncated");
    t.data.resize(n);
    r.raw(t.data.data(), n * sizeof(float));
    c.tensors.push_back(std::move(t));
  }
  if (r.pos() != body.size()) throw CheckpointError("trailing bytes in checkpoint");
  return c;
}

/// Written to a sibling temp file and renamed, so a crash never leaves a
/// half-written checkpoint under the final name.
inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    const std::string bytes = encode_checkpoint(c);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

template <typename T>
void append_tensors(Checkpoint& c, const std::vector<nn::ParamRef<T>>& params) {
  for (const auto& p : params) {
    NamedTensor t{p.name, p.value->shape(), {}};
    t.data.reserve(p.value->size());
    for (T v : p.value->values()) t.data.push_back(static_cast<float>(v));
    c.tensors.push_back(std::move(t));
  }
}

/// Copies stored values into `params`; every name must be present with the
/// same shape.
template <typename T>
void restore_tensors(const Checkpoint& c, std::vector<nn::ParamRef<T>>& params) {
  std::map<std::string, const NamedTensor*> index;
  for (const auto& t : c.tensors) index[t.name] = &t;
  for (auto& p : params) {
    const auto it = index.find(p.name);
    if (it == index.end()) throw CheckpointError("checkpoint lacks tensor '" + p.name + "'");
    if (it->second->shape != p.value->shape()) {
      throw CheckpointError("tensor '" + p.name + "' has shape " + Tensor<T>::shape_string(it->second->shape) +
                            ", expected " + p.value->shape_string());
    }
    const auto& src = it->second->data;
    for (std::size_t i = 0; i < src.size(); ++i) (*p.value)[i] = static_cast<T>(src[i]);
  }
}

/// Model config stored in a checkpoint, after checking it against the
/// recorded hash and, when given, against the caller's expected config.
inline ModelConfig checkpoint_model_config(const Checkpoint& c, const ModelConfig* expected = nullptr) {
  if (!c.config.contains("model")) throw CheckpointError("checkpoint config has no model section");
  ModelConfig stored;
  try {
    stored = c.config.at("model").get<ModelConfig>();
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint model config: ") + e.what());
  }
  if (config_hash(stored) != c.config_hash) throw CheckpointError("checkpoint config hash does not match its config");
  if (expected && config_hash(*expected) != c.config_hash) {
    throw CheckpointError("checkpoint was written for a different model config (hash mismatch)");
  }
  return stored;
}

/// Generator rebuilt from a checkpoint (architecture and weights).
template <typename T = float>
Generator<T> load_generator(const Checkpoint& c, const ModelConfig* expected = nullptr) {
  const ModelConfig cfg = checkpoint_model_config(c, expected);
  Generator<T> g(cfg.generator);
  auto params = g.parameters();
  restore_tensors(c, params);
  return g;
}

}  // namespace roadfix
