#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fan/nets.hpp"
#include "fan/params.hpp"

namespace fan {

// Versioned binary container (little-endian):
//   magic "FANCKPT\0", u32 format version, u32 scalar kind (byte width),
//   NetConfig, stage tag, u64 step count, then per store the named tensors
//   (key, trainble flag, dims, raw data). Loading rejects any magic, version,
//   scalar or NetConfig mismatch.

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[8] = {'F', 'A', 'N', 'C', 'K', 'P', 'T', '\0'};

struct CheckpointMeta {
  std::uint32_t format_version = kCheckpointVersion;
  std::uint32_t scalar_bytes = 0;
  nets::NetConfig net;
  std::string stage_tag;
  std::uint64_t step = 0;
};

template <typename T>
struct Checkpoint {
  CheckpointMeta meta;
  ModelSet<T> models;
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void put_ivec(std::ostream& os, const std::vector<int>& v) {
  put_u32(os, static_cast<std::uint32_t>(v.size()));
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(int)));
}

inline std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw IoError("checkpoint: truncated file");
  return v;
}

inline std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw IoError("checkpoint: truncated file");
  return v;
}

inline std::string get_str(std::istream& is) {
  const std::uint32_t n = get_u32(is);
  if (n > (1u << 20)) throw IoError("checkpoint: implausible string length");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw IoError("checkpoint: truncated file");
  return s;
}

inline std::vector<int> get_ivec(std::istream& is) {
  const std::uint32_t n = get_u32(is);
  if (n > 64) throw IoError("checkpoint: implausible vector length");
  std::vector<int> v(n);
  is.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(int)));
  if (!is) throw IoError("checkpoint: truncated file");
  return v;
}

inline void put_net_config(std::ostream& os, const nets::NetConfig& cfg) {
  put_u32(os, static_cast<std::uint32_t>(cfg.image_side));
  put_u32(os, static_cast<std::uint32_t>(cfg.d_f));
  put_u32(os, static_cast<std::uint32_t>(cfg.d_z));
  put_u32(os, static_cast<std::uint32_t>(cfg.n_identities));
  put_ivec(os, cfg.enc_widths);
  put_ivec(os, cfg.dec_widths);
  put_ivec(os, cfg.dis_widths);
}

inline nets::NetConfig get_net_config(std::istream& is) {
  nets::NetConfig cfg;
  cfg.image_side = static_cast<int>(get_u32(is));
  cfg.d_f = static_cast<int>(get_u32(is));
  cfg.d_z = static_cast<int>(get_u32(is));
  cfg.n_identities = static_cast<int>(get_u32(is));
  cfg.enc_widths = get_ivec(is);
  cfg.dec_widths = get_ivec(is);
  cfg.dis_widths = get_ivec(is);
  return cfg;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::filesystem::path& path,
                     const nets::NetConfig& cfg, const std::string& stage_tag,
                     std::uint64_t step, const ModelSet<T>& models) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("save_checkpoint: cannot open " + path.string());
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(sizeof(T)));
  detail::put_net_config(os, cfg);
  detail::put_str(os, stage_tag);
  detail::put_u64(os, step);
  detail::put_u32(os, static_cast<std::uint32_t>(models.size()));
  for (const auto& [name, store] : models) {
    detail::put_str(os, name);
    detail::put_u64(os, store.version());
    const auto keys = store.keys();
    detail::put_u32(os, static_cast<std::uint32_t>(keys.size()));
    for (const std::string& key : keys) {
      const Tensor<T>& t = store.value(key);
      detail::put_str(os, key);
      os.put(store.trainable(key) ? 1 : 0);
      detail::put_ivec(os, t.shape);
      os.write(reinterpret_cast<const char*>(t.data.data()),
               static_cast<std::streamsize>(t.data.size() * sizeof(T)));
    }
  }
  if (!os) throw IoError("save_checkpoint: write failed for " + path.string());
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_checkpoint: cannot open " + path.string());
  char magic[8] = {};
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw IoError("load_checkpoint: not a checkpoint file: " + path.string());
  }
  Checkpoint<T> ckpt;
  ckpt.meta.format_version = detail::get_u32(is);
  if (ckpt.meta.format_version != kCheckpointVersion) {
    throw ConfigError("load_checkpoint: unsupported format version " +
                      std::to_string(ckpt.meta.format_version));
  }
  ckpt.meta.scalar_bytes = detail::get_u32(is);
  if (ckpt.meta.scalar_bytes != sizeof(T)) {
    throw ConfigError("load_checkpoint: scalar width mismatch (file " +
                      std::to_string(ckpt.meta.scalar_bytes) + ", expected " +
                      std::to_string(sizeof(T)) + ")");
  }
  ckpt.meta.net = detail::get_net_config(is);
  ckpt.meta.stage_tag = detail::get_str(is);
  ckpt.meta.step = detail::get_u64(is);
  const std::uint32_t n_stores = detail::get_u32(is);
  for (std::uint32_t i = 0; i < n_stores; ++i) {
    const std::string name = detail::get_str(is);
    ParamStore<T> store(name);
    (void)detail::get_u64(is);  // stored version, informational
    const std::uint32_t n_params = detail::get_u32(is);
    for (std::uint32_t j = 0; j < n_params; ++j) {
      const std::string key = detail::get_str(is);
      const int flag = is.get();
      if (flag != 0 && flag != 1) throw IoError("load_checkpoint: bad flag byte");
      Tensor<T> t(detail::get_ivec(is));
      is.read(reinterpret_cast<char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(T)));
      if (!is) throw IoError("load_checkpoint: truncated tensor data");
      store.add(key, std::move(t));
      store.set_trainable(key, flag == 1);
    }
    ckpt.models[name] = std::move(store);
  }
  return ckpt;
}

/// Strict load: additionally rejects NetConfig mismatches.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path,
                              const nets::NetConfig& expected) {
  Checkpoint<T> ckpt = load_checkpoint<T>(path);
  if (!(ckpt.meta.net == expected)) {
    throw ConfigError("load_checkpoint: NetConfig mismatch for " + path.string());
  }
  return ckpt;
}

}  // namespace fan
