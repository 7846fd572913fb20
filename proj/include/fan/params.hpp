#pragma once

#include <map>
#include <string>
#include <vector>

#include "fan/tensor.hpp"

namespace fan {

/// Named parameter tensors for one model, with per-parameter trainable flags.
///
/// Keys are unique and shapes are fixed after `add`. Any mutating access bumps
/// the version tag. The checksum covers keys, shapes and raw values (not the
/// trainable flags), so "frozen parameters bitwise unchanged" is directly
/// checkable.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(std::string name) : name_(std::move(name)) {}

  const std::string& name() const { return name_; }
  void set_name(std::string n) { name_ = std::move(n); }

  void add(const std::string& key, Tensor<T> value) {
    require(!entries_.count(key), "ParamStore: duplicate key " + key);
    entries_[key] = Entry{std::move(value), true};
    ++version_;
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  const Tensor<T>& value(const std::string& key) const {
    auto it = entries_.find(key);
    require(it != entries_.end(), "ParamStore[" + name_ + "]: no key " + key);
    return it->second.value;
  }

  /// Mutable access; bumps the version tag. The shape must not be changed.
  Tensor<T>& mutable_value(const std::string& key) {
    auto it = entries_.find(key);
    require(it != entries_.end(), "ParamStore[" + name_ + "]: no key " + key);
    ++version_;
    return it->second.value;
  }

  void assign(const std::string& key, const Tensor<T>& v) {
    Tensor<T>& dst = mutable_value(key);
    require(dst.same_shape(v), "ParamStore::assign: shape mismatch for " + key);
    dst.data = v.data;
  }

  bool trainable(const std::string& key) const {
    auto it = entries_.find(key);
    require(it != entries_.end(), "ParamStore[" + name_ + "]: no key " + key);
    return it->second.trainable;
  }

  void set_trainable(const std::string& key, bool flag) {
    auto it = entries_.find(key);
    require(it != entries_.end(), "ParamStore[" + name_ + "]: no key " + key);
    it->second.trainable = flag;
  }

  void set_all_trainable(bool flag) {
    for (auto& [k, e] : entries_) e.trainable = flag;
  }

  std::vector<std::string> keys() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, e] : entries_) out.push_back(k);
    return out;
  }

  std::size_t size() const { return entries_.size(); }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& [k, e] : entries_) n += e.value.numel();
    return n;
  }

  std::uint64_t version() const { return version_; }

  /// Covers keys, shapes and values; excludes the store name and trainable
  /// flags, so renamed copies (enc_l from enc_h) compare equal.
  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [k, e] : entries_) {
      h = fnv1a64(k, h);
      h = fan::checksum(e.value, h);
    }
    return h;
  }

 private:
  struct Entry {
    Tensor<T> value;
    bool trainable = true;
  };

  std::string name_;
  std::map<std::string, Entry> entries_;
  std::uint64_t version_ = 0;
};

/// Marks the named parameters (all of them when `keys` is empty) untrainable.
/// Subsequent optimizer steps leave their values bitwise unchanged.
template <typename T>
ParamStore<T>& freeze(ParamStore<T>& store,
                      const std::vector<std::string>& keys = {}) {
  if (keys.empty()) {
    store.set_all_trainable(false);
  } else {
    for (const auto& k : keys) store.set_trainable(k, false);
  }
  return store;
}

template <typename T>
ParamStore<T>& unfreeze(ParamStore<T>& store,
                        const std::vector<std::string>& keys = {}) {
  if (keys.empty()) {
    store.set_all_trainable(true);
  } else {
    for (const auto& k : keys) store.set_trainable(k, true);
  }
  return store;
}

/// Canonical model names: "enc_h", "enc_l", "enc_z", "dec", "dis", "fc".
template <typename T>
using ModelSet = std::map<std::string, ParamStore<T>>;

template <typename T>
std::uint64_t checksum(const ModelSet<T>& models) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [name, store] : models) {
    h = fnv1a64(name, h);
    const std::uint64_t c = store.checksum();
    h = fnv1a64(&c, sizeof(c), h);
  }
  return h;
}

/// Gradients keyed by parameter name within one store.
template <typename T>
using GradMap = std::map<std::string, Tensor<T>>;

}  // namespace fan
