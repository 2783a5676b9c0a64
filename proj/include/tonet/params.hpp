#pragma once

// Ordered collection of named tensors: trainable parameters plus
// non-trainable buffers (batch-norm running statistics). Insertion order is
// the checkpoint order.

#include "tonet/tensor.hpp"

#include <map>
#include <string>
#include <vector>

namespace tonet {

struct ParamEntry {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t, bool trainable = true) {
    if (index_.count(name))
      throw std::invalid_argument("param store: duplicate parameter '" + name + "'");
    index_[name] = entries_.size();
    entries_.push_back(ParamEntry{name, std::move(t), trainable});
    return entries_.back().tensor;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("param store: unknown parameter '" + name + "'");
    return entries_[it->second].tensor;
  }

  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("param store: unknown parameter '" + name + "'");
    return entries_[it->second].tensor;
  }

  bool trainable(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("param store: unknown parameter '" + name + "'");
    return entries_[it->second].trainable;
  }

  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::vector<ParamEntry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t value_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
  }

 private:
  std::vector<ParamEntry> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace tonet
