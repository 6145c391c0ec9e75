#pragma once

#include <string>
#include <utility>
#include <vector>

#include "icrl/errors.hpp"
#include "icrl/tensor.hpp"

namespace icrl {

// Named trainable tensors in insertion order. Insertion order is the
// checkpoint order and the optimizer order, so it must be deterministic.
template <class T>
class ParameterSet {
 public:
  using Entry = std::pair<std::string, BasicTensor<T>>;

  BasicTensor<T>& add(std::string name, BasicTensor<T> tensor) {
    if (contains(name)) throw ContractError("duplicate parameter '" + name + "'");
    entries_.emplace_back(std::move(name), std::move(tensor));
    return entries_.back().second;
  }

  bool contains(const std::string& name) const {
    for (const auto& [n, t] : entries_)
      if (n == name) return true;
    return false;
  }

  const BasicTensor<T>& get(const std::string& name) const {
    for (const auto& [n, t] : entries_)
      if (n == name) return t;
    throw ContractError("unknown parameter '" + name + "'");
  }

  BasicTensor<T>& get(const std::string& name) {
    return const_cast<BasicTensor<T>&>(std::as_const(*this).get(name));
  }

  std::vector<BasicTensor<T>> with_prefix(const std::string& prefix) const {
    std::vector<BasicTensor<T>> out;
    for (const auto& [n, t] : entries_)
      if (n.rfind(prefix, 0) == 0) out.push_back(t);
    return out;
  }

  void zero_grad() {
    for (auto& [n, t] : entries_) t.zero_grad();
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  // Deep copy with fresh leaves; used for 64-bit shadow models and for
  // evaluation snapshots.
  template <class U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& [n, t] : entries_) out.add(n, icrl::cast<U>(t, t.requires_grad()));
    return out;
  }

 private:
  std::vector<Entry> entries_;
};

}  // namespace icrl
