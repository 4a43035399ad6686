#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hemafuse/errors.hpp"
#include "hemafuse/tape.hpp"
#include "hemafuse/tensor.hpp"

namespace hemafuse {

/// Ordered collection of named tensors. Insertion order is the canonical
/// order for checkpoints and optimizer state.
template <typename Scalar>
class ParameterSet {
 public:
  using Entry = std::pair<std::string, Tensor<Scalar>>;

  void add(std::string name, Tensor<Scalar> value) {
    if (contains(name)) throw ArgumentError("duplicate parameter '" + name + "'");
    index_.emplace(name, items_.size());
    items_.emplace_back(std::move(name), std::move(value));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<Scalar>& operator[](const std::string& name) { return items_[position(name)].second; }
  const Tensor<Scalar>& operator[](const std::string& name) const {
    return items_[position(name)].second;
  }

  std::size_t size() const { return items_.size(); }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  const Entry& at(std::size_t i) const { return items_.at(i); }
  Entry& at(std::size_t i) { return items_.at(i); }

  Index total_size() const {
    Index n = 0;
    for (const auto& [name, t] : items_) n += t.size();
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [name, t] : items_) out.push_back(name);
    return out;
  }

  /// Same names and shapes, all zeros.
  ParameterSet zeros_like() const {
    ParameterSet out;
    for (const auto& [name, t] : items_) out.add(name, Tensor<Scalar>::zeros_like(t));
    return out;
  }

  template <typename Other>
  ParameterSet<Other> cast() const {
    ParameterSet<Other> out;
    for (const auto& [name, t] : items_) out.add(name, t.template cast<Other>());
    return out;
  }

  /// Throws ShapeError unless `other` has identical names, order and shapes.
  template <typename Other>
  void require_same_layout(const ParameterSet<Other>& other) const {
    if (other.size() != size())
      throw ShapeError("parameter set sizes differ: " + std::to_string(size()) + " vs " +
                       std::to_string(other.size()));
    for (std::size_t i = 0; i < size(); ++i) {
      const auto& a = items_[i];
      const auto& b = other.at(i);
      if (a.first != b.first || a.second.shape() != b.second.shape())
        throw ShapeError("parameter mismatch: " + a.first + shape_string(a.second.shape()) +
                         " vs " + b.first + shape_string(b.second.shape()));
    }
  }

  bool operator==(const ParameterSet& o) const { return items_ == o.items_; }

 private:
  std::size_t position(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ArgumentError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<Entry> items_;
  std::map<std::string, std::size_t> index_;
};

/// Parameters placed on a tape, looked up by name.
template <typename Scalar>
class BoundParameters {
 public:
  using Var = typename Tape<Scalar>::Var;

  BoundParameters(Tape<Scalar>& tape, const ParameterSet<Scalar>& params, bool track_gradients) {
    for (const auto& [name, t] : params) {
      Var v = track_gradients ? tape.variable(t) : tape.constant(t);
      vars_.emplace(name, v);
      order_.push_back(v);
    }
  }

  /// Binds existing tape vars to names, e.g. when a caller owns the inputs.
  BoundParameters(const std::vector<std::string>& names, const std::vector<Var>& vars) {
    if (names.size() != vars.size()) throw ArgumentError("BoundParameters: names and vars differ in length");
    for (std::size_t i = 0; i < names.size(); ++i) {
      vars_.emplace(names[i], vars[i]);
      order_.push_back(vars[i]);
    }
  }

  Var operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw ArgumentError("unknown parameter '" + name + "'");
    return it->second;
  }

  /// Gradients after tape.backward(), in the parameter set's order.
  ParameterSet<Scalar> gradients(const Tape<Scalar>& tape, const ParameterSet<Scalar>& params) const {
    ParameterSet<Scalar> out;
    for (std::size_t i = 0; i < order_.size(); ++i) out.add(params.at(i).first, tape.grad(order_[i]));
    return out;
  }

 private:
  std::map<std::string, Var> vars_;
  std::vector<Var> order_;
};

}  // namespace hemafuse
