#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "softsense/nn/tensor.hpp"

namespace softsense::nn {

/// Raised when backward runs on a tape that was already consumed or whose
/// parameters changed after the forward pass.
class StaleTapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  std::uint64_t version = 0;  // bumped on every in-place update

  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape) {}
  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), T(0)); }
};

/// Owns parameters with stable addresses, in registration order.
template <class T>
class ParameterSet {
 public:
  Parameter<T>& add(std::string name, Tensor<T> value) {
    for (const auto& p : params_) {
      if (p.name == name) throw std::invalid_argument("duplicate parameter name: " + name);
    }
    return params_.emplace_back(std::move(name), std::move(value));
  }
  std::deque<Parameter<T>>& all() { return params_; }
  const std::deque<Parameter<T>>& all() const { return params_; }
  Parameter<T>* find(const std::string& name) {
    for (auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }
  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

 private:
  std::deque<Parameter<T>> params_;
};

/// Reverse-mode tape. Ops append nodes during the forward pass; backward()
/// replays them in reverse and accumulates into Parameter::grad.
template <class T>
class Tape {
 public:
  struct Var {
    int id = -1;
  };
  using BackwardFn = std::function<void(Tape&, int self)>;

  Var constant(Tensor<T> value) { return push(std::move(value), false, {}); }
  /// A leaf whose gradient is kept on the tape (inspect with grad()).
  Var variable(Tensor<T> value) { return push(std::move(value), true, {}); }
  /// Records a parameter by reference; its gradient accumulates directly into p.grad.
  Var parameter(Parameter<T>& p) {
    Var v = push(Tensor<T>(), true, {});
    auto& n = nodes_[v.id];
    n.ref = &p.value;
    n.param = &p;
    n.param_version = p.version;
    return v;
  }

  /// Appends an op result; `backward` runs only if some input requires a gradient.
  Var push(Tensor<T> value, bool requires_grad, BackwardFn backward) {
    if (consumed_) throw StaleTapeError("tape already consumed by backward()");
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad && grad_enabled_;
    if (requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor<T>& value(Var v) const { return value_of(nodes_.at(v.id)); }
  const Shape& shape(Var v) const { return value(v).shape; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  /// Gradient of a node after backward(); zeros if nothing flowed into it.
  Tensor<T> grad(Var v) const {
    const auto& n = nodes_.at(v.id);
    if (n.param) return n.param->grad;
    return n.grad.size() ? n.grad : Tensor<T>(value_of(n).shape);
  }

  /// Gradient buffer of node `id`, zero-initialized on first use. For ops only.
  Tensor<T>& grad_buffer(int id) {
    auto& n = nodes_[id];
    if (n.param) return n.param->grad;
    const auto& v = value_of(n);
    if (n.grad.size() != v.size()) n.grad = Tensor<T>(v.shape);
    return n.grad;
  }
  const Tensor<T>& value_of(int id) const { return value_of(nodes_[id]); }
  bool requires_grad_of(int id) const { return nodes_[id].requires_grad; }

  void backward(Var out, const Tensor<T>& seed) {
    if (consumed_) throw StaleTapeError("backward() called twice on the same tape");
    for (const auto& n : nodes_) {
      if (n.param && n.param->version != n.param_version) {
        throw StaleTapeError("parameter '" + n.param->name + "' changed after the forward pass");
      }
    }
    if (seed.shape != value(out).shape) {
      throw ShapeError("backward seed shape " + shape_string(seed.shape) + " != output shape " +
                       shape_string(value(out).shape));
    }
    consumed_ = true;
    if (!requires_grad(out)) return;
    auto& g = grad_buffer(out.id);
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += seed.data[i];
    for (int id = out.id; id >= 0; --id) {
      auto& n = nodes_[id];
      if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
      n.backward(*this, id);
    }
  }

  /// Seeds a scalar output with 1.
  void backward(Var out) { backward(out, Tensor<T>(value(out).shape, T(1))); }

  /// Inference-only tapes record values without backward closures.
  void disable_grad() { grad_enabled_ = false; }

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
    const Tensor<T>* ref = nullptr;  // parameter value, not copied
    Parameter<T>* param = nullptr;
    std::uint64_t param_version = 0;
  };
  static const Tensor<T>& value_of(const Node& n) { return n.ref ? *n.ref : n.value; }
  std::vector<Node> nodes_;
  bool consumed_ = false;
  bool grad_enabled_ = true;
};

}  // namespace softsense::nn
