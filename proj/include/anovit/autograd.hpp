#pragma once

// Reverse-mode differentiation on a linear tape.
//
// Nodes are appended to the active Tape in creation order, which is already a
// topological order; backward replays them in reverse. Without an active tape
// ops run in inference mode: no closures are kept and intermediates are freed
// as soon as the last Var referencing them goes away.

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "anovit/ndarray.hpp"

namespace anovit {

template <typename T>
struct Parameter {
  std::string name;
  NdArray<T> value;
  NdArray<T> grad;
  bool trainable = true;
};

// Named learnable arrays in registration order. References returned by add()
// and get() stay valid for the lifetime of the store.
template <typename T>
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter<T>& add(std::string name, NdArray<T> value, bool trainable = true);

  Parameter<T>& get(std::string_view name);
  const Parameter<T>& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t size() const noexcept { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();

 private:
  std::deque<Parameter<T>> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

template <typename T>
struct Node {
  NdArray<T> owned;
  const NdArray<T>* external = nullptr;  // parameter leaves alias the store
  NdArray<T> grad;
  std::function<void(Node&)> backward;
  Parameter<T>* param = nullptr;
  bool requires_grad = false;
  const char* op = "";

  const NdArray<T>& value() const noexcept { return external ? *external : owned; }

  // Gradient buffer, zero-allocated on first use.
  NdArray<T>& grad_buffer() {
    if (grad.empty()) grad = NdArray<T>(value().shape());
    return grad;
  }
};

template <typename T>
class Tape;

template <typename T>
class NoGradGuard;

template <typename T>
class Var {
 public:
  Var() = default;

  static Var constant(NdArray<T> value);
  // Leaf bound to a parameter; tracked only when a tape is active and the
  // parameter is trainable.
  static Var param(Parameter<T>& p);

  const NdArray<T>& value() const { return node_->value(); }
  const Shape& shape() const { return node_->value().shape(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  bool defined() const noexcept { return static_cast<bool>(node_); }

  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& node_ptr() const noexcept { return node_; }

  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node<T>> node_;
};

// While alive, the tape records every differentiable op on this thread.
// Tapes nest: destroying one reactivates the previous tape.
template <typename T>
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() noexcept { return active_; }

  void record(std::shared_ptr<Node<T>> node) { nodes_.push_back(std::move(node)); }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1, replays the tape in reverse and adds leaf
  // gradients into Parameter::grad of trainable parameters. The tape is
  // cleared afterwards.
  void backward(const Var<T>& loss);

  // Name of the first recorded op whose output holds a NaN/Inf, or empty.
  std::string first_non_finite() const;

  void clear() { nodes_.clear(); }

 private:
  friend class NoGradGuard<T>;

  std::vector<std::shared_ptr<Node<T>>> nodes_;
  Tape* previous_ = nullptr;
  static thread_local Tape* active_;
};

// Disables recording on this thread while alive.
template <typename T>
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape<T>* saved_;
};

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;
extern template class Var<float>;
extern template class Var<double>;
extern template class Tape<float>;
extern template class Tape<double>;
extern template class NoGradGuard<float>;
extern template class NoGradGuard<double>;

}  // namespace anovit
