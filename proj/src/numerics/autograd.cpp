#include "anovit/autograd.hpp"

#include <algorithm>

namespace anovit {

template <typename T>
Parameter<T>& ParameterStore<T>::add(std::string name, NdArray<T> value, bool trainable) {
  if (index_.contains(name)) throw ConfigError("ParameterStore: duplicate parameter '" + name + "'");
  index_.emplace(name, params_.size());
  NdArray<T> grad(value.shape());
  params_.push_back(Parameter<T>{std::move(name), std::move(value), std::move(grad), trainable});
  return params_.back();
}

template <typename T>
Parameter<T>& ParameterStore<T>::get(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("ParameterStore: unknown parameter '" + std::string(name) + "'");
  return params_[it->second];
}

template <typename T>
const Parameter<T>& ParameterStore<T>::get(std::string_view name) const {
  return const_cast<ParameterStore*>(this)->get(name);
}

template <typename T>
bool ParameterStore<T>::contains(std::string_view name) const {
  return index_.find(name) != index_.end();
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) {
    if (p.grad.shape() != p.value.shape()) p.grad = NdArray<T>(p.value.shape());
    else p.grad.fill(T{0});
  }
}

template <typename T>
Var<T> Var<T>::constant(NdArray<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->owned = std::move(value);
  node->op = "constant";
  return Var(std::move(node));
}

template <typename T>
Var<T> Var<T>::param(Parameter<T>& p) {
  auto node = std::make_shared<Node<T>>();
  node->external = &p.value;
  node->param = &p;
  node->op = "parameter";
  if (auto* tape = Tape<T>::active(); tape && p.trainable) {
    node->requires_grad = true;
    tape->record(node);
  }
  return Var(std::move(node));
}

template <typename T>
thread_local Tape<T>* Tape<T>::active_ = nullptr;

template <typename T>
Tape<T>::Tape() : previous_(active_) {
  active_ = this;
}

template <typename T>
Tape<T>::~Tape() {
  active_ = previous_;
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  if (!loss.defined() || loss.value().size() != 1) {
    throw DimensionError("Tape::backward: loss must be a single scalar");
  }
  if (!loss.requires_grad()) {
    nodes_.clear();
    return;
  }
  loss.node().grad_buffer()[0] = T{1};
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node<T>& node = **it;
    if (node.backward && !node.grad.empty()) node.backward(node);
  }
  for (auto& node : nodes_) {
    if (!node->param || node->grad.empty()) continue;
    auto& target = node->param->grad;
    if (target.shape() != node->grad.shape()) target = NdArray<T>(node->grad.shape());
    auto src = node->grad.data();
    auto dst = target.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  nodes_.clear();
}

template <typename T>
std::string Tape<T>::first_non_finite() const {
  for (const auto& node : nodes_) {
    if (!node->value().all_finite()) {
      if (node->param) return std::string(node->op) + " '" + node->param->name + "'";
      return node->op;
    }
  }
  return {};
}

template <typename T>
NoGradGuard<T>::NoGradGuard() : saved_(Tape<T>::active_) {
  Tape<T>::active_ = nullptr;
}

template <typename T>
NoGradGuard<T>::~NoGradGuard() {
  Tape<T>::active_ = saved_;
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class Var<float>;
template class Var<double>;
template class Tape<float>;
template class Tape<double>;
template class NoGradGuard<float>;
template class NoGradGuard<double>;

}  // namespace anovit
