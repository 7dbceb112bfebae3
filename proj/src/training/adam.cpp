#include <cmath>

#include "anovit/training.hpp"

namespace anovit {

template <typename T>
void Adam<T>::step(ParameterStore<T>& params) {
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double lr = config_.learning_rate;
  for (auto& p : params) {
    if (!p.trainable) continue;
    auto it = moments_.find(p.name);
    if (it == moments_.end())
      it = moments_.emplace(p.name, std::pair{NdArray<T>(p.value.shape()), NdArray<T>(p.value.shape())}).first;
    NdArray<T>& m = it->second.first;
    NdArray<T>& v = it->second.second;
    T* w = p.value.ptr();
    const T* g = p.grad.ptr();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + config_.eps);
      w[i] = static_cast<T>(static_cast<double>(w[i]) - update);
    }
  }
}

template <typename T>
const NdArray<T>* Adam<T>::first_moment(const std::string& name) const {
  auto it = moments_.find(name);
  return it == moments_.end() ? nullptr : &it->second.first;
}

template <typename T>
const NdArray<T>* Adam<T>::second_moment(const std::string& name) const {
  auto it = moments_.find(name);
  return it == moments_.end() ? nullptr : &it->second.second;
}

template <typename T>
void Adam<T>::restore(std::size_t steps, std::map<std::string, std::pair<NdArray<T>, NdArray<T>>> moments) {
  steps_ = steps;
  moments_ = std::move(moments);
}

template class Adam<float>;
template class Adam<double>;

}  // namespace anovit
