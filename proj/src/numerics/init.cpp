#include "anovit/init.hpp"

#include <cmath>

namespace anovit {

std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x9E3779B97F4A7C15ull;
  for (std::uint64_t p : parts) {
    std::uint64_t z = h ^ (p + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2));
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    h = z ^ (z >> 31);
  }
  return h;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

template <typename T>
NdArray<T> normal_init(Shape shape, double stddev, Rng& rng) {
  NdArray<T> out(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : out.data()) v = static_cast<T>(dist(rng));
  return out;
}

template <typename T>
NdArray<T> he_uniform_init(Shape shape, double fan_in, Rng& rng) {
  NdArray<T> out(std::move(shape));
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : out.data()) v = static_cast<T>(dist(rng));
  return out;
}

template NdArray<float> normal_init<float>(Shape, double, Rng&);
template NdArray<double> normal_init<double>(Shape, double, Rng&);
template NdArray<float> he_uniform_init<float>(Shape, double, Rng&);
template NdArray<double> he_uniform_init<double>(Shape, double, Rng&);

}  // namespace anovit
