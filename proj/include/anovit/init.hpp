#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

#include "anovit/ndarray.hpp"

namespace anovit {

using Rng = std::mt19937_64;

// Order-sensitive splitmix64 combination, for deriving per-epoch/per-item seeds.
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts);

// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);

template <typename T>
NdArray<T> normal_init(Shape shape, double stddev, Rng& rng);

// U(-b, b) with b = sqrt(6 / fan_in).
template <typename T>
NdArray<T> he_uniform_init(Shape shape, double fan_in, Rng& rng);

}  // namespace anovit
