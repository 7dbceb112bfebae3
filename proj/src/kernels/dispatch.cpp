#include <atomic>
#include <stdexcept>
#include <vector>

#include "anovit/kernels.hpp"

namespace anovit::kernels {

#if defined(ANOVIT_HAVE_AVX2)
const KernelTable<float>& avx2_table_impl();
#endif

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
  }
  return "unknown";
}

bool cpu_has_avx2_fma() {
#if defined(ANOVIT_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  static const bool ok = [] {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  }();
  return ok;
#else
  return false;
#endif
}

const KernelTable<float>* avx2_table() {
#if defined(ANOVIT_HAVE_AVX2)
  if (cpu_has_avx2_fma()) return &avx2_table_impl();
#endif
  return nullptr;
}

namespace {

std::atomic<Isa>& selected() {
  static std::atomic<Isa> isa{cpu_has_avx2_fma() ? Isa::avx2 : Isa::scalar};
  return isa;
}

template <typename T>
std::vector<T>& scratch(int slot) {
  thread_local std::vector<T> buffers[2];
  return buffers[slot];
}

template <typename T>
void transpose_into(std::size_t rows, std::size_t cols, const T* src, std::size_t ld,
                    std::vector<T>& dst) {
  dst.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * ld + c];
  }
}

}  // namespace

Isa active_isa() { return selected().load(std::memory_order_relaxed); }

void select_isa(Isa isa) {
  if (isa == Isa::avx2 && avx2_table() == nullptr) {
    throw std::invalid_argument("AVX2/FMA kernels are not available on this machine");
  }
  selected().store(isa, std::memory_order_relaxed);
}

template <>
const KernelTable<float>& active<float>() {
  if (active_isa() == Isa::avx2) {
    if (auto* t = avx2_table()) return *t;
  }
  return scalar_table<float>();
}

// No vector variant for double: it only backs the 64-bit gradient checks.
template <>
const KernelTable<double>& active<double>() {
  return scalar_table<double>();
}

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
             std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  active<T>().gemm(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
             std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  auto& bt = scratch<T>(0);
  transpose_into(n, k, b, ldb, bt);
  active<T>().gemm(m, n, k, a, lda, bt.data(), n, c, ldc, accumulate);
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
             std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  auto& at = scratch<T>(1);
  transpose_into(k, m, a, lda, at);
  active<T>().gemm(m, n, k, at.data(), k, b, ldb, c, ldc, accumulate);
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  active<T>().axpy(n, alpha, x, y);
}

#define ANOVIT_INSTANTIATE(T)                                                                 \
  template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*, std::size_t,      \
                           const T*, std::size_t, T*, std::size_t, bool);                     \
  template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, std::size_t,      \
                           const T*, std::size_t, T*, std::size_t, bool);                     \
  template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*, std::size_t,      \
                           const T*, std::size_t, T*, std::size_t, bool);                     \
  template void axpy<T>(std::size_t, T, const T*, T*);

ANOVIT_INSTANTIATE(float)
ANOVIT_INSTANTIATE(double)
#undef ANOVIT_INSTANTIATE

}  // namespace anovit::kernels
