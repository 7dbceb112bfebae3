#include <algorithm>

#include "anovit/kernels.hpp"

namespace anovit::kernels {
namespace {

template <typename T>
void gemm_scalar(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
                 const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    if (!accumulate) std::fill(crow, crow + n, T{0});
    const T* arow = a + i * lda;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void axpy_scalar(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

template <>
const KernelTable<float>& scalar_table<float>() {
  static const KernelTable<float> table{Isa::scalar, &gemm_scalar<float>, &axpy_scalar<float>};
  return table;
}

template <>
const KernelTable<double>& scalar_table<double>() {
  static const KernelTable<double> table{Isa::scalar, &gemm_scalar<double>, &axpy_scalar<double>};
  return table;
}

}  // namespace anovit::kernels
