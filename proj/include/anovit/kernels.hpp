#pragma once

// Dense inner-loop kernels. Every routine has a portable scalar reference;
// x86-64 builds additionally carry an AVX2/FMA variant for float that is
// selected at runtime when the CPU supports it.
//
// All GEMM variants accumulate each output element as a single in-order
// chain over k, so a row's result never depends on how many rows are in the
// call or on the tile a row lands in. Batched and per-image evaluation give
// bit-identical outputs.

#include <cstddef>
#include <string_view>

namespace anovit::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

template <typename T>
struct KernelTable {
  Isa isa;
  // C[m x n] (+)= A[m x k] * B[k x n], all row-major with leading dimensions.
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
               const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);
  // y += alpha * x
  void (*axpy)(std::size_t n, T alpha, const T* x, T* y);
};

template <typename T>
const KernelTable<T>& scalar_table();

// nullptr when the build has no AVX2 variant or the CPU lacks AVX2+FMA.
const KernelTable<float>* avx2_table();

bool cpu_has_avx2_fma();

// Currently selected kernels. Defaults to the widest supported ISA.
template <typename T>
const KernelTable<T>& active();

Isa active_isa();

// Overrides runtime selection (tests, --isa flag). Throws std::invalid_argument
// when the requested ISA is unavailable.
void select_isa(Isa isa);

// Convenience entry points on the active table. The _nt and _tn forms
// transpose their second / first operand into scratch and reuse gemm.
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
             std::size_t ldb, T* c, std::size_t ldc, bool accumulate);

// C[m x n] (+)= A[m x k] * B^T, with B stored [n x k].
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
             std::size_t ldb, T* c, std::size_t ldc, bool accumulate);

// C[m x n] (+)= A^T * B[k x n], with A stored [k x m].
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
             std::size_t ldb, T* c, std::size_t ldc, bool accumulate);

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y);

}  // namespace anovit::kernels
