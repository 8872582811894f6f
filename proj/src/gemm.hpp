#pragma once

#include <cstddef>

namespace icll::detail {

// C[m,n] = A[m,k] * B[k,n], all row-major. Rows are processed in fixed-size
// zero-padded blocks so every output row is produced by an identical kernel
// invocation: a row's values depend only on that row of A, never on m.
template <typename T>
void gemm_rowstable(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);

// dA[m,k] += dC[m,n] * B[k,n]^T
template <typename T>
void gemm_acc_nt(const T* dc, const T* b, T* da, std::size_t m, std::size_t k, std::size_t n);

// dB[k,n] += A[m,k]^T * dC[m,n]
template <typename T>
void gemm_acc_tn(const T* a, const T* dc, T* db, std::size_t m, std::size_t k, std::size_t n);

// Backward of one attention head. q, k, v, gq, gk, gv are [seq, dh] views with
// row stride `stride`; go is [seq, dh] with row stride `go_stride`; p holds the
// [seq, seq] post-softmax weights (masked entries zero). Gradients accumulate.
template <typename T>
void attention_head_backward(const T* q, const T* k, const T* v, std::size_t stride, const T* p,
                             const T* go, std::size_t go_stride, T* gq, T* gk, T* gv,
                             std::size_t seq, std::size_t dh, T scale);

}  // namespace icll::detail
