#include "gemm.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cstring>
#include <vector>

namespace icll::detail {
namespace {

constexpr std::size_t kRowBlock = 128;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

template <typename T>
void gemm_rowstable(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    std::fill(c, c + m * n, T(0));
    return;
  }
  const auto ik = static_cast<Eigen::Index>(k);
  const auto in = static_cast<Eigen::Index>(n);
  const auto ib = static_cast<Eigen::Index>(kRowBlock);
  Eigen::Map<const RowMat<T>> rhs(b, ik, in);

  thread_local std::vector<T> pad_a;
  thread_local std::vector<T> pad_c;
  for (std::size_t r0 = 0; r0 < m; r0 += kRowBlock) {
    const std::size_t rows = std::min(kRowBlock, m - r0);
    if (rows == kRowBlock) {
      Eigen::Map<const RowMat<T>> lhs(a + r0 * k, ib, ik);
      Eigen::Map<RowMat<T>> out(c + r0 * n, ib, in);
      out.noalias() = lhs * rhs;
    } else {
      pad_a.assign(kRowBlock * k, T(0));
      std::memcpy(pad_a.data(), a + r0 * k, sizeof(T) * rows * k);
      pad_c.resize(kRowBlock * n);
      Eigen::Map<const RowMat<T>> lhs(pad_a.data(), ib, ik);
      Eigen::Map<RowMat<T>> out(pad_c.data(), ib, in);
      out.noalias() = lhs * rhs;
      std::memcpy(c + r0 * n, pad_c.data(), sizeof(T) * rows * n);
    }
  }
}

template <typename T>
void gemm_acc_nt(const T* dc, const T* b, T* da, std::size_t m, std::size_t k, std::size_t n) {
  if (m == 0 || k == 0 || n == 0) return;
  Eigen::Map<const RowMat<T>> g(dc, m, n);
  Eigen::Map<const RowMat<T>> rhs(b, k, n);
  Eigen::Map<RowMat<T>> out(da, m, k);
  out.noalias() += g * rhs.transpose();
}

template <typename T>
void gemm_acc_tn(const T* a, const T* dc, T* db, std::size_t m, std::size_t k, std::size_t n) {
  if (m == 0 || k == 0 || n == 0) return;
  Eigen::Map<const RowMat<T>> lhs(a, m, k);
  Eigen::Map<const RowMat<T>> g(dc, m, n);
  Eigen::Map<RowMat<T>> out(db, k, n);
  out.noalias() += lhs.transpose() * g;
}

template <typename T>
void attention_head_backward(const T* q, const T* k, const T* v, std::size_t stride, const T* p,
                             const T* go, std::size_t go_stride, T* gq, T* gk, T* gv,
                             std::size_t seq, std::size_t dh, T scale) {
  using Strided = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
  using StridedOut = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
  const auto s = static_cast<Eigen::Index>(seq);
  const auto w = static_cast<Eigen::Index>(dh);
  const Eigen::OuterStride<> os(static_cast<Eigen::Index>(stride));
  Strided Q(q, s, w, os), K(k, s, w, os), V(v, s, w, os);
  Strided dO(go, s, w, Eigen::OuterStride<>(static_cast<Eigen::Index>(go_stride)));
  Eigen::Map<const RowMat<T>> P(p, s, s);
  StridedOut dQ(gq, s, w, os), dK(gk, s, w, os), dV(gv, s, w, os);

  thread_local RowMat<T> dS;
  dS.noalias() = dO * V.transpose();
  for (Eigen::Index i = 0; i < s; ++i) {
    T dot = 0;
    for (Eigen::Index j = 0; j < s; ++j) dot += P(i, j) * dS(i, j);
    for (Eigen::Index j = 0; j < s; ++j) dS(i, j) = P(i, j) * (dS(i, j) - dot) * scale;
  }
  dV.noalias() += P.transpose() * dO;
  dQ.noalias() += dS * K;
  dK.noalias() += dS.transpose() * Q;
}

template void gemm_rowstable<float>(const float*, const float*, float*, std::size_t, std::size_t,
                                    std::size_t);
template void gemm_rowstable<double>(const double*, const double*, double*, std::size_t,
                                     std::size_t, std::size_t);
template void gemm_acc_nt<float>(const float*, const float*, float*, std::size_t, std::size_t,
                                 std::size_t);
template void gemm_acc_nt<double>(const double*, const double*, double*, std::size_t, std::size_t,
                                  std::size_t);
template void gemm_acc_tn<float>(const float*, const float*, float*, std::size_t, std::size_t,
                                 std::size_t);
template void gemm_acc_tn<double>(const double*, const double*, double*, std::size_t, std::size_t,
                                  std::size_t);

template void attention_head_backward<float>(const float*, const float*, const float*,
                                             std::size_t, const float*, const float*, std::size_t,
                                             float*, float*, float*, std::size_t, std::size_t,
                                             float);
template void attention_head_backward<double>(const double*, const double*, const double*,
                                              std::size_t, const double*, const double*,
                                              std::size_t, double*, double*, double*, std::size_t,
                                              std::size_t, double);

}  // namespace icll::detail
