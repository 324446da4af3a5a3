#pragma once

#include <Eigen/Core>

#include <cstddef>

namespace canet {

// C (MxN) = alpha * op(A) * op(B) + beta * C, all row-major.
// Eigen's products keep a fixed evaluation order, so results are
// reproducible run to run for a given build.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<const Mat, 0, Eigen::OuterStride<>>;
  using MapMut = Eigen::Map<Mat, 0, Eigen::OuterStride<>>;

  Map A(a, trans_a ? k : m, trans_a ? m : k, Eigen::OuterStride<>(static_cast<Eigen::Index>(lda)));
  Map B(b, trans_b ? n : k, trans_b ? k : n, Eigen::OuterStride<>(static_cast<Eigen::Index>(ldb)));
  MapMut C(c, m, n, Eigen::OuterStride<>(static_cast<Eigen::Index>(ldc)));

  if (beta == T{0}) {
    C.setZero();
  } else if (beta != T{1}) {
    C *= beta;
  }
  if (!trans_a && !trans_b) {
    C.noalias() += alpha * (A * B);
  } else if (trans_a && !trans_b) {
    C.noalias() += alpha * (A.transpose() * B);
  } else if (!trans_a && trans_b) {
    C.noalias() += alpha * (A * B.transpose());
  } else {
    C.noalias() += alpha * (A.transpose() * B.transpose());
  }
}

}  // namespace canet
