#pragma once

#include <Eigen/Core>

#include "wavemix/tensor.hpp"

namespace wavemix::detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// C(m,n) = op(A) * op(B) (+ C when accumulate). All operands dense row-major;
// op(A) is (m,k), op(B) is (k,n).
template <typename T>
void gemm(bool trans_a, bool trans_b, Index m, Index n, Index k, const T* a, const T* b, T* c,
          bool accumulate) {
  MatrixMap<T> out(c, m, n);
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate) {
      out.noalias() += lhs * rhs;
    } else {
      out.noalias() = lhs * rhs;
    }
  };
  if (!trans_a && !trans_b) {
    run(ConstMatrixMap<T>(a, m, k), ConstMatrixMap<T>(b, k, n));
  } else if (trans_a && !trans_b) {
    run(ConstMatrixMap<T>(a, k, m).transpose(), ConstMatrixMap<T>(b, k, n));
  } else if (!trans_a && trans_b) {
    run(ConstMatrixMap<T>(a, m, k), ConstMatrixMap<T>(b, n, k).transpose());
  } else {
    run(ConstMatrixMap<T>(a, k, m).transpose(), ConstMatrixMap<T>(b, n, k).transpose());
  }
}

}  // namespace wavemix::detail
