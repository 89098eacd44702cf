#pragma once

// Small dense factorizations over complex matrices stored as 2-D tensors.

#include <Eigen/Dense>

#include "mrcine/tensor.hpp"

namespace mrcine {

template <typename R>
using CMatrix = Eigen::Matrix<std::complex<R>, Eigen::Dynamic, Eigen::Dynamic>;

template <typename R>
CMatrix<R> to_matrix(const CTensor<R>& m) {
  if (m.ndim() != 2) throw std::invalid_argument("to_matrix: expected a 2-D tensor, got " + shape_str(m.shape()));
  CMatrix<R> out(m.dim(0), m.dim(1));
  for (Index i = 0; i < m.dim(0); ++i)
    for (Index j = 0; j < m.dim(1); ++j) out(i, j) = m(i, j);
  return out;
}

template <typename R, typename Derived>
CTensor<R> from_matrix(const Eigen::MatrixBase<Derived>& m) {
  CTensor<R> out({static_cast<Index>(m.rows()), static_cast<Index>(m.cols())});
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) out(i, j) = static_cast<std::complex<R>>(m(i, j));
  return out;
}

template <typename R>
struct Svd {
  CTensor<R> U;          // rows × k, orthonormal columns
  std::vector<R> s;      // k = min(rows, cols), non-increasing
  CTensor<R> V;          // cols × k, orthonormal columns; m = U diag(s) Vᴴ
};

// Economy SVD. Zero matrices yield zero singular values with arbitrary
// orthonormal factors.
template <typename R>
Svd<R> svd_econ(const CTensor<R>& m) {
  using Mat = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic>;
  Mat a(m.dim(0), m.dim(1));
  for (Index i = 0; i < m.dim(0); ++i)
    for (Index j = 0; j < m.dim(1); ++j) a(i, j) = std::complex<double>(m(i, j));
  Eigen::BDCSVD<Mat> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Svd<R> out;
  out.U = from_matrix<R>(svd.matrixU());
  out.V = from_matrix<R>(svd.matrixV());
  const auto& sv = svd.singularValues();
  out.s.resize(static_cast<std::size_t>(sv.size()));
  for (Index i = 0; i < sv.size(); ++i) out.s[static_cast<std::size_t>(i)] = static_cast<R>(sv(i));
  return out;
}

template <typename R>
struct HermitianEigen {
  std::vector<R> values;  // non-increasing
  CTensor<R> vectors;     // n × n, column j pairs with values[j]
};

template <typename R>
HermitianEigen<R> eig_hermitian(const CTensor<R>& m) {
  if (m.ndim() != 2 || m.dim(0) != m.dim(1))
    throw std::invalid_argument("eig_hermitian: expected a square matrix, got " + shape_str(m.shape()));
  const Index n = m.dim(0);
  CMatrix<R> a = to_matrix(m);
  Eigen::SelfAdjointEigenSolver<CMatrix<R>> es(a);
  HermitianEigen<R> out;
  out.values.resize(static_cast<std::size_t>(n));
  out.vectors = CTensor<R>({n, n});
  // Eigen sorts ascending.
  for (Index j = 0; j < n; ++j) {
    const Index src = n - 1 - j;
    out.values[static_cast<std::size_t>(j)] = es.eigenvalues()(src);
    for (Index i = 0; i < n; ++i) out.vectors(i, j) = es.eigenvectors()(i, src);
  }
  return out;
}

}  // namespace mrcine
