#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <string>
#include <utility>
#include <variant>

#include "blockprec/error.hpp"

namespace blockprec {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

inline void require_dimension(Index expected, Index actual, const char* what) {
  if (expected != actual)
    throw InvalidArgument(std::string(what) + ": expected dimension " +
                          std::to_string(expected) + ", got " + std::to_string(actual));
}

/// Dense symmetric n x n matrix. Construction checks squareness, finiteness
/// and symmetry to kSymmetryTolerance, then stores the exact symmetric part.
class SymmetricMatrix {
 public:
  static constexpr double kSymmetryTolerance = 1e-10;

  SymmetricMatrix() = default;

  explicit SymmetricMatrix(Matrix m) {
    if (m.rows() != m.cols())
      throw InvalidArgument("symmetric matrix must be square, got " +
                            std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    if (!m.allFinite()) throw InvalidArgument("symmetric matrix has non-finite entries");
    for (Index j = 0; j < m.cols(); ++j)
      for (Index i = j + 1; i < m.rows(); ++i)
        if (std::abs(m(i, j) - m(j, i)) > kSymmetryTolerance)
          throw InvalidArgument("matrix is not symmetric at (" + std::to_string(i) + "," +
                                std::to_string(j) + ")");
    for (Index j = 0; j < m.cols(); ++j)
      for (Index i = j + 1; i < m.rows(); ++i) {
        const double v = 0.5 * (m(i, j) + m(j, i));
        m(i, j) = v;
        m(j, i) = v;
      }
    m_ = std::move(m);
  }

  static SymmetricMatrix identity(Index n) { return SymmetricMatrix(Matrix::Identity(n, n)); }

  Index n() const noexcept { return m_.rows(); }
  const Matrix& dense() const noexcept { return m_; }
  double operator()(Index i, Index j) const { return m_(i, j); }

  bool operator==(const SymmetricMatrix& other) const { return m_ == other.m_; }

 private:
  Matrix m_;
};

/// Eigenvalues of a symmetric matrix, ascending.
inline Vector symmetric_eigenvalues(const Matrix& symmetric) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetric, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericalError("symmetric eigensolver failed");
  return solver.eigenvalues();
}

inline double min_eigenvalue(const Matrix& symmetric) {
  return symmetric_eigenvalues(symmetric)(0);
}

inline double max_eigenvalue(const Matrix& symmetric) {
  const Vector ev = symmetric_eigenvalues(symmetric);
  return ev(ev.size() - 1);
}

inline bool is_positive_definite(const SymmetricMatrix& q) {
  Eigen::LLT<Matrix> llt(q.dense());
  return llt.info() == Eigen::Success;
}

/// A GLM data matrix held either dense (synthetic data) or sparse row-major
/// (LIBSVM data). Products never densify the sparse form.
class DataMatrix {
 public:
  DataMatrix() = default;
  DataMatrix(Matrix dense) : storage_(std::move(dense)) {}          // NOLINT
  DataMatrix(SparseMatrix sparse) : storage_(std::move(sparse)) {}  // NOLINT

  Index rows() const {
    return std::visit([](const auto& a) -> Index { return a.rows(); }, storage_);
  }
  Index cols() const {
    return std::visit([](const auto& a) -> Index { return a.cols(); }, storage_);
  }
  bool is_sparse() const { return std::holds_alternative<SparseMatrix>(storage_); }

  Vector multiply(const Vector& x) const {
    return std::visit([&](const auto& a) -> Vector { return a * x; }, storage_);
  }

  Vector transpose_multiply(const Vector& v) const {
    return std::visit([&](const auto& a) -> Vector { return a.transpose() * v; }, storage_);
  }

  /// A^T diag(w) A.
  Matrix weighted_gram(const Vector& w) const {
    require_dimension(rows(), w.size(), "weighted_gram weights");
    if (const auto* dense = std::get_if<Matrix>(&storage_)) {
      Matrix scaled = w.asDiagonal() * (*dense);
      Matrix g = dense->transpose() * scaled;
      mirror_lower(g);
      return g;
    }
    const auto& sparse = std::get<SparseMatrix>(storage_);
    Matrix g = Matrix::Zero(sparse.cols(), sparse.cols());
    for (Index r = 0; r < sparse.outerSize(); ++r) {
      const double wr = w(r);
      if (wr == 0.0) continue;
      for (SparseMatrix::InnerIterator a(sparse, r); a; ++a) {
        const double va = wr * a.value();
        for (SparseMatrix::InnerIterator b(sparse, r); b && b.col() <= a.col(); ++b)
          g(a.col(), b.col()) += va * b.value();
      }
    }
    mirror_lower(g);
    return g;
  }

  Matrix gram() const { return weighted_gram(Vector::Ones(rows())); }

  Matrix to_dense() const {
    if (const auto* dense = std::get_if<Matrix>(&storage_)) return *dense;
    return Matrix(std::get<SparseMatrix>(storage_));
  }

  const Matrix* dense_ptr() const { return std::get_if<Matrix>(&storage_); }
  const SparseMatrix* sparse_ptr() const { return std::get_if<SparseMatrix>(&storage_); }

 private:
  static void mirror_lower(Matrix& g) {
    for (Index j = 0; j < g.cols(); ++j)
      for (Index i = j + 1; i < g.rows(); ++i) g(j, i) = g(i, j);
  }

  std::variant<Matrix, SparseMatrix> storage_;
};

}  // namespace blockprec
