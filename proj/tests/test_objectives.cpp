#include <gtest/gtest.h>

#include <blockprec/objectives.hpp>

#include <cmath>

#include "test_support.hpp"

using namespace blockprec;
using blockprec::testing::finite_difference_gradient;
using blockprec::testing::random_matrix;
using blockprec::testing::random_spd;
using blockprec::testing::random_vector;

namespace {

Vector random_signs(Index m, std::uint64_t seed) {
  Rng rng(seed);
  Vector y(m);
  for (Index i = 0; i < m; ++i) y(i) = rng.below(2) ? 1.0 : -1.0;
  return y;
}

SparseMatrix sparse_from(const Matrix& d, double keep, std::uint64_t seed) {
  Rng rng(seed);
  SparseMatrix s(d.rows(), d.cols());
  std::vector<Eigen::Triplet<double>> t;
  for (Index i = 0; i < d.rows(); ++i)
    for (Index j = 0; j < d.cols(); ++j)
      if (rng.uniform() < keep) t.emplace_back(i, j, d(i, j));
  s.setFromTriplets(t.begin(), t.end());
  return s;
}

double rel_err(const Vector& a, const Vector& b) { return (a - b).norm() / std::max(b.norm(), 1e-8); }

// Scalar oracle for the logistic loss, written out term by term.
double logistic_oracle(const Matrix& a, const Vector& y, double lambda, const Vector& x) {
  double f = 0.0;
  for (Index i = 0; i < a.rows(); ++i) {
    const double z = -y(i) * a.row(i).dot(x);
    f += z > 0 ? z + std::log(1.0 + std::exp(-z)) : std::log(1.0 + std::exp(z));
  }
  return f + 0.5 * lambda * x.squaredNorm();
}

}  // namespace

TEST(Quadratic, ValueAndGradientExamples) {
  const QuadraticObjective f(SymmetricMatrix::identity(2), Vector::Ones(2));
  EXPECT_DOUBLE_EQ(f.value(Vector::Zero(2)), 0.0);
  EXPECT_DOUBLE_EQ(f.value(Vector::Ones(2)), -1.0);
  EXPECT_EQ(f.gradient(Vector::Ones(2)), Vector::Zero(2));
  const auto opt = f.optimum();
  EXPECT_EQ(opt.x, Vector::Ones(2));
  EXPECT_DOUBLE_EQ(opt.value, -1.0);
}

TEST(Quadratic, CurvatureIsHessianForBothModels) {
  const auto h = random_spd(5, 1);
  const QuadraticObjective f(h, random_vector(5, 2));
  EXPECT_EQ(f.curvature(random_vector(5, 3), CurvatureModel::ExactHessian).dense(), h.dense());
  EXPECT_EQ(f.curvature(random_vector(5, 3), CurvatureModel::SmoothnessBound).dense(), h.dense());
  EXPECT_TRUE(f.curvature_is_constant(CurvatureModel::ExactHessian));
}

TEST(Quadratic, RejectsIndefiniteAndMismatch) {
  Matrix m = Matrix::Identity(3, 3);
  m(1, 1) = -1;
  EXPECT_THROW(QuadraticObjective(SymmetricMatrix(m), Vector::Zero(3)), InvalidArgument);
  EXPECT_THROW(QuadraticObjective(SymmetricMatrix::identity(3), Vector::Zero(2)), InvalidArgument);
  const QuadraticObjective f(SymmetricMatrix::identity(3), Vector::Zero(3));
  EXPECT_THROW(f.value(Vector::Zero(4)), InvalidArgument);
}

TEST(Ridge, ValueExampleAndOptimum) {
  // A = I, y = 1, lambda = 1: f(0) = n/2, x* = y/2.
  const Index n = 4;
  const auto f = GlmObjective::ridge(DataMatrix(Matrix::Identity(n, n)), Vector::Ones(n), 1.0);
  EXPECT_DOUBLE_EQ(f.value(Vector::Zero(n)), 2.0);
  const auto opt = f.optimum();
  EXPECT_LT((opt.x - 0.5 * Vector::Ones(n)).norm(), 1e-14);
  EXPECT_EQ(f.mu_loss(), 1.0);
  EXPECT_EQ(f.gamma_loss(), 1.0);
}

TEST(Ridge, CurvatureIsGramPlusLambda) {
  const Matrix a = random_matrix(8, 5, 1);
  const auto f = GlmObjective::ridge(DataMatrix(a), random_vector(8, 2), 0.3);
  Matrix oracle = a.transpose() * a;
  oracle.diagonal().array() += 0.3;
  for (auto model : {CurvatureModel::ExactHessian, CurvatureModel::SmoothnessBound})
    EXPECT_LT((f.curvature(Vector::Zero(5), model).dense() - oracle).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Ridge, OptimumIsStationaryAndBeatsProbes) {
  const Matrix a = random_matrix(30, 6, 4);
  const auto f = GlmObjective::ridge(DataMatrix(a), random_vector(30, 5), 0.0);
  const auto opt = f.optimum();
  EXPECT_LT(opt.gradient_norm, 1e-10);
  for (std::uint64_t s = 0; s < 1000; ++s)
    EXPECT_LE(opt.value, f.value(opt.x + random_vector(6, s, 0.1)) + 1e-12);
}

TEST(Ridge, RankDeficientWithoutLambdaFails) {
  const Matrix a = random_matrix(3, 6, 4);
  const auto f = GlmObjective::ridge(DataMatrix(a), random_vector(3, 5), 0.0);
  EXPECT_THROW(f.optimum(), NumericalError);
}

TEST(Logistic, ValueAtZeroIsMLog2) {
  const Index m = 7;
  const auto f = GlmObjective::logistic(DataMatrix(random_matrix(m, 3, 1)), random_signs(m, 2), 1.0);
  EXPECT_NEAR(f.value(Vector::Zero(3)), m * std::log(2.0), 1e-12);
  EXPECT_FALSE(f.mu_loss().has_value());
  EXPECT_EQ(f.gamma_loss(), 0.25);
}

TEST(Logistic, MatchesScalarOracle) {
  const Matrix a = random_matrix(20, 4, 3);
  const Vector y = random_signs(20, 4);
  const auto f = GlmObjective::logistic(DataMatrix(a), y, 0.5);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Vector x = random_vector(4, s, 2.0);
    EXPECT_NEAR(f.value(x), logistic_oracle(a, y, 0.5, x), 1e-10 * (1 + std::abs(f.value(x))));
  }
}

TEST(Logistic, ExtremeMarginsStayFinite) {
  Matrix a(2, 1);
  a << 1.0, -1.0;
  const auto f = GlmObjective::logistic(DataMatrix(a), Vector::Ones(2), 0.0);
  Vector x(1);
  for (double v : {1e4, -1e4}) {
    x(0) = v;
    EXPECT_TRUE(std::isfinite(f.value(x)));
    EXPECT_TRUE(f.gradient(x).allFinite());
    EXPECT_TRUE(f.curvature(x, CurvatureModel::ExactHessian).dense().allFinite());
  }
  x(0) = 1e4;
  EXPECT_NEAR(f.value(x), 1e4, 1e-9);
}

TEST(Logistic, RejectsBadLabelsAndUnregularizedOptimum) {
  EXPECT_THROW(GlmObjective::logistic(DataMatrix(Matrix::Identity(2, 2)), Vector::Zero(2), 1.0), InvalidArgument);
  const auto f = GlmObjective::logistic(DataMatrix(Matrix::Identity(2, 2)), Vector::Ones(2), 0.0);
  EXPECT_THROW(f.optimum(), Unsupported);
  EXPECT_THROW(GlmObjective::ridge(DataMatrix(Matrix::Identity(2, 2)), Vector::Ones(2), -1.0), InvalidArgument);
}

TEST(Logistic, SmoothnessBoundDominatesExactHessian) {
  const Matrix a = random_matrix(40, 6, 11);
  const auto f = GlmObjective::logistic(DataMatrix(a), random_signs(40, 12), 0.1);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Vector x = random_vector(6, s);
    const Matrix diff = f.curvature(x, CurvatureModel::SmoothnessBound).dense() -
                        f.curvature(x, CurvatureModel::ExactHessian).dense();
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Matrix>(diff).eigenvalues()(0), -1e-10);
  }
  EXPECT_FALSE(f.curvature_is_constant(CurvatureModel::ExactHessian));
  EXPECT_TRUE(f.curvature_is_constant(CurvatureModel::SmoothnessBound));
}

TEST(Logistic, ExactHessianMatchesFiniteDifferenceOfGradient) {
  const Matrix a = random_matrix(25, 5, 21);
  const auto f = GlmObjective::logistic(DataMatrix(a), random_signs(25, 22), 0.2);
  const Vector x = random_vector(5, 23);
  const Matrix h = f.curvature(x, CurvatureModel::ExactHessian).dense();
  const double eps = 1e-6;
  for (Index j = 0; j < 5; ++j) {
    Vector xp = x, xm = x;
    xp(j) += eps;
    xm(j) -= eps;
    const Vector col = (f.gradient(xp) - f.gradient(xm)) / (2 * eps);
    EXPECT_LT((col - h.col(j)).norm() / h.col(j).norm(), 1e-6);
  }
}

TEST(Logistic, NewtonOptimumIsStationaryAndBeatsProbes) {
  const Matrix a = random_matrix(60, 8, 31);
  const auto f = GlmObjective::logistic(DataMatrix(a), random_signs(60, 32), 1.0);
  const auto opt = f.optimum();
  EXPECT_LE(opt.gradient_norm, 1e-12 * std::max(1.0, f.gradient(Vector::Zero(8)).norm()));
  for (std::uint64_t s = 0; s < 1000; ++s)
    EXPECT_LE(opt.value, f.value(opt.x + random_vector(8, s, 0.05)) + 1e-12);
}

TEST(Objectives, SparseAndDenseDataAgree) {
  const Matrix d = random_matrix(15, 6, 41);
  const SparseMatrix s = sparse_from(d, 0.4, 42);
  const Matrix ds = Matrix(s);
  const Vector y = random_signs(15, 43);
  const auto fs = GlmObjective::logistic(DataMatrix(s), y, 0.1);
  const auto fd = GlmObjective::logistic(DataMatrix(ds), y, 0.1);
  const Vector x = random_vector(6, 44);
  EXPECT_NEAR(fs.value(x), fd.value(x), 1e-12);
  EXPECT_LT((fs.gradient(x) - fd.gradient(x)).norm(), 1e-12);
  EXPECT_LT((fs.curvature(x, CurvatureModel::ExactHessian).dense() -
             fd.curvature(x, CurvatureModel::ExactHessian).dense())
                .norm(),
            1e-12);
}

// Central differences at 100 random points per objective.
TEST(Objectives, GradientFiniteDifference) {
  const Index n = 6;
  const QuadraticObjective quad(random_spd(n, 51), random_vector(n, 52));
  const Matrix a = random_matrix(30, n, 53);
  const auto ridge = GlmObjective::ridge(DataMatrix(a), random_vector(30, 54), 0.5);
  const auto logi = GlmObjective::logistic(DataMatrix(sparse_from(a, 0.5, 55)), random_signs(30, 56), 0.5);
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Vector x = random_vector(n, 1000 + s);
    worst = std::max(worst, rel_err(quad.gradient(x), finite_difference_gradient([&](const Vector& v) { return quad.value(v); }, x)));
    worst = std::max(worst, rel_err(ridge.gradient(x), finite_difference_gradient([&](const Vector& v) { return ridge.value(v); }, x)));
    worst = std::max(worst, rel_err(logi.gradient(x), finite_difference_gradient([&](const Vector& v) { return logi.value(v); }, x)));
  }
  EXPECT_LE(worst, 1e-5);
}
