#pragma once

#include <cmath>
#include <concepts>
#include <optional>
#include <string>
#include <utility>

#include "blockprec/error.hpp"
#include "blockprec/matrix.hpp"

namespace blockprec {

/// Which curvature matrix Q_t a preconditioned step uses.
enum class CurvatureModel {
  ExactHessian,     // Q_t = A^T diag(l''(Ax)) A (+ lambda I)
  SmoothnessBound,  // Q_t = gamma_l A^T A (+ lambda I), independent of x
};

inline const char* to_string(CurvatureModel m) {
  return m == CurvatureModel::ExactHessian ? "exact" : "smoothness";
}

struct Optimum {
  Vector x;
  double value = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
};

/// Requirements the solver and spectral code place on an objective.
template <class T>
concept Objective = requires(const T& obj, const Vector& x, CurvatureModel model) {
  { obj.n() } -> std::convertible_to<Index>;
  { obj.value(x) } -> std::convertible_to<double>;
  { obj.gradient(x) } -> std::convertible_to<Vector>;
  { obj.curvature(x, model) } -> std::convertible_to<SymmetricMatrix>;
  { obj.curvature_is_constant(model) } -> std::convertible_to<bool>;
  { obj.optimum() } -> std::convertible_to<Optimum>;
};

/// f(x) = 1/2 x^T H x - c^T x with H symmetric positive definite.
class QuadraticObjective {
 public:
  QuadraticObjective(SymmetricMatrix h, Vector c) : h_(std::move(h)), c_(std::move(c)) {
    require_dimension(h_.n(), c_.size(), "QuadraticObjective linear term");
    llt_.compute(h_.dense());
    if (llt_.info() != Eigen::Success)
      throw InvalidArgument("QuadraticObjective: H is not positive definite");
  }

  Index n() const noexcept { return h_.n(); }
  const SymmetricMatrix& hessian() const noexcept { return h_; }
  const Vector& linear() const noexcept { return c_; }

  double value(const Vector& x) const {
    require_dimension(n(), x.size(), "QuadraticObjective::value");
    return 0.5 * x.dot(h_.dense() * x) - c_.dot(x);
  }

  Vector gradient(const Vector& x) const {
    require_dimension(n(), x.size(), "QuadraticObjective::gradient");
    return h_.dense() * x - c_;
  }

  /// H for either model: the quadratic model is exact.
  SymmetricMatrix curvature(const Vector& x, CurvatureModel = CurvatureModel::ExactHessian) const {
    require_dimension(n(), x.size(), "QuadraticObjective::curvature");
    return h_;
  }

  bool curvature_is_constant(CurvatureModel) const noexcept { return true; }

  Optimum optimum() const {
    Optimum opt;
    opt.x = llt_.solve(c_);
    opt.value = value(opt.x);
    opt.gradient_norm = gradient(opt.x).norm();
    return opt;
  }

 private:
  SymmetricMatrix h_;
  Vector c_;
  Eigen::LLT<Matrix> llt_;
};

enum class LossKind { Squared, Logistic };

inline const char* to_string(LossKind k) { return k == LossKind::Squared ? "squared" : "logistic"; }

namespace detail {

/// log(1 + exp(z)) without overflow.
inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace detail

/// Regularized generalized linear model f(x) = l(Ax) + lambda/2 ||x||^2 with
///   squared:  l(v) = 1/2 ||v - y||^2
///   logistic: l(v) = sum_i log(1 + exp(-y_i v_i)),  y_i in {-1, +1}.
class GlmObjective {
 public:
  GlmObjective(DataMatrix a, Vector y, LossKind loss, double lambda)
      : a_(std::move(a)), y_(std::move(y)), loss_(loss), lambda_(lambda) {
    require_dimension(a_.rows(), y_.size(), "GlmObjective labels");
    if (!(lambda_ >= 0.0) || !std::isfinite(lambda_))
      throw InvalidArgument("GlmObjective: lambda must be finite and non-negative");
    if (!y_.allFinite()) throw InvalidArgument("GlmObjective: labels must be finite");
    if (loss_ == LossKind::Logistic)
      for (Index i = 0; i < y_.size(); ++i)
        if (y_(i) != 1.0 && y_(i) != -1.0)
          throw InvalidArgument("GlmObjective: logistic labels must be -1 or +1 (row " +
                                std::to_string(i) + ")");
  }

  static GlmObjective ridge(DataMatrix a, Vector y, double lambda) {
    return GlmObjective(std::move(a), std::move(y), LossKind::Squared, lambda);
  }
  static GlmObjective logistic(DataMatrix a, Vector y, double lambda) {
    return GlmObjective(std::move(a), std::move(y), LossKind::Logistic, lambda);
  }

  Index n() const { return a_.cols(); }
  Index m() const { return a_.rows(); }
  const DataMatrix& data() const noexcept { return a_; }
  const Vector& labels() const noexcept { return y_; }
  LossKind loss() const noexcept { return loss_; }
  double lambda() const noexcept { return lambda_; }

  /// Smoothness constant of l: 1 for squared, 1/4 for logistic.
  double gamma_loss() const noexcept { return loss_ == LossKind::Squared ? 1.0 : 0.25; }

  /// PL constant of l; only known for the squared loss.
  std::optional<double> mu_loss() const noexcept {
    if (loss_ == LossKind::Squared) return 1.0;
    return std::nullopt;
  }

  double value(const Vector& x) const {
    require_dimension(n(), x.size(), "GlmObjective::value");
    const Vector v = a_.multiply(x);
    double loss = 0.0;
    if (loss_ == LossKind::Squared) {
      loss = 0.5 * (v - y_).squaredNorm();
    } else {
      for (Index i = 0; i < v.size(); ++i) loss += detail::softplus(-y_(i) * v(i));
    }
    return loss + 0.5 * lambda_ * x.squaredNorm();
  }

  Vector gradient(const Vector& x) const {
    require_dimension(n(), x.size(), "GlmObjective::gradient");
    const Vector v = a_.multiply(x);
    Vector dl(v.size());
    if (loss_ == LossKind::Squared) {
      dl = v - y_;
    } else {
      for (Index i = 0; i < v.size(); ++i) dl(i) = -y_(i) * detail::sigmoid(-y_(i) * v(i));
    }
    return a_.transpose_multiply(dl) + lambda_ * x;
  }

  SymmetricMatrix curvature(const Vector& x, CurvatureModel model) const {
    require_dimension(n(), x.size(), "GlmObjective::curvature");
    Matrix q;
    if (loss_ == LossKind::Squared) {
      q = a_.gram();
    } else if (model == CurvatureModel::SmoothnessBound) {
      q = a_.gram();
      q *= gamma_loss();
    } else {
      const Vector v = a_.multiply(x);
      Vector w(v.size());
      for (Index i = 0; i < v.size(); ++i) {
        const double s = detail::sigmoid(y_(i) * v(i));
        w(i) = s * (1.0 - s);
      }
      q = a_.weighted_gram(w);
    }
    q.diagonal().array() += lambda_;
    return SymmetricMatrix(std::move(q));
  }

  bool curvature_is_constant(CurvatureModel model) const noexcept {
    return loss_ == LossKind::Squared || model == CurvatureModel::SmoothnessBound;
  }

  /// Squared loss: direct SPD solve of (A^T A + lambda I) x = A^T y.
  /// Logistic: damped exact Newton from zero to gradient norm <= tol,
  /// with tol = 1e-12 max(1, ||grad f(0)||); requires lambda > 0.
  Optimum optimum() const {
    Optimum opt;
    if (loss_ == LossKind::Squared) {
      Matrix q = a_.gram();
      q.diagonal().array() += lambda_;
      Eigen::LLT<Matrix> llt(q);
      if (llt.info() != Eigen::Success)
        throw NumericalError("ridge optimum: A^T A + lambda I is not positive definite");
      opt.x = llt.solve(a_.transpose_multiply(y_));
      opt.value = value(opt.x);
      opt.gradient_norm = gradient(opt.x).norm();
      return opt;
    }
    if (!(lambda_ > 0.0))
      throw Unsupported("logistic optimum requires lambda > 0 (minimizer may not exist)");

    Vector x = Vector::Zero(n());
    double f = value(x);
    Vector g = gradient(x);
    const double tol = 1e-12 * std::max(1.0, g.norm());
    int it = 0;
    for (; it < 200 && g.norm() > tol; ++it) {
      Eigen::LLT<Matrix> llt(curvature(x, CurvatureModel::ExactHessian).dense());
      const Vector d = -llt.solve(g);
      const double slope = g.dot(d);
      if (!(slope < 0.0)) break;
      double step = 1.0;
      Vector trial = x + d;
      double f_trial = value(trial);
      while (f_trial > f + 1e-4 * step * slope && step > 1e-10) {
        step *= 0.5;
        trial = x + step * d;
        f_trial = value(trial);
      }
      // Within rounding of the minimum: the full Newton step can no longer
      // decrease f measurably but still shrinks the gradient.
      if (f_trial > f) {
        trial = x + d;
        const Vector g_trial = gradient(trial);
        if (g_trial.norm() >= g.norm()) break;
        f_trial = value(trial);
      }
      x = std::move(trial);
      f = f_trial;
      g = gradient(x);
    }
    opt.x = std::move(x);
    opt.value = f;
    opt.gradient_norm = g.norm();
    opt.iterations = it;
    return opt;
  }

 private:
  DataMatrix a_;
  Vector y_;
  LossKind loss_;
  double lambda_;
};

static_assert(Objective<QuadraticObjective>);
static_assert(Objective<GlmObjective>);

}  // namespace blockprec
