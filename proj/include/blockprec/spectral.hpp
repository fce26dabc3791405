#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include "blockprec/error.hpp"
#include "blockprec/matrix.hpp"
#include "blockprec/parallel.hpp"
#include "blockprec/partition.hpp"
#include "blockprec/random.hpp"

namespace blockprec {

/// All eigenvalues (ascending) of Lambda_P = Q_P^{-1} Q, computed from the
/// symmetric similar matrix L^{-1} Q L^{-T} with Q_P = L L^T.
inline Vector preconditioned_eigenvalues(const SymmetricMatrix& q, const Partitioning& p, double jitter = 0.0) {
  require_dimension(q.n(), p.n(), "preconditioned_eigenvalues");
  const BlockFactorization factors(q, p, jitter);
  return symmetric_eigenvalues(factors.conjugate(q));
}

/// lambda_min(Q_P^{-1} Q).
inline double lambda_min_precond(const SymmetricMatrix& q, const Partitioning& p, double jitter = 0.0) {
  return preconditioned_eigenvalues(q, p, jitter)(0);
}

/// lambda_min(E Q) for symmetric positive definite E, via the similar
/// symmetric matrix R^T Q R where E = R R^T.
inline double lambda_min_product(const Matrix& e, const SymmetricMatrix& q) {
  require_dimension(q.n(), e.rows(), "lambda_min_product");
  const Matrix es = 0.5 * (e + e.transpose());
  Eigen::LLT<Matrix> llt(es);
  Matrix r;
  if (llt.info() == Eigen::Success) {
    r = llt.matrixL();
  } else {
    // Semi-definite or ill-conditioned mean: symmetric square root instead.
    Eigen::SelfAdjointEigenSolver<Matrix> eig(es);
    r = eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
        eig.eigenvectors().transpose();
  }
  const Matrix c = r.transpose() * q.dense() * r;
  return min_eigenvalue(0.5 * (c + c.transpose()));
}

struct ExpectedInverse {
  Matrix mean;                      // E[Q_P^{-1}] estimate
  std::vector<Matrix> batch_means;  // MC only: means of the contiguous batches
  Index samples = 0;
  bool exact = false;
};

inline constexpr Index kBatchCount = 10;

/// Monte-Carlo mean of Q_P^{-1} over `samples` uniform partitionings.
/// Sample m uses seed derive_seed(seed, m). Samples are split into
/// min(10, M) contiguous batches summed sequentially; the batch sums are then
/// added in batch order, so the result is independent of `threads`.
inline ExpectedInverse expected_inverse_mc(const SymmetricMatrix& q, Index k_blocks, Index samples,
                                           std::uint64_t seed, std::size_t threads = 1, double jitter = 0.0) {
  if (samples < 1) throw InvalidArgument("expected_inverse_mc: need at least one sample");
  const Index n = q.n();
  const Index batches = std::min<Index>(kBatchCount, samples);
  std::vector<Matrix> sums(static_cast<std::size_t>(batches), Matrix::Zero(n, n));
  std::vector<Index> counts(static_cast<std::size_t>(batches));
  parallel_for(static_cast<std::size_t>(batches), threads, [&](std::size_t b) {
    const Index begin = samples * static_cast<Index>(b) / batches;
    const Index end = samples * static_cast<Index>(b + 1) / batches;
    counts[b] = end - begin;
    for (Index m = begin; m < end; ++m) {
      const auto p = sample_uniform_partition(n, k_blocks, derive_seed(seed, static_cast<std::uint64_t>(m)));
      BlockFactorization(q, p, jitter).accumulate_inverse(sums[b]);
    }
  });
  ExpectedInverse out;
  out.mean = Matrix::Zero(n, n);
  for (const auto& s : sums) out.mean += s;
  out.mean /= static_cast<double>(samples);
  for (std::size_t b = 0; b < sums.size(); ++b)
    out.batch_means.push_back(sums[b] / static_cast<double>(counts[b]));
  out.samples = samples;
  return out;
}

/// Exact E[Q_P^{-1}]: unweighted mean over all equal-size partitionings.
inline ExpectedInverse expected_inverse_exact(const SymmetricMatrix& q, Index k_blocks,
                                              std::uint64_t cap = kDefaultEnumerationCap, double jitter = 0.0) {
  const auto all = enumerate_partitions(q.n(), k_blocks, cap);
  ExpectedInverse out;
  out.mean = Matrix::Zero(q.n(), q.n());
  for (const auto& p : all) BlockFactorization(q, p, jitter).accumulate_inverse(out.mean);
  out.mean /= static_cast<double>(all.size());
  out.samples = static_cast<Index>(all.size());
  out.exact = true;
  return out;
}

struct ExpectedLambda {
  double value = 0.0;
  double std_error = 0.0;  // batch means; 0 for exact enumeration
  Index samples = 0;
  bool exact = false;
};

/// lambda_min(E[Q_P^{-1}] Q) with E estimated from M sampled partitionings.
/// The standard error comes from lambda_min of each batch mean.
inline ExpectedLambda expected_lambda_mc(const SymmetricMatrix& q, Index k_blocks, Index samples,
                                         std::uint64_t seed, std::size_t threads = 1, double jitter = 0.0) {
  const auto e = expected_inverse_mc(q, k_blocks, samples, seed, threads, jitter);
  ExpectedLambda out;
  out.value = lambda_min_product(e.mean, q);
  out.samples = samples;
  const auto b = static_cast<Index>(e.batch_means.size());
  if (b >= 2) {
    std::vector<double> lam(static_cast<std::size_t>(b));
    parallel_for(lam.size(), threads, [&](std::size_t i) { lam[i] = lambda_min_product(e.batch_means[i], q); });
    double mean = 0.0;
    for (double v : lam) mean += v;
    mean /= static_cast<double>(b);
    double ss = 0.0;
    for (double v : lam) ss += (v - mean) * (v - mean);
    out.std_error = std::sqrt(ss / static_cast<double>(b - 1) / static_cast<double>(b));
  }
  return out;
}

inline ExpectedLambda expected_lambda_exact(const SymmetricMatrix& q, Index k_blocks,
                                            std::uint64_t cap = kDefaultEnumerationCap, double jitter = 0.0) {
  const auto e = expected_inverse_exact(q, k_blocks, cap, jitter);
  return {lambda_min_product(e.mean, q), 0.0, e.samples, true};
}

/// Closed-form spectrum for unit diagonal, constant off-diagonal alpha.
struct UniformClosedForm {
  Index n = 0, k = 0;
  double alpha = 0.0;
  double epsilon = 0.0;         // off-block entries of Q_P^{-1} (Q - Q_P)
  double p = 0.0;               // probability two coordinates land in different blocks
  double lambda_static = 1.0;   // 1 - epsilon n_k
  double lambda_dynamic = 1.0;  // 1 - epsilon p
  double rho_static() const { return lambda_static / static_cast<double>(k); }
  double rho_dynamic() const { return lambda_dynamic / static_cast<double>(k); }
};

/// With n_k = n/K:
///   epsilon = (1 - a) / ((n_k - 2) + 1/a - (n_k - 1) a),  epsilon = 0 at a = 0
///   p       = n_k (K - 1) / (n - 1)
/// For K = 1 there are no off-block entries and both eigenvalues are 1.
inline UniformClosedForm uniform_closed_form(Index n, Index k_blocks, double alpha) {
  detail::require_divisible(n, k_blocks, "uniform_closed_form");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw InvalidArgument("uniform_closed_form: alpha must be in [0, 1)");
  UniformClosedForm cf;
  cf.n = n;
  cf.k = k_blocks;
  cf.alpha = alpha;
  const double nk = static_cast<double>(n / k_blocks);
  if (alpha > 0.0) cf.epsilon = (1.0 - alpha) / ((nk - 2.0) + 1.0 / alpha - (nk - 1.0) * alpha);
  cf.p = n > 1 ? nk * static_cast<double>(k_blocks - 1) / static_cast<double>(n - 1) : 0.0;
  if (k_blocks > 1) {
    cf.lambda_static = 1.0 - cf.epsilon * nk;
    cf.lambda_dynamic = 1.0 - cf.epsilon * cf.p;
  }
  return cf;
}

struct SeparableToy {
  double lambda_aligned = 1.0;
  double lambda_misaligned = 1.0;
  double lambda_dynamic = 1.0;
};

/// n = 4, K = 2 block-diagonal toy: one aligned and two misaligned splits.
inline SeparableToy separable_toy(double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw InvalidArgument("separable_toy: alpha must be in [0, 1)");
  return {1.0, 1.0 - alpha, 1.0 / 3.0 + (2.0 / 3.0) * (1.0 - alpha)};
}

/// How E[Q_P^{-1}] is formed for a rate.
struct StaticPartition {
  Partitioning partition;
};
struct MonteCarloExpectation {
  Index samples = 1000;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};
struct ExactExpectation {
  std::uint64_t cap = kDefaultEnumerationCap;
};
using RateScheme = std::variant<StaticPartition, MonteCarloExpectation, ExactExpectation>;

inline Matrix expected_inverse(const SymmetricMatrix& q, Index k_blocks, const RateScheme& scheme,
                               double jitter = 0.0) {
  if (const auto* s = std::get_if<StaticPartition>(&scheme)) {
    if (s->partition.k() != k_blocks) throw InvalidArgument("static partition has a different K");
    return BlockFactorization(q, s->partition, jitter).inverse();
  }
  if (const auto* mc = std::get_if<MonteCarloExpectation>(&scheme))
    return expected_inverse_mc(q, k_blocks, mc->samples, mc->seed, mc->threads, jitter).mean;
  return expected_inverse_exact(q, k_blocks, std::get<ExactExpectation>(scheme).cap, jitter).mean;
}

/// rho = lambda_min(E[Q_P^{-1}] Q) / K for a quadratic with Hessian Q.
inline double rate_quadratic(const SymmetricMatrix& q, Index k_blocks, const RateScheme& scheme) {
  if (const auto* s = std::get_if<StaticPartition>(&scheme)) {
    if (s->partition.k() != k_blocks) throw InvalidArgument("static partition has a different K");
    return lambda_min_precond(q, s->partition) / static_cast<double>(k_blocks);
  }
  return lambda_min_product(expected_inverse(q, k_blocks, scheme), q) / static_cast<double>(k_blocks);
}

struct GlmRate {
  /// mu/(K gamma) lambda_min(A E[M_P^{-1}] A^T), the m x m product. Exactly 0
  /// when m > n (the product has rank <= n).
  double rho = 0.0;
  /// mu/(K gamma) lambda_min(E[M_P^{-1}] M): the same bound restricted to
  /// gradients in range(A). Equals rho for square invertible A.
  double rho_range = 0.0;
  double lambda_min_product = 0.0;
  double lambda_min_range = 0.0;
};

/// Rate of the smoothness-bound model Q_t = gamma A^T A for a PL loss.
/// `lambda_shift` adds lambda I to M = A^T A so that rank-deficient M has
/// invertible blocks.
inline GlmRate rate_glm(const DataMatrix& a, double gamma_loss, std::optional<double> mu_loss, Index k_blocks,
                        const RateScheme& scheme, double lambda_shift = 0.0) {
  if (!mu_loss) throw Unsupported("rate_glm: the loss has no known PL constant");
  if (!(gamma_loss > 0.0) || !(*mu_loss > 0.0))
    throw InvalidArgument("rate_glm: gamma and mu must be positive");
  if (!(lambda_shift >= 0.0)) throw InvalidArgument("rate_glm: lambda_shift must be non-negative");
  Matrix m = a.gram();
  m.diagonal().array() += lambda_shift;
  const SymmetricMatrix msym(std::move(m));
  Matrix e;
  try {
    e = expected_inverse(msym, k_blocks, scheme);
  } catch (const SingularBlock& err) {
    throw SingularBlock(err.block(), "M = A^T A is rank deficient on this block, pass a positive lambda_shift");
  }
  const double scale = *mu_loss / (static_cast<double>(k_blocks) * gamma_loss);
  GlmRate out;
  out.lambda_min_range = lambda_min_product(e, msym);
  if (a.rows() > a.cols()) {
    out.lambda_min_product = 0.0;
  } else {
    // A E A^T directly (m <= n).
    const Matrix ad = a.to_dense();
    const Matrix p = ad * e * ad.transpose();
    out.lambda_min_product = min_eigenvalue(0.5 * (p + p.transpose()));
  }
  out.rho = scale * out.lambda_min_product;
  out.rho_range = scale * out.lambda_min_range;
  return out;
}

/// Constants of a general auxiliary model, used for reporting only.
struct GeneralModelParams {
  double xi = 1.0;              // model quality, (0, 1]
  double alpha_decrease = 0.0;  // sufficient-decrease factor, [0, 1)
  double lipschitz = 1.0;       // L > 0

  void validate() const {
    if (!(xi > 0.0 && xi <= 1.0)) throw InvalidArgument("xi must be in (0, 1]");
    if (!(alpha_decrease >= 0.0 && alpha_decrease < 1.0)) throw InvalidArgument("alpha must be in [0, 1)");
    if (!(lipschitz > 0.0)) throw InvalidArgument("L must be positive");
  }
};

struct GeneralRate {
  double rho_t = 0.0;        // xi/(2K) lambda_min(Q^T E[Q_P^{-1}] Q)
  double contraction = 1.0;  // 1 - rho_t (1 - alpha) / L
};

inline GeneralRate rate_general(const SymmetricMatrix& q, Index k_blocks, const GeneralModelParams& params,
                                const RateScheme& scheme) {
  params.validate();
  const Matrix e = expected_inverse(q, k_blocks, scheme);
  const Matrix prod = q.dense().transpose() * e * q.dense();
  GeneralRate out;
  out.rho_t = params.xi / (2.0 * static_cast<double>(k_blocks)) * min_eigenvalue(0.5 * (prod + prod.transpose()));
  out.contraction = 1.0 - out.rho_t * (1.0 - params.alpha_decrease) / params.lipschitz;
  return out;
}

struct SpectralSample {
  std::uint64_t id = 0;  // partition seed (MC) or enumeration index (exact)
  double lambda_min = 0.0;
};

struct SpectralReport {
  Index n = 0, k = 0;
  std::vector<SpectralSample> samples;
  ExpectedLambda expected;
  double rho_static_min = 0.0;
  double rho_static_max = 0.0;
  double rho_dynamic = 0.0;
  std::optional<UniformClosedForm> closed_form;
};

struct SpectralOptions {
  Index k_blocks = 2;
  Index samples = 1000;       // sampled static partitionings (ignored when exact)
  Index mc_samples = 0;       // samples for E[Q_P^{-1}]; 0 means same as `samples`
  std::uint64_t seed = 0;
  bool exact = false;
  std::uint64_t cap = kDefaultEnumerationCap;
  std::size_t threads = 1;
  double jitter = 0.0;
};

/// lambda_min(Lambda_P) for sampled (or all) partitionings plus
/// lambda_min(E[Lambda_P]). Sampled partitioning i uses derive_seed(seed, i),
/// the same stream the MC expectation draws from.
inline SpectralReport spectral_report(const SymmetricMatrix& q, const SpectralOptions& opt) {
  SpectralReport rep;
  rep.n = q.n();
  rep.k = opt.k_blocks;
  std::vector<Partitioning> parts;
  if (opt.exact) {
    parts = enumerate_partitions(q.n(), opt.k_blocks, opt.cap);
    rep.samples.resize(parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i) rep.samples[i].id = i;
  } else {
    if (opt.samples < 1) throw InvalidArgument("spectral_report: need at least one sample");
    rep.samples.resize(static_cast<std::size_t>(opt.samples));
    for (std::size_t i = 0; i < rep.samples.size(); ++i) rep.samples[i].id = derive_seed(opt.seed, i);
  }
  parallel_for(rep.samples.size(), opt.threads, [&](std::size_t i) {
    const Partitioning p = opt.exact ? parts[i] : sample_uniform_partition(q.n(), opt.k_blocks, rep.samples[i].id);
    rep.samples[i].lambda_min = lambda_min_precond(q, p, opt.jitter);
  });
  if (opt.exact) {
    rep.expected = expected_lambda_exact(q, opt.k_blocks, opt.cap, opt.jitter);
  } else {
    const Index m = opt.mc_samples > 0 ? opt.mc_samples : opt.samples;
    rep.expected = expected_lambda_mc(q, opt.k_blocks, m, opt.seed, opt.threads, opt.jitter);
  }
  const auto [lo, hi] = std::minmax_element(rep.samples.begin(), rep.samples.end(),
                                            [](const auto& a, const auto& b) { return a.lambda_min < b.lambda_min; });
  const auto k = static_cast<double>(opt.k_blocks);
  rep.rho_static_min = lo->lambda_min / k;
  rep.rho_static_max = hi->lambda_min / k;
  rep.rho_dynamic = rep.expected.value / k;
  return rep;
}

inline nlohmann::json to_json(const UniformClosedForm& cf) {
  return {{"n", cf.n}, {"k", cf.k}, {"alpha", cf.alpha}, {"epsilon", cf.epsilon}, {"p", cf.p},
          {"lambda_static", cf.lambda_static}, {"lambda_dynamic", cf.lambda_dynamic},
          {"rho_static", cf.rho_static()}, {"rho_dynamic", cf.rho_dynamic()}};
}

inline nlohmann::json to_json(const SpectralReport& rep) {
  nlohmann::json j;
  j["n"] = rep.n;
  j["k"] = rep.k;
  auto& samples = j["samples"] = nlohmann::json::array();
  for (const auto& s : rep.samples) samples.push_back({{"id", s.id}, {"lambda_min", s.lambda_min}});
  j["lambda_min_expected"] = {{"value", rep.expected.value},
                              {"estimator", rep.expected.exact ? "exact enumeration" : "monte carlo"},
                              {"samples", rep.expected.samples},
                              {"std_error", rep.expected.std_error}};
  j["rho_static_min"] = rep.rho_static_min;
  j["rho_static_max"] = rep.rho_static_max;
  j["rho_dynamic"] = rep.rho_dynamic;
  j["closed_form"] = rep.closed_form ? to_json(*rep.closed_form) : nlohmann::json(nullptr);
  return j;
}

/// Single column of per-sample lambda_min values.
inline void write_samples_csv(std::ostream& out, const SpectralReport& rep, const std::string& invocation = {}) {
  if (!invocation.empty()) out << "# " << invocation << '\n';
  out << "lambda_min\n";
  char buf[32];
  for (const auto& s : rep.samples) {
    std::snprintf(buf, sizeof buf, "%.17g", s.lambda_min);
    out << buf << '\n';
  }
}

}  // namespace blockprec
