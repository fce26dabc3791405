#include <gtest/gtest.h>

#include <blockprec/data.hpp>
#include <blockprec/solver.hpp>

#include <sstream>

#include "test_support.hpp"

using namespace blockprec;
using blockprec::testing::dense_mask;
using blockprec::testing::random_matrix;
using blockprec::testing::random_spd;
using blockprec::testing::random_vector;

namespace {

QuadraticObjective random_quadratic(Index n, std::uint64_t seed) {
  return QuadraticObjective(random_spd(n, seed), random_vector(n, seed + 1));
}

}  // namespace

TEST(Step, KOneUnitStepReachesMinimizer) {
  const auto f = random_quadratic(8, 1);
  const Vector x1 = step(f, random_vector(8, 9), Partitioning::contiguous(8, 1), CurvatureModel::ExactHessian, 1.0);
  EXPECT_LT((x1 - f.optimum().x).norm(), 1e-10);
}

TEST(Step, DiagonalPreconditioner) {
  Vector d(3);
  d << 2.0, 4.0, 8.0;
  const QuadraticObjective f(SymmetricMatrix(Matrix(d.asDiagonal())), Vector::Zero(3));
  const Vector x0 = Vector::Ones(3);
  const Vector x1 = step(f, x0, Partitioning::contiguous(3, 3), CurvatureModel::ExactHessian, 0.5);
  EXPECT_LT((x1 - 0.5 * x0).norm(), 1e-15);
}

TEST(Step, MatchesDenseOracle) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Index n = 10;
    const auto f = random_quadratic(n, s);
    const auto p = sample_uniform_partition(n, 1 + static_cast<Index>(s % 5), s);
    const Vector x = random_vector(n, s + 7);
    const Matrix qp = dense_mask(f.hessian().dense(), p.assignment());
    const Vector oracle = x - 0.3 * qp.fullPivLu().solve(f.hessian().dense() * x - f.linear());
    EXPECT_LT((step(f, x, p, CurvatureModel::ExactHessian, 0.3) - oracle).norm(), 1e-10);
  }
}

TEST(Armijo, AcceptsFullStepOnQuadraticNewtonDirection) {
  const auto f = random_quadratic(5, 3);
  const Vector x = random_vector(5, 4);
  const Vector d = -f.hessian().dense().llt().solve(f.gradient(x));
  EXPECT_EQ(armijo_step_size(f, x, d, 0.3, 0.5, 30), 1.0);
}

TEST(Armijo, BacktracksLongDirection) {
  // f = x^2/2 at x = 1, d = -4: beta = 1 and 0.5 fail, 0.25 is exact.
  const QuadraticObjective f(SymmetricMatrix::identity(1), Vector::Zero(1));
  const Vector x = Vector::Ones(1);
  EXPECT_EQ(armijo_step_size(f, x, Vector::Constant(1, -4.0), 0.3, 0.5, 30), 0.25);
}

TEST(Armijo, ReturnsLargestAcceptableStep) {
  const auto f = random_quadratic(6, 5);
  const Vector x = random_vector(6, 6, 3.0);
  const Vector d = -10.0 * f.gradient(x);
  const double beta = armijo_step_size(f, x, d, 0.3, 0.5, 60);
  const double slope = f.gradient(x).dot(d);
  EXPECT_LE(f.value(x + beta * d), f.value(x) + 0.3 * beta * slope);
  EXPECT_GT(f.value(x + 2 * beta * d), f.value(x) + 0.3 * 2 * beta * slope);
}

TEST(Armijo, Errors) {
  const QuadraticObjective f(SymmetricMatrix::identity(1), Vector::Zero(1));
  const Vector x = Vector::Ones(1);
  EXPECT_THROW(armijo_step_size(f, x, Vector::Ones(1), 0.3, 0.5, 30), InvalidArgument);
  EXPECT_THROW(armijo_step_size(f, x, Vector::Constant(1, -1e6), 0.3, 0.5, 2), LineSearchFailure);
  EXPECT_THROW(armijo_step_size(f, x, -x, 1.5, 0.5, 2), InvalidArgument);
}

TEST(Run, KOneConvergesInOneStep) {
  const auto f = QuadraticObjective(gen_uniform_q(50, 0.3), random_vector(50, 1));
  SolverConfig c;
  c.k_blocks = 1;
  c.iterations = 3;
  const auto tr = run(f, c);
  EXPECT_LE(std::abs(tr.records[1].subopt), 1e-12);
}

TEST(Run, IdentityQuadraticOneStepEachScheme) {
  const QuadraticObjective f(SymmetricMatrix::identity(6), Vector::Ones(6));
  for (auto s : {PartitionScheme::Static, PartitionScheme::Dynamic}) {
    SolverConfig c;
    c.k_blocks = 3;
    c.scheme = s;
    c.iterations = 1;
    const auto tr = run(f, c);
    EXPECT_NEAR(tr.records[1].subopt, 0.0, 1e-15);
  }
}

TEST(Run, ZeroIterationsRecordsStartOnly) {
  const auto f = random_quadratic(4, 2);
  SolverConfig c;
  c.k_blocks = 2;
  c.iterations = 0;
  const auto tr = run(f, c);
  ASSERT_EQ(tr.records.size(), 1u);
  EXPECT_EQ(tr.records[0].t, 0);
  EXPECT_TRUE(tr.partition_seeds.empty());
}

TEST(Run, PerStepMonotoneDecreaseWithTheoremStep) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Index n = 12;
    const auto f = random_quadratic(n, 100 + s);
    SolverConfig c;
    c.k_blocks = 1 + static_cast<Index>(s % 6);
    c.step = SolverConfig::theorem_step(c.k_blocks);
    c.scheme = s % 2 ? PartitionScheme::Static : PartitionScheme::Dynamic;
    c.seed = s;
    c.iterations = 40;
    c.x0 = random_vector(n, s, 5.0);
    const auto tr = run(f, c);
    for (std::size_t t = 1; t < tr.records.size(); ++t)
      EXPECT_LE(tr.records[t].fval, tr.records[t - 1].fval + 1e-12 * std::abs(tr.records[t - 1].fval))
          << "seed " << s << " t " << t;
  }
}

TEST(Run, StaticReusesOnePartitionSeed) {
  const auto f = random_quadratic(10, 3);
  SolverConfig c;
  c.k_blocks = 2;
  c.scheme = PartitionScheme::Static;
  c.iterations = 5;
  c.seed = 11;
  const auto tr = run(f, c);
  for (auto seed : tr.partition_seeds) EXPECT_EQ(seed, derive_seed(11, 0));
  c.scheme = PartitionScheme::Dynamic;
  const auto dyn = run(f, c);
  EXPECT_EQ(dyn.partition_seeds.front(), tr.partition_seeds.front());
  EXPECT_NE(dyn.partition_seeds[1], dyn.partition_seeds[0]);
  // First step is shared by the matched pair.
  EXPECT_EQ(dyn.records[1].fval, tr.records[1].fval);
}

TEST(Run, StaticMatchesExplicitStepLoop) {
  const auto f = random_quadratic(9, 4);
  SolverConfig c;
  c.k_blocks = 3;
  c.scheme = PartitionScheme::Static;
  c.step = FixedStep{0.4};
  c.iterations = 10;
  c.seed = 5;
  const auto tr = run(f, c);
  const auto p = sample_uniform_partition(9, 3, derive_seed(5, 0));
  Vector x = Vector::Zero(9);
  for (int t = 0; t < 10; ++t) x = step(f, x, p, CurvatureModel::ExactHessian, 0.4);
  EXPECT_LT((tr.final_iterate - x).norm(), 1e-12);
}

TEST(Run, DeterministicAcrossThreadCounts) {
  const Matrix a = random_matrix(80, 20, 1);
  Vector y(80);
  for (Index i = 0; i < 80; ++i) y(i) = (i % 3 == 0) ? 1.0 : -1.0;
  const auto f = GlmObjective::logistic(DataMatrix(a), y, 1.0);
  SolverConfig c;
  c.k_blocks = 4;
  c.step = SolverConfig::theorem_step(4);
  c.iterations = 15;
  c.repeats = 6;
  c.seed = 9;
  const double fs = f.optimum().value;
  c.threads = 1;
  const auto t1 = run_repeats(f, c, fs, 1);
  c.threads = 4;
  const auto t4 = run_repeats(f, c, fs, 4);
  std::ostringstream o1, o4;
  write_trace_csv(o1, t1);
  write_trace_csv(o4, t4);
  EXPECT_EQ(o1.str(), o4.str());
  // Per-block threading inside one run.
  SolverConfig single = repeat_config(c, 2);
  single.threads = 4;
  EXPECT_EQ(run(f, single, fs).final_iterate, t1[2].final_iterate);
}

TEST(Run, ArmijoDecreasesAndRecordsSteps) {
  const Matrix a = random_matrix(50, 10, 2);
  Vector y(50);
  for (Index i = 0; i < 50; ++i) y(i) = (i % 2 == 0) ? 1.0 : -1.0;
  const auto f = GlmObjective::logistic(DataMatrix(a), y, 0.5);
  SolverConfig c;
  c.k_blocks = 5;
  c.step = ArmijoStep{};
  c.model = CurvatureModel::SmoothnessBound;
  c.iterations = 30;
  const auto tr = run(f, c);
  for (std::size_t t = 1; t < tr.records.size(); ++t) {
    EXPECT_LT(tr.records[t].fval, tr.records[t - 1].fval + 1e-14);
    EXPECT_GT(tr.records[t].step_size, 0.0);
    EXPECT_LE(tr.records[t].step_size, 1.0);
  }
  EXPECT_LT(tr.records.back().subopt, 1e-3 * tr.records.front().subopt);
}

TEST(Run, DivergenceKeepsPartialTrace) {
  const auto f = random_quadratic(6, 8);
  SolverConfig c;
  c.k_blocks = 2;
  c.step = FixedStep{1e10};
  c.iterations = 200;
  try {
    run(f, c);
    FAIL() << "expected divergence";
  } catch (const AbortedTrace& e) {
    EXPECT_GT(e.partial().records.size(), 2u);
    EXPECT_LT(e.partial().records.size(), 201u);
  }
}

TEST(Run, SingularBlockAbortsWithPartialTrace) {
  const Matrix a = Matrix::Identity(2, 4);  // A^T A has zero diagonal entries
  const auto f = GlmObjective::ridge(DataMatrix(a), Vector::Ones(2), 0.0);
  SolverConfig c;
  c.k_blocks = 4;
  c.iterations = 3;
  EXPECT_THROW(run(f, c, 0.0), AbortedTrace);
  c.jitter = 1e-6;
  EXPECT_NO_THROW(run(f, c, 0.0));
}

TEST(Run, ConfigValidation) {
  const auto f = random_quadratic(4, 1);
  SolverConfig c;
  c.k_blocks = 5;
  EXPECT_THROW(run(f, c), InvalidArgument);
  c.k_blocks = 2;
  c.step = FixedStep{0.0};
  EXPECT_THROW(run(f, c), InvalidArgument);
  c.step = ArmijoStep{1.2, 0.5, 3};
  EXPECT_THROW(run(f, c), InvalidArgument);
  c.step = FixedStep{1.0};
  c.x0 = Vector::Zero(3);
  EXPECT_THROW(run(f, c), InvalidArgument);
}

TEST(Envelope, MinMedianMax) {
  std::vector<ConvergenceTrace> traces(3);
  const double vals[3] = {3.0, 1.0, 2.0};
  for (int r = 0; r < 3; ++r) traces[static_cast<std::size_t>(r)].records = {{0, 0, vals[r], 0, 0}};
  const auto env = suboptimality_envelope(traces);
  ASSERT_EQ(env.size(), 1u);
  EXPECT_EQ(env[0].min, 1.0);
  EXPECT_EQ(env[0].median, 2.0);
  EXPECT_EQ(env[0].max, 3.0);
  EXPECT_EQ(env[0].mean, 2.0);
}

TEST(TraceCsv, HeaderAndInvocation) {
  ConvergenceTrace tr;
  tr.records = {{0, 1.5, 0.5, 2.0, 0.0}};
  std::ostringstream out;
  write_trace_csv(out, {tr}, "blockprec solve --k 2");
  EXPECT_EQ(out.str(), "# blockprec solve --k 2\nrun,t,fval,subopt,gradnorm\n0,0,1.5,0.5,2\n");
}

TEST(TraceJson, EchoesConfig) {
  SolverConfig c;
  c.k_blocks = 3;
  c.step = ArmijoStep{};
  const auto j = config_to_json(c);
  EXPECT_EQ(j["k"], 3);
  EXPECT_EQ(j["step"]["policy"], "armijo");
  EXPECT_EQ(j["scheme"], "dynamic");
}
