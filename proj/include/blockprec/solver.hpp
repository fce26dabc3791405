#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "blockprec/error.hpp"
#include "blockprec/matrix.hpp"
#include "blockprec/objectives.hpp"
#include "blockprec/parallel.hpp"
#include "blockprec/partition.hpp"
#include "blockprec/random.hpp"

namespace blockprec {

enum class PartitionScheme {
  Static,   // one partitioning for the whole run
  Dynamic,  // a fresh random partitioning every iteration
};

inline const char* to_string(PartitionScheme s) {
  return s == PartitionScheme::Static ? "static" : "dynamic";
}

struct FixedStep {
  double eta = 1.0;
};

struct ArmijoStep {
  double c1 = 0.3;
  double shrink = 0.5;
  int max_backtracks = 30;
};

using StepPolicy = std::variant<FixedStep, ArmijoStep>;

struct SolverConfig {
  Index k_blocks = 1;
  PartitionScheme scheme = PartitionScheme::Dynamic;
  std::uint64_t seed = 0;
  StepPolicy step = FixedStep{1.0};
  CurvatureModel model = CurvatureModel::ExactHessian;
  Index iterations = 100;
  std::optional<Vector> x0;  // zero vector when absent
  Index repeats = 1;
  double jitter = 0.0;
  std::size_t threads = 1;  // per-block solves within a step

  /// eta = 1/K, the step size the convergence theorems use.
  static FixedStep theorem_step(Index k_blocks) { return FixedStep{1.0 / static_cast<double>(k_blocks)}; }

  void validate() const {
    if (k_blocks <= 0) throw InvalidArgument("solver: K must be positive");
    if (iterations < 0) throw InvalidArgument("solver: iteration budget must be non-negative");
    if (repeats <= 0) throw InvalidArgument("solver: repeats must be positive");
    if (!(jitter >= 0.0)) throw InvalidArgument("solver: jitter must be non-negative");
    if (const auto* f = std::get_if<FixedStep>(&step)) {
      if (!(f->eta > 0.0) || !std::isfinite(f->eta)) throw InvalidArgument("solver: eta must be positive");
    } else {
      const auto& a = std::get<ArmijoStep>(step);
      if (!(a.c1 > 0.0 && a.c1 < 1.0)) throw InvalidArgument("armijo: c1 must be in (0,1)");
      if (!(a.shrink > 0.0 && a.shrink < 1.0)) throw InvalidArgument("armijo: shrink must be in (0,1)");
      if (a.max_backtracks < 0) throw InvalidArgument("armijo: max_backtracks must be >= 0");
    }
  }
};

/// Partition seed used at iteration t. Static runs reuse the t = 0 seed, so a
/// static run is the matching dynamic run frozen at its first partitioning.
inline std::uint64_t iteration_partition_seed(const SolverConfig& config, Index t) {
  return derive_seed(config.seed, config.scheme == PartitionScheme::Static ? 0 : static_cast<std::uint64_t>(t));
}

struct TraceRecord {
  Index t = 0;
  double fval = 0.0;
  double subopt = 0.0;
  double gradnorm = 0.0;
  double step_size = 0.0;  // step taken to reach this iterate (0 at t = 0)
};

struct ConvergenceTrace {
  std::vector<TraceRecord> records;
  std::vector<std::uint64_t> partition_seeds;  // one per completed step
  Vector final_iterate;
  double f_star = 0.0;
};

/// Divergence or numerical failure mid-run; carries everything recorded so far.
class AbortedTrace : public NumericalError {
 public:
  AbortedTrace(const std::string& what, ConvergenceTrace partial)
      : NumericalError(what), partial_(std::move(partial)) {}
  const ConvergenceTrace& partial() const noexcept { return partial_; }

 private:
  ConvergenceTrace partial_;
};

/// x' = x - eta Q_P^{-1} grad f(x), with Q = curvature(x, model).
template <Objective Obj>
Vector step(const Obj& obj, const Vector& x, const Partitioning& p, CurvatureModel model, double eta,
            double jitter = 0.0, std::size_t threads = 1) {
  require_dimension(obj.n(), x.size(), "step");
  require_dimension(obj.n(), p.n(), "step partitioning");
  const BlockFactorization factors(obj.curvature(x, model), p, jitter, threads);
  return x - eta * factors.solve(obj.gradient(x), threads);
}

/// Largest beta in {1, shrink, shrink^2, ...} (at most max_backtracks
/// reductions) with f(x + beta d) <= f(x) + c1 beta grad^T d.
template <Objective Obj>
double armijo_step_size(const Obj& obj, const Vector& x, const Vector& d, double c1, double shrink,
                        int max_backtracks) {
  require_dimension(obj.n(), x.size(), "armijo_step_size");
  require_dimension(obj.n(), d.size(), "armijo_step_size direction");
  if (!(c1 > 0.0 && c1 < 1.0)) throw InvalidArgument("armijo: c1 must be in (0,1)");
  if (!(shrink > 0.0 && shrink < 1.0)) throw InvalidArgument("armijo: shrink must be in (0,1)");
  const double slope = obj.gradient(x).dot(d);
  if (!(slope < 0.0)) throw InvalidArgument("armijo: d is not a descent direction");
  const double f0 = obj.value(x);
  double beta = 1.0;
  for (int trial = 0; trial <= max_backtracks; ++trial) {
    const double f = obj.value(x + beta * d);
    if (f <= f0 + c1 * beta * slope) return beta;
    beta *= shrink;
  }
  throw LineSearchFailure("armijo: no acceptable step after " + std::to_string(max_backtracks) +
                          " backtracks");
}

/// One run of block-diagonal preconditioned gradient descent.
template <Objective Obj>
ConvergenceTrace run(const Obj& obj, const SolverConfig& config, double f_star) {
  config.validate();
  const Index n = obj.n();
  if (config.k_blocks > n) throw InvalidArgument("solver: K exceeds the dimension");

  ConvergenceTrace trace;
  trace.f_star = f_star;
  trace.records.reserve(static_cast<std::size_t>(config.iterations + 1));
  trace.partition_seeds.reserve(static_cast<std::size_t>(config.iterations));

  Vector x = config.x0 ? *config.x0 : Vector::Zero(n);
  require_dimension(n, x.size(), "solver x0");

  auto record = [&](Index t, double fval, const Vector& grad, double step_size) {
    trace.records.push_back({t, fval, fval - f_star, grad.norm(), step_size});
  };
  auto fail = [&](const std::string& why) {
    trace.final_iterate = x;
    throw AbortedTrace(why, std::move(trace));
  };

  double f = obj.value(x);
  Vector g = obj.gradient(x);
  record(0, f, g, 0.0);
  if (!std::isfinite(f)) fail("objective is not finite at x0");

  const bool constant_curvature = obj.curvature_is_constant(config.model);
  std::optional<SymmetricMatrix> fixed_q;
  std::optional<BlockFactorization> cached;

  for (Index t = 0; t < config.iterations; ++t) {
    const std::uint64_t pseed = iteration_partition_seed(config, t);
    trace.partition_seeds.push_back(pseed);

    const BlockFactorization* factors = nullptr;
    std::optional<BlockFactorization> fresh;
    try {
      if (constant_curvature && config.scheme == PartitionScheme::Static) {
        if (!cached)
          cached.emplace(obj.curvature(x, config.model), sample_uniform_partition(n, config.k_blocks, pseed),
                         config.jitter, config.threads);
        factors = &*cached;
      } else {
        if (constant_curvature && !fixed_q) fixed_q = obj.curvature(x, config.model);
        const Partitioning p = sample_uniform_partition(n, config.k_blocks, pseed);
        fresh.emplace(constant_curvature ? *fixed_q : obj.curvature(x, config.model), p, config.jitter,
                      config.threads);
        factors = &*fresh;
      }
    } catch (const SingularBlock& e) {
      fail(std::string("iteration ") + std::to_string(t) + ": " + e.what());
    }

    const Vector direction = -factors->solve(g, config.threads);
    double beta = 0.0;
    if (const auto* fixed = std::get_if<FixedStep>(&config.step)) {
      beta = fixed->eta;
    } else if (direction.squaredNorm() == 0.0) {
      beta = 1.0;  // stationary point
    } else {
      const auto& ls = std::get<ArmijoStep>(config.step);
      try {
        beta = armijo_step_size(obj, x, direction, ls.c1, ls.shrink, ls.max_backtracks);
      } catch (const std::exception& e) {
        fail(std::string("iteration ") + std::to_string(t) + ": " + e.what());
      }
    }

    x += beta * direction;
    f = obj.value(x);
    g = obj.gradient(x);
    record(t + 1, f, g, beta);
    if (!std::isfinite(f) || !g.allFinite())
      fail("diverged at iteration " + std::to_string(t + 1));
  }
  trace.final_iterate = std::move(x);
  return trace;
}

template <Objective Obj>
ConvergenceTrace run(const Obj& obj, const SolverConfig& config) {
  return run(obj, config, obj.optimum().value);
}

/// Config of repeat r: same settings, seed derived from (config.seed, r).
inline SolverConfig repeat_config(const SolverConfig& config, Index r) {
  SolverConfig c = config;
  c.seed = derive_seed(config.seed, static_cast<std::uint64_t>(r));
  c.repeats = 1;
  return c;
}

/// config.repeats independent runs. Repeats run concurrently on `threads`
/// workers; the result does not depend on the thread count.
template <Objective Obj>
std::vector<ConvergenceTrace> run_repeats(const Obj& obj, const SolverConfig& config, double f_star,
                                          std::size_t threads = 1) {
  config.validate();
  std::vector<ConvergenceTrace> traces(static_cast<std::size_t>(config.repeats));
  parallel_for(traces.size(), threads, [&](std::size_t r) {
    SolverConfig c = repeat_config(config, static_cast<Index>(r));
    c.threads = 1;
    traces[r] = run(obj, c, f_star);
  });
  return traces;
}

struct EnvelopePoint {
  Index t = 0;
  double min = 0.0, median = 0.0, max = 0.0, mean = 0.0;
};

/// Per-iteration min/median/max/mean of suboptimality across runs.
inline std::vector<EnvelopePoint> suboptimality_envelope(const std::vector<ConvergenceTrace>& traces) {
  if (traces.empty()) return {};
  std::size_t len = traces.front().records.size();
  for (const auto& tr : traces) len = std::min(len, tr.records.size());
  std::vector<EnvelopePoint> env(len);
  std::vector<double> column(traces.size());
  for (std::size_t t = 0; t < len; ++t) {
    double sum = 0.0;
    for (std::size_t r = 0; r < traces.size(); ++r) {
      column[r] = traces[r].records[t].subopt;
      sum += column[r];
    }
    std::sort(column.begin(), column.end());
    const std::size_t mid = column.size() / 2;
    const double median =
        column.size() % 2 == 1 ? column[mid] : 0.5 * (column[mid - 1] + column[mid]);
    env[t] = {traces.front().records[t].t, column.front(), median, column.back(),
              sum / static_cast<double>(column.size())};
  }
  return env;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// CSV with header run,t,fval,subopt,gradnorm. `invocation`, when non-empty,
/// is written first as a '#' comment line.
inline void write_trace_csv(std::ostream& out, const std::vector<ConvergenceTrace>& traces,
                            const std::string& invocation = {}) {
  if (!invocation.empty()) out << "# " << invocation << '\n';
  out << "run,t,fval,subopt,gradnorm\n";
  for (std::size_t r = 0; r < traces.size(); ++r)
    for (const auto& rec : traces[r].records)
      out << r << ',' << rec.t << ',' << detail::format_double(rec.fval) << ','
          << detail::format_double(rec.subopt) << ',' << detail::format_double(rec.gradnorm) << '\n';
}

inline void write_envelope_csv(std::ostream& out, const std::vector<EnvelopePoint>& env,
                               const std::string& invocation = {}) {
  if (!invocation.empty()) out << "# " << invocation << '\n';
  out << "t,min,median,max,mean\n";
  for (const auto& p : env)
    out << p.t << ',' << detail::format_double(p.min) << ',' << detail::format_double(p.median) << ','
        << detail::format_double(p.max) << ',' << detail::format_double(p.mean) << '\n';
}

inline nlohmann::json config_to_json(const SolverConfig& c) {
  nlohmann::json j;
  j["k"] = c.k_blocks;
  j["scheme"] = to_string(c.scheme);
  j["seed"] = c.seed;
  j["model"] = to_string(c.model);
  j["iterations"] = c.iterations;
  j["repeats"] = c.repeats;
  j["jitter"] = c.jitter;
  if (const auto* f = std::get_if<FixedStep>(&c.step)) {
    j["step"] = {{"policy", "fixed"}, {"eta", f->eta}};
  } else {
    const auto& a = std::get<ArmijoStep>(c.step);
    j["step"] = {{"policy", "armijo"}, {"c1", a.c1}, {"shrink", a.shrink}, {"max_backtracks", a.max_backtracks}};
  }
  j["x0"] = c.x0 ? nlohmann::json(std::vector<double>(c.x0->data(), c.x0->data() + c.x0->size()))
                 : nlohmann::json("zero");
  return j;
}

inline nlohmann::json traces_to_json(const SolverConfig& config, const std::vector<ConvergenceTrace>& traces) {
  nlohmann::json j;
  j["config"] = config_to_json(config);
  auto& runs = j["runs"] = nlohmann::json::array();
  for (const auto& tr : traces) {
    nlohmann::json r;
    r["f_star"] = tr.f_star;
    r["partition_seeds"] = tr.partition_seeds;
    auto& recs = r["records"] = nlohmann::json::array();
    for (const auto& rec : tr.records)
      recs.push_back({{"t", rec.t}, {"fval", rec.fval}, {"subopt", rec.subopt}, {"gradnorm", rec.gradnorm},
                      {"step_size", rec.step_size}});
    runs.push_back(std::move(r));
  }
  return j;
}

}  // namespace blockprec
