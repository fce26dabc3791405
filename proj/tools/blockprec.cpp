// blockprec: generate matrices, compute spectral reports, run solver
// comparisons and sweep closed-form rates.
//
// Exit codes: 0 ok, 2 invalid arguments, 3 numerical failure, 4 I/O or parse.

#include <CLI11.hpp>
#include <json.hpp>

#include <blockprec/blockprec.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace blockprec;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitIo = 4;

/// Invocation recorded in output files. --threads is left out so that output
/// bytes do not depend on it.
std::string invocation_string(const std::vector<std::string>& args) {
  std::string out = "blockprec";
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--threads") {
      ++i;
      continue;
    }
    if (args[i].rfind("--threads=", 0) == 0) continue;
    out += ' ';
    out += args[i];
  }
  return out;
}

/// Appends "--key value" for every config entry whose flag is not already on
/// the command line.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  json cfg;
  try {
    cfg = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(0, path + ": " + e.what());
  }
  if (!cfg.is_object()) throw InvalidArgument("config must be a JSON object");
  auto present = [&](const std::string& flag) {
    for (const auto& a : args)
      if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
    return false;
  };
  for (const auto& [key, value] : cfg.items()) {
    const std::string flag = "--" + key;
    if (key == "config" || present(flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back(flag);
    } else if (value.is_string()) {
      args.push_back(flag);
      args.push_back(value.get<std::string>());
    } else if (value.is_number_integer()) {
      args.push_back(flag);
      args.push_back(value.dump());
    } else if (value.is_number()) {
      args.push_back(flag);
      args.push_back(detail::format_double(value.get<double>()));
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& v : value) {
        if (!joined.empty()) joined += ',';
        joined += v.is_string() ? v.get<std::string>() : v.dump();
      }
      args.push_back(flag);
      args.push_back(joined);
    } else {
      throw InvalidArgument("config key '" + key + "' has an unsupported type");
    }
  }
  return args;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void write_json(const fs::path& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep))
    if (!cur.empty()) parts.push_back(cur);
  return parts;
}

double to_double(const std::string& s, const char* what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InvalidArgument(std::string("invalid ") + what + " '" + s + "'");
  }
}

Index to_index(const std::string& s, const char* what) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return static_cast<Index>(v);
  } catch (const std::exception&) {
    throw InvalidArgument(std::string("invalid ") + what + " '" + s + "'");
  }
}

/// "2,4,8" or "divisors" (every divisor of n).
std::vector<Index> parse_k_grid(const std::string& spec, Index n) {
  std::vector<Index> ks;
  if (spec == "divisors") {
    for (Index k = 1; k <= n; ++k)
      if (n % k == 0) ks.push_back(k);
    return ks;
  }
  for (const auto& tok : split(spec, ',')) ks.push_back(to_index(tok, "K"));
  if (ks.empty()) throw InvalidArgument("empty K grid");
  return ks;
}

/// "0.1,0.5" or "lo:hi:count" (count evenly spaced values, both ends included).
std::vector<double> parse_alpha_grid(const std::string& spec) {
  std::vector<double> alphas;
  const auto range = split(spec, ':');
  if (range.size() == 3) {
    const double lo = to_double(range[0], "alpha"), hi = to_double(range[1], "alpha");
    const Index count = to_index(range[2], "alpha count");
    if (count < 1) throw InvalidArgument("alpha grid needs a positive count");
    for (Index i = 0; i < count; ++i)
      alphas.push_back(count == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1));
    return alphas;
  }
  if (range.size() != 1) throw InvalidArgument("alpha grid must be a list or lo:hi:count");
  for (const auto& tok : split(spec, ',')) alphas.push_back(to_double(tok, "alpha"));
  if (alphas.empty()) throw InvalidArgument("empty alpha grid");
  return alphas;
}

// ---------------------------------------------------------------- gen

struct GenArgs {
  std::string kind;
  Index n = 0;
  Index k = 0;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  std::string out;
  std::string factor;
};

int cmd_gen(const GenArgs& a, const std::string& invocation) {
  SymmetricMatrix q;
  json meta{{"kind", a.kind}, {"n", a.n}, {"alpha", a.alpha}, {"seed", a.seed}, {"format", "BPQ1"},
            {"invocation", invocation}};
  if (a.kind == "uniform") {
    q = gen_uniform_q(a.n, a.alpha);
  } else if (a.kind == "separable") {
    if (a.k <= 0) throw InvalidArgument("gen separable needs --k");
    q = gen_separable_q(a.n, a.k, a.alpha);
    meta["k"] = a.k;
  } else {
    auto rc = gen_random_corr_q_detailed(a.n, a.alpha, a.seed);
    q = std::move(rc.q);
    meta["shift"] = rc.shift;
    meta["provenance"] = rc.provenance;
  }
  const fs::path out(a.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path().string());
  save_matrix(a.out, q.dense());
  if (!a.factor.empty()) {
    save_matrix(a.factor, factor_sqrt(q));
    meta["factor"] = a.factor;
  }
  save_metadata(a.out, meta);
  return kExitOk;
}

// ---------------------------------------------------------------- inputs

struct InputArgs {
  std::string q_path;
  std::string libsvm;
  bool normalize = false;
  Index n_features = 0;
};

SymmetricMatrix load_q(const std::string& path) {
  Matrix m = load_matrix(path);
  return SymmetricMatrix(std::move(m));
}

Dataset load_dataset(const InputArgs& in, bool logistic) {
  LibsvmOptions opt;
  opt.n_features = in.n_features;
  opt.logistic_labels = logistic;
  opt.normalize_columns = in.normalize;
  return read_libsvm(in.libsvm, opt);
}

void require_one_input(const InputArgs& in) {
  if (in.q_path.empty() == in.libsvm.empty()) throw InvalidArgument("pass exactly one of --q or --libsvm");
}

// ---------------------------------------------------------------- spectral

struct SpectralArgs {
  InputArgs input;
  Index k = 2;
  Index samples = 1000;
  Index mc_samples = 0;
  bool exact = false;
  std::uint64_t cap = kDefaultEnumerationCap;
  bool closed_form = false;
  double lambda_reg = 1.0;
  double jitter = 0.0;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_spectral(const SpectralArgs& a, std::size_t threads, const std::string& invocation) {
  require_one_input(a.input);
  SymmetricMatrix q;
  json meta = json::object();
  if (!a.input.q_path.empty()) {
    q = load_q(a.input.q_path);
    meta = load_metadata(a.input.q_path);
  } else {
    const Dataset ds = load_dataset(a.input, false);
    if (!(a.lambda_reg >= 0.0)) throw InvalidArgument("--lambda-reg must be non-negative");
    Matrix m = DataMatrix(ds.a).gram();
    m.diagonal().array() += a.lambda_reg;
    q = SymmetricMatrix(std::move(m));
    meta = {{"kind", "dataset"}, {"name", ds.name}, {"provenance", ds.provenance}, {"lambda_reg", a.lambda_reg}};
  }

  SpectralOptions opt;
  opt.k_blocks = a.k;
  opt.samples = a.samples;
  opt.mc_samples = a.mc_samples;
  opt.seed = a.seed;
  opt.exact = a.exact;
  opt.cap = a.cap;
  opt.threads = threads;
  opt.jitter = a.jitter;
  SpectralReport rep = spectral_report(q, opt);

  if (a.closed_form) {
    if (meta.value("kind", "") != "uniform")
      throw InvalidArgument("--closed-form needs a uniform-correlation Q (kind = uniform in its metadata)");
    rep.closed_form = uniform_closed_form(q.n(), a.k, meta.at("alpha").get<double>());
  }

  ensure_dir(a.out);
  json j = to_json(rep);
  j["input"] = meta;
  j["seed"] = a.seed;
  j["invocation"] = invocation;
  write_json(fs::path(a.out) / "report.json", j);
  auto csv = open_out(fs::path(a.out) / "samples.csv");
  write_samples_csv(csv, rep, invocation);
  if (!csv) throw IoError("write failed: samples.csv");

  std::printf("lambda_min(E[Lambda_P]) = %.6f (%s, se %.2e)\n", rep.expected.value,
              rep.expected.exact ? "exact" : "monte carlo", rep.expected.std_error);
  std::printf("rho_static in [%.6f, %.6f], rho_dynamic = %.6f\n", rep.rho_static_min, rep.rho_static_max,
              rep.rho_dynamic);
  if (rep.closed_form)
    std::printf("closed form: rho_static = %.6f, rho_dynamic = %.6f\n", rep.closed_form->rho_static(),
                rep.closed_form->rho_dynamic());
  return kExitOk;
}

// ---------------------------------------------------------------- solve

struct SolveArgs {
  InputArgs input;
  std::string objective = "quadratic";
  std::string linear;  // quadratic linear term: BPQ1 n x 1 file, or random
  double lambda = 1.0;
  Index k = 2;
  std::string scheme = "both";
  std::string model = "exact";
  std::string step = "fixed";
  std::optional<double> eta;
  double c1 = 0.3;
  double shrink = 0.5;
  int max_backtracks = 30;
  Index iterations = 100;
  Index repeats = 1;
  double jitter = 0.0;
  std::uint64_t seed = 0;
  std::string out;
};

struct SchemeResult {
  std::vector<ConvergenceTrace> traces;
  std::optional<std::string> failure;
};

template <Objective Obj>
SchemeResult run_scheme(const Obj& obj, const SolverConfig& config, double f_star, std::size_t threads) {
  SchemeResult res;
  res.traces.resize(static_cast<std::size_t>(config.repeats));
  std::vector<std::string> errors(res.traces.size());
  parallel_for(res.traces.size(), threads, [&](std::size_t r) {
    SolverConfig c = repeat_config(config, static_cast<Index>(r));
    try {
      res.traces[r] = run(obj, c, f_star);
    } catch (const AbortedTrace& e) {
      res.traces[r] = e.partial();
      errors[r] = "run " + std::to_string(r) + ": " + e.what();
    }
  });
  for (const auto& e : errors)
    if (!e.empty()) {
      res.failure = e;
      break;
    }
  return res;
}

template <Objective Obj>
int solve_with(const Obj& obj, const SolveArgs& a, std::size_t threads, const std::string& invocation,
               json input_meta) {
  SolverConfig base;
  base.k_blocks = a.k;
  base.seed = a.seed;
  base.iterations = a.iterations;
  base.repeats = a.repeats;
  base.jitter = a.jitter;
  base.model = a.model == "exact" ? CurvatureModel::ExactHessian : CurvatureModel::SmoothnessBound;
  if (a.step == "fixed") {
    base.step = a.eta ? FixedStep{*a.eta} : SolverConfig::theorem_step(a.k);
  } else {
    base.step = ArmijoStep{a.c1, a.shrink, a.max_backtracks};
  }
  base.validate();
  if (a.k > obj.n()) throw InvalidArgument("K exceeds the dimension");

  const Optimum opt = obj.optimum();
  std::vector<PartitionScheme> schemes;
  if (a.scheme != "dynamic") schemes.push_back(PartitionScheme::Static);
  if (a.scheme != "static") schemes.push_back(PartitionScheme::Dynamic);

  ensure_dir(a.out);
  json result;
  result["invocation"] = invocation;
  result["input"] = std::move(input_meta);
  result["f_star"] = opt.value;
  result["optimum_gradient_norm"] = opt.gradient_norm;
  std::optional<std::string> failure;
  for (const auto s : schemes) {
    SolverConfig c = base;
    c.scheme = s;
    SchemeResult res = run_scheme(obj, c, opt.value, threads);
    const std::string name = to_string(s);
    auto trace_csv = open_out(fs::path(a.out) / ("trace_" + name + ".csv"));
    write_trace_csv(trace_csv, res.traces, invocation);
    auto env_csv = open_out(fs::path(a.out) / ("envelope_" + name + ".csv"));
    write_envelope_csv(env_csv, suboptimality_envelope(res.traces), invocation);
    if (!trace_csv || !env_csv) throw IoError("write failed in " + a.out);
    json sj = traces_to_json(c, res.traces);
    if (res.failure) sj["failure"] = *res.failure;
    result[name] = std::move(sj);
    const auto& last = res.traces.front().records.back();
    std::printf("%-7s run 0: t=%lld subopt=%.6e\n", name.c_str(), static_cast<long long>(last.t), last.subopt);
    if (res.failure && !failure) failure = res.failure;
  }
  write_json(fs::path(a.out) / "result.json", result);
  if (failure) {
    std::fprintf(stderr, "blockprec: %s (partial traces written)\n", failure->c_str());
    return kExitNumerical;
  }
  return kExitOk;
}

int cmd_solve(const SolveArgs& a, std::size_t threads, const std::string& invocation) {
  require_one_input(a.input);
  if (a.objective == "quadratic") {
    if (a.input.q_path.empty()) throw InvalidArgument("quadratic objective needs --q");
    SymmetricMatrix h = load_q(a.input.q_path);
    Vector c;
    if (a.linear.empty() || a.linear == "random") {
      // Standard normal entries from a stream of the run seed reserved for it.
      Rng rng(derive_seed(a.seed, 0xC0FFEEULL));
      c.resize(h.n());
      for (Index i = 0; i < c.size(); ++i) c(i) = rng.normal();
    } else {
      const Matrix m = load_matrix(a.linear);
      if (m.cols() != 1) throw InvalidArgument("--linear must be an n x 1 matrix file");
      c = m.col(0);
    }
    json meta = load_metadata(a.input.q_path);
    meta["linear"] = a.linear.empty() ? "random" : a.linear;
    return solve_with(QuadraticObjective(std::move(h), std::move(c)), a, threads, invocation, std::move(meta));
  }
  if (a.input.libsvm.empty()) throw InvalidArgument(a.objective + " objective needs --libsvm");
  const bool logistic = a.objective == "logistic";
  Dataset ds = load_dataset(a.input, logistic);
  json meta{{"name", ds.name}, {"provenance", ds.provenance}, {"lambda", a.lambda}, {"objective", a.objective}};
  GlmObjective obj(DataMatrix(std::move(ds.a)), std::move(ds.y), logistic ? LossKind::Logistic : LossKind::Squared,
                   a.lambda);
  return solve_with(obj, a, threads, invocation, std::move(meta));
}

// ---------------------------------------------------------------- sweep

struct SweepArgs {
  Index n = 200;
  std::string k_grid = "divisors";
  std::string alpha_grid = "0:0.99:100";
  std::string out;
};

int cmd_sweep(const SweepArgs& a, const std::string& invocation) {
  const auto ks = parse_k_grid(a.k_grid, a.n);
  const auto alphas = parse_alpha_grid(a.alpha_grid);
  std::vector<UniformClosedForm> cells;
  for (Index k : ks)
    for (double alpha : alphas) cells.push_back(uniform_closed_form(a.n, k, alpha));
  const fs::path out(a.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path().string());
  auto csv = open_out(out);
  csv << "# " << invocation << '\n' << "n,K,alpha,epsilon,rho_static,rho_dynamic\n";
  for (const auto& c : cells)
    csv << c.n << ',' << c.k << ',' << detail::format_double(c.alpha) << ',' << detail::format_double(c.epsilon)
        << ',' << detail::format_double(c.rho_static()) << ',' << detail::format_double(c.rho_dynamic()) << '\n';
  if (!csv) throw IoError("write failed: " + a.out);
  return kExitOk;
}

int run_cli(std::vector<std::string> raw) {
  const std::string invocation = invocation_string(raw);
  const std::vector<std::string> args = expand_config(raw);

  CLI::App app{"Block-diagonal preconditioned gradient descent with static and random partitioning"};
  app.require_subcommand(1);
  std::string config_path;
  std::size_t threads = default_thread_count();
  app.add_option("--config", config_path, "JSON file supplying flags (command-line flags win)");
  app.add_option("--threads", threads, "Worker threads (env BLOCKPREC_THREADS)")
      ->check(CLI::PositiveNumber);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a curvature matrix Q");
  g->add_option("kind", gen.kind, "uniform | separable | randomcorr")
      ->required()
      ->check(CLI::IsMember({"uniform", "separable", "randomcorr"}));
  g->add_option("--n", gen.n, "Dimension")->required();
  g->add_option("--k", gen.k, "Blocks (separable)");
  g->add_option("--alpha", gen.alpha, "Correlation level")->required();
  g->add_option("--seed", gen.seed, "Random seed")->required();
  g->add_option("--out", gen.out, "Output matrix file")->required();
  g->add_option("--factor", gen.factor, "Also write A = Q^{1/2} here");

  auto add_input = [](CLI::App* sub, InputArgs& in) {
    sub->add_option("--q", in.q_path, "Q matrix file (from gen)");
    sub->add_option("--libsvm", in.libsvm, "LIBSVM dataset");
    sub->add_flag("--normalize", in.normalize, "L2-normalize dataset columns");
    sub->add_option("--n-features", in.n_features, "Feature count (default: largest index)");
  };

  SpectralArgs spec;
  auto* s = app.add_subcommand("spectral", "Spectral report for static and random partitionings");
  add_input(s, spec.input);
  s->add_option("--k", spec.k, "Blocks")->required();
  s->add_option("--samples", spec.samples, "Sampled partitionings");
  s->add_option("--mc-samples", spec.mc_samples, "Samples for E[Q_P^-1] (default: --samples)");
  s->add_flag("--exact", spec.exact, "Enumerate all equal-size partitionings");
  s->add_option("--cap", spec.cap, "Enumeration cap");
  s->add_flag("--closed-form", spec.closed_form, "Add closed-form values (uniform Q)");
  s->add_option("--lambda-reg", spec.lambda_reg, "Dataset Q = A^T A + lambda I");
  s->add_option("--jitter", spec.jitter, "Diagonal added to every block");
  s->add_option("--seed", spec.seed, "Random seed")->required();
  s->add_option("--out", spec.out, "Output directory")->required();

  SolveArgs sol;
  auto* v = app.add_subcommand("solve", "Run preconditioned gradient descent");
  add_input(v, sol.input);
  v->add_option("--objective", sol.objective, "quadratic | ridge | logistic")
      ->check(CLI::IsMember({"quadratic", "ridge", "logistic"}));
  v->add_option("--linear", sol.linear, "Quadratic linear term file, or 'random'");
  v->add_option("--lambda", sol.lambda, "Regularization (ridge, logistic)");
  v->add_option("--k", sol.k, "Blocks")->required();
  v->add_option("--scheme", sol.scheme, "static | dynamic | both")
      ->check(CLI::IsMember({"static", "dynamic", "both"}));
  v->add_option("--model", sol.model, "exact | smoothness")->check(CLI::IsMember({"exact", "smoothness"}));
  v->add_option("--step", sol.step, "fixed | armijo")->check(CLI::IsMember({"fixed", "armijo"}));
  v->add_option("--eta", sol.eta, "Fixed step size (default 1/K)");
  v->add_option("--c1", sol.c1, "Armijo constant");
  v->add_option("--shrink", sol.shrink, "Armijo backtracking factor");
  v->add_option("--max-backtracks", sol.max_backtracks, "Armijo reductions");
  v->add_option("--iterations", sol.iterations, "Iterations T");
  v->add_option("--repeats", sol.repeats, "Independent runs");
  v->add_option("--jitter", sol.jitter, "Diagonal added to every block");
  v->add_option("--seed", sol.seed, "Random seed")->required();
  v->add_option("--out", sol.out, "Output directory")->required();

  SweepArgs sw;
  auto* w = app.add_subcommand("sweep", "Closed-form rates over a K x alpha grid");
  w->add_option("--n", sw.n, "Dimension");
  w->add_option("--k", sw.k_grid, "K list, or 'divisors'");
  w->add_option("--alpha", sw.alpha_grid, "alpha list, or lo:hi:count");
  w->add_option("--out", sw.out, "Output CSV")->required();

  // Global options may also follow the subcommand.
  for (auto* sub : {g, s, v, w}) sub->fallthrough();

  std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInvalid;
  }

  if (*g) return cmd_gen(gen, invocation);
  if (*s) return cmd_spectral(spec, threads, invocation);
  if (*v) return cmd_solve(sol, threads, invocation);
  return cmd_sweep(sw, invocation);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(std::vector<std::string>(argv, argv + argc));
  } catch (const InvalidArgument& e) {
    std::fprintf(stderr, "blockprec: invalid argument: %s\n", e.what());
    return kExitInvalid;
  } catch (const TooLarge& e) {
    std::fprintf(stderr, "blockprec: %s\n", e.what());
    return kExitInvalid;
  } catch (const Unsupported& e) {
    std::fprintf(stderr, "blockprec: unsupported: %s\n", e.what());
    return kExitInvalid;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "blockprec: numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const IoError& e) {
    std::fprintf(stderr, "blockprec: I/O error: %s\n", e.what());
    return kExitIo;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "blockprec: parse error: %s\n", e.what());
    return kExitIo;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "blockprec: bad metadata: %s\n", e.what());
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "blockprec: %s\n", e.what());
    return 1;
  }
}
