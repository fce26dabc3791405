#pragma once

#include <json.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "blockprec/error.hpp"
#include "blockprec/matrix.hpp"
#include "blockprec/partition.hpp"
#include "blockprec/random.hpp"

namespace blockprec {

inline void require_alpha(double alpha, const char* where) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw InvalidArgument(std::string(where) + ": alpha must be in [0, 1)");
}

/// Unit diagonal, every off-diagonal entry alpha.
inline SymmetricMatrix gen_uniform_q(Index n, double alpha) {
  if (n < 1) throw InvalidArgument("gen_uniform_q: n must be positive");
  require_alpha(alpha, "gen_uniform_q");
  Matrix q = Matrix::Constant(n, n, alpha);
  q.diagonal().setOnes();
  return SymmetricMatrix(std::move(q));
}

/// K uniform-correlation blocks of size n/K on the diagonal, zero elsewhere.
/// The aligned partitioning is Partitioning::contiguous(n, K).
inline SymmetricMatrix gen_separable_q(Index n, Index k_blocks, double alpha) {
  detail::require_divisible(n, k_blocks, "gen_separable_q");
  require_alpha(alpha, "gen_separable_q");
  const Index nk = n / k_blocks;
  Matrix q = Matrix::Zero(n, n);
  for (Index b = 0; b < k_blocks; ++b) {
    q.block(b * nk, b * nk, nk, nk).setConstant(alpha);
  }
  q.diagonal().setOnes();
  return SymmetricMatrix(std::move(q));
}

struct RandomCorrelation {
  SymmetricMatrix q;
  double shift = 0.0;  // 0 when the raw draw was already positive definite
  std::string provenance;
};

/// Unit diagonal, off-diagonals i.i.d. normal with mean alpha and standard
/// deviation alpha/2, mirrored. A draw that is not positive definite is shifted by
/// (|lambda_min| + 1e-3) I and rescaled back to unit diagonal.
inline RandomCorrelation gen_random_corr_q_detailed(Index n, double alpha, std::uint64_t seed) {
  if (n < 1) throw InvalidArgument("gen_random_corr_q: n must be positive");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InvalidArgument("gen_random_corr_q: alpha must be positive");
  Rng rng(seed);
  const double sd = alpha / 2.0;
  Matrix q = Matrix::Identity(n, n);
  for (Index j = 0; j < n; ++j)
    for (Index i = j + 1; i < n; ++i) {
      const double v = rng.normal(alpha, sd);
      q(i, j) = v;
      q(j, i) = v;
    }
  RandomCorrelation out;
  const double lmin = min_eigenvalue(q);
  std::ostringstream prov;
  prov << "offdiag~N(mean=" << alpha << ", sd=" << sd << "), unit diagonal, seed=" << seed;
  if (!(lmin > 0.0) || Eigen::LLT<Matrix>(q).info() != Eigen::Success) {
    out.shift = std::abs(lmin) + 1e-3;
    q.diagonal().array() += out.shift;
    q /= (1.0 + out.shift);
    q.diagonal().setOnes();
    prov << "; shifted by " << out.shift << " and rescaled to unit diagonal";
  }
  out.q = SymmetricMatrix(std::move(q));
  out.provenance = prov.str();
  return out;
}

inline SymmetricMatrix gen_random_corr_q(Index n, double alpha, std::uint64_t seed) {
  return gen_random_corr_q_detailed(n, alpha, seed).q;
}

/// Symmetric square root A with A^T A = Q.
inline Matrix factor_sqrt(const SymmetricMatrix& q) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(q.dense());
  if (eig.info() != Eigen::Success) throw NumericalError("factor_sqrt: eigensolver failed");
  if (!(eig.eigenvalues()(0) > 0.0)) throw InvalidArgument("factor_sqrt: Q is not positive definite");
  const auto& v = eig.eigenvectors();
  Matrix a = v * eig.eigenvalues().cwiseSqrt().asDiagonal() * v.transpose();
  return 0.5 * (a + a.transpose());
}

struct Dataset {
  SparseMatrix a;
  Vector y;
  std::string name;
  std::string provenance;

  Index rows() const { return a.rows(); }
  Index cols() const { return a.cols(); }
};

struct LibsvmOptions {
  Index n_features = 0;         // 0: largest index seen
  bool logistic_labels = false;  // remap {0,1} / {1,2} to {-1,+1}
  bool normalize_columns = false;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(std::string_view tok, std::size_t line, const char* what) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError(line, std::string("invalid ") + what + " '" + std::string(tok) + "'");
  if (!std::isfinite(v)) throw ParseError(line, std::string("non-finite ") + what);
  return v;
}

inline void remap_logistic(Vector& y) {
  std::set<double> labels(y.data(), y.data() + y.size());
  auto subset = [&](std::initializer_list<double> allowed) {
    return std::all_of(labels.begin(), labels.end(), [&](double v) {
      return std::find(allowed.begin(), allowed.end(), v) != allowed.end();
    });
  };
  if (subset({-1.0, 1.0})) return;
  double neg;
  if (subset({0.0, 1.0})) {
    neg = 0.0;
  } else if (subset({1.0, 2.0})) {
    neg = 1.0;
  } else {
    throw InvalidArgument("libsvm: labels cannot be mapped to {-1,+1} for logistic mode");
  }
  for (Index i = 0; i < y.size(); ++i) y(i) = y(i) == neg ? -1.0 : 1.0;
}

}  // namespace detail

/// Parses LIBSVM text: "label idx:val idx:val ...", 1-based, strictly
/// increasing indices. Blank lines and '#' comment lines are skipped.
inline Dataset read_libsvm(std::istream& in, const LibsvmOptions& opt = {}, std::string name = "libsvm") {
  using Triplet = Eigen::Triplet<double>;
  std::vector<Triplet> entries;
  std::vector<double> labels;
  Index max_index = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view rest = detail::trim(line);
    if (rest.empty() || rest.front() == '#') continue;
    const auto row = static_cast<Index>(labels.size());
    auto next_token = [&]() -> std::string_view {
      const auto b = rest.find_first_not_of(" \t");
      if (b == std::string_view::npos) return rest = {};
      rest.remove_prefix(b);
      const auto e = rest.find_first_of(" \t");
      const auto tok = rest.substr(0, e);
      rest.remove_prefix(e == std::string_view::npos ? rest.size() : e);
      return tok;
    };
    labels.push_back(detail::parse_double(next_token(), lineno, "label"));
    Index last = 0;
    for (auto tok = next_token(); !tok.empty(); tok = next_token()) {
      const auto colon = tok.find(':');
      if (colon == std::string_view::npos) throw ParseError(lineno, "expected idx:val, got '" + std::string(tok) + "'");
      Index idx = 0;
      const auto idx_tok = tok.substr(0, colon);
      const auto [ptr, ec] = std::from_chars(idx_tok.data(), idx_tok.data() + idx_tok.size(), idx);
      if (ec != std::errc() || ptr != idx_tok.data() + idx_tok.size() || idx < 1)
        throw ParseError(lineno, "invalid feature index '" + std::string(idx_tok) + "'");
      if (idx <= last) throw ParseError(lineno, "feature indices must be strictly increasing");
      last = idx;
      const double v = detail::parse_double(tok.substr(colon + 1), lineno, "feature value");
      entries.emplace_back(row, idx - 1, v);
      max_index = std::max(max_index, idx);
    }
  }
  Index n = max_index;
  if (opt.n_features > 0) {
    if (opt.n_features < max_index)
      throw InvalidArgument("libsvm: feature index " + std::to_string(max_index) + " exceeds n_features=" +
                            std::to_string(opt.n_features));
    n = opt.n_features;
  }
  Dataset ds;
  ds.a.resize(static_cast<Index>(labels.size()), n);
  ds.a.setFromTriplets(entries.begin(), entries.end());
  ds.a.makeCompressed();
  ds.y = Eigen::Map<const Vector>(labels.data(), static_cast<Index>(labels.size()));
  if (opt.logistic_labels) detail::remap_logistic(ds.y);
  if (opt.normalize_columns) {
    Vector norms = Vector::Zero(n);
    for (Index r = 0; r < ds.a.outerSize(); ++r)
      for (SparseMatrix::InnerIterator it(ds.a, r); it; ++it) norms(it.col()) += it.value() * it.value();
    norms = norms.cwiseSqrt();
    for (Index r = 0; r < ds.a.outerSize(); ++r)
      for (SparseMatrix::InnerIterator it(ds.a, r); it; ++it)
        if (norms(it.col()) > 0.0) it.valueRef() /= norms(it.col());
  }
  ds.name = std::move(name);
  ds.provenance = "libsvm text, " + std::to_string(ds.rows()) + " rows, " + std::to_string(n) + " features" +
                  (opt.normalize_columns ? ", columns L2-normalized" : "");
  return ds;
}

inline Dataset read_libsvm(const std::string& path, const LibsvmOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  auto slash = path.find_last_of('/');
  return read_libsvm(in, opt, slash == std::string::npos ? path : path.substr(slash + 1));
}

/// Writes non-zero entries with 17 significant digits.
inline void write_libsvm(std::ostream& out, const SparseMatrix& a, const Vector& y) {
  require_dimension(a.rows(), y.size(), "write_libsvm labels");
  char buf[32];
  for (Index r = 0; r < a.outerSize(); ++r) {
    std::snprintf(buf, sizeof buf, "%.17g", y(r));
    out << buf;
    for (SparseMatrix::InnerIterator it(a, r); it; ++it) {
      if (it.value() == 0.0) continue;
      std::snprintf(buf, sizeof buf, "%.17g", it.value());
      out << ' ' << (it.col() + 1) << ':' << buf;
    }
    out << '\n';
  }
}

inline void write_libsvm(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  write_libsvm(out, ds.a, ds.y);
  if (!out) throw IoError("write failed: " + path);
}

struct GaussianLabels {};
struct PlantedLabels {
  Vector x_true;
  double noise = 0.0;  // std of additive Gaussian noise
  bool sign = false;   // y = sign(Ax + noise) for logistic use
};
using LabelKind = std::variant<GaussianLabels, PlantedLabels>;

inline Vector gen_labels(const DataMatrix& a, const LabelKind& kind, std::uint64_t seed) {
  Rng rng(seed);
  Vector y(a.rows());
  if (std::holds_alternative<GaussianLabels>(kind)) {
    for (Index i = 0; i < y.size(); ++i) y(i) = rng.normal();
    return y;
  }
  const auto& planted = std::get<PlantedLabels>(kind);
  require_dimension(a.cols(), planted.x_true.size(), "gen_labels x_true");
  y = a.multiply(planted.x_true);
  if (planted.noise > 0.0)
    for (Index i = 0; i < y.size(); ++i) y(i) += planted.noise * rng.normal();
  if (planted.sign)
    for (Index i = 0; i < y.size(); ++i) y(i) = y(i) >= 0.0 ? 1.0 : -1.0;
  return y;
}

// Dense binary matrix: 16-byte header ("BPQ1", u32 rows, u32 cols, u32
// reserved = 0; little-endian), then rows*cols row-major float64. Square
// matrices store cols = rows.

inline constexpr std::array<char, 4> kMatrixMagic{'B', 'P', 'Q', '1'};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

inline void write_matrix_binary(std::ostream& out, const Matrix& m) {
  static_assert(sizeof(double) == 8);
  out.write(kMatrixMagic.data(), 4);
  detail::put_u32(out, static_cast<std::uint32_t>(m.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(m.cols()));
  detail::put_u32(out, 0);
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) {
      std::uint64_t bits;
      const double v = m(i, j);
      std::memcpy(&bits, &v, 8);
      detail::put_u32(out, static_cast<std::uint32_t>(bits));
      detail::put_u32(out, static_cast<std::uint32_t>(bits >> 32));
    }
}

inline Matrix read_matrix_binary(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (!in || magic != kMatrixMagic) throw IoError("not a BPQ1 matrix file");
  const std::uint32_t rows = detail::get_u32(in);
  const std::uint32_t cols = detail::get_u32(in);
  detail::get_u32(in);
  if (!in) throw IoError("truncated BPQ1 header");
  Matrix m(rows, cols);
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) {
      const std::uint64_t lo = detail::get_u32(in);
      const std::uint64_t hi = detail::get_u32(in);
      const std::uint64_t bits = lo | (hi << 32);
      double v;
      std::memcpy(&v, &bits, 8);
      m(i, j) = v;
    }
  if (!in) throw IoError("truncated BPQ1 payload");
  return m;
}

inline void save_matrix(const std::string& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  write_matrix_binary(out, m);
  if (!out) throw IoError("write failed: " + path);
}

inline Matrix load_matrix(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return read_matrix_binary(in);
}

/// Metadata sidecar written next to a matrix file as <path>.json.
inline void save_metadata(const std::string& matrix_path, const nlohmann::json& meta) {
  std::ofstream out(matrix_path + ".json");
  if (!out) throw IoError("cannot write " + matrix_path + ".json");
  out << meta.dump(2) << '\n';
}

inline nlohmann::json load_metadata(const std::string& matrix_path) {
  std::ifstream in(matrix_path + ".json");
  if (!in) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(matrix_path + ".json: " + e.what());
  }
}

}  // namespace blockprec
