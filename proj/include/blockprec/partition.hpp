#pragma once

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "blockprec/error.hpp"
#include "blockprec/matrix.hpp"
#include "blockprec/parallel.hpp"
#include "blockprec/random.hpp"

namespace blockprec {

/// Assignment of n coordinates to K disjoint, non-empty blocks.
class Partitioning {
 public:
  Partitioning() = default;

  Partitioning(std::vector<Index> assignment, Index k_blocks)
      : assignment_(std::move(assignment)), k_(k_blocks) {
    const auto n = static_cast<Index>(assignment_.size());
    if (n == 0) throw InvalidArgument("partitioning needs at least one coordinate");
    if (k_ <= 0 || k_ > n)
      throw InvalidArgument("number of blocks must be in [1, n], got " + std::to_string(k_));
    blocks_.assign(static_cast<std::size_t>(k_), {});
    for (Index i = 0; i < n; ++i) {
      const Index b = assignment_[static_cast<std::size_t>(i)];
      if (b < 0 || b >= k_)
        throw InvalidArgument("coordinate " + std::to_string(i) + " assigned to block " +
                              std::to_string(b) + " outside [0, " + std::to_string(k_) + ")");
      blocks_[static_cast<std::size_t>(b)].push_back(i);
    }
    for (std::size_t b = 0; b < blocks_.size(); ++b)
      if (blocks_[b].empty()) throw InvalidArgument("block " + std::to_string(b) + " is empty");
  }

  /// Consecutive chunks: the first n mod K blocks get one extra coordinate.
  static Partitioning contiguous(Index n, Index k_blocks) {
    if (k_blocks <= 0 || k_blocks > n) throw InvalidArgument("contiguous: need 1 <= K <= n");
    std::vector<Index> assignment(static_cast<std::size_t>(n));
    const Index base = n / k_blocks, extra = n % k_blocks;
    Index pos = 0;
    for (Index b = 0; b < k_blocks; ++b) {
      const Index size = base + (b < extra ? 1 : 0);
      for (Index j = 0; j < size; ++j) assignment[static_cast<std::size_t>(pos++)] = b;
    }
    return Partitioning(std::move(assignment), k_blocks);
  }

  Index n() const noexcept { return static_cast<Index>(assignment_.size()); }
  Index k() const noexcept { return k_; }
  const std::vector<Index>& assignment() const noexcept { return assignment_; }
  Index block_of(Index i) const { return assignment_.at(static_cast<std::size_t>(i)); }

  /// Members of each block, ascending.
  const std::vector<std::vector<Index>>& blocks() const noexcept { return blocks_; }

  std::vector<Index> block_sizes() const {
    std::vector<Index> sizes;
    sizes.reserve(blocks_.size());
    for (const auto& b : blocks_) sizes.push_back(static_cast<Index>(b.size()));
    return sizes;
  }

  /// Block sizes differ by at most one.
  bool is_uniform() const {
    const auto sizes = block_sizes();
    const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
    return *hi - *lo <= 1;
  }

  /// True when both describe the same unordered collection of blocks.
  bool same_blocks(const Partitioning& other) const {
    if (n() != other.n() || k() != other.k()) return false;
    auto canon = [](const Partitioning& p) {
      auto b = p.blocks();
      std::sort(b.begin(), b.end());
      return b;
    };
    return canon(*this) == canon(other);
  }

  bool operator==(const Partitioning& other) const {
    return k_ == other.k_ && assignment_ == other.assignment_;
  }

 private:
  std::vector<Index> assignment_;
  Index k_ = 0;
  std::vector<std::vector<Index>> blocks_;
};

inline void to_json(nlohmann::json& j, const Partitioning& p) {
  j = nlohmann::json{{"n", p.n()}, {"k", p.k()}, {"assignment", p.assignment()}};
}

inline void from_json(const nlohmann::json& j, Partitioning& p) {
  const auto n = j.at("n").get<Index>();
  auto assignment = j.at("assignment").get<std::vector<Index>>();
  if (static_cast<Index>(assignment.size()) != n)
    throw InvalidArgument("partitioning json: assignment length does not match n");
  p = Partitioning(std::move(assignment), j.at("k").get<Index>());
}

/// Uniformly random partitioning with block sizes ceil(n/K) or floor(n/K):
/// a random permutation of [n] cut into consecutive chunks.
inline Partitioning sample_uniform_partition(Index n, Index k_blocks, std::uint64_t seed) {
  if (n <= 0) throw InvalidArgument("sample_uniform_partition: n must be positive");
  if (k_blocks <= 0 || k_blocks > n)
    throw InvalidArgument("sample_uniform_partition: need 1 <= K <= n, got K=" +
                          std::to_string(k_blocks) + ", n=" + std::to_string(n));
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng(seed);
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  const auto chunks = Partitioning::contiguous(n, k_blocks);
  std::vector<Index> assignment(static_cast<std::size_t>(n));
  for (Index pos = 0; pos < n; ++pos)
    assignment[static_cast<std::size_t>(perm[static_cast<std::size_t>(pos)])] = chunks.block_of(pos);
  return Partitioning(std::move(assignment), k_blocks);
}

namespace detail {

inline std::uint64_t saturating_mul(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a)
    return std::numeric_limits<std::uint64_t>::max();
  return a * b;
}

/// C(n, r), saturating at UINT64_MAX.
inline std::uint64_t binomial(std::uint64_t n, std::uint64_t r) {
  if (r > n) return 0;
  r = std::min(r, n - r);
  // Exact incremental form: C(n-r+i, i) for i = 1..r stays integral.
  unsigned __int128 acc = 1;
  for (std::uint64_t i = 1; i <= r; ++i) {
    acc = acc * (n - r + i) / i;
    if (acc > std::numeric_limits<std::uint64_t>::max())
      return std::numeric_limits<std::uint64_t>::max();
  }
  return static_cast<std::uint64_t>(acc);
}

inline void require_divisible(Index n, Index k_blocks, const char* where) {
  if (n <= 0 || k_blocks <= 0 || k_blocks > n)
    throw InvalidArgument(std::string(where) + ": need 1 <= K <= n");
  if (n % k_blocks != 0)
    throw InvalidArgument(std::string(where) + ": K=" + std::to_string(k_blocks) +
                          " does not divide n=" + std::to_string(n));
}

}  // namespace detail

/// Number of unordered partitionings of n coordinates into K equal blocks,
/// n! / ((n/K)!^K K!), saturating at UINT64_MAX.
inline std::uint64_t count_equal_partitions(Index n, Index k_blocks) {
  detail::require_divisible(n, k_blocks, "count_equal_partitions");
  const auto nk = static_cast<std::uint64_t>(n / k_blocks);
  std::uint64_t count = 1;
  auto remaining = static_cast<std::uint64_t>(n);
  // The block holding the smallest unassigned index picks nk-1 companions.
  for (Index b = 0; b < k_blocks; ++b) {
    count = detail::saturating_mul(count, detail::binomial(remaining - 1, nk - 1));
    remaining -= nk;
  }
  return count;
}

inline constexpr std::uint64_t kDefaultEnumerationCap = 1'000'000;

/// Every unordered equal-size partitioning of [n] into K blocks, exactly once,
/// in lexicographic order of the canonical assignment (block labels ordered by
/// smallest member).
inline std::vector<Partitioning> enumerate_partitions(Index n, Index k_blocks,
                                                      std::uint64_t cap = kDefaultEnumerationCap) {
  detail::require_divisible(n, k_blocks, "enumerate_partitions");
  const std::uint64_t count = count_equal_partitions(n, k_blocks);
  if (count > cap)
    throw TooLarge("enumerate_partitions: " + std::to_string(count) +
                   " partitionings exceed the cap of " + std::to_string(cap));

  const Index nk = n / k_blocks;
  std::vector<Partitioning> out;
  out.reserve(static_cast<std::size_t>(count));
  std::vector<Index> assignment(static_cast<std::size_t>(n), -1);

  // fill(block, start, need): add `need` more members to `block`, choosing
  // among unassigned indices >= start; then open the next block.
  auto open_block = [&](auto&& self, Index block) -> void {
    if (block == k_blocks) {
      out.emplace_back(assignment, k_blocks);
      return;
    }
    Index first = 0;
    while (assignment[static_cast<std::size_t>(first)] != -1) ++first;
    assignment[static_cast<std::size_t>(first)] = block;
    auto choose = [&](auto&& choose_self, Index start, Index need) -> void {
      if (need == 0) {
        self(self, block + 1);
        return;
      }
      for (Index i = start; i < n; ++i) {
        if (assignment[static_cast<std::size_t>(i)] != -1) continue;
        assignment[static_cast<std::size_t>(i)] = block;
        choose_self(choose_self, i + 1, need - 1);
        assignment[static_cast<std::size_t>(i)] = -1;
      }
    };
    choose(choose, first + 1, nk - 1);
    assignment[static_cast<std::size_t>(first)] = -1;
  };
  open_block(open_block, 0);
  return out;
}

/// Q_P: entry (i,j) kept iff i and j share a block.
inline SymmetricMatrix block_mask(const SymmetricMatrix& q, const Partitioning& p) {
  require_dimension(q.n(), p.n(), "block_mask");
  Matrix masked = Matrix::Zero(q.n(), q.n());
  for (const auto& members : p.blocks())
    for (Index a : members)
      for (Index b : members) masked(a, b) = q(a, b);
  return SymmetricMatrix(std::move(masked));
}

/// Principal submatrix Q[idx, idx].
inline Matrix principal_block(const Matrix& q, const std::vector<Index>& idx) {
  const auto m = static_cast<Index>(idx.size());
  Matrix block(m, m);
  for (Index a = 0; a < m; ++a)
    for (Index b = 0; b < m; ++b)
      block(a, b) = q(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)]);
  return block;
}

/// Cholesky factorizations of the K principal blocks Q[P_k, P_k] (+ jitter I).
/// Blocks are independent; every block-wise routine writes disjoint outputs.
class BlockFactorization {
 public:
  BlockFactorization(const SymmetricMatrix& q, Partitioning p, double jitter = 0.0,
                     std::size_t threads = 1)
      : partition_(std::move(p)) {
    require_dimension(q.n(), partition_.n(), "BlockFactorization");
    if (!(jitter >= 0.0)) throw InvalidArgument("jitter must be non-negative");
    const auto& blocks = partition_.blocks();
    factors_.resize(blocks.size());
    parallel_for(blocks.size(), threads, [&](std::size_t b) {
      Matrix block = principal_block(q.dense(), blocks[b]);
      if (jitter > 0.0) block.diagonal().array() += jitter;
      factors_[b].compute(block);
      if (factors_[b].info() != Eigen::Success) throw SingularBlock(b);
    });
  }

  const Partitioning& partition() const noexcept { return partition_; }
  Index n() const noexcept { return partition_.n(); }

  /// d with Q_P d = g.
  Vector solve(const Vector& g, std::size_t threads = 1) const {
    require_dimension(n(), g.size(), "BlockFactorization::solve");
    Vector d(g.size());
    const auto& blocks = partition_.blocks();
    parallel_for(blocks.size(), threads, [&](std::size_t b) {
      const auto& idx = blocks[b];
      Vector local(static_cast<Index>(idx.size()));
      for (std::size_t a = 0; a < idx.size(); ++a) local(static_cast<Index>(a)) = g(idx[a]);
      local = factors_[b].solve(local);
      for (std::size_t a = 0; a < idx.size(); ++a) d(idx[a]) = local(static_cast<Index>(a));
    });
    return d;
  }

  /// Adds weight * Q_P^{-1} into `acc` (which must be n x n).
  void accumulate_inverse(Matrix& acc, double weight = 1.0) const {
    for (std::size_t b = 0; b < factors_.size(); ++b) {
      const auto& idx = partition_.blocks()[b];
      const auto m = static_cast<Index>(idx.size());
      const Matrix inv = factors_[b].solve(Matrix::Identity(m, m));
      for (Index a = 0; a < m; ++a)
        for (Index c = 0; c < m; ++c)
          acc(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(c)]) += weight * inv(a, c);
    }
  }

  Matrix inverse() const {
    Matrix inv = Matrix::Zero(n(), n());
    accumulate_inverse(inv);
    return inv;
  }

  /// C = L^{-1} Q L^{-T} where Q_P = L L^T; symmetric and similar to Q_P^{-1} Q.
  Matrix conjugate(const SymmetricMatrix& q) const {
    require_dimension(n(), q.n(), "BlockFactorization::conjugate");
    const auto& blocks = partition_.blocks();
    // Reorder coordinates block by block so that L is block diagonal.
    std::vector<Index> order;
    order.reserve(static_cast<std::size_t>(n()));
    std::vector<Index> offsets;
    for (const auto& idx : blocks) {
      offsets.push_back(static_cast<Index>(order.size()));
      order.insert(order.end(), idx.begin(), idx.end());
    }
    Matrix c = principal_block(q.dense(), order);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const auto m = static_cast<Index>(blocks[b].size());
      const auto& lower = factors_[b].matrixL();
      lower.solveInPlace(c.middleRows(offsets[b], m));
    }
    c.transposeInPlace();
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const auto m = static_cast<Index>(blocks[b].size());
      factors_[b].matrixL().solveInPlace(c.middleRows(offsets[b], m));
    }
    // Exact symmetry for the eigensolver.
    return 0.5 * (c + c.transpose());
  }

 private:
  Partitioning partition_;
  std::vector<Eigen::LLT<Matrix>> factors_;
};

/// Solves Q_P d = g block by block.
inline Vector solve_block_system(const SymmetricMatrix& q, const Partitioning& p, const Vector& g,
                                 double jitter = 0.0, std::size_t threads = 1) {
  require_dimension(q.n(), g.size(), "solve_block_system");
  return BlockFactorization(q, p, jitter, threads).solve(g, threads);
}

}  // namespace blockprec
