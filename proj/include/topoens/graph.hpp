#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "topoens/error.hpp"

namespace topoens {

// Disjoint-set forest with path compression and union by rank.
class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n), rank_(n, 0) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }

  std::size_t Find(std::size_t x) noexcept {
    std::size_t root = x;
    while (parent_[root] != root) root = parent_[root];
    while (parent_[x] != root) {
      const std::size_t next = parent_[x];
      parent_[x] = root;
      x = next;
    }
    return root;
  }

  // Returns false when a and b were already in the same set.
  bool Unite(std::size_t a, std::size_t b) noexcept {
    a = Find(a);
    b = Find(b);
    if (a == b) return false;
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent_[b] = a;
    if (rank_[a] == rank_[b]) ++rank_[a];
    return true;
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::uint8_t> rank_;
};

// Symmetric n x n filtration weights in [0,1] with a zero diagonal. Edge
// (u,v) belongs to the thresholded graph at tau iff weight(u,v) <= tau.
class DistanceGraph {
 public:
  DistanceGraph() = default;

  // Validates the invariants; throws EntryOutOfRange / InvariantViolation.
  static DistanceGraph FromMatrix(std::size_t n, std::vector<double> weights) {
    if (weights.size() != n * n) {
      throw Error(ErrorKind::kDimensionMismatch,
                  "expected " + std::to_string(n * n) + " weights, got " +
                      std::to_string(weights.size()));
    }
    for (std::size_t u = 0; u < n; ++u) {
      if (weights[u * n + u] != 0.0) {
        throw Error(ErrorKind::kInvariantViolation,
                    "nonzero diagonal at " + std::to_string(u));
      }
      for (std::size_t v = 0; v < n; ++v) {
        const double w = weights[u * n + v];
        if (!(w >= 0.0 && w <= 1.0)) {
          throw Error(ErrorKind::kEntryOutOfRange, "weight " + std::to_string(w) + " at (" +
                                                       std::to_string(u) + "," +
                                                       std::to_string(v) + ")");
        }
        if (w != weights[v * n + u]) {
          throw Error(ErrorKind::kInvariantViolation, "asymmetric weight at (" +
                                                          std::to_string(u) + "," +
                                                          std::to_string(v) + ")");
        }
      }
    }
    return DistanceGraph(n, std::move(weights));
  }

  // Convenience for tests and small graphs: upper-triangle edge list
  // {u, v, w}; unspecified pairs default to `fill`.
  struct Edge {
    std::size_t u;
    std::size_t v;
    double weight;
  };
  static DistanceGraph FromEdges(std::size_t n, std::span<const Edge> edges, double fill = 1.0) {
    std::vector<double> w(n * n, fill);
    for (std::size_t u = 0; u < n; ++u) w[u * n + u] = 0.0;
    for (const auto& e : edges) {
      w[e.u * n + e.v] = e.weight;
      w[e.v * n + e.u] = e.weight;
    }
    return FromMatrix(n, std::move(w));
  }
  static DistanceGraph FromEdges(std::size_t n, std::initializer_list<Edge> edges,
                                 double fill = 1.0) {
    return FromEdges(n, std::span<const Edge>(edges.begin(), edges.size()), fill);
  }

  std::size_t size() const { return n_; }
  double operator()(std::size_t u, std::size_t v) const { return w_[u * n_ + v]; }
  std::span<const double> weights() const { return w_; }

  // Subgraph on `vertices`, relabeled 0..m-1 in the given order.
  DistanceGraph Induced(std::span<const std::size_t> vertices) const {
    const std::size_t m = vertices.size();
    std::vector<double> w(m * m);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) w[i * m + j] = (*this)(vertices[i], vertices[j]);
    }
    return DistanceGraph(m, std::move(w));
  }

  friend bool operator==(const DistanceGraph&, const DistanceGraph&) = default;

 private:
  DistanceGraph(std::size_t n, std::vector<double> w) : n_(n), w_(std::move(w)) {}

  // The elementwise operations below preserve the invariants of their inputs.
  friend DistanceGraph ElementwiseMin(const DistanceGraph&, const DistanceGraph&);
  template <typename T>
  friend DistanceGraph Symmetrize(std::span<const T>, std::size_t);

  std::size_t n_ = 0;
  std::vector<double> w_;
};

// d = 1 - max(M, M^T) with the diagonal forced to zero. M is n x n row-major
// with entries in [0,1].
template <typename T>
DistanceGraph Symmetrize(std::span<const T> m, std::size_t n) {
  if (m.size() != n * n) {
    throw Error(ErrorKind::kDimensionMismatch, "attention matrix is not " +
                                                   std::to_string(n) + "x" + std::to_string(n));
  }
  std::vector<double> w(n * n, 0.0);
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = 0; v < n; ++v) {
      const double x = static_cast<double>(m[u * n + v]);
      if (!(x >= 0.0 && x <= 1.0)) {
        throw Error(ErrorKind::kEntryOutOfRange, "attention value " + std::to_string(x) +
                                                     " at (" + std::to_string(u) + "," +
                                                     std::to_string(v) + ")");
      }
    }
  }
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = u + 1; v < n; ++v) {
      const double d = 1.0 - std::max(static_cast<double>(m[u * n + v]),
                                      static_cast<double>(m[v * n + u]));
      w[u * n + v] = d;
      w[v * n + u] = d;
    }
  }
  return DistanceGraph(n, std::move(w));
}

inline DistanceGraph ElementwiseMin(const DistanceGraph& g1, const DistanceGraph& g2) {
  if (g1.size() != g2.size()) {
    throw Error(ErrorKind::kDimensionMismatch, std::to_string(g1.size()) + " vs " +
                                                   std::to_string(g2.size()) + " vertices");
  }
  std::vector<double> w(g1.w_.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::min(g1.w_[i], g2.w_[i]);
  return DistanceGraph(g1.size(), std::move(w));
}

// Thresholds at which connected components merge: the ascending weights of a
// minimum spanning tree (Kruskal; equal weights ordered by (u, v)).
struct MergeSequence {
  std::vector<double> times;

  // Number of components of the graph thresholded at tau.
  std::size_t ComponentsAt(double tau) const {
    const auto merged = std::upper_bound(times.begin(), times.end(), tau) - times.begin();
    return times.size() + 1 - static_cast<std::size_t>(merged);
  }
};

inline MergeSequence ComputeMergeSequence(const DistanceGraph& g) {
  const std::size_t n = g.size();
  MergeSequence seq;
  if (n < 2) return seq;

  struct Candidate {
    double weight;
    std::uint32_t u;
    std::uint32_t v;
  };
  std::vector<Candidate> edges;
  edges.reserve(n * (n - 1) / 2);
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = u + 1; v < n; ++v) {
      edges.push_back({g(u, v), static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(v)});
    }
  }
  std::sort(edges.begin(), edges.end(), [](const Candidate& a, const Candidate& b) {
    if (a.weight != b.weight) return a.weight < b.weight;
    if (a.u != b.u) return a.u < b.u;
    return a.v < b.v;
  });

  UnionFind uf(n);
  seq.times.reserve(n - 1);
  for (const auto& e : edges) {
    if (uf.Unite(e.u, e.v)) {
      seq.times.push_back(e.weight);
      if (seq.times.size() == n - 1) break;
    }
  }
  return seq;
}

inline double SpanningTreeWeight(const MergeSequence& seq) {
  double total = 0.0;
  for (double t : seq.times) total += t;
  return total;
}

}  // namespace topoens
