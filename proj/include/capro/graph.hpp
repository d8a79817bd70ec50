#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "capro/linalg.hpp"

namespace capro {

struct Edge {
  std::size_t row = 0;
  std::size_t col = 0;
  double weight = 0.0;

  bool operator==(const Edge&) const = default;
};

/// Symmetric sparse matrix in coordinate form, entries sorted by (row, col).
class SparseAdjacency {
 public:
  SparseAdjacency() = default;
  SparseAdjacency(std::size_t n, std::vector<Edge> entries);

  std::size_t size() const noexcept { return n_; }
  const std::vector<Edge>& entries() const noexcept { return entries_; }
  /// Entries of one row, in ascending column order.
  std::span<const Edge> row(std::size_t r) const;
  double at(std::size_t r, std::size_t c) const;
  Matrix to_dense() const;

 private:
  std::size_t n_ = 0;
  std::vector<Edge> entries_;
  std::vector<std::size_t> row_start_;
};

/// k-NN / k-reciprocal-NN structure over a set of feature vectors.
struct NeighborGraph {
  std::size_t n = 0;
  std::size_t k = 0;
  std::size_t feature_dim = 0;
  /// Per node, the k nearest other nodes ordered by (distance, id).
  std::vector<std::vector<std::size_t>> knn;
  /// Per node, reciprocal neighbors in ascending id order.
  std::vector<std::vector<std::size_t>> reciprocal;
  SparseAdjacency adjacency;
};

/// 1 - a.b / (|a| |b|), clamped to [0, 2].
double cosine_distance(std::span<const double> a, std::span<const double> b);

/// Builds the reciprocal-neighbor graph over the rows of `features`. Edge
/// weight is 1 - d(i, j) between reciprocal neighbors; pairs whose cosine
/// similarity is not positive carry no edge. k >= n is clamped to n - 1.
NeighborGraph build_graph(const Matrix& features, std::size_t k);

struct JaccardResult {
  double distance = 1.0;
  /// Both reciprocal sets empty: the ratio is undefined and distance is 1.
  bool degenerate = false;
};

JaccardResult jaccard(std::size_t i, std::size_t j, const NeighborGraph& g,
                      const Matrix& features);

/// Re-ranking distance over reciprocal-neighbor encodings
/// V_ik = exp(-d(i, k)) for k in R(i), else 0.
double jaccard_distance(std::size_t i, std::size_t j, const NeighborGraph& g,
                        const Matrix& features);

/// (cosine_distance + jaccard_distance) / 2
double refined_distance(std::size_t i, std::size_t j, const NeighborGraph& g,
                        const Matrix& features);

/// One graph-convolution pass D^-1/2 (A + I) D^-1/2 S. Rows of `texts` that
/// are zero (missing) get imputed from their neighbors.
Matrix smooth_texts(const Matrix& texts, const NeighborGraph& g);

}  // namespace capro
