#include "capro/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include <spdlog/spdlog.h>

#include "capro/errors.hpp"

namespace capro {
namespace {

// Shared by the pairwise API and the batched graph build so both produce
// bit-identical distances (neighbor ties depend on it).
double cosine_from_parts(double ab, double norm_a, double norm_b) {
  return std::clamp(1.0 - ab / (norm_a * norm_b), 0.0, 2.0);
}

std::vector<double> row_norms(const Matrix& features) {
  std::vector<double> norms(features.rows());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    norms[i] = norm(features.row(i));
    if (!(norms[i] > 0.0) || !std::isfinite(norms[i])) {
      throw DegenerateInputError("build_graph: row " + std::to_string(i) +
                                 " has zero or non-finite norm");
    }
  }
  return norms;
}

struct Encoded {
  std::size_t node;
  double value;
};

std::vector<Encoded> encode(std::size_t i, const NeighborGraph& g, const Matrix& features) {
  std::vector<Encoded> out;
  out.reserve(g.reciprocal[i].size());
  for (std::size_t k : g.reciprocal[i]) {
    out.push_back({k, std::exp(-cosine_distance(features.row(i), features.row(k)))});
  }
  return out;
}

}  // namespace

SparseAdjacency::SparseAdjacency(std::size_t n, std::vector<Edge> entries)
    : n_(n), entries_(std::move(entries)) {
  std::sort(entries_.begin(), entries_.end(), [](const Edge& a, const Edge& b) {
    return std::pair(a.row, a.col) < std::pair(b.row, b.col);
  });
  row_start_.assign(n_ + 1, 0);
  for (const Edge& e : entries_) {
    ++row_start_[e.row + 1];
  }
  for (std::size_t r = 0; r < n_; ++r) {
    row_start_[r + 1] += row_start_[r];
  }
}

std::span<const Edge> SparseAdjacency::row(std::size_t r) const {
  return {entries_.data() + row_start_[r], row_start_[r + 1] - row_start_[r]};
}

double SparseAdjacency::at(std::size_t r, std::size_t c) const {
  auto edges = row(r);
  auto it = std::lower_bound(edges.begin(), edges.end(), c,
                             [](const Edge& e, std::size_t col) { return e.col < col; });
  return (it != edges.end() && it->col == c) ? it->weight : 0.0;
}

Matrix SparseAdjacency::to_dense() const {
  Matrix dense(n_, n_);
  for (const Edge& e : entries_) {
    dense(e.row, e.col) = e.weight;
  }
  return dense;
}

double cosine_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DegenerateInputError("cosine_distance: dimension mismatch");
  }
  const double na = norm(a);
  const double nb = norm(b);
  if (!(na > 0.0) || !(nb > 0.0)) {
    throw DegenerateInputError("cosine_distance: zero vector");
  }
  return cosine_from_parts(dot(a, b), na, nb);
}

NeighborGraph build_graph(const Matrix& features, std::size_t k) {
  const std::size_t n = features.rows();
  if (n < 2) {
    throw DegenerateInputError("build_graph: need at least two nodes");
  }
  if (k < 1) {
    throw ConfigError("build_graph: k must be at least 1");
  }
  if (k >= n) {
    spdlog::info("build_graph: k={} clamped to n-1={}", k, n - 1);
    k = n - 1;
  }
  const std::vector<double> norms = row_norms(features);

  NeighborGraph g;
  g.n = n;
  g.k = k;
  g.feature_dim = features.cols();
  g.knn.resize(n);
  g.reciprocal.resize(n);

  std::vector<std::pair<double, std::size_t>> candidates;
  candidates.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    candidates.clear();
    const auto fi = features.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) {
        candidates.emplace_back(cosine_from_parts(dot(fi, features.row(j)), norms[i], norms[j]), j);
      }
    }
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k),
                      candidates.end());
    g.knn[i].reserve(k);
    for (std::size_t r = 0; r < k; ++r) {
      g.knn[i].push_back(candidates[r].second);
    }
  }

  std::vector<std::vector<std::size_t>> sorted_knn = g.knn;
  for (auto& list : sorted_knn) {
    std::sort(list.begin(), list.end());
  }
  std::vector<Edge> edges;
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : sorted_knn[i]) {
      if (std::binary_search(sorted_knn[j].begin(), sorted_knn[j].end(), i)) {
        g.reciprocal[i].push_back(j);
        if (i < j) {
          const double w =
              1.0 - cosine_from_parts(dot(features.row(i), features.row(j)), norms[i], norms[j]);
          if (w > 0.0) {
            edges.push_back({i, j, w});
            edges.push_back({j, i, w});
          } else {
            ++dropped;
          }
        }
      }
    }
  }
  if (dropped > 0) {
    spdlog::debug("build_graph: {} reciprocal pairs with non-positive similarity carry no edge",
                  dropped);
  }
  g.adjacency = SparseAdjacency(n, std::move(edges));
  return g;
}

JaccardResult jaccard(std::size_t i, std::size_t j, const NeighborGraph& g,
                      const Matrix& features) {
  if (i >= g.n || j >= g.n) {
    throw DegenerateInputError("jaccard_distance: node index out of range");
  }
  const auto vi = encode(i, g, features);
  const auto vj = encode(j, g, features);
  if (vi.empty() && vj.empty()) {
    spdlog::debug("jaccard_distance: nodes {} and {} have no reciprocal neighbors", i, j);
    return {1.0, true};
  }
  // Sorted merge over the union of supports.
  double min_sum = 0.0;
  double max_sum = 0.0;
  std::size_t a = 0;
  std::size_t b = 0;
  while (a < vi.size() || b < vj.size()) {
    if (b == vj.size() || (a < vi.size() && vi[a].node < vj[b].node)) {
      max_sum += vi[a++].value;
    } else if (a == vi.size() || vj[b].node < vi[a].node) {
      max_sum += vj[b++].value;
    } else {
      min_sum += std::min(vi[a].value, vj[b].value);
      max_sum += std::max(vi[a].value, vj[b].value);
      ++a;
      ++b;
    }
  }
  return {1.0 - min_sum / max_sum, false};
}

double jaccard_distance(std::size_t i, std::size_t j, const NeighborGraph& g,
                        const Matrix& features) {
  return jaccard(i, j, g, features).distance;
}

double refined_distance(std::size_t i, std::size_t j, const NeighborGraph& g,
                        const Matrix& features) {
  return 0.5 * cosine_distance(features.row(i), features.row(j)) +
         0.5 * jaccard_distance(i, j, g, features);
}

Matrix smooth_texts(const Matrix& texts, const NeighborGraph& g) {
  if (texts.rows() != g.n) {
    throw DataError("smooth_texts: " + std::to_string(texts.rows()) + " text rows for " +
                    std::to_string(g.n) + " graph nodes");
  }
  std::vector<double> inv_sqrt_degree(g.n);
  for (std::size_t i = 0; i < g.n; ++i) {
    double degree = 1.0;
    for (const Edge& e : g.adjacency.row(i)) {
      degree += e.weight;
    }
    inv_sqrt_degree[i] = 1.0 / std::sqrt(degree);
  }
  Matrix out(texts.rows(), texts.cols());
  for (std::size_t i = 0; i < g.n; ++i) {
    auto dst = out.row(i);
    axpy(inv_sqrt_degree[i] * inv_sqrt_degree[i], texts.row(i), dst);
    for (const Edge& e : g.adjacency.row(i)) {
      axpy(e.weight * inv_sqrt_degree[i] * inv_sqrt_degree[e.col], texts.row(e.col), dst);
    }
  }
  return out;
}

}  // namespace capro
