#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "capro/linalg.hpp"
#include "capro/types.hpp"

namespace capro {

/// One embedding per class, derived from the class's definitional text.
struct TextualPrototypes {
  Matrix embeddings;  // C x d_t
  std::string provenance;

  std::size_t num_classes() const { return embeddings.rows(); }
  /// Throws DataError unless every row is finite and nonzero.
  void validate() const;
};

struct CleanMember {
  std::size_t instance = 0;
  double distance = 0.0;

  bool operator==(const CleanMember&) const = default;
};

/// Per-class top-K instances whose text best matches the class prototype.
struct CleanSet {
  /// Sorted ascending by (distance, instance id).
  std::vector<std::vector<CleanMember>> classes;
  /// K-th smallest distance per class; empty when the class has no members.
  std::vector<std::optional<double>> thresholds;

  std::size_t size() const;
  /// Membership flags for `num_instances` instances.
  std::vector<bool> membership(std::size_t num_instances) const;

  bool operator==(const CleanSet&) const = default;
};

/// Ranks each class's candidates by refined distance between the enhanced
/// text and the class prototype, measured in a joint graph over all enhanced
/// instance embeddings plus the C prototypes. Pairs whose Jaccard term is
/// undefined fall back to plain cosine distance. Instances whose enhanced
/// text is still the zero vector are never selected.
CleanSet match_and_select(const Matrix& enhanced, std::span<const ClassId> labels,
                          const TextualPrototypes& protos, std::size_t top_k, std::size_t knn);

/// Same selection, ranked by plain cosine distance on raw text embeddings.
CleanSet match_without_enhancement(const Matrix& texts, std::span<const ClassId> labels,
                                   const TextualPrototypes& protos, std::size_t top_k);

}  // namespace capro
