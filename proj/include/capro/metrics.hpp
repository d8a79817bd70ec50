#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "capro/align.hpp"
#include "capro/linalg.hpp"
#include "capro/types.hpp"

namespace capro {

/// Fraction of rows whose label is among the k highest scores. Ties at the
/// k-th score count against the sample.
double topk_accuracy(const Matrix& scores, std::span<const ClassId> labels, std::size_t k);

struct DetectionScores {
  std::size_t true_positive = 0;
  std::size_t false_positive = 0;
  std::size_t false_negative = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  bool operator==(const DetectionScores&) const = default;
};

/// Zero denominators give 0.
DetectionScores detection_scores(const std::vector<bool>& predicted, const std::vector<bool>& actual);

/// Among planted label flips, the fraction whose current label equals the
/// true label. Empty when nothing was flipped.
std::optional<double> relabel_accuracy(const std::vector<Instance>& instances,
                                       std::span<const Corruption> corruption);

/// Fraction of clean-set members whose true label is the class they were
/// selected for. Empty for an empty clean set.
std::optional<double> cleanset_purity(const CleanSet& clean, const std::vector<Instance>& instances);

struct OpenSetPoint {
  double threshold = 0.0;
  double macro_f1 = 0.0;

  bool operator==(const OpenSetPoint&) const = default;
};

/// Predicts argmax when the top score reaches the threshold and "unknown"
/// otherwise, then averages per-class F1 over the C known classes plus
/// unknown (true label kUnknownLabel). Classes absent from both truth and
/// prediction are left out of the average. Thresholds are i / steps.
std::vector<OpenSetPoint> open_set_sweep(const Matrix& scores, std::span<const ClassId> labels,
                                         std::size_t steps = 100);

}  // namespace capro
