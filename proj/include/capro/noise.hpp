#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "capro/config.hpp"
#include "capro/linalg.hpp"
#include "capro/proto.hpp"
#include "capro/types.hpp"

namespace capro {

enum class Verdict { keep, relabel, ood };

/// Which rule of the label-adjustment control flow fired.
enum class Rule {
  clean_set,      // member of the clean set: web label kept
  confident,      // max fused score above gamma: argmax adopted
  above_average,  // web-label score above 1/C: web label kept
  discarded,      // removed as out-of-distribution
};

struct NoiseDecision {
  Verdict verdict = Verdict::keep;
  Rule rule = Rule::clean_set;
  /// Resulting label; kOodLabel for discarded samples.
  ClassId label = 0;
  Vector fused;
};

/// alpha * p + (1 - alpha) * r
Vector fuse_scores(std::span<const double> p, std::span<const double> r, double alpha);

/// Four-branch label adjustment. Under NoisePolicy::mopro the clean-set
/// branch is skipped.
NoiseDecision decide(std::span<const double> fused, ClassId web_label, bool in_clean_set,
                     double gamma, std::size_t num_classes,
                     NoisePolicy policy = NoisePolicy::capro);

/// Decisions that may refine a visual prototype.
bool is_trustworthy(const NoiseDecision& d);

struct CleaningSummary {
  std::size_t kept = 0;
  std::size_t relabeled = 0;
  std::size_t discarded = 0;
};

/// Offline cleaning of a whole training set from precomputed classifier
/// probabilities (N x C) and embeddings (N x d_p). Rewrites current_label.
CleaningSummary clean_dataset(std::vector<Instance>& instances, const Matrix& predictions,
                              const Matrix& embeddings, const PrototypeBank& bank,
                              const RunConfig& config);

}  // namespace capro
