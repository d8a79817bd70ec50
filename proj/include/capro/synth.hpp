#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "capro/align.hpp"
#include "capro/types.hpp"
#include "json.hpp"

namespace capro {

/// Knobs of the synthetic web-style dataset.
struct GeneratorSpec {
  std::size_t num_classes = 10;
  std::size_t num_instances = 2000;  // training set
  std::size_t test_per_class = 50;
  std::size_t test_ood = 100;
  std::size_t input_dim = 32;
  std::size_t text_dim = 16;
  std::size_t latent_dim = 8;
  /// Mean distance between latent class centroids, in within-class sds.
  double cluster_separation = 4.0;
  double text_noise_sd = 1.0;
  /// Latent sd of background (out-of-distribution) samples.
  double background_sd = 1.0;
  double flip_rate = 0.0;
  double ood_rate = 0.0;
  double semantic_rate = 0.0;
  double missing_text_rate = 0.0;
  /// (a, b): images of class a retrieved under the label of class b. Empty
  /// means each class paired with its nearest centroid.
  std::vector<std::pair<ClassId, ClassId>> confusable_pairs;
  std::uint64_t seed = 0;

  bool operator==(const GeneratorSpec&) const = default;
  void validate() const;
};

struct CorruptionCounts {
  std::size_t clean = 0;
  std::size_t flip = 0;
  std::size_t ood = 0;
  std::size_t semantic = 0;
  std::size_t missing_text = 0;

  bool operator==(const CorruptionCounts&) const = default;
};

struct SyntheticData {
  Dataset dataset;
  TextualPrototypes prototypes;
  CorruptionCounts counts;
  std::vector<std::pair<ClassId, ClassId>> confusable_pairs;
};

/// Gaussian class clusters pushed through fixed random linear maps into the
/// visual and text spaces, with planted label-flip, background, semantic
/// mismatch and missing-text corruption. Throws ConfigError on infeasible
/// rates.
SyntheticData generate(const GeneratorSpec& spec);

CorruptionCounts count_corruption(const Dataset& dataset);

nlohmann::ordered_json to_json(const GeneratorSpec& spec);
GeneratorSpec generator_spec_from_json(const nlohmann::json& j);

}  // namespace capro
