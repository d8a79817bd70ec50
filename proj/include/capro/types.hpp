#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "capro/linalg.hpp"

namespace capro {

using ClassId = int;

/// Sample removed by noise screening. Never a valid class index.
inline constexpr ClassId kOodLabel = -1;
/// Ground truth not available (background samples, real web data).
inline constexpr ClassId kUnknownLabel = -2;

inline bool is_class(ClassId label, std::size_t num_classes) {
  return label >= 0 && static_cast<std::size_t>(label) < num_classes;
}

/// Planted corruption kind recorded by the synthetic generator.
enum class Corruption { clean, flip, ood, semantic };

std::string_view to_string(Corruption c);
Corruption corruption_from_string(std::string_view s);

enum class Split { train, test };

/// One web-style sample.
struct Instance {
  std::size_t id = 0;
  Vector input;
  /// Absent when the sample came without usable metadata.
  std::optional<Vector> text;
  ClassId web_label = 0;
  ClassId true_label = kUnknownLabel;
  Vector enhanced_text;
  ClassId current_label = 0;
  bool in_clean_set = false;
};

/// A training set plus a held-out test split.
struct Dataset {
  std::size_t num_classes = 0;
  std::size_t input_dim = 0;
  std::size_t text_dim = 0;
  std::vector<Instance> train;
  std::vector<Instance> test;
  /// Planted corruption per training instance; empty for real data.
  std::vector<Corruption> corruption;
};

/// Stack instance inputs into an n x d_x matrix.
Matrix stack_inputs(const std::vector<Instance>& instances);
/// Stack text embeddings; missing rows are zero-filled.
Matrix stack_texts(const std::vector<Instance>& instances, std::size_t text_dim);

}  // namespace capro
