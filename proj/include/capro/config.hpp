#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "json.hpp"

namespace capro {

/// Cosine decay with linear warm-up; `frozen_epochs` leading epochs keep the
/// encoder fixed.
struct Schedule {
  double base_lr = 0.1;
  std::size_t warmup_epochs = 5;
  std::size_t frozen_epochs = 0;
  std::size_t epochs = 120;

  bool operator==(const Schedule&) const = default;
};

/// Embedding-space stand-in for image augmentation. The key view is always
/// perturbed more strongly than the query view.
struct AugmentationPolicy {
  double query_noise_sd = 0.05;
  double key_noise_sd = 0.15;
  double key_mask_fraction = 0.10;

  bool operator==(const AugmentationPolicy&) const = default;
};

enum class NoisePolicy {
  capro,  // clean-set labels are frozen
  mopro,  // clean-set labels may be corrected or discarded
};

enum class ReferenceProvider { none, collective };

struct RunConfig {
  // Sizes. Zero for the data-derived ones means "take from the dataset".
  std::size_t num_classes = 0;    // C
  std::size_t num_instances = 0;  // N
  std::size_t input_dim = 0;      // d_x
  std::size_t text_dim = 0;       // d_t
  std::size_t hidden_dim = 256;   // encoder hidden width
  std::size_t feature_dim = 64;   // d_v
  std::size_t embed_dim = 128;    // d_p

  double tau = 0.1;
  double alpha = 0.5;
  double gamma = 0.6;
  double proto_momentum = 0.999;  // m_p
  double key_momentum = 0.999;    // m_e
  std::size_t top_k = 50;         // K
  std::size_t queue_size = 8192;  // Q
  std::size_t knn = 5;            // k

  double lambda_bts = 0.1;
  double lambda_prj = 1.0;
  double lambda_pro = 1.0;
  double lambda_ins = 1.0;

  std::size_t batch_size = 256;
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;
  Schedule pretrain{0.1, 5, 0, 120};
  Schedule train{0.1, 5, 5, 60};
  Schedule finetune{1e-4, 0, 15, 15};

  /// Epoch period of prototype momentum updates; 0 re-derives prototypes
  /// from the clean set only.
  std::size_t proto_update_every = 1;
  AugmentationPolicy augmentation;
  NoisePolicy noise_policy = NoisePolicy::capro;
  ReferenceProvider reference_provider = ReferenceProvider::collective;
  bool text_enhancement = true;
  /// false skips alignment and the contrastive training step entirely.
  bool alignment = true;
  /// Keep the projection/reconstruction term in the main training step.
  bool prj_in_train = true;

  std::uint64_t seed = 0;

  bool operator==(const RunConfig&) const = default;

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;
};

/// Desk-scale settings used by the bundled synthetic experiments.
RunConfig desk_config();

/// Applies a named ablation: none, no-enhance, no-cb, mopro-policy, vanilla.
void apply_ablation(RunConfig& config, std::string_view name);

std::string_view to_string(NoisePolicy p);
std::string_view to_string(ReferenceProvider p);

nlohmann::ordered_json to_json(const RunConfig& config);
/// Overlays `j` on `base`. Rejects unknown keys at every nesting level.
/// Integer-valued JSON number that is not negative.
template <class Json>
bool is_non_negative_integer(const Json& j) {
  return j.is_number_unsigned() || (j.is_number_integer() && j.template get<std::int64_t>() >= 0);
}

RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = RunConfig{});

}  // namespace capro
