#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "capro/metrics.hpp"
#include "capro/model.hpp"
#include "json.hpp"

namespace capro {

struct EpochRecord {
  Stage stage = Stage::pretrain;
  std::size_t epoch = 0;
  double lr = 0.0;
  LossTerms loss;
  /// Samples currently marked out-of-distribution / relabeled at epoch end.
  std::size_t num_ood = 0;
  std::size_t num_relabeled = 0;

  bool operator==(const EpochRecord&) const = default;
};

struct MetricReport {
  static constexpr int kSchemaVersion = 1;

  std::string rng_algorithm;
  std::uint64_t seed = 0;
  std::string ablation = "none";
  nlohmann::ordered_json config;
  /// Last stage that ran.
  Stage stage = Stage::finetune;

  double top1 = 0.0;
  double top5 = 0.0;
  std::optional<DetectionScores> noise_detection;
  std::optional<double> relabel_accuracy;
  std::size_t cleanset_size = 0;
  std::optional<double> cleanset_purity;
  /// Purity of the clean set ranked on raw text embeddings, for comparison.
  std::optional<double> cleanset_purity_raw;
  std::vector<OpenSetPoint> open_set;
  std::optional<OpenSetPoint> open_set_best;
  std::size_t num_kept = 0;
  std::size_t num_relabeled = 0;
  std::size_t num_discarded = 0;
  std::vector<EpochRecord> epochs;

  bool operator==(const MetricReport&) const = default;
};

nlohmann::ordered_json to_json(const MetricReport& report);
/// Throws DataError on a malformed or differently versioned report.
MetricReport report_from_json(const nlohmann::ordered_json& j);

inline constexpr const char* kEpochCsvHeader =
    "stage,epoch,lr,loss_total,loss_cls,loss_prj,loss_pro,loss_ins,loss_bts,num_ood,num_relabeled";

/// Header line plus one line per epoch record.
std::string epoch_csv(const std::vector<EpochRecord>& epochs);

}  // namespace capro
