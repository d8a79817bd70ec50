#pragma once

#include <optional>
#include <vector>

#include "capro/align.hpp"
#include "capro/config.hpp"
#include "capro/model.hpp"
#include "capro/noise.hpp"
#include "capro/proto.hpp"
#include "capro/report.hpp"
#include "capro/types.hpp"

namespace capro {

/// Fills data-derived sizes left at zero and rejects explicit ones that
/// disagree with the dataset.
RunConfig resolve_config(RunConfig config, const Dataset& data,
                         const TextualPrototypes& prototypes);

struct Enhancement {
  /// Smoothed text embeddings (raw texts when enhancement is disabled).
  Matrix texts;
  CleanSet clean_set;
  /// Selection on the raw text embeddings, kept for comparison.
  CleanSet raw_clean_set;
};

/// Text enhancement over the visual-feature graph followed by per-class
/// top-K selection. Marks in_clean_set and stores enhanced_text on `train`.
Enhancement enhance_and_select(const Matrix& visual_features, std::vector<Instance>& train,
                               const TextualPrototypes& prototypes, const RunConfig& config);

struct PipelineResult {
  RunConfig config;
  ModelParams params;
  std::optional<PrototypeBank> bank;
  std::optional<Enhancement> enhancement;
  /// Training instances with their final labels and clean-set flags.
  std::vector<Instance> train;
  std::vector<EpochRecord> epochs;
  CleaningSummary cleaning;
  Stage completed = Stage::pretrain;
};

/// Runs the stages in order, stopping after `last_stage`. With
/// config.alignment off, the contrastive stage and all cleaning are skipped
/// and the classifier is fine-tuned on web labels.
PipelineResult run_pipeline(const Dataset& data, const TextualPrototypes& prototypes,
                            const RunConfig& config, Stage last_stage = Stage::finetune);

/// Classifier probabilities for each instance.
Matrix predict(const QueryNet& net, const std::vector<Instance>& instances);

/// Test-split metrics: top-1/5 on known-class samples and the open-set sweep
/// over all of them.
void evaluate_test(const QueryNet& net, const Dataset& data, MetricReport& report);

/// Full report for a finished run.
MetricReport build_report(const PipelineResult& result, const Dataset& data, std::string ablation);

}  // namespace capro
