#pragma once

#include <exception>
#include <filesystem>
#include <optional>
#include <string>

#include "capro/config.hpp"
#include "capro/model.hpp"
#include "capro/synth.hpp"

namespace capro {

/// Contents of an experiment file:
///   {"preset": "default" | "desk", "generator": {...}, "run": {...}}
/// "run" overlays the preset's defaults.
struct Experiment {
  GeneratorSpec generator;
  RunConfig run;
};

Experiment load_experiment(const std::filesystem::path& path);
Experiment experiment_from_json(const nlohmann::json& j);

struct PipelineArgs {
  std::optional<std::filesystem::path> config;
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  Stage stage = Stage::finetune;
  std::string ablation = "none";
};

/// Writes a synthetic dataset directory.
void cmd_generate(const std::optional<std::filesystem::path>& config,
                  const std::filesystem::path& out, std::optional<std::uint64_t> seed);

/// Trains and writes report.json, epochs.csv, labels.csv and model.capm.
void cmd_pipeline(const PipelineArgs& args);

/// Pretrains (or loads `checkpoint`), then writes enhanced_texts.capd and
/// clean_set.json.
void cmd_enhance(const PipelineArgs& args, const std::optional<std::filesystem::path>& checkpoint);

/// Test-split metrics of a saved model, written to report.json.
void cmd_evaluate(const std::filesystem::path& data, const std::filesystem::path& checkpoint,
                  const std::filesystem::path& out);

Stage stage_from_string(std::string_view s);

/// 2 configuration, 3 data, 4 numeric, 1 anything else.
int exit_code_for(const std::exception& e);

}  // namespace capro
