#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "capro/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Noise-robust training on web-style data with text-guided prototypes"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  std::optional<std::filesystem::path> config;
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::uint64_t> seed;
  std::string stage = "all";
  std::string ablation = "none";

  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset");
  gen->add_option("--config", config, "Experiment JSON (uses its generator section)");
  gen->add_option("--out", out, "Output dataset directory")->required();
  gen->add_option("--seed", seed, "Override the generator seed");

  auto* pipe = app.add_subcommand("pipeline", "Train and write metrics");
  pipe->add_option("--config", config, "Experiment JSON (uses its run section)");
  pipe->add_option("--data", data, "Dataset directory")->required();
  pipe->add_option("--out", out, "Output directory")->required();
  pipe->add_option("--seed", seed, "Override the run seed");
  pipe->add_option("--stage", stage, "Run through: pretrain, train, finetune or all");
  pipe->add_option("--ablation", ablation, "none, no-enhance, no-cb, mopro-policy or vanilla");

  auto* enh = app.add_subcommand("enhance", "Text enhancement and clean-set selection only");
  enh->add_option("--config", config, "Experiment JSON");
  enh->add_option("--data", data, "Dataset directory")->required();
  enh->add_option("--out", out, "Output directory")->required();
  enh->add_option("--seed", seed, "Override the run seed");
  enh->add_option("--ablation", ablation, "none or no-enhance");
  enh->add_option("--checkpoint", checkpoint, "Use this model instead of pretraining");

  auto* eval = app.add_subcommand("evaluate", "Test metrics of a saved model");
  eval->add_option("--data", data, "Dataset directory")->required();
  eval->add_option("--checkpoint", checkpoint, "Model file")->required();
  eval->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    spdlog::set_level(spdlog::level::from_str(log_level));
    spdlog::set_pattern("[%l] %v");
    capro::PipelineArgs args{config, data, out, seed, capro::stage_from_string(stage), ablation};
    if (*gen) {
      capro::cmd_generate(config, out, seed);
    } else if (*pipe) {
      capro::cmd_pipeline(args);
    } else if (*enh) {
      capro::cmd_enhance(args, checkpoint);
    } else if (*eval) {
      capro::cmd_evaluate(data, *checkpoint, out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return capro::exit_code_for(e);
  }
  return 0;
}
