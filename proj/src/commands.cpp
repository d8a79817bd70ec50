#include "capro/commands.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "capro/checkpoint.hpp"
#include "capro/dataset_io.hpp"
#include "capro/errors.hpp"
#include "capro/pipeline.hpp"
#include "capro/report.hpp"

namespace capro {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string labels_csv(const std::vector<Instance>& train) {
  std::string out = "id,web_label,current_label,in_clean_set\n";
  for (const Instance& inst : train) {
    out += fmt::format("{},{},{},{}\n", inst.id, inst.web_label, inst.current_label,
                       inst.in_clean_set ? 1 : 0);
  }
  return out;
}

RunConfig run_config_for(const PipelineArgs& args) {
  RunConfig config = args.config ? load_experiment(*args.config).run : RunConfig{};
  if (args.seed) {
    config.seed = *args.seed;
  }
  if (args.ablation != "none") {
    apply_ablation(config, args.ablation);
  }
  return config;
}

}  // namespace

Experiment experiment_from_json(const json& j) {
  if (!j.is_object()) {
    throw ConfigError("experiment: expected a JSON object");
  }
  for (const auto& item : j.items()) {
    if (item.key() != "preset" && item.key() != "generator" && item.key() != "run") {
      throw ConfigError("experiment: unknown key '" + item.key() + "'");
    }
  }
  Experiment e;
  std::string preset = "default";
  if (auto it = j.find("preset"); it != j.end()) {
    preset = it->is_string() ? it->get<std::string>() : "";
  }
  if (preset == "desk") {
    e.run = desk_config();
  } else if (preset != "default") {
    throw ConfigError("experiment: preset must be 'default' or 'desk'");
  }
  if (auto it = j.find("generator"); it != j.end()) {
    e.generator = generator_spec_from_json(*it);
  }
  if (auto it = j.find("run"); it != j.end()) {
    try {
      e.run = run_config_from_json(*it, e.run);
    } catch (const ConfigError& err) {
      throw ConfigError(std::string("run: ") + err.what());
    }
  }
  e.run.validate();
  return e;
}

Experiment load_experiment(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError(path.string() + ": cannot open");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return experiment_from_json(json::parse(ss.str()));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": malformed JSON at byte offset " + std::to_string(e.byte));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

Stage stage_from_string(std::string_view s) {
  if (s == "pretrain") return Stage::pretrain;
  if (s == "train") return Stage::train;
  if (s == "finetune" || s == "all") return Stage::finetune;
  throw ConfigError("unknown stage '" + std::string(s) + "'");
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  return 1;
}

void cmd_generate(const std::optional<fs::path>& config, const fs::path& out,
                  std::optional<std::uint64_t> seed) {
  GeneratorSpec spec = config ? load_experiment(*config).generator : GeneratorSpec{};
  if (seed) {
    spec.seed = *seed;
  }
  const SyntheticData synth = generate(spec);
  write_dataset(out, synth.dataset, synth.prototypes, spec);
  spdlog::info("wrote {} training and {} test instances to {}", synth.dataset.train.size(),
               synth.dataset.test.size(), out.string());
}

void cmd_pipeline(const PipelineArgs& args) {
  const RunConfig config = run_config_for(args);
  const LoadedDataset loaded = read_dataset(args.data);
  const PipelineResult run = run_pipeline(loaded.dataset, loaded.prototypes, config, args.stage);
  const MetricReport report = build_report(run, loaded.dataset, args.ablation);
  fs::create_directories(args.out);
  write_file_atomic(args.out / "report.json", to_json(report).dump(2) + "\n");
  write_file_atomic(args.out / "epochs.csv", epoch_csv(report.epochs));
  write_file_atomic(args.out / "labels.csv", labels_csv(run.train));
  Checkpoint ckpt{run.params, std::nullopt};
  if (run.bank) {
    ckpt.prototypes = run.bank->prototypes;
  }
  save_checkpoint(args.out / "model.capm", ckpt);
  spdlog::info("top1={:.4f} top5={:.4f}", report.top1, report.top5);
}

void cmd_enhance(const PipelineArgs& args, const std::optional<fs::path>& checkpoint) {
  const LoadedDataset loaded = read_dataset(args.data);
  std::vector<Instance> train = loaded.dataset.train;
  QueryNet net;
  RunConfig config;
  if (checkpoint) {
    config = resolve_config(run_config_for(args), loaded.dataset, loaded.prototypes);
    net = load_checkpoint(*checkpoint).params.query;
    if (net.encoder_hidden.in() != config.input_dim) {
      throw DataError(checkpoint->string() + ": model input width does not match the dataset");
    }
  } else {
    const PipelineResult run =
        run_pipeline(loaded.dataset, loaded.prototypes, run_config_for(args), Stage::pretrain);
    config = run.config;
    net = run.params.query;
  }
  const Activations a = forward(net, stack_inputs(train));
  const Enhancement e = enhance_and_select(a.v, train, loaded.prototypes, config);
  fs::create_directories(args.out);
  write_matrix_file(args.out / "enhanced_texts.capd", e.texts);
  nlohmann::ordered_json j;
  j["top_k"] = config.top_k;
  j["text_enhancement"] = config.text_enhancement;
  const auto purity = cleanset_purity(e.clean_set, train);
  const auto raw_purity = cleanset_purity(e.raw_clean_set, train);
  j["size"] = e.clean_set.size();
  j["purity"] = purity ? json(*purity) : json(nullptr);
  j["purity_raw"] = raw_purity ? json(*raw_purity) : json(nullptr);
  auto classes = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < e.clean_set.classes.size(); ++c) {
    auto members = nlohmann::ordered_json::array();
    for (const CleanMember& m : e.clean_set.classes[c]) {
      members.push_back({{"id", train[m.instance].id}, {"distance", m.distance}});
    }
    classes.push_back({{"class", c},
                       {"threshold", e.clean_set.thresholds[c] ? json(*e.clean_set.thresholds[c])
                                                               : json(nullptr)},
                       {"members", std::move(members)}});
  }
  j["classes"] = std::move(classes);
  write_file_atomic(args.out / "clean_set.json", j.dump(2) + "\n");
}

void cmd_evaluate(const fs::path& data, const fs::path& checkpoint, const fs::path& out) {
  const LoadedDataset loaded = read_dataset(data);
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  if (ckpt.params.query.encoder_hidden.in() != loaded.dataset.input_dim ||
      ckpt.params.query.classifier.out() != loaded.dataset.num_classes) {
    throw DataError(checkpoint.string() + ": model shape does not match the dataset");
  }
  MetricReport report;
  report.rng_algorithm = std::string(Rng::kAlgorithm);
  report.config = nlohmann::ordered_json::object();
  evaluate_test(ckpt.params.query, loaded.dataset, report);
  fs::create_directories(out);
  write_file_atomic(out / "report.json", to_json(report).dump(2) + "\n");
  spdlog::info("top1={:.4f} top5={:.4f}", report.top1, report.top5);
}

}  // namespace capro
