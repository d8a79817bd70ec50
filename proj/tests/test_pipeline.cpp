#include <cmath>

#include "doctest.h"

#include "capro/errors.hpp"
#include "capro/pipeline.hpp"
#include "capro/synth.hpp"

using namespace capro;

namespace {

GeneratorSpec tiny_spec(std::uint64_t seed) {
  GeneratorSpec s;
  s.num_classes = 3;
  s.num_instances = 150;
  s.test_per_class = 40;
  s.test_ood = 0;
  s.cluster_separation = 6.0;
  s.seed = seed;
  return s;
}

RunConfig tiny_config(std::uint64_t seed) {
  RunConfig c = desk_config();
  c.top_k = 20;
  c.batch_size = 32;
  c.queue_size = 128;
  c.pretrain.epochs = 15;
  c.train.epochs = 15;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("noise-free tiny dataset is learned") {
  const SyntheticData d = generate(tiny_spec(1));
  const RunConfig config = tiny_config(1);
  const PipelineResult r = run_pipeline(d.dataset, d.prototypes, config);
  const MetricReport report = build_report(r, d.dataset, "none");
  CHECK(report.top1 >= 0.9);
  CHECK(r.completed == Stage::finetune);
  CHECK(static_cast<double>(r.cleaning.kept) >= 0.95 * 150.0);
  std::size_t unchanged = 0;
  for (const Instance& inst : r.train) unchanged += inst.current_label == inst.web_label ? 1 : 0;
  CHECK(static_cast<double>(unchanged) >= 0.95 * 150.0);
}

TEST_CASE("clean-set labels survive training") {
  GeneratorSpec spec = tiny_spec(2);
  spec.flip_rate = 0.3;
  spec.semantic_rate = 0.1;
  const SyntheticData d = generate(spec);
  const PipelineResult r = run_pipeline(d.dataset, d.prototypes, tiny_config(2));
  std::size_t members = 0;
  for (const Instance& inst : r.train) {
    if (inst.in_clean_set) {
      ++members;
      CHECK(inst.current_label == inst.web_label);
    }
    CHECK(all_finite(inst.enhanced_text));
  }
  CHECK(members > 0);
  REQUIRE(r.bank);
  for (std::size_t c = 0; c < r.bank->num_classes(); ++c) {
    CHECK(norm(r.bank->prototypes.row(c)) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("fine-tuning leaves the encoder and projector untouched") {
  const SyntheticData d = generate(tiny_spec(3));
  const RunConfig config = tiny_config(3);
  const PipelineResult trained = run_pipeline(d.dataset, d.prototypes, config, Stage::train);
  const PipelineResult full = run_pipeline(d.dataset, d.prototypes, config, Stage::finetune);
  CHECK(trained.completed == Stage::train);
  const QueryNet& a = trained.params.query;
  const QueryNet& b = full.params.query;
  CHECK(a.encoder_hidden == b.encoder_hidden);
  CHECK(a.encoder_out == b.encoder_out);
  CHECK(a.projector_hidden == b.projector_hidden);
  CHECK(a.projector_out == b.projector_out);
  CHECK(a.aux_classifier == b.aux_classifier);
  CHECK_FALSE(a.classifier == b.classifier);
}

TEST_CASE("vanilla reduction skips alignment") {
  GeneratorSpec spec = tiny_spec(4);
  spec.flip_rate = 0.2;
  const SyntheticData d = generate(spec);
  RunConfig vanilla = tiny_config(4);
  apply_ablation(vanilla, "vanilla");
  const PipelineResult r = run_pipeline(d.dataset, d.prototypes, vanilla);
  CHECK_FALSE(r.bank.has_value());
  for (const EpochRecord& e : r.epochs) CHECK(e.stage != Stage::train);
  for (const Instance& inst : r.train) CHECK(inst.current_label == inst.web_label);

  // Without alignment, the lambdas do not matter: the run is Step 1 + Step 3.
  RunConfig off = tiny_config(4);
  off.alignment = false;
  const PipelineResult r2 = run_pipeline(d.dataset, d.prototypes, off);
  CHECK(r2.params == r.params);
}

TEST_CASE("identical runs give identical reports") {
  GeneratorSpec spec = tiny_spec(5);
  spec.flip_rate = 0.2;
  spec.ood_rate = 0.1;
  const SyntheticData d = generate(spec);
  const RunConfig config = tiny_config(5);
  const std::string a = to_json(build_report(run_pipeline(d.dataset, d.prototypes, config), d.dataset, "none")).dump();
  const std::string b = to_json(build_report(run_pipeline(d.dataset, d.prototypes, config), d.dataset, "none")).dump();
  CHECK(a == b);
}

TEST_CASE("untrained model is at chance level") {
  GeneratorSpec spec = tiny_spec(6);
  spec.num_classes = 10;
  spec.num_instances = 20;
  spec.test_per_class = 200;
  const SyntheticData d = generate(spec);
  RunConfig config = resolve_config(tiny_config(6), d.dataset, d.prototypes);
  Rng rng(derive_seed(6, 1));
  const ModelParams params = init_model(ModelDims::from_config(config), rng);
  MetricReport report;
  evaluate_test(params.query, d.dataset, report);
  CHECK(std::abs(report.top1 - 0.1) <= 0.05);
}

TEST_CASE("config sizes are checked against the data") {
  const SyntheticData d = generate(tiny_spec(7));
  RunConfig c = tiny_config(7);
  const RunConfig resolved = resolve_config(c, d.dataset, d.prototypes);
  CHECK(resolved.num_classes == 3);
  CHECK(resolved.input_dim == 32);
  c.num_classes = 4;
  CHECK_THROWS_AS(resolve_config(c, d.dataset, d.prototypes), ConfigError);
}

TEST_CASE("stage failures are tagged") {
  SyntheticData d = generate(tiny_spec(8));
  d.dataset.train[3].input[0] = std::nan("");
  try {
    run_pipeline(d.dataset, d.prototypes, tiny_config(8));
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).rfind("stage pretrain: ", 0) == 0);
  }
}
