#include "capro/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <spdlog/spdlog.h>

#include "capro/errors.hpp"
#include "capro/graph.hpp"
#include "capro/metrics.hpp"

namespace capro {
namespace {

enum Stream : std::uint64_t { kInitStream = 1, kPretrainStream, kTrainStream, kFinetuneStream };

template <class Fn>
auto tagged(Stage stage, Fn&& fn) {
  const std::string tag = "stage " + std::string(to_string(stage)) + ": ";
  try {
    return fn();
  } catch (const DegenerateInputError& e) {
    throw DegenerateInputError(tag + e.what());
  } catch (const NumericError& e) {
    throw NumericError(tag + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(tag + e.what());
  } catch (const DataError& e) {
    throw DataError(tag + e.what());
  }
}

void resolve_size(std::size_t& field, std::size_t actual, const char* name) {
  if (field == 0) {
    field = actual;
  } else if (field != actual) {
    throw ConfigError(std::string(name) + " is " + std::to_string(field) + " but the dataset has " +
                      std::to_string(actual));
  }
}

Matrix gather_inputs(const std::vector<Instance>& instances, std::span<const std::size_t> idx) {
  Matrix m(idx.size(), instances.at(idx.front()).input.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const Vector& x = instances[idx[r]].input;
    std::copy(x.begin(), x.end(), m.row(r).begin());
  }
  return m;
}

struct EpochAccumulator {
  LossTerms sum;
  std::size_t samples = 0;

  void add(const LossTerms& t, std::size_t m) {
    const auto w = static_cast<double>(m);
    sum.total += w * t.total;
    sum.cls += w * t.cls;
    sum.prj += w * t.prj;
    sum.pro += w * t.pro;
    sum.ins += w * t.ins;
    sum.bts += w * t.bts;
    samples += m;
  }

  LossTerms mean() const {
    LossTerms t = sum;
    const double inv = samples > 0 ? 1.0 / static_cast<double>(samples) : 0.0;
    t.total *= inv;
    t.cls *= inv;
    t.prj *= inv;
    t.pro *= inv;
    t.ins *= inv;
    t.bts *= inv;
    return t;
  }
};

EpochRecord close_epoch(Stage stage, std::size_t epoch, double lr, const EpochAccumulator& acc,
                        const std::vector<Instance>& train) {
  EpochRecord rec;
  rec.stage = stage;
  rec.epoch = epoch;
  rec.lr = lr;
  rec.loss = acc.mean();
  for (const Instance& inst : train) {
    if (inst.current_label == kOodLabel) {
      ++rec.num_ood;
    } else if (inst.current_label != inst.web_label) {
      ++rec.num_relabeled;
    }
  }
  spdlog::info("{} epoch {}: lr={:.5f} loss={:.4f} ood={} relabeled={}", to_string(stage), epoch,
               lr, rec.loss.total, rec.num_ood, rec.num_relabeled);
  return rec;
}

std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> order,
                                                   std::size_t batch_size, Rng& rng) {
  rng.shuffle(std::span(order));
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

void pretrain(PipelineResult& run, const RunConfig& config) {
  Rng rng(derive_seed(config.seed, kPretrainStream));
  SgdOptimizer opt(run.params.query, config.sgd_momentum, config.weight_decay);
  const Schedule& s = config.pretrain;
  const auto order = all_indices(run.train.size());
  for (std::size_t epoch = 0; epoch < s.epochs; ++epoch) {
    const auto batches = make_batches(order, config.batch_size, rng);
    EpochAccumulator acc;
    double lr = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      lr = lr_at(epoch, b, batches.size(), s);
      TrainingBatch batch;
      batch.inputs = augment(gather_inputs(run.train, batches[b]),
                             config.augmentation.query_noise_sd, 0.0, rng);
      for (std::size_t i : batches[b]) {
        batch.labels.push_back(run.train[i].web_label);
      }
      const LossResult res =
          loss_and_gradients(run.params, batch, nullptr, nullptr, config, Stage::pretrain);
      spdlog::debug("pretrain epoch {} batch {}: cls={:.4f} prj={:.4f}", epoch, b, res.terms.cls,
                                  res.terms.prj);
      opt.step(run.params.query, res.gradients, lr,
               epoch < s.frozen_epochs ? Trainable::heads_only() : Trainable::all());
      acc.add(res.terms, batches[b].size());
    }
    run.epochs.push_back(close_epoch(Stage::pretrain, epoch, lr, acc, run.train));
  }
}

std::vector<double> web_label_losses(const Matrix& probs, const std::vector<Instance>& train) {
  std::vector<double> losses(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    losses[i] = -std::log(std::max(probs(i, static_cast<std::size_t>(train[i].web_label)), 1e-300));
  }
  return losses;
}

std::vector<ClassId> web_labels(const std::vector<Instance>& train) {
  std::vector<ClassId> labels;
  labels.reserve(train.size());
  for (const Instance& inst : train) {
    labels.push_back(inst.web_label);
  }
  return labels;
}

PrototypeBank prototypes_from_clean_set(const PipelineResult& run, const RunConfig& config) {
  const Matrix train_inputs = stack_inputs(run.train);
  const Activations a = forward(run.params.query, train_inputs);
  const auto labels = web_labels(run.train);
  return init_prototypes(run.enhancement->clean_set, a.z, labels, web_label_losses(a.p, run.train),
                         config.proto_momentum, config.proto_update_every);
}

void train_contrastive(PipelineResult& run, const RunConfig& config) {
  Rng rng(derive_seed(config.seed, kTrainStream));
  const std::size_t num_classes = config.num_classes;
  run.params.key = KeyNet{run.params.query.encoder_hidden, run.params.query.encoder_out,
                          run.params.query.projector_hidden, run.params.query.projector_out};
  run.bank = prototypes_from_clean_set(run, config);
  PrototypeBank& bank = *run.bank;
  KeyDictionary dict(config.queue_size, config.embed_dim, num_classes);
  SgdOptimizer opt(run.params.query, config.sgd_momentum, config.weight_decay);
  const Schedule& s = config.train;
  const auto order = all_indices(run.train.size());

  for (std::size_t epoch = 0; epoch < s.epochs; ++epoch) {
    const bool correcting = epoch >= s.frozen_epochs;
    const bool refresh_protos =
        correcting && config.proto_update_every > 0 && epoch % config.proto_update_every == 0;
    if (epoch > 0 && config.proto_update_every == 0) {
      bank = prototypes_from_clean_set(run, config);
    }
    const auto batches = make_batches(order, config.batch_size, rng);
    EpochAccumulator acc;
    double lr = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& idx = batches[b];
      const std::size_t m = idx.size();
      lr = lr_at(epoch, b, batches.size(), s);
      const Matrix x = gather_inputs(run.train, idx);

      const Matrix key_view = augment(x, config.augmentation.key_noise_sd,
                                      config.augmentation.key_mask_fraction, rng);
      const Matrix keys = key_embed(run.params.key, key_view);
      const Matrix key_aux = aux_predict(run.params.query, keys);
      Matrix key_sims(m, num_classes);
      for (std::size_t i = 0; i < m; ++i) {
        const Vector r = proto_similarity(keys.row(i), bank, config.tau);
        std::copy(r.begin(), r.end(), key_sims.row(i).begin());
      }
      dictionary_push(dict, keys, key_aux, key_sims);

      TrainingBatch batch;
      batch.inputs = augment(x, config.augmentation.query_noise_sd, 0.0, rng);
      for (std::size_t i = 0; i < m; ++i) {
        batch.labels.push_back(run.train[idx[i]].current_label);
        batch.positive_slots.push_back(dict.size() - m + i);
      }
      const LossResult res =
          loss_and_gradients(run.params, batch, &bank, &dict, config, Stage::train);
      opt.step(run.params.query, res.gradients, lr,
               correcting ? Trainable::all() : Trainable::heads_only());
      momentum_sync(run.params, config.key_momentum);
      acc.add(res.terms, m);

      if (!correcting) {
        continue;
      }
      const Activations& a = res.activations;
      for (std::size_t i = 0; i < m; ++i) {
        Instance& inst = run.train[idx[i]];
        const Vector r = proto_similarity(a.z.row(i), bank, config.tau);
        const Vector o = fuse_scores(a.p.row(i), r, config.alpha);
        const NoiseDecision d = decide(o, inst.web_label, inst.in_clean_set, config.gamma,
                                       num_classes, config.noise_policy);
        inst.current_label = d.label;
        if (refresh_protos && is_trustworthy(d)) {
          momentum_update(bank, static_cast<std::size_t>(d.label), a.z.row(i));
        }
      }
    }
    run.epochs.push_back(close_epoch(Stage::train, epoch, lr, acc, run.train));
  }
}

void finetune(PipelineResult& run, const RunConfig& config) {
  Rng rng(derive_seed(config.seed, kFinetuneStream));
  if (run.bank) {
    const Matrix train_inputs = stack_inputs(run.train);
    const Activations a = forward(run.params.query, train_inputs);
    run.cleaning = clean_dataset(run.train, a.p, a.z, *run.bank, config);
    spdlog::info("cleaning: kept={} relabeled={} discarded={}", run.cleaning.kept,
                 run.cleaning.relabeled, run.cleaning.discarded);
  } else {
    run.cleaning = CleaningSummary{run.train.size(), 0, 0};
  }
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < run.train.size(); ++i) {
    if (run.train[i].current_label != kOodLabel) {
      usable.push_back(i);
    }
  }
  if (usable.empty()) {
    throw DegenerateInputError("every training sample was discarded");
  }
  SgdOptimizer opt(run.params.query, config.sgd_momentum, config.weight_decay);
  const Schedule& s = config.finetune;
  for (std::size_t epoch = 0; epoch < s.epochs; ++epoch) {
    const auto batches = make_batches(usable, config.batch_size, rng);
    EpochAccumulator acc;
    double lr = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      lr = lr_at(epoch, b, batches.size(), s);
      TrainingBatch batch;
      batch.inputs = gather_inputs(run.train, batches[b]);
      for (std::size_t i : batches[b]) {
        batch.labels.push_back(run.train[i].current_label);
      }
      const LossResult res =
          loss_and_gradients(run.params, batch, nullptr, nullptr, config, Stage::finetune);
      opt.step(run.params.query, res.gradients, lr, Trainable::classifier_only());
      acc.add(res.terms, batches[b].size());
    }
    run.epochs.push_back(close_epoch(Stage::finetune, epoch, lr, acc, run.train));
  }
}

}  // namespace

RunConfig resolve_config(RunConfig config, const Dataset& data,
                         const TextualPrototypes& prototypes) {
  if (data.train.empty()) {
    throw DataError("dataset has no training instances");
  }
  resolve_size(config.num_classes, data.num_classes, "num_classes");
  resolve_size(config.num_instances, data.train.size(), "num_instances");
  resolve_size(config.input_dim, data.input_dim, "input_dim");
  resolve_size(config.text_dim, data.text_dim, "text_dim");
  if (prototypes.num_classes() != data.num_classes || prototypes.embeddings.cols() != data.text_dim) {
    throw DataError("textual prototypes do not match the dataset's classes and text dimension");
  }
  config.validate();
  return config;
}

Enhancement enhance_and_select(const Matrix& visual_features, std::vector<Instance>& train,
                               const TextualPrototypes& prototypes, const RunConfig& config) {
  if (visual_features.rows() != train.size()) {
    throw DataError("enhance_and_select: feature rows do not match the instance count");
  }
  const Matrix raw = stack_texts(train, prototypes.embeddings.cols());
  const auto labels = web_labels(train);
  Enhancement out;
  out.raw_clean_set = match_without_enhancement(raw, labels, prototypes, config.top_k);
  if (config.text_enhancement) {
    const NeighborGraph g = build_graph(visual_features, config.knn);
    out.texts = smooth_texts(raw, g);
    out.clean_set = match_and_select(out.texts, labels, prototypes, config.top_k, config.knn);
  } else {
    out.texts = raw;
    out.clean_set = out.raw_clean_set;
  }
  const std::vector<bool> members = out.clean_set.membership(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto row = out.texts.row(i);
    train[i].enhanced_text.assign(row.begin(), row.end());
    train[i].in_clean_set = members[i];
  }
  spdlog::info("clean set: {} members", out.clean_set.size());
  return out;
}

PipelineResult run_pipeline(const Dataset& data, const TextualPrototypes& prototypes,
                            const RunConfig& requested, Stage last_stage) {
  PipelineResult run;
  run.config = resolve_config(requested, data, prototypes);
  const RunConfig& config = run.config;
  run.train = data.train;
  for (Instance& inst : run.train) {
    inst.current_label = inst.web_label;
    inst.in_clean_set = false;
  }
  Rng init_rng(derive_seed(config.seed, kInitStream));
  run.params = init_model(ModelDims::from_config(config), init_rng);

  tagged(Stage::pretrain, [&] { pretrain(run, config); });
  run.completed = Stage::pretrain;
  if (last_stage == Stage::pretrain) {
    return run;
  }
  if (config.alignment) {
    tagged(Stage::train, [&] {
      const Activations a = forward(run.params.query, stack_inputs(run.train));
      run.enhancement = enhance_and_select(a.v, run.train, prototypes, config);
      train_contrastive(run, config);
    });
  }
  run.completed = Stage::train;
  if (last_stage == Stage::train) {
    return run;
  }
  tagged(Stage::finetune, [&] { finetune(run, config); });
  run.completed = Stage::finetune;
  return run;
}

Matrix predict(const QueryNet& net, const std::vector<Instance>& instances) {
  return forward(net, stack_inputs(instances)).p;
}

void evaluate_test(const QueryNet& net, const Dataset& data, MetricReport& report) {
  if (data.test.empty()) {
    throw DataError("dataset has no test instances");
  }
  const Matrix probs = predict(net, data.test);
  std::vector<std::size_t> known;
  std::vector<ClassId> labels;
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    labels.push_back(data.test[i].true_label);
    if (data.test[i].true_label != kUnknownLabel) {
      known.push_back(i);
    }
  }
  Matrix known_probs(known.size(), probs.cols());
  std::vector<ClassId> known_labels;
  for (std::size_t r = 0; r < known.size(); ++r) {
    const auto src = probs.row(known[r]);
    std::copy(src.begin(), src.end(), known_probs.row(r).begin());
    known_labels.push_back(labels[known[r]]);
  }
  report.top1 = topk_accuracy(known_probs, known_labels, 1);
  report.top5 = topk_accuracy(known_probs, known_labels, 5);
  report.open_set = open_set_sweep(probs, labels);
  report.open_set_best = *std::max_element(
      report.open_set.begin(), report.open_set.end(),
      [](const OpenSetPoint& a, const OpenSetPoint& b) { return a.macro_f1 < b.macro_f1; });
}

MetricReport build_report(const PipelineResult& run, const Dataset& data, std::string ablation) {
  MetricReport report;
  report.rng_algorithm = std::string(Rng::kAlgorithm);
  report.seed = run.config.seed;
  report.ablation = std::move(ablation);
  report.config = to_json(run.config);
  report.stage = run.completed;
  evaluate_test(run.params.query, data, report);
  if (!data.corruption.empty()) {
    std::vector<bool> predicted(run.train.size());
    std::vector<bool> actual(run.train.size());
    for (std::size_t i = 0; i < run.train.size(); ++i) {
      predicted[i] = run.train[i].current_label == kOodLabel;
      actual[i] = data.corruption[i] == Corruption::ood;
    }
    report.noise_detection = detection_scores(predicted, actual);
    report.relabel_accuracy = relabel_accuracy(run.train, data.corruption);
  }
  if (run.enhancement) {
    report.cleanset_size = run.enhancement->clean_set.size();
    report.cleanset_purity = cleanset_purity(run.enhancement->clean_set, run.train);
    report.cleanset_purity_raw = cleanset_purity(run.enhancement->raw_clean_set, run.train);
  }
  report.num_kept = run.cleaning.kept;
  report.num_relabeled = run.cleaning.relabeled;
  report.num_discarded = run.cleaning.discarded;
  report.epochs = run.epochs;
  return report;
}

}  // namespace capro
