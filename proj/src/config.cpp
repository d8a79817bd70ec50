#include "capro/config.hpp"

#include <set>
#include <string>

#include "capro/errors.hpp"

namespace capro {
namespace {

using nlohmann::json;

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path, std::set<std::string> keys)
      : j_(j), path_(std::move(path)) {
    if (!j.is_object()) {
      throw ConfigError(where() + "expected a JSON object");
    }
    for (const auto& item : j.items()) {
      if (!keys.contains(item.key())) {
        throw ConfigError(where() + "unknown key '" + item.key() + "'");
      }
    }
  }

  template <class T>
  void read(const std::string& key, T& out) const {
    auto it = j_.find(key);
    if (it == j_.end()) {
      return;
    }
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) fail(key, "a boolean");
      out = it->template get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!is_non_negative_integer(*it)) fail(key, "a non-negative integer");
      out = it->template get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) fail(key, "a number");
      out = it->template get<T>();
    } else {
      if (!it->is_string()) fail(key, "a string");
      out = it->template get<T>();
    }
  }

  const json* child(const std::string& key) const {
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string where() const { return path_.empty() ? std::string() : path_ + ": "; }

 private:
  [[noreturn]] void fail(const std::string& key, const char* expected) const {
    throw ConfigError(where() + "key '" + key + "' must be " + expected);
  }

  const json& j_;
  std::string path_;
};

nlohmann::ordered_json schedule_to_json(const Schedule& s) {
  nlohmann::ordered_json j;
  j["base_lr"] = s.base_lr;
  j["warmup_epochs"] = s.warmup_epochs;
  j["frozen_epochs"] = s.frozen_epochs;
  j["epochs"] = s.epochs;
  return j;
}

Schedule schedule_from_json(const json& j, const std::string& path, Schedule s) {
  ObjectReader r(j, path, {"base_lr", "warmup_epochs", "frozen_epochs", "epochs"});
  r.read("base_lr", s.base_lr);
  r.read("warmup_epochs", s.warmup_epochs);
  r.read("frozen_epochs", s.frozen_epochs);
  r.read("epochs", s.epochs);
  return s;
}

void check_unit(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw ConfigError(std::string(name) + " must lie in [0, 1]");
  }
}

void check_schedule(const Schedule& s, const char* name) {
  if (!(s.base_lr >= 0.0)) {
    throw ConfigError(std::string(name) + ".base_lr must be non-negative");
  }
  if (s.warmup_epochs > s.epochs || s.frozen_epochs > s.epochs) {
    throw ConfigError(std::string(name) + ": warm-up and frozen epochs cannot exceed total epochs");
  }
}

}  // namespace

void RunConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  check_unit(alpha, "alpha");
  check_unit(gamma, "gamma");
  check_unit(proto_momentum, "proto_momentum");
  check_unit(key_momentum, "key_momentum");
  if (top_k < 1) throw ConfigError("top_k must be at least 1");
  if (knn < 1) throw ConfigError("knn must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (queue_size < batch_size) throw ConfigError("queue_size must be at least batch_size");
  if (hidden_dim < 1 || feature_dim < 1 || embed_dim < 1) {
    throw ConfigError("hidden_dim, feature_dim and embed_dim must be positive");
  }
  if (!(lambda_prj >= 0.0 && lambda_pro >= 0.0 && lambda_ins >= 0.0)) {
    throw ConfigError("loss weights must be non-negative");
  }
  check_unit(lambda_bts, "lambda_bts");
  if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0)) {
    throw ConfigError("sgd_momentum must lie in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  check_schedule(pretrain, "pretrain");
  check_schedule(train, "train");
  check_schedule(finetune, "finetune");
  const auto& aug = augmentation;
  if (!(aug.query_noise_sd >= 0.0) || !(aug.key_noise_sd > aug.query_noise_sd)) {
    throw ConfigError("augmentation: key_noise_sd must exceed query_noise_sd >= 0");
  }
  if (!(aug.key_mask_fraction >= 0.0 && aug.key_mask_fraction < 1.0)) {
    throw ConfigError("augmentation.key_mask_fraction must lie in [0, 1)");
  }
}

RunConfig desk_config() {
  RunConfig c;
  c.hidden_dim = 64;
  c.feature_dim = 32;
  c.embed_dim = 32;
  c.queue_size = 1024;
  c.batch_size = 64;
  c.knn = 5;
  c.top_k = 50;
  c.pretrain = {0.02, 2, 0, 30};
  c.train = {0.02, 1, 3, 90};
  c.finetune = {0.01, 0, 10, 10};
  c.augmentation = {1.0, 1.5, 0.1};
  c.lambda_prj = 0.1;
  return c;
}

void apply_ablation(RunConfig& config, std::string_view name) {
  if (name == "none") {
    return;
  }
  if (name == "no-enhance") {
    config.text_enhancement = false;
  } else if (name == "no-cb") {
    config.lambda_bts = 0.0;
    config.reference_provider = ReferenceProvider::none;
  } else if (name == "mopro-policy") {
    config.noise_policy = NoisePolicy::mopro;
  } else if (name == "vanilla") {
    config.lambda_pro = 0.0;
    config.lambda_ins = 0.0;
    config.lambda_bts = 0.0;
    config.reference_provider = ReferenceProvider::none;
    config.alignment = false;
  } else {
    throw ConfigError("unknown ablation '" + std::string(name) + "'");
  }
}

std::string_view to_string(NoisePolicy p) { return p == NoisePolicy::capro ? "capro" : "mopro"; }

std::string_view to_string(ReferenceProvider p) {
  return p == ReferenceProvider::collective ? "collective" : "none";
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["num_classes"] = c.num_classes;
  j["num_instances"] = c.num_instances;
  j["input_dim"] = c.input_dim;
  j["text_dim"] = c.text_dim;
  j["hidden_dim"] = c.hidden_dim;
  j["feature_dim"] = c.feature_dim;
  j["embed_dim"] = c.embed_dim;
  j["tau"] = c.tau;
  j["alpha"] = c.alpha;
  j["gamma"] = c.gamma;
  j["proto_momentum"] = c.proto_momentum;
  j["key_momentum"] = c.key_momentum;
  j["top_k"] = c.top_k;
  j["queue_size"] = c.queue_size;
  j["knn"] = c.knn;
  j["lambda_bts"] = c.lambda_bts;
  j["lambda_prj"] = c.lambda_prj;
  j["lambda_pro"] = c.lambda_pro;
  j["lambda_ins"] = c.lambda_ins;
  j["batch_size"] = c.batch_size;
  j["sgd_momentum"] = c.sgd_momentum;
  j["weight_decay"] = c.weight_decay;
  j["pretrain"] = schedule_to_json(c.pretrain);
  j["train"] = schedule_to_json(c.train);
  j["finetune"] = schedule_to_json(c.finetune);
  j["proto_update_every"] = c.proto_update_every;
  j["augmentation"] = {{"query_noise_sd", c.augmentation.query_noise_sd},
                       {"key_noise_sd", c.augmentation.key_noise_sd},
                       {"key_mask_fraction", c.augmentation.key_mask_fraction}};
  j["noise_policy"] = to_string(c.noise_policy);
  j["reference_provider"] = to_string(c.reference_provider);
  j["text_enhancement"] = c.text_enhancement;
  j["alignment"] = c.alignment;
  j["prj_in_train"] = c.prj_in_train;
  j["seed"] = c.seed;
  return j;
}

RunConfig run_config_from_json(const json& j, RunConfig base) {
  RunConfig c = std::move(base);
  ObjectReader r(j, "",
                 {"num_classes", "num_instances", "input_dim", "text_dim", "hidden_dim",
                  "feature_dim", "embed_dim", "tau", "alpha", "gamma", "proto_momentum",
                  "key_momentum", "top_k", "queue_size", "knn", "lambda_bts", "lambda_prj",
                  "lambda_pro", "lambda_ins", "batch_size", "sgd_momentum", "weight_decay",
                  "pretrain", "train", "finetune", "proto_update_every", "augmentation",
                  "noise_policy", "reference_provider", "text_enhancement", "alignment",
                  "prj_in_train", "seed"});
  r.read("num_classes", c.num_classes);
  r.read("num_instances", c.num_instances);
  r.read("input_dim", c.input_dim);
  r.read("text_dim", c.text_dim);
  r.read("hidden_dim", c.hidden_dim);
  r.read("feature_dim", c.feature_dim);
  r.read("embed_dim", c.embed_dim);
  r.read("tau", c.tau);
  r.read("alpha", c.alpha);
  r.read("gamma", c.gamma);
  r.read("proto_momentum", c.proto_momentum);
  r.read("key_momentum", c.key_momentum);
  r.read("top_k", c.top_k);
  r.read("queue_size", c.queue_size);
  r.read("knn", c.knn);
  r.read("lambda_bts", c.lambda_bts);
  r.read("lambda_prj", c.lambda_prj);
  r.read("lambda_pro", c.lambda_pro);
  r.read("lambda_ins", c.lambda_ins);
  r.read("batch_size", c.batch_size);
  r.read("sgd_momentum", c.sgd_momentum);
  r.read("weight_decay", c.weight_decay);
  if (const json* s = r.child("pretrain")) c.pretrain = schedule_from_json(*s, "pretrain", c.pretrain);
  if (const json* s = r.child("train")) c.train = schedule_from_json(*s, "train", c.train);
  if (const json* s = r.child("finetune")) c.finetune = schedule_from_json(*s, "finetune", c.finetune);
  r.read("proto_update_every", c.proto_update_every);
  if (const json* a = r.child("augmentation")) {
    ObjectReader ar(*a, "augmentation", {"query_noise_sd", "key_noise_sd", "key_mask_fraction"});
    ar.read("query_noise_sd", c.augmentation.query_noise_sd);
    ar.read("key_noise_sd", c.augmentation.key_noise_sd);
    ar.read("key_mask_fraction", c.augmentation.key_mask_fraction);
  }
  std::string policy(to_string(c.noise_policy));
  r.read("noise_policy", policy);
  if (policy == "capro") {
    c.noise_policy = NoisePolicy::capro;
  } else if (policy == "mopro") {
    c.noise_policy = NoisePolicy::mopro;
  } else {
    throw ConfigError("noise_policy must be 'capro' or 'mopro'");
  }
  std::string provider(to_string(c.reference_provider));
  r.read("reference_provider", provider);
  if (provider == "collective") {
    c.reference_provider = ReferenceProvider::collective;
  } else if (provider == "none") {
    c.reference_provider = ReferenceProvider::none;
  } else {
    throw ConfigError("reference_provider must be 'collective' or 'none'");
  }
  r.read("text_enhancement", c.text_enhancement);
  r.read("alignment", c.alignment);
  r.read("prj_in_train", c.prj_in_train);
  r.read("seed", c.seed);
  c.validate();
  return c;
}

}  // namespace capro
