#include "capro/report.hpp"

#include <fmt/format.h>

#include "capro/errors.hpp"

namespace capro {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json optional_number(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

Stage stage_from_string(const std::string& s) {
  if (s == "pretrain") return Stage::pretrain;
  if (s == "train") return Stage::train;
  if (s == "finetune") return Stage::finetune;
  throw DataError("report: unknown stage '" + s + "'");
}

std::optional<double> read_optional(const ordered_json& j, const char* key) {
  const ordered_json& v = j.at(key);
  return v.is_null() ? std::nullopt : std::optional(v.get<double>());
}

}  // namespace

ordered_json to_json(const MetricReport& r) {
  ordered_json j;
  j["schema_version"] = MetricReport::kSchemaVersion;
  j["rng_algorithm"] = r.rng_algorithm;
  j["seed"] = r.seed;
  j["ablation"] = r.ablation;
  j["stage"] = std::string(to_string(r.stage));
  j["config"] = r.config;
  j["top1"] = r.top1;
  j["top5"] = r.top5;
  if (r.noise_detection) {
    const DetectionScores& d = *r.noise_detection;
    j["noise_detection"] = {{"precision", d.precision},
                            {"recall", d.recall},
                            {"f1", d.f1},
                            {"true_positive", d.true_positive},
                            {"false_positive", d.false_positive},
                            {"false_negative", d.false_negative}};
  } else {
    j["noise_detection"] = nullptr;
  }
  j["relabel_accuracy"] = optional_number(r.relabel_accuracy);
  j["cleanset_size"] = r.cleanset_size;
  j["cleanset_purity"] = optional_number(r.cleanset_purity);
  j["cleanset_purity_raw"] = optional_number(r.cleanset_purity_raw);
  auto sweep = ordered_json::array();
  for (const OpenSetPoint& p : r.open_set) {
    sweep.push_back({{"threshold", p.threshold}, {"macro_f1", p.macro_f1}});
  }
  j["open_set"] = std::move(sweep);
  if (r.open_set_best) {
    j["open_set_best"] = {{"threshold", r.open_set_best->threshold},
                          {"macro_f1", r.open_set_best->macro_f1}};
  } else {
    j["open_set_best"] = nullptr;
  }
  j["cleaning"] = {{"kept", r.num_kept}, {"relabeled", r.num_relabeled}, {"discarded", r.num_discarded}};
  auto epochs = ordered_json::array();
  for (const EpochRecord& e : r.epochs) {
    epochs.push_back({{"stage", std::string(to_string(e.stage))},
                      {"epoch", e.epoch},
                      {"lr", e.lr},
                      {"loss_total", e.loss.total},
                      {"loss_cls", e.loss.cls},
                      {"loss_prj", e.loss.prj},
                      {"loss_pro", e.loss.pro},
                      {"loss_ins", e.loss.ins},
                      {"loss_bts", e.loss.bts},
                      {"num_ood", e.num_ood},
                      {"num_relabeled", e.num_relabeled}});
  }
  j["epochs"] = std::move(epochs);
  return j;
}

MetricReport report_from_json(const nlohmann::ordered_json& j) {
  try {
    if (j.at("schema_version").get<int>() != MetricReport::kSchemaVersion) {
      throw DataError("report: unsupported schema_version");
    }
    MetricReport r;
    r.rng_algorithm = j.at("rng_algorithm").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.ablation = j.at("ablation").get<std::string>();
    r.stage = stage_from_string(j.at("stage").get<std::string>());
    r.config = j.at("config");
    r.top1 = j.at("top1").get<double>();
    r.top5 = j.at("top5").get<double>();
    if (const auto& d = j.at("noise_detection"); !d.is_null()) {
      DetectionScores s;
      s.precision = d.at("precision").get<double>();
      s.recall = d.at("recall").get<double>();
      s.f1 = d.at("f1").get<double>();
      s.true_positive = d.at("true_positive").get<std::size_t>();
      s.false_positive = d.at("false_positive").get<std::size_t>();
      s.false_negative = d.at("false_negative").get<std::size_t>();
      r.noise_detection = s;
    }
    r.relabel_accuracy = read_optional(j, "relabel_accuracy");
    r.cleanset_size = j.at("cleanset_size").get<std::size_t>();
    r.cleanset_purity = read_optional(j, "cleanset_purity");
    r.cleanset_purity_raw = read_optional(j, "cleanset_purity_raw");
    for (const auto& p : j.at("open_set")) {
      r.open_set.push_back({p.at("threshold").get<double>(), p.at("macro_f1").get<double>()});
    }
    if (const auto& b = j.at("open_set_best"); !b.is_null()) {
      r.open_set_best = OpenSetPoint{b.at("threshold").get<double>(), b.at("macro_f1").get<double>()};
    }
    const auto& cleaning = j.at("cleaning");
    r.num_kept = cleaning.at("kept").get<std::size_t>();
    r.num_relabeled = cleaning.at("relabeled").get<std::size_t>();
    r.num_discarded = cleaning.at("discarded").get<std::size_t>();
    for (const auto& e : j.at("epochs")) {
      EpochRecord rec;
      rec.stage = stage_from_string(e.at("stage").get<std::string>());
      rec.epoch = e.at("epoch").get<std::size_t>();
      rec.lr = e.at("lr").get<double>();
      rec.loss.total = e.at("loss_total").get<double>();
      rec.loss.cls = e.at("loss_cls").get<double>();
      rec.loss.prj = e.at("loss_prj").get<double>();
      rec.loss.pro = e.at("loss_pro").get<double>();
      rec.loss.ins = e.at("loss_ins").get<double>();
      rec.loss.bts = e.at("loss_bts").get<double>();
      rec.num_ood = e.at("num_ood").get<std::size_t>();
      rec.num_relabeled = e.at("num_relabeled").get<std::size_t>();
      r.epochs.push_back(rec);
    }
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("report: ") + e.what());
  }
}

std::string epoch_csv(const std::vector<EpochRecord>& epochs) {
  std::string out = kEpochCsvHeader;
  out += '\n';
  for (const EpochRecord& e : epochs) {
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", to_string(e.stage), e.epoch, e.lr,
                       e.loss.total, e.loss.cls, e.loss.prj, e.loss.pro, e.loss.ins, e.loss.bts,
                       e.num_ood, e.num_relabeled);
  }
  return out;
}

}  // namespace capro
