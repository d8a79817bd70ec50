#include "capro/metrics.hpp"

#include <algorithm>

#include "capro/errors.hpp"

namespace capro {

double topk_accuracy(const Matrix& scores, std::span<const ClassId> labels, std::size_t k) {
  if (scores.rows() != labels.size()) {
    throw DataError("topk_accuracy: row count does not match label count");
  }
  if (labels.empty()) {
    return 0.0;
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    if (!is_class(labels[i], scores.cols())) {
      throw DataError("topk_accuracy: label out of range");
    }
    const auto row = scores.row(i);
    const double own = row[static_cast<std::size_t>(labels[i])];
    const auto rank = std::count_if(row.begin(), row.end(), [&](double s) { return s >= own; });
    if (static_cast<std::size_t>(rank) <= k) {
      ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

DetectionScores detection_scores(const std::vector<bool>& predicted, const std::vector<bool>& actual) {
  if (predicted.size() != actual.size()) {
    throw DataError("detection_scores: size mismatch");
  }
  DetectionScores s;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] && actual[i]) ++s.true_positive;
    if (predicted[i] && !actual[i]) ++s.false_positive;
    if (!predicted[i] && actual[i]) ++s.false_negative;
  }
  const auto tp = static_cast<double>(s.true_positive);
  if (s.true_positive + s.false_positive > 0) {
    s.precision = tp / static_cast<double>(s.true_positive + s.false_positive);
  }
  if (s.true_positive + s.false_negative > 0) {
    s.recall = tp / static_cast<double>(s.true_positive + s.false_negative);
  }
  if (s.precision + s.recall > 0.0) {
    s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  }
  return s;
}

std::optional<double> relabel_accuracy(const std::vector<Instance>& instances,
                                       std::span<const Corruption> corruption) {
  if (corruption.size() != instances.size()) {
    throw DataError("relabel_accuracy: corruption record does not match the instances");
  }
  std::size_t flips = 0;
  std::size_t fixed = 0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (corruption[i] == Corruption::flip) {
      ++flips;
      if (instances[i].current_label == instances[i].true_label) {
        ++fixed;
      }
    }
  }
  if (flips == 0) {
    return std::nullopt;
  }
  return static_cast<double>(fixed) / static_cast<double>(flips);
}

std::optional<double> cleanset_purity(const CleanSet& clean, const std::vector<Instance>& instances) {
  std::size_t members = 0;
  std::size_t pure = 0;
  for (std::size_t c = 0; c < clean.classes.size(); ++c) {
    for (const CleanMember& m : clean.classes[c]) {
      ++members;
      if (instances.at(m.instance).true_label == static_cast<ClassId>(c)) {
        ++pure;
      }
    }
  }
  if (members == 0) {
    return std::nullopt;
  }
  return static_cast<double>(pure) / static_cast<double>(members);
}

std::vector<OpenSetPoint> open_set_sweep(const Matrix& scores, std::span<const ClassId> labels,
                                         std::size_t steps) {
  if (scores.rows() != labels.size()) {
    throw DataError("open_set_sweep: row count does not match label count");
  }
  if (steps < 1) {
    throw ConfigError("open_set_sweep: steps must be positive");
  }
  const std::size_t num_classes = scores.cols();
  const std::size_t unknown = num_classes;
  std::vector<std::size_t> truth(labels.size());
  std::vector<std::size_t> best(labels.size());
  std::vector<double> top(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kUnknownLabel) {
      truth[i] = unknown;
    } else if (is_class(labels[i], num_classes)) {
      truth[i] = static_cast<std::size_t>(labels[i]);
    } else {
      throw DataError("open_set_sweep: label out of range");
    }
    best[i] = argmax(scores.row(i));
    top[i] = scores(i, best[i]);
  }

  std::vector<OpenSetPoint> curve;
  curve.reserve(steps + 1);
  std::vector<std::size_t> tp(num_classes + 1);
  std::vector<std::size_t> fp(num_classes + 1);
  std::vector<std::size_t> fn(num_classes + 1);
  for (std::size_t s = 0; s <= steps; ++s) {
    const double threshold = static_cast<double>(s) / static_cast<double>(steps);
    std::fill(tp.begin(), tp.end(), 0);
    std::fill(fp.begin(), fp.end(), 0);
    std::fill(fn.begin(), fn.end(), 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const std::size_t pred = top[i] >= threshold ? best[i] : unknown;
      if (pred == truth[i]) {
        ++tp[pred];
      } else {
        ++fp[pred];
        ++fn[truth[i]];
      }
    }
    double total = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c <= num_classes; ++c) {
      const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
      if (denom > 0) {
        total += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
        ++present;
      }
    }
    curve.push_back({threshold, present > 0 ? total / static_cast<double>(present) : 0.0});
  }
  return curve;
}

}  // namespace capro
