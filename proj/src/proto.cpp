#include "capro/proto.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <spdlog/spdlog.h>

#include "capro/errors.hpp"

namespace capro {

KeyDictionary::KeyDictionary(std::size_t capacity, std::size_t key_dim, std::size_t num_classes)
    : capacity_(capacity),
      keys_(capacity, key_dim),
      aux_(capacity, num_classes),
      sim_(capacity, num_classes) {
  if (capacity == 0) {
    throw ConfigError("key dictionary capacity must be positive");
  }
}

KeyDictionary::Entry KeyDictionary::at(std::size_t position) const {
  const std::size_t s = slot(position);
  return {keys_.row(s), aux_.row(s), sim_.row(s)};
}

void KeyDictionary::push(std::span<const double> key, std::span<const double> aux_prediction,
                         std::span<const double> proto_similarity) {
  std::size_t s = 0;
  if (size_ < capacity_) {
    s = slot(size_);
    ++size_;
  } else {
    s = head_;
    head_ = (head_ + 1) % capacity_;
  }
  std::copy(key.begin(), key.end(), keys_.row(s).begin());
  std::copy(aux_prediction.begin(), aux_prediction.end(), aux_.row(s).begin());
  std::copy(proto_similarity.begin(), proto_similarity.end(), sim_.row(s).begin());
}

void KeyDictionary::clear() noexcept {
  head_ = 0;
  size_ = 0;
}

void dictionary_push(KeyDictionary& dict, const Matrix& keys, const Matrix& aux_predictions,
                     const Matrix& proto_similarities) {
  for (std::size_t r = 0; r < keys.rows(); ++r) {
    dict.push(keys.row(r), aux_predictions.row(r), proto_similarities.row(r));
  }
}

PrototypeBank init_prototypes(const CleanSet& clean, const Matrix& embeddings,
                              std::span<const ClassId> web_labels,
                              std::span<const double> web_losses, double momentum,
                              std::size_t update_every) {
  const std::size_t num_classes = clean.classes.size();
  PrototypeBank bank;
  bank.prototypes = Matrix(num_classes, embeddings.cols());
  bank.momentum = momentum;
  bank.update_every = update_every;
  for (std::size_t c = 0; c < num_classes; ++c) {
    Vector mean(embeddings.cols(), 0.0);
    const auto& members = clean.classes[c];
    if (!members.empty()) {
      for (const CleanMember& m : members) {
        axpy(1.0 / static_cast<double>(members.size()), embeddings.row(m.instance), mean);
      }
    } else {
      std::size_t best = web_labels.size();
      double best_loss = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < web_labels.size(); ++i) {
        if (static_cast<std::size_t>(web_labels[i]) == c && web_losses[i] < best_loss) {
          best = i;
          best_loss = web_losses[i];
        }
      }
      if (best == web_labels.size()) {
        throw DegenerateInputError("init_prototypes: class " + std::to_string(c) +
                                   " has no instances");
      }
      spdlog::warn("init_prototypes: class {} has an empty clean set, using instance {}", c, best);
      std::copy_n(embeddings.row(best).begin(), embeddings.cols(), mean.begin());
    }
    Vector unit;
    try {
      unit = l2_normalize(mean);
    } catch (const DegenerateInputError&) {
      throw DegenerateInputError("init_prototypes: class " + std::to_string(c) +
                                 " members average to the zero vector");
    }
    std::copy(unit.begin(), unit.end(), bank.prototypes.row(c).begin());
  }
  return bank;
}

void momentum_update(PrototypeBank& bank, std::size_t c, std::span<const double> z) {
  auto row = bank.prototypes.row(c);
  Vector mixed(row.size());
  for (std::size_t d = 0; d < row.size(); ++d) {
    mixed[d] = bank.momentum * row[d] + (1.0 - bank.momentum) * z[d];
  }
  const Vector unit = l2_normalize(mixed);
  std::copy(unit.begin(), unit.end(), row.begin());
}

Vector proto_similarity(std::span<const double> z, const PrototypeBank& bank, double tau) {
  Vector logits(bank.num_classes());
  for (std::size_t c = 0; c < logits.size(); ++c) {
    logits[c] = dot(z, bank.prototypes.row(c));
  }
  return softmax(logits, tau);
}

LossGrad proto_loss(std::span<const double> z, const PrototypeBank& bank, std::size_t label,
                    double tau) {
  Vector logits(bank.num_classes());
  for (std::size_t c = 0; c < logits.size(); ++c) {
    logits[c] = dot(z, bank.prototypes.row(c));
  }
  const Vector log_prob = log_softmax(logits, tau);
  LossGrad out;
  out.loss = -log_prob[label];
  // d/dz = (sum_c r_c z_c - z_label) / tau
  out.grad.assign(z.size(), 0.0);
  for (std::size_t c = 0; c < logits.size(); ++c) {
    const double weight = std::exp(log_prob[c]) - (c == label ? 1.0 : 0.0);
    axpy(weight / tau, bank.prototypes.row(c), out.grad);
  }
  return out;
}

LossGrad instance_loss(std::span<const double> z, const KeyDictionary& dict,
                       std::size_t positive, double tau) {
  LossGrad out;
  out.grad.assign(z.size(), 0.0);
  if (dict.empty()) {
    spdlog::debug("instance_loss: empty dictionary, term skipped");
    return out;
  }
  if (positive >= dict.size()) {
    throw DataError("instance_loss: positive key position out of range");
  }
  Vector logits(dict.size());
  for (std::size_t j = 0; j < dict.size(); ++j) {
    logits[j] = dot(z, dict.at(j).key);
  }
  const Vector log_prob = log_softmax(logits, tau);
  out.loss = -log_prob[positive];
  for (std::size_t j = 0; j < dict.size(); ++j) {
    const double weight = std::exp(log_prob[j]) - (j == positive ? 1.0 : 0.0);
    axpy(weight / tau, dict.at(j).key, out.grad);
  }
  return out;
}

}  // namespace capro
