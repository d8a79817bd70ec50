#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "capro/align.hpp"
#include "capro/linalg.hpp"
#include "capro/types.hpp"

namespace capro {

/// Unit-norm visual prototype per class.
struct PrototypeBank {
  Matrix prototypes;  // C x d_p
  double momentum = 0.999;
  std::size_t update_every = 1;

  std::size_t num_classes() const { return prototypes.rows(); }
  std::size_t dim() const { return prototypes.cols(); }
};

struct LossGrad {
  double loss = 0.0;
  Vector grad;
};

/// Fixed-capacity FIFO of momentum-encoder keys, each stored with the
/// auxiliary prediction and prototype similarity computed when it was pushed.
class KeyDictionary {
 public:
  KeyDictionary(std::size_t capacity, std::size_t key_dim, std::size_t num_classes);

  struct Entry {
    std::span<const double> key;
    std::span<const double> aux_prediction;
    std::span<const double> proto_similarity;
  };

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return size_; }
  bool empty() const noexcept { return size_ == 0; }
  std::size_t key_dim() const noexcept { return keys_.cols(); }
  std::size_t num_classes() const noexcept { return aux_.cols(); }

  /// Oldest entry first.
  Entry at(std::size_t position) const;
  void push(std::span<const double> key, std::span<const double> aux_prediction,
            std::span<const double> proto_similarity);
  void clear() noexcept;

 private:
  std::size_t slot(std::size_t position) const noexcept {
    return (head_ + position) % capacity_;
  }

  std::size_t capacity_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
  Matrix keys_;
  Matrix aux_;
  Matrix sim_;
};

/// Pushes every row of the three matrices, in row order.
void dictionary_push(KeyDictionary& dict, const Matrix& keys, const Matrix& aux_predictions,
                     const Matrix& proto_similarities);

/// Prototype c = normalize(mean of the class's clean-set embeddings). A class
/// with an empty clean list falls back to its lowest-web-loss instance.
/// Throws DegenerateInputError when the mean vanishes.
PrototypeBank init_prototypes(const CleanSet& clean, const Matrix& embeddings,
                              std::span<const ClassId> web_labels,
                              std::span<const double> web_losses, double momentum,
                              std::size_t update_every);

/// z_c <- normalize(m z_c + (1 - m) z)
void momentum_update(PrototypeBank& bank, std::size_t c, std::span<const double> z);

/// Softmax over prototype dot products at temperature tau.
Vector proto_similarity(std::span<const double> z, const PrototypeBank& bank, double tau);

/// -log softmax_label(Z z / tau); gradient w.r.t. z, prototypes held fixed.
LossGrad proto_loss(std::span<const double> z, const PrototypeBank& bank, std::size_t label,
                    double tau);

/// -log softmax over the stored keys, with the key at `positive` (a FIFO
/// position) as the target. The caller pushes the query's own key view
/// before scoring, so the denominator runs over exactly the stored keys.
/// Returns zero loss and gradient for an empty dictionary.
LossGrad instance_loss(std::span<const double> z, const KeyDictionary& dict,
                       std::size_t positive, double tau);

}  // namespace capro
