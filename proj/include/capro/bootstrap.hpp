#pragma once

#include <optional>
#include <span>

#include "capro/linalg.hpp"
#include "capro/proto.hpp"

namespace capro {

struct BootstrapTarget {
  Vector target;   // b, length C
  Vector weights;  // w, one per stored key in FIFO order
};

/// Similarity-weighted mix of the stored keys' cached predictions:
/// b = sum_j w_j (alpha q'_j + (1 - alpha) r'_j), w = softmax(z . z'_j / tau).
/// Empty dictionary: no target.
std::optional<BootstrapTarget> bootstrap_target(std::span<const double> z,
                                                const KeyDictionary& dict, double alpha,
                                                double tau);

/// KL(q || b) with the gradient taken w.r.t. the logits that produced q.
/// Entries of b below 1e-12 are clamped.
LossGrad kl_loss(std::span<const double> q, std::span<const double> b);

}  // namespace capro
