#include "capro/bootstrap.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

namespace capro {

namespace {
constexpr double kTargetFloor = 1e-12;
}

std::optional<BootstrapTarget> bootstrap_target(std::span<const double> z,
                                                const KeyDictionary& dict, double alpha,
                                                double tau) {
  if (dict.empty()) {
    return std::nullopt;
  }
  Vector logits(dict.size());
  for (std::size_t j = 0; j < dict.size(); ++j) {
    logits[j] = dot(z, dict.at(j).key);
  }
  BootstrapTarget out;
  out.weights = softmax(logits, tau);
  out.target.assign(dict.num_classes(), 0.0);
  for (std::size_t j = 0; j < dict.size(); ++j) {
    const auto entry = dict.at(j);
    const double w = out.weights[j];
    for (std::size_t c = 0; c < out.target.size(); ++c) {
      out.target[c] += w * (alpha * entry.aux_prediction[c] + (1.0 - alpha) * entry.proto_similarity[c]);
    }
  }
  return out;
}

LossGrad kl_loss(std::span<const double> q, std::span<const double> b) {
  // g_c = log q_c - log b_c; dL/du_j = q_j (g_j - L) for q = softmax(u).
  Vector g(q.size(), 0.0);
  LossGrad out;
  bool clamped = false;
  for (std::size_t c = 0; c < q.size(); ++c) {
    double bc = b[c];
    if (bc < kTargetFloor) {
      bc = kTargetFloor;
      clamped = true;
    }
    if (q[c] > 0.0) {
      g[c] = std::log(q[c]) - std::log(bc);
      out.loss += q[c] * g[c];
    }
  }
  if (clamped) {
    spdlog::debug("kl_loss: bootstrap target clamped at {}", kTargetFloor);
  }
  out.grad.resize(q.size());
  for (std::size_t c = 0; c < q.size(); ++c) {
    out.grad[c] = q[c] * (g[c] - out.loss);
  }
  // Rounding can leave a tiny negative sum when q and b nearly coincide.
  out.loss = std::max(out.loss, 0.0);
  return out;
}

}  // namespace capro
