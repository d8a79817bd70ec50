#include "capro/noise.hpp"

#include "capro/errors.hpp"

namespace capro {

Vector fuse_scores(std::span<const double> p, std::span<const double> r, double alpha) {
  Vector o(p.size());
  for (std::size_t c = 0; c < p.size(); ++c) {
    o[c] = alpha * p[c] + (1.0 - alpha) * r[c];
  }
  return o;
}

NoiseDecision decide(std::span<const double> fused, ClassId web_label, bool in_clean_set,
                     double gamma, std::size_t num_classes, NoisePolicy policy) {
  if (!is_class(web_label, num_classes) || fused.size() != num_classes) {
    throw DataError("decide: label or score vector does not match the class count");
  }
  NoiseDecision d;
  d.fused.assign(fused.begin(), fused.end());
  if (in_clean_set && policy == NoisePolicy::capro) {
    d.rule = Rule::clean_set;
    d.label = web_label;
    return d;
  }
  const std::size_t best = argmax(fused);
  if (fused[best] > gamma) {
    d.rule = Rule::confident;
    d.label = static_cast<ClassId>(best);
    d.verdict = d.label == web_label ? Verdict::keep : Verdict::relabel;
    return d;
  }
  if (fused[static_cast<std::size_t>(web_label)] > 1.0 / static_cast<double>(num_classes)) {
    d.rule = Rule::above_average;
    d.label = web_label;
    return d;
  }
  d.rule = Rule::discarded;
  d.verdict = Verdict::ood;
  d.label = kOodLabel;
  return d;
}

bool is_trustworthy(const NoiseDecision& d) {
  return d.rule == Rule::clean_set || d.rule == Rule::confident;
}

CleaningSummary clean_dataset(std::vector<Instance>& instances, const Matrix& predictions,
                              const Matrix& embeddings, const PrototypeBank& bank,
                              const RunConfig& config) {
  if (predictions.rows() != instances.size() || embeddings.rows() != instances.size()) {
    throw DataError("clean_dataset: prediction rows do not match the instance count");
  }
  CleaningSummary summary;
  const std::size_t num_classes = predictions.cols();
  for (std::size_t i = 0; i < instances.size(); ++i) {
    Instance& inst = instances[i];
    const Vector r = proto_similarity(embeddings.row(i), bank, config.tau);
    const Vector o = fuse_scores(predictions.row(i), r, config.alpha);
    const NoiseDecision d = decide(o, inst.web_label, inst.in_clean_set, config.gamma,
                                   num_classes, config.noise_policy);
    inst.current_label = d.label;
    switch (d.verdict) {
      case Verdict::keep:
        ++summary.kept;
        break;
      case Verdict::relabel:
        ++summary.relabeled;
        break;
      case Verdict::ood:
        ++summary.discarded;
        break;
    }
  }
  return summary;
}

}  // namespace capro
