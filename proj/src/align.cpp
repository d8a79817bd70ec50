#include "capro/align.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <spdlog/spdlog.h>

#include "capro/errors.hpp"
#include "capro/graph.hpp"

namespace capro {
namespace {

constexpr double kUnmatchable = std::numeric_limits<double>::infinity();

void check_inputs(const Matrix& texts, std::span<const ClassId> labels,
                  const TextualPrototypes& protos, std::size_t top_k) {
  protos.validate();
  if (texts.rows() != labels.size()) {
    throw DataError("text matching: " + std::to_string(texts.rows()) + " text rows for " +
                    std::to_string(labels.size()) + " labels");
  }
  if (texts.cols() != protos.embeddings.cols()) {
    throw DataError("text matching: text and prototype dimensions differ");
  }
  if (top_k < 1) {
    throw ConfigError("text matching: top_k must be at least 1");
  }
  for (ClassId y : labels) {
    if (!is_class(y, protos.num_classes())) {
      throw DataError("text matching: web label out of range");
    }
  }
}

CleanSet select_top_k(std::span<const double> distance, std::span<const ClassId> labels,
                      std::size_t num_classes, std::size_t top_k) {
  std::vector<std::vector<CleanMember>> ranked(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (std::isfinite(distance[i])) {
      ranked[static_cast<std::size_t>(labels[i])].push_back({i, distance[i]});
    }
  }
  CleanSet out;
  out.classes.resize(num_classes);
  out.thresholds.resize(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& list = ranked[c];
    std::sort(list.begin(), list.end(), [](const CleanMember& a, const CleanMember& b) {
      return a.distance != b.distance ? a.distance < b.distance : a.instance < b.instance;
    });
    if (list.size() > top_k) {
      list.resize(top_k);
    }
    if (list.empty()) {
      spdlog::warn("text matching: class {} has no matchable candidates", c);
    } else {
      out.thresholds[c] = list.back().distance;
    }
    out.classes[c] = std::move(list);
  }
  return out;
}

}  // namespace

void TextualPrototypes::validate() const {
  if (embeddings.rows() == 0) {
    throw DataError("textual prototypes: no classes");
  }
  for (std::size_t c = 0; c < embeddings.rows(); ++c) {
    const auto row = embeddings.row(c);
    if (!all_finite(row) || !(norm(row) > 0.0)) {
      throw DataError("textual prototype " + std::to_string(c) + " is zero or non-finite");
    }
  }
}

std::size_t CleanSet::size() const {
  std::size_t n = 0;
  for (const auto& list : classes) {
    n += list.size();
  }
  return n;
}

std::vector<bool> CleanSet::membership(std::size_t num_instances) const {
  std::vector<bool> flags(num_instances, false);
  for (const auto& list : classes) {
    for (const CleanMember& m : list) {
      flags.at(m.instance) = true;
    }
  }
  return flags;
}

CleanSet match_and_select(const Matrix& enhanced, std::span<const ClassId> labels,
                          const TextualPrototypes& protos, std::size_t top_k, std::size_t knn) {
  check_inputs(enhanced, labels, protos, top_k);
  const std::size_t n = enhanced.rows();
  const std::size_t num_classes = protos.num_classes();

  // Joint node set: matchable instances first, then one node per prototype.
  std::vector<std::size_t> node_of(n, n);
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < n; ++i) {
    if (norm(enhanced.row(i)) > 0.0 && all_finite(enhanced.row(i))) {
      node_of[i] = members.size();
      members.push_back(i);
    }
  }
  if (members.size() < n) {
    spdlog::info("text matching: {} instances without usable text are not matchable",
                 n - members.size());
  }
  Matrix joint(members.size() + num_classes, enhanced.cols());
  for (std::size_t r = 0; r < members.size(); ++r) {
    std::copy_n(enhanced.row(members[r]).begin(), enhanced.cols(), joint.row(r).begin());
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::copy_n(protos.embeddings.row(c).begin(), enhanced.cols(),
                joint.row(members.size() + c).begin());
  }
  const NeighborGraph g = build_graph(joint, knn);

  std::vector<double> distance(n, kUnmatchable);
  std::size_t fallbacks = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (node_of[i] == n) {
      continue;
    }
    const std::size_t proto_node = members.size() + static_cast<std::size_t>(labels[i]);
    const double cosine = cosine_distance(joint.row(node_of[i]), joint.row(proto_node));
    const JaccardResult jac = jaccard(node_of[i], proto_node, g, joint);
    if (jac.degenerate) {
      ++fallbacks;
      distance[i] = cosine;
    } else {
      distance[i] = 0.5 * (cosine + jac.distance);
    }
  }
  if (fallbacks > 0) {
    spdlog::debug("text matching: {} pairs fell back to cosine distance", fallbacks);
  }
  return select_top_k(distance, labels, num_classes, top_k);
}

CleanSet match_without_enhancement(const Matrix& texts, std::span<const ClassId> labels,
                                   const TextualPrototypes& protos, std::size_t top_k) {
  check_inputs(texts, labels, protos, top_k);
  std::vector<double> distance(texts.rows(), kUnmatchable);
  for (std::size_t i = 0; i < texts.rows(); ++i) {
    if (norm(texts.row(i)) > 0.0 && all_finite(texts.row(i))) {
      distance[i] = cosine_distance(texts.row(i),
                                    protos.embeddings.row(static_cast<std::size_t>(labels[i])));
    }
  }
  return select_top_k(distance, labels, protos.num_classes(), top_k);
}

}  // namespace capro
