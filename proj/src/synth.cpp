#include "capro/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <string>

#include "capro/config.hpp"
#include "capro/errors.hpp"
#include "capro/rng.hpp"

namespace capro {
namespace {

constexpr int kMaxCentroidAttempts = 10000;
// Minimum pairwise centroid distance, as a fraction of the mean target.
constexpr double kMinSeparationFraction = 0.6;

Vector random_sphere_point(std::size_t dim, double radius, Rng& rng) {
  Vector v(dim);
  for (double& x : v) {
    x = rng.normal();
  }
  Vector u = l2_normalize(v);
  for (double& x : u) {
    x *= radius;
  }
  return u;
}

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += (a[i] - b[i]) * (a[i] - b[i]);
  }
  return std::sqrt(s);
}

Matrix draw_centroids(const GeneratorSpec& spec, Rng& rng) {
  const double radius = spec.cluster_separation / std::sqrt(2.0);
  const double min_sep = kMinSeparationFraction * spec.cluster_separation;
  std::vector<Vector> centroids;
  int attempts = 0;
  while (centroids.size() < spec.num_classes) {
    if (++attempts > kMaxCentroidAttempts) {
      throw ConfigError("generator: cannot place " + std::to_string(spec.num_classes) +
                        " centroids with the requested separation in " +
                        std::to_string(spec.latent_dim) + " latent dimensions");
    }
    Vector candidate = random_sphere_point(spec.latent_dim, radius, rng);
    const bool far_enough = std::all_of(centroids.begin(), centroids.end(), [&](const Vector& c) {
      return distance(c, candidate) >= min_sep;
    });
    if (far_enough) {
      centroids.push_back(std::move(candidate));
    }
  }
  Matrix m = Matrix::from_rows(centroids);
  if (spec.num_classes > 1) {
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < m.rows(); ++a) {
      for (std::size_t b = a + 1; b < m.rows(); ++b) {
        total += distance(m.row(a), m.row(b));
        ++pairs;
      }
    }
    const double scale = spec.cluster_separation / (total / static_cast<double>(pairs));
    for (double& x : m.values()) {
      x *= scale;
    }
  }
  return m;
}

/// rows x cols matrix with orthonormal columns (Gram-Schmidt on Gaussians).
Matrix random_orthonormal_map(std::size_t rows, std::size_t cols, Rng& rng) {
  std::vector<Vector> basis;
  while (basis.size() < cols) {
    Vector v(rows);
    for (double& x : v) {
      x = rng.normal();
    }
    for (const Vector& b : basis) {
      axpy(-dot(v, b), b, v);
    }
    if (norm(v) > 1e-8) {
      basis.push_back(l2_normalize(v));
    }
  }
  Matrix map(rows, cols);
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t r = 0; r < rows; ++r) {
      map(r, c) = basis[c][r];
    }
  }
  return map;
}

Vector embed(const Matrix& map, std::span<const double> latent, double noise_sd, Rng& rng) {
  Vector out(map.rows());
  for (std::size_t r = 0; r < map.rows(); ++r) {
    out[r] = dot(map.row(r), latent) + (noise_sd > 0.0 ? noise_sd * rng.normal() : 0.0);
  }
  return out;
}

/// Latent point of a background sample, centred between all classes.
Vector background_latent(const GeneratorSpec& spec, Rng& rng) {
  Vector u(spec.latent_dim);
  for (double& x : u) {
    x = spec.background_sd * rng.normal();
  }
  return u;
}

std::vector<std::pair<ClassId, ClassId>> nearest_centroid_pairs(const Matrix& centroids) {
  std::vector<std::pair<ClassId, ClassId>> pairs;
  for (std::size_t a = 0; a < centroids.rows(); ++a) {
    std::size_t best = a;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < centroids.rows(); ++b) {
      if (b != a) {
        const double d = distance(centroids.row(a), centroids.row(b));
        if (d < best_d) {
          best_d = d;
          best = b;
        }
      }
    }
    pairs.emplace_back(static_cast<ClassId>(a), static_cast<ClassId>(best));
  }
  return pairs;
}

std::size_t rounded_count(double rate, std::size_t n) {
  return static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));
}

ClassId other_class(ClassId y, std::size_t num_classes, Rng& rng) {
  const auto shift = 1 + rng.uniform_index(num_classes - 1);
  return static_cast<ClassId>((static_cast<std::size_t>(y) + shift) % num_classes);
}

}  // namespace

void GeneratorSpec::validate() const {
  if (num_classes < 2) throw ConfigError("generator: need at least two classes");
  if (num_instances < 1) throw ConfigError("generator: num_instances must be positive");
  if (input_dim < 1 || text_dim < 1 || latent_dim < 1) {
    throw ConfigError("generator: dimensions must be positive");
  }
  if (latent_dim > input_dim || latent_dim > text_dim) {
    throw ConfigError("generator: latent_dim cannot exceed input_dim or text_dim");
  }
  if (!(cluster_separation > 0.0)) throw ConfigError("generator: cluster_separation must be positive");
  if (!(text_noise_sd >= 0.0) || !(background_sd >= 0.0)) {
    throw ConfigError("generator: noise scales must be non-negative");
  }
  for (double r : {flip_rate, ood_rate, semantic_rate, missing_text_rate}) {
    if (!(r >= 0.0 && r < 1.0) && !(r == 1.0)) {
      throw ConfigError("generator: rates must lie in [0, 1]");
    }
  }
  if (flip_rate + ood_rate + semantic_rate > 1.0 + 1e-12) {
    throw ConfigError("generator: flip_rate + ood_rate + semantic_rate exceeds 1");
  }
  for (const auto& [a, b] : confusable_pairs) {
    if (!is_class(a, num_classes) || !is_class(b, num_classes) || a == b) {
      throw ConfigError("generator: confusable pairs must name two distinct valid classes");
    }
  }
}

SyntheticData generate(const GeneratorSpec& spec) {
  spec.validate();
  const std::size_t n = spec.num_instances;
  const std::size_t num_classes = spec.num_classes;
  CorruptionCounts counts;
  counts.flip = rounded_count(spec.flip_rate, n);
  counts.ood = rounded_count(spec.ood_rate, n);
  counts.semantic = rounded_count(spec.semantic_rate, n);
  if (counts.flip + counts.ood + counts.semantic > n) {
    throw ConfigError("generator: corruption counts exceed the dataset size");
  }
  counts.clean = n - counts.flip - counts.ood - counts.semantic;
  counts.missing_text = rounded_count(spec.missing_text_rate, n);
  if (counts.missing_text > counts.clean + counts.flip) {
    throw ConfigError("generator: missing_text_rate exceeds the clean plus flipped fraction");
  }

  Rng rng(spec.seed);
  const Matrix centroids = draw_centroids(spec, rng);
  const Matrix visual_map = random_orthonormal_map(spec.input_dim, spec.latent_dim, rng);
  const Matrix text_map = random_orthonormal_map(spec.text_dim, spec.latent_dim, rng);

  SyntheticData out;
  out.confusable_pairs =
      spec.confusable_pairs.empty() ? nearest_centroid_pairs(centroids) : spec.confusable_pairs;
  out.counts = counts;
  out.prototypes.embeddings = Matrix(num_classes, spec.text_dim);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const Vector s = embed(text_map, centroids.row(c), 0.0, rng);
    std::copy(s.begin(), s.end(), out.prototypes.embeddings.row(c).begin());
  }
  out.prototypes.provenance = "synthetic: noise-free text embedding of each class centroid";

  std::vector<Corruption> kinds;
  kinds.insert(kinds.end(), counts.clean, Corruption::clean);
  kinds.insert(kinds.end(), counts.flip, Corruption::flip);
  kinds.insert(kinds.end(), counts.ood, Corruption::ood);
  kinds.insert(kinds.end(), counts.semantic, Corruption::semantic);
  rng.shuffle(std::span(kinds));

  std::vector<std::size_t> text_candidates;
  for (std::size_t i = 0; i < n; ++i) {
    if (kinds[i] == Corruption::clean || kinds[i] == Corruption::flip) {
      text_candidates.push_back(i);
    }
  }
  rng.shuffle(std::span(text_candidates));
  std::vector<bool> missing(n, false);
  for (std::size_t t = 0; t < counts.missing_text; ++t) {
    missing[text_candidates[t]] = true;
  }

  Dataset& data = out.dataset;
  data.num_classes = num_classes;
  data.input_dim = spec.input_dim;
  data.text_dim = spec.text_dim;
  data.corruption = kinds;
  data.train.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Instance inst;
    inst.id = i;
    Vector text;
    switch (kinds[i]) {
      case Corruption::clean:
      case Corruption::flip: {
        const auto y_true = static_cast<ClassId>(rng.uniform_index(num_classes));
        inst.true_label = y_true;
        inst.web_label = kinds[i] == Corruption::flip ? other_class(y_true, num_classes, rng) : y_true;
        inst.input = embed(visual_map, centroids.row(static_cast<std::size_t>(y_true)), 1.0, rng);
        text = embed(text_map, centroids.row(static_cast<std::size_t>(y_true)), spec.text_noise_sd, rng);
        break;
      }
      case Corruption::ood: {
        inst.true_label = kUnknownLabel;
        inst.web_label = static_cast<ClassId>(rng.uniform_index(num_classes));
        const Vector u = background_latent(spec, rng);
        inst.input = embed(visual_map, u, 1.0, rng);
        text = embed(text_map, u, spec.text_noise_sd, rng);
        break;
      }
      case Corruption::semantic: {
        const auto& [image_class, text_class] =
            out.confusable_pairs[rng.uniform_index(out.confusable_pairs.size())];
        inst.true_label = image_class;
        inst.web_label = text_class;
        inst.input = embed(visual_map, centroids.row(static_cast<std::size_t>(image_class)), 1.0, rng);
        text = embed(text_map, centroids.row(static_cast<std::size_t>(text_class)), spec.text_noise_sd, rng);
        break;
      }
    }
    if (!missing[i]) {
      inst.text = std::move(text);
    }
    inst.current_label = inst.web_label;
    data.train.push_back(std::move(inst));
  }

  std::size_t next_id = n;
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t t = 0; t < spec.test_per_class; ++t) {
      Instance inst;
      inst.id = next_id++;
      inst.true_label = static_cast<ClassId>(c);
      inst.web_label = inst.true_label;
      inst.current_label = inst.true_label;
      inst.input = embed(visual_map, centroids.row(c), 1.0, rng);
      inst.text = embed(text_map, centroids.row(c), spec.text_noise_sd, rng);
      data.test.push_back(std::move(inst));
    }
  }
  for (std::size_t t = 0; t < spec.test_ood; ++t) {
    Instance inst;
    inst.id = next_id++;
    inst.true_label = kUnknownLabel;
    inst.web_label = static_cast<ClassId>(rng.uniform_index(num_classes));
    inst.current_label = inst.web_label;
    const Vector u = background_latent(spec, rng);
    inst.input = embed(visual_map, u, 1.0, rng);
    inst.text = embed(text_map, u, spec.text_noise_sd, rng);
    data.test.push_back(std::move(inst));
  }
  return out;
}

CorruptionCounts count_corruption(const Dataset& dataset) {
  CorruptionCounts c;
  for (std::size_t i = 0; i < dataset.corruption.size(); ++i) {
    switch (dataset.corruption[i]) {
      case Corruption::clean:
        ++c.clean;
        break;
      case Corruption::flip:
        ++c.flip;
        break;
      case Corruption::ood:
        ++c.ood;
        break;
      case Corruption::semantic:
        ++c.semantic;
        break;
    }
    if (!dataset.train[i].text) {
      ++c.missing_text;
    }
  }
  return c;
}

nlohmann::ordered_json to_json(const GeneratorSpec& s) {
  nlohmann::ordered_json j;
  j["num_classes"] = s.num_classes;
  j["num_instances"] = s.num_instances;
  j["test_per_class"] = s.test_per_class;
  j["test_ood"] = s.test_ood;
  j["input_dim"] = s.input_dim;
  j["text_dim"] = s.text_dim;
  j["latent_dim"] = s.latent_dim;
  j["cluster_separation"] = s.cluster_separation;
  j["text_noise_sd"] = s.text_noise_sd;
  j["background_sd"] = s.background_sd;
  j["flip_rate"] = s.flip_rate;
  j["ood_rate"] = s.ood_rate;
  j["semantic_rate"] = s.semantic_rate;
  j["missing_text_rate"] = s.missing_text_rate;
  auto pairs = nlohmann::ordered_json::array();
  for (const auto& [a, b] : s.confusable_pairs) {
    pairs.push_back({a, b});
  }
  j["confusable_pairs"] = pairs;
  j["seed"] = s.seed;
  return j;
}

GeneratorSpec generator_spec_from_json(const nlohmann::json& j) {
  static const std::set<std::string> keys = {
      "num_classes",   "num_instances", "test_per_class",    "test_ood",
      "input_dim",     "text_dim",      "latent_dim",        "cluster_separation",
      "text_noise_sd", "background_sd", "flip_rate",         "ood_rate",
      "semantic_rate", "missing_text_rate", "confusable_pairs", "seed"};
  if (!j.is_object()) {
    throw ConfigError("generator: expected a JSON object");
  }
  for (const auto& item : j.items()) {
    if (!keys.contains(item.key())) {
      throw ConfigError("generator: unknown key '" + item.key() + "'");
    }
  }
  GeneratorSpec s;
  auto read_size = [&](const char* key, std::size_t& out) {
    if (auto it = j.find(key); it != j.end()) {
      if (!is_non_negative_integer(*it)) {
        throw ConfigError(std::string("generator: key '") + key + "' must be a non-negative integer");
      }
      out = it->get<std::size_t>();
    }
  };
  auto read_real = [&](const char* key, double& out) {
    if (auto it = j.find(key); it != j.end()) {
      if (!it->is_number()) {
        throw ConfigError(std::string("generator: key '") + key + "' must be a number");
      }
      out = it->get<double>();
    }
  };
  read_size("num_classes", s.num_classes);
  read_size("num_instances", s.num_instances);
  read_size("test_per_class", s.test_per_class);
  read_size("test_ood", s.test_ood);
  read_size("input_dim", s.input_dim);
  read_size("text_dim", s.text_dim);
  read_size("latent_dim", s.latent_dim);
  read_real("cluster_separation", s.cluster_separation);
  read_real("text_noise_sd", s.text_noise_sd);
  read_real("background_sd", s.background_sd);
  read_real("flip_rate", s.flip_rate);
  read_real("ood_rate", s.ood_rate);
  read_real("semantic_rate", s.semantic_rate);
  read_real("missing_text_rate", s.missing_text_rate);
  if (auto it = j.find("confusable_pairs"); it != j.end()) {
    if (!it->is_array()) throw ConfigError("generator: confusable_pairs must be an array");
    for (const auto& p : *it) {
      if (!p.is_array() || p.size() != 2 || !p[0].is_number_integer() || !p[1].is_number_integer()) {
        throw ConfigError("generator: each confusable pair must be [a, b]");
      }
      s.confusable_pairs.emplace_back(p[0].get<ClassId>(), p[1].get<ClassId>());
    }
  }
  if (auto it = j.find("seed"); it != j.end()) {
    if (!is_non_negative_integer(*it)) throw ConfigError("generator: seed must be a non-negative integer");
    s.seed = it->get<std::uint64_t>();
  }
  s.validate();
  return s;
}

}  // namespace capro
