#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "capro/graph.hpp"
#include "capro/linalg.hpp"
#include "capro/model.hpp"
#include "capro/proto.hpp"
#include "capro/rng.hpp"

namespace capro::test {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double sd = 1.0);
Vector random_vector(std::size_t n, Rng& rng, double sd = 1.0);
Vector random_unit(std::size_t n, Rng& rng);
Vector random_distribution(std::size_t n, Rng& rng);

/// Reference k-NN: full sort of every other node by (distance, id), with
/// distances from normalized copies of the rows.
struct BruteGraph {
  std::vector<std::vector<std::size_t>> knn;
  std::vector<std::vector<std::size_t>> reciprocal;
  Matrix adjacency;
};
BruteGraph brute_force_graph(const Matrix& features, std::size_t k);

/// Dense D^-1/2 (A + I) D^-1/2 S.
Matrix dense_smoothing(const Matrix& adjacency, const Matrix& texts);

/// Random network, batch, bank and dictionary for gradient checks.
struct GradientCase {
  ModelParams params;
  TrainingBatch batch;
  PrototypeBank bank;
  KeyDictionary dict{1, 1, 1};
  RunConfig config;
};
GradientCase random_gradient_case(Rng& rng);

struct FdStats {
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  double worst = 0.0;
};

/// Central differences (h = 1e-5) of the stage objective against the analytic
/// gradients on up to `per_layer` random coordinates of each query layer.
/// Coordinates whose perturbation flips a ReLU are skipped.
FdStats check_gradients(const GradientCase& c, Stage stage, std::size_t per_layer, Rng& rng);

enum class Term { cls, prj, pro, ins, bts };

/// Same check for a single objective term in the main training stage.
FdStats check_term(const GradientCase& c, Term term, std::size_t per_layer, Rng& rng);

/// |a - n| / max(|a|, |n|, 1e-6)
double relative_error(double analytic, double numeric);

}  // namespace capro::test
