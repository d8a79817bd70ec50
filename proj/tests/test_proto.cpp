#include <cmath>
#include <deque>

#include "doctest.h"

#include "capro/errors.hpp"
#include "capro/proto.hpp"
#include "support.hpp"

using namespace capro;
using capro::test::random_distribution;
using capro::test::random_unit;

namespace {

PrototypeBank bank_of(const std::vector<Vector>& rows) {
  PrototypeBank b;
  b.prototypes = Matrix::from_rows(rows);
  return b;
}

CleanSet clean_of(std::vector<std::vector<std::size_t>> members) {
  CleanSet s;
  for (const auto& list : members) {
    std::vector<CleanMember> out;
    for (std::size_t i : list) out.push_back({i, 0.0});
    s.classes.push_back(out);
    s.thresholds.push_back(list.empty() ? std::nullopt : std::optional<double>(0.0));
  }
  return s;
}

// Central differences of a scalar function of z.
Vector numeric_gradient(const std::function<double(const Vector&)>& f, Vector z) {
  Vector g(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double saved = z[i];
    z[i] = saved + 1e-5;
    const double fp = f(z);
    z[i] = saved - 1e-5;
    const double fm = f(z);
    z[i] = saved;
    g[i] = (fp - fm) / 2e-5;
  }
  return g;
}

}  // namespace

TEST_CASE("init from identical members") {
  const Vector u{0.6, 0.8};
  const Matrix z = Matrix::from_rows({u, u, u, {1, 0}});
  const std::vector<ClassId> labels{0, 0, 0, 1};
  const std::vector<double> losses{1, 1, 1, 1};
  const PrototypeBank b = init_prototypes(clean_of({{0, 1, 2}, {3}}), z, labels, losses, 0.9, 1);
  CHECK(b.prototypes(0, 0) == doctest::Approx(0.6));
  CHECK(b.prototypes(0, 1) == doctest::Approx(0.8));
  CHECK(b.momentum == 0.9);
}

TEST_CASE("init from antipodal members fails") {
  const Matrix z = Matrix::from_rows({{1, 0}, {-1, 0}});
  const std::vector<ClassId> labels{0, 0};
  const std::vector<double> losses{1, 1};
  CHECK_THROWS_AS(init_prototypes(clean_of({{0, 1}}), z, labels, losses, 0.9, 1),
                  DegenerateInputError);
}

TEST_CASE("init matches normalized mean") {
  Rng rng(4);
  Matrix z(10, 5);
  for (std::size_t i = 0; i < 10; ++i) {
    const Vector u = random_unit(5, rng);
    std::copy(u.begin(), u.end(), z.row(i).begin());
  }
  std::vector<ClassId> labels(10, 0);
  for (std::size_t i = 5; i < 10; ++i) labels[i] = 1;
  const std::vector<double> losses(10, 1.0);
  const PrototypeBank b =
      init_prototypes(clean_of({{0, 2, 4}, {5, 6, 7, 8}}), z, labels, losses, 0.999, 1);
  Vector mean(5, 0.0);
  for (std::size_t i : {0, 2, 4}) {
    for (std::size_t d = 0; d < 5; ++d) mean[d] += z(i, d) / 3.0;
  }
  double n = 0.0;
  for (double x : mean) n += x * x;
  n = std::sqrt(n);
  for (std::size_t d = 0; d < 5; ++d) CHECK(b.prototypes(0, d) == doctest::Approx(mean[d] / n));
}

TEST_CASE("empty clean class falls back to lowest web loss") {
  const Matrix z = Matrix::from_rows({{1, 0}, {0, 1}, {0.6, 0.8}, {0.8, 0.6}});
  const std::vector<ClassId> labels{0, 1, 1, 1};
  const std::vector<double> losses{0.1, 2.0, 0.5, 0.7};
  const PrototypeBank b = init_prototypes(clean_of({{0}, {}}), z, labels, losses, 0.999, 1);
  CHECK(b.prototypes(1, 0) == doctest::Approx(0.6));
  CHECK(b.prototypes(1, 1) == doctest::Approx(0.8));
}

TEST_CASE("momentum update") {
  PrototypeBank b = bank_of({{1, 0}, {0, 1}});
  b.momentum = 1.0;
  momentum_update(b, 0, Vector{0, 1});
  CHECK(b.prototypes(0, 0) == 1.0);

  b.momentum = 0.0;
  momentum_update(b, 0, Vector{0.6, 0.8});
  CHECK(b.prototypes(0, 0) == doctest::Approx(0.6));
  CHECK(b.prototypes(0, 1) == doctest::Approx(0.8));

  b.momentum = 0.999;
  momentum_update(b, 1, Vector{0, 1});
  CHECK(b.prototypes(1, 1) == doctest::Approx(1.0));
  CHECK(b.prototypes(1, 0) == doctest::Approx(0.0));

  momentum_update(b, 1, Vector{1, 0});
  const double n = std::hypot(b.prototypes(1, 0), b.prototypes(1, 1));
  CHECK(n == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(b.prototypes(1, 0) == doctest::Approx(0.001 / std::hypot(0.001, 0.999)));
}

TEST_CASE("proto loss closed form") {
  const PrototypeBank b = bank_of({{1, 0}, {0, 1}});
  const LossGrad lg = proto_loss(Vector{1, 0}, b, 0, 0.1);
  CHECK(lg.loss == doctest::Approx(std::log1p(std::exp(-10.0))).epsilon(1e-12));

  const PrototypeBank same = bank_of({{0.6, 0.8}, {0.6, 0.8}, {0.6, 0.8}});
  Rng rng(2);
  for (int t = 0; t < 5; ++t) {
    CHECK(proto_loss(random_unit(2, rng), same, 1, 0.1).loss == doctest::Approx(std::log(3.0)));
  }
}

TEST_CASE("proto and instance loss gradients") {
  Rng rng(17);
  for (int t = 0; t < 100; ++t) {
    const std::size_t d = 2 + rng.uniform_index(5), c = 2 + rng.uniform_index(5);
    PrototypeBank b;
    b.prototypes = Matrix(c, d);
    for (std::size_t k = 0; k < c; ++k) {
      const Vector u = random_unit(d, rng);
      std::copy(u.begin(), u.end(), b.prototypes.row(k).begin());
    }
    KeyDictionary dict(1 + rng.uniform_index(8), d, c);
    for (std::size_t j = 0; j < dict.capacity() + 2; ++j) {
      dict.push(random_unit(d, rng), random_distribution(c, rng), random_distribution(c, rng));
    }
    const double tau = 0.1 + rng.uniform();
    const std::size_t label = rng.uniform_index(c);
    const std::size_t pos = rng.uniform_index(dict.size());
    const Vector z = random_unit(d, rng);

    const LossGrad pl = proto_loss(z, b, label, tau);
    const Vector pn = numeric_gradient([&](const Vector& x) { return proto_loss(x, b, label, tau).loss; }, z);
    const LossGrad il = instance_loss(z, dict, pos, tau);
    const Vector in = numeric_gradient([&](const Vector& x) { return instance_loss(x, dict, pos, tau).loss; }, z);
    CHECK(pl.loss >= 0.0);
    CHECK(il.loss >= 0.0);
    for (std::size_t k = 0; k < d; ++k) {
      CHECK(test::relative_error(pl.grad[k], pn[k]) < 1e-4);
      CHECK(test::relative_error(il.grad[k], in[k]) < 1e-4);
    }
  }
}

TEST_CASE("instance loss special cases") {
  const Vector z{0.6, 0.8};
  KeyDictionary dict(4, 2, 2);
  CHECK(instance_loss(z, dict, 0, 0.1).loss == 0.0);
  CHECK(instance_loss(z, dict, 0, 0.1).grad == Vector{0.0, 0.0});

  const Vector key{0, 1}, aux{0.5, 0.5};
  dict.push(key, aux, aux);
  CHECK(instance_loss(z, dict, 0, 0.1).loss == doctest::Approx(0.0));
  for (int i = 0; i < 3; ++i) dict.push(key, aux, aux);
  CHECK(instance_loss(z, dict, 2, 0.1).loss == doctest::Approx(std::log(4.0)));
  CHECK_THROWS_AS(instance_loss(z, dict, 4, 0.1), DataError);
}

TEST_CASE("proto similarity") {
  const PrototypeBank b = bank_of({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  const Vector r = proto_similarity(Vector{0, 1, 0}, b, 0.01);
  CHECK(r[1] > 0.99);

  const PrototypeBank same = bank_of({{1, 0}, {1, 0}, {1, 0}, {1, 0}});
  for (double x : proto_similarity(Vector{0.6, 0.8}, same, 0.1)) CHECK(x == doctest::Approx(0.25));

  Rng rng(9);
  const Vector z = random_unit(3, rng);
  const Vector got = proto_similarity(z, b, 0.3);
  double s = 0.0;
  for (std::size_t k = 0; k < 3; ++k) s += std::exp(z[k] / 0.3);
  for (std::size_t k = 0; k < 3; ++k) CHECK(got[k] == doctest::Approx(std::exp(z[k] / 0.3) / s));
}

TEST_CASE("dictionary FIFO") {
  KeyDictionary dict(3, 1, 1);
  for (double v : {1.0, 2.0, 3.0, 4.0}) dict.push(Vector{v}, Vector{1.0}, Vector{1.0});
  CHECK(dict.size() == 3);
  CHECK(dict.at(0).key[0] == 2.0);
  CHECK(dict.at(2).key[0] == 4.0);

  KeyDictionary batch(3, 1, 1);
  dictionary_push(batch, Matrix::from_rows({{7}, {8}, {9}}), Matrix(3, 1, 1.0), Matrix(3, 1, 1.0));
  CHECK(batch.at(0).key[0] == 7.0);
  CHECK(batch.at(1).key[0] == 8.0);
  CHECK(batch.at(2).key[0] == 9.0);

  batch.clear();
  CHECK(batch.empty());
  CHECK_THROWS_AS(KeyDictionary(0, 1, 1), ConfigError);
}

TEST_CASE("dictionary matches a reference queue") {
  Rng rng(13);
  KeyDictionary dict(7, 1, 2);
  std::deque<double> model;
  double next = 0.0;
  for (int round = 0; round < 50; ++round) {
    const std::size_t n = rng.uniform_index(5);
    Matrix keys(n, 1), aux(n, 2), sim(n, 2);
    for (std::size_t r = 0; r < n; ++r) {
      keys(r, 0) = next;
      aux(r, 0) = sim(r, 1) = 1.0;
      model.push_back(next);
      next += 1.0;
      if (model.size() > 7) model.pop_front();
    }
    dictionary_push(dict, keys, aux, sim);
    REQUIRE(dict.size() == model.size());
    for (std::size_t p = 0; p < model.size(); ++p) CHECK(dict.at(p).key[0] == model[p]);
  }
}
