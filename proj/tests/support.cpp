#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "capro/bootstrap.hpp"

namespace capro::test {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double sd) {
  Matrix m(rows, cols);
  for (double& x : m.values()) {
    x = rng.normal(0.0, sd);
  }
  return m;
}

Vector random_vector(std::size_t n, Rng& rng, double sd) {
  Vector v(n);
  for (double& x : v) {
    x = rng.normal(0.0, sd);
  }
  return v;
}

Vector random_unit(std::size_t n, Rng& rng) {
  Vector v = random_vector(n, rng);
  double s = 0.0;
  for (double x : v) s += x * x;
  s = std::sqrt(s);
  for (double& x : v) x /= s;
  return v;
}

Vector random_distribution(std::size_t n, Rng& rng) {
  Vector v(n);
  double s = 0.0;
  for (double& x : v) {
    x = -std::log(1.0 - rng.uniform());
    s += x;
  }
  for (double& x : v) x /= s;
  return v;
}

BruteGraph brute_force_graph(const Matrix& features, std::size_t k) {
  const std::size_t n = features.rows();
  const std::size_t d = features.cols();
  k = std::min(k, n - 1);
  Matrix unit(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += features(i, c) * features(i, c);
    s = std::sqrt(s);
    for (std::size_t c = 0; c < d; ++c) unit(i, c) = features(i, c) / s;
  }
  Matrix dist(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += unit(i, c) * unit(j, c);
      dist(i, j) = std::clamp(1.0 - s, 0.0, 2.0);
    }
  }

  BruteGraph g;
  g.knn.resize(n);
  g.reciprocal.resize(n);
  g.adjacency = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> order;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) order.push_back(j);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dist(i, a) < dist(i, b); });
    g.knn[i].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  }
  auto contains = [](const std::vector<std::size_t>& v, std::size_t x) {
    return std::find(v.begin(), v.end(), x) != v.end();
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j && contains(g.knn[i], j) && contains(g.knn[j], i)) {
        g.reciprocal[i].push_back(j);
        if (1.0 - dist(i, j) > 0.0) {
          g.adjacency(i, j) = 1.0 - dist(i, j);
        }
      }
    }
  }
  return g;
}

Matrix dense_smoothing(const Matrix& adjacency, const Matrix& texts) {
  const std::size_t n = adjacency.rows();
  Matrix a_tilde = adjacency;
  for (std::size_t i = 0; i < n; ++i) a_tilde(i, i) += 1.0;
  Matrix d_inv_sqrt(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += a_tilde(i, j);
    d_inv_sqrt(i, i) = 1.0 / std::sqrt(s);
  }
  return matmul(matmul(matmul(d_inv_sqrt, a_tilde), d_inv_sqrt), texts);
}

namespace {

std::size_t between(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + rng.uniform_index(hi - lo + 1);
}

void jitter(Dense& layer, Rng& rng) {
  for (double& x : layer.weight.values()) x += rng.normal(0.0, 0.3);
  for (double& x : layer.bias) x = rng.normal(0.0, 0.3);
}

double log_softmax_at(std::span<const double> logits, std::size_t k) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double x : logits) s += std::exp(x - mx);
  return logits[k] - mx - std::log(s);
}

// The objective recomputed from forward() outputs, with bootstrap targets
// frozen at their values for the unperturbed parameters.
struct Objective {
  const GradientCase& c;
  std::vector<std::optional<Vector>> targets;

  // Unweighted batch means of each term.
  LossTerms terms(const QueryNet& net) const {
    const Activations a = forward(net, c.batch.inputs);
    const std::size_t m = c.batch.inputs.rows();
    const std::size_t num_classes = net.classifier.out();
    LossTerms t;
    for (std::size_t i = 0; i < m; ++i) {
      const ClassId y = c.batch.labels[i];
      const bool sup = y >= 0;
      if (sup) t.cls -= log_softmax_at(a.class_logits.row(i), static_cast<std::size_t>(y));
      for (std::size_t d = 0; d < a.v.cols(); ++d) {
        const double e = a.recon(i, d) - a.v(i, d);
        t.prj += e * e;
      }
      if (sup) {
        t.prj -= log_softmax_at(a.aux_logits.row(i), static_cast<std::size_t>(y));
        Vector logits(num_classes);
        for (std::size_t k = 0; k < num_classes; ++k) {
          logits[k] = dot(a.z.row(i), c.bank.prototypes.row(k)) / c.config.tau;
        }
        t.pro -= log_softmax_at(logits, static_cast<std::size_t>(y));
      }
      Vector logits(c.dict.size());
      for (std::size_t j = 0; j < c.dict.size(); ++j) {
        logits[j] = dot(a.z.row(i), c.dict.at(j).key) / c.config.tau;
      }
      t.ins -= log_softmax_at(logits, c.batch.positive_slots[i]);
      if (sup && targets[i]) {
        for (std::size_t k = 0; k < num_classes; ++k) {
          const double q = a.q(i, k);
          t.bts += q * std::log(q / std::max((*targets[i])[k], 1e-12));
        }
      }
    }
    const double inv_m = 1.0 / static_cast<double>(m);
    t.cls *= inv_m;
    t.prj *= inv_m;
    t.pro *= inv_m;
    t.ins *= inv_m;
    t.bts *= inv_m;
    return t;
  }

  double staged(const QueryNet& net, Stage stage) const {
    const LossTerms t = terms(net);
    const RunConfig& cf = c.config;
    if (stage == Stage::pretrain) return t.cls + t.prj;
    if (stage == Stage::finetune) return t.cls;
    const double w_prj = cf.prj_in_train ? cf.lambda_prj : 0.0;
    return (1.0 - cf.lambda_bts) * t.cls + cf.lambda_bts * t.bts + w_prj * t.prj +
           cf.lambda_pro * t.pro + cf.lambda_ins * t.ins;
  }
};

bool same_sign_pattern(const Matrix& a, const Matrix& b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if ((a.values()[i] > 0.0) != (b.values()[i] > 0.0)) return false;
  }
  return true;
}

bool same_kinks(const Activations& a, const Activations& b) {
  return same_sign_pattern(a.hidden_pre, b.hidden_pre) &&
         same_sign_pattern(a.proj_hidden_pre, b.proj_hidden_pre) &&
         same_sign_pattern(a.rec_hidden_pre, b.rec_hidden_pre);
}

}  // namespace

GradientCase random_gradient_case(Rng& rng) {
  GradientCase c;
  ModelDims dims{between(rng, 2, 6), between(rng, 3, 8), between(rng, 2, 5), between(rng, 2, 5),
                 between(rng, 2, 5)};
  c.params = init_model(dims, rng);
  for_each_layer(c.params.query, [&](std::string_view, Dense& layer, LayerGroup) { jitter(layer, rng); });
  momentum_sync(c.params, 0.0);

  const std::size_t m = between(rng, 1, 4);
  c.batch.inputs = random_matrix(m, dims.input, rng);
  for (std::size_t i = 0; i < m; ++i) {
    const bool ood = i > 0 && rng.uniform() < 0.25;
    c.batch.labels.push_back(ood ? kOodLabel : static_cast<ClassId>(rng.uniform_index(dims.classes)));
  }

  c.config.tau = std::vector<double>{0.1, 0.3, 1.0}[rng.uniform_index(3)];
  c.config.alpha = rng.uniform();
  c.bank.prototypes = Matrix(dims.classes, dims.embed);
  for (std::size_t k = 0; k < dims.classes; ++k) {
    const Vector u = random_unit(dims.embed, rng);
    std::copy(u.begin(), u.end(), c.bank.prototypes.row(k).begin());
  }

  const std::size_t q = between(rng, std::max<std::size_t>(m, 1), 8);
  c.dict = KeyDictionary(q, dims.embed, dims.classes);
  for (std::size_t j = 0; j < q; ++j) {
    const Vector key = random_unit(dims.embed, rng);
    const Vector aux = random_distribution(dims.classes, rng);
    const Vector sim = random_distribution(dims.classes, rng);
    c.dict.push(key, aux, sim);
  }
  for (std::size_t i = 0; i < m; ++i) {
    c.batch.positive_slots.push_back(q - m + i);
  }
  return c;
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

namespace {

Objective make_objective(const GradientCase& c, const Activations& base) {
  Objective objective{c, {}};
  for (std::size_t i = 0; i < c.batch.inputs.rows(); ++i) {
    auto t = bootstrap_target(base.z.row(i), c.dict, c.config.alpha, c.config.tau);
    objective.targets.push_back(t ? std::optional<Vector>(t->target) : std::nullopt);
  }
  return objective;
}

// Central differences of f on random coordinates of every layer accepted by
// `use`, compared against `analytic`.
FdStats compare(const GradientCase& c, const QueryNet& analytic, const Activations& base,
                const std::function<double(const QueryNet&)>& f,
                const std::function<bool(LayerGroup)>& use, std::size_t per_layer, Rng& rng) {
  FdStats stats;
  const double h = 1e-5;
  QueryNet probe = c.params.query;

  // Walk the probe and the gradient layers in lockstep.
  std::vector<Dense*> probe_layers;
  std::vector<const Dense*> grad_layers;
  for_each_layer(probe, [&](std::string_view, Dense& l, LayerGroup g) {
    probe_layers.push_back(use(g) ? &l : nullptr);
  });
  for_each_layer(analytic, [&](std::string_view, const Dense& l, LayerGroup) { grad_layers.push_back(&l); });

  for (std::size_t li = 0; li < probe_layers.size(); ++li) {
    if (probe_layers[li] == nullptr) continue;
    Dense& layer = *probe_layers[li];
    const Dense& grad = *grad_layers[li];
    const std::size_t nw = layer.weight.size();
    const std::size_t total = nw + layer.bias.size();
    std::vector<std::size_t> coords(total);
    std::iota(coords.begin(), coords.end(), 0);
    rng.shuffle(std::span<std::size_t>(coords));
    coords.resize(std::min(per_layer, total));
    for (std::size_t idx : coords) {
      double& theta = idx < nw ? layer.weight.values()[idx] : layer.bias[idx - nw];
      const double expected = idx < nw ? grad.weight.values()[idx] : grad.bias[idx - nw];
      const double saved = theta;
      theta = saved + h;
      const Activations ap = forward(probe, c.batch.inputs);
      const double fp = f(probe);
      theta = saved - h;
      const Activations am = forward(probe, c.batch.inputs);
      const double fm = f(probe);
      theta = saved;
      if (!same_kinks(ap, base) || !same_kinks(am, base)) {
        ++stats.skipped_kinks;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * h);
      stats.worst = std::max(stats.worst, relative_error(expected, numeric));
      ++stats.checked;
    }
  }
  return stats;
}

void subtract(QueryNet& a, const QueryNet& b) {
  std::vector<Dense*> la;
  std::vector<const Dense*> lb;
  for_each_layer(a, [&](std::string_view, Dense& l, LayerGroup) { la.push_back(&l); });
  for_each_layer(b, [&](std::string_view, const Dense& l, LayerGroup) { lb.push_back(&l); });
  for (std::size_t i = 0; i < la.size(); ++i) {
    for (std::size_t k = 0; k < la[i]->weight.size(); ++k) {
      la[i]->weight.values()[k] -= lb[i]->weight.values()[k];
    }
    for (std::size_t k = 0; k < la[i]->bias.size(); ++k) la[i]->bias[k] -= lb[i]->bias[k];
  }
}

}  // namespace

FdStats check_gradients(const GradientCase& c, Stage stage, std::size_t per_layer, Rng& rng) {
  const LossResult base = loss_and_gradients(c.params, c.batch, &c.bank, &c.dict, c.config, stage);
  const Objective objective = make_objective(c, base.activations);
  // Fine-tuning only produces classifier gradients.
  return compare(
      c, base.gradients, base.activations,
      [&](const QueryNet& net) { return objective.staged(net, stage); },
      [&](LayerGroup g) { return stage != Stage::finetune || g == LayerGroup::classifier; },
      per_layer, rng);
}

FdStats check_term(const GradientCase& c, Term term, std::size_t per_layer, Rng& rng) {
  // The classification weight is 1 - lambda_bts, so cls and bts are isolated
  // by lambda_bts alone; the other terms are isolated as (cls + term) - cls.
  RunConfig only_cls = c.config;
  only_cls.lambda_bts = only_cls.lambda_prj = only_cls.lambda_pro = only_cls.lambda_ins = 0.0;
  only_cls.prj_in_train = true;
  only_cls.reference_provider = ReferenceProvider::collective;
  RunConfig with_term = only_cls;
  switch (term) {
    case Term::cls: break;
    case Term::prj: with_term.lambda_prj = 1.0; break;
    case Term::pro: with_term.lambda_pro = 1.0; break;
    case Term::ins: with_term.lambda_ins = 1.0; break;
    case Term::bts: with_term.lambda_bts = 1.0; break;
  }
  const LossResult full = loss_and_gradients(c.params, c.batch, &c.bank, &c.dict, with_term, Stage::train);
  QueryNet analytic = full.gradients;
  if (term == Term::prj || term == Term::pro || term == Term::ins) {
    subtract(analytic, loss_and_gradients(c.params, c.batch, &c.bank, &c.dict, only_cls, Stage::train).gradients);
  }
  const Objective objective = make_objective(c, full.activations);
  return compare(
      c, analytic, full.activations,
      [&](const QueryNet& net) {
        const LossTerms t = objective.terms(net);
        switch (term) {
          case Term::cls: return t.cls;
          case Term::prj: return t.prj;
          case Term::pro: return t.pro;
          case Term::ins: return t.ins;
          case Term::bts: return t.bts;
        }
        return 0.0;
      },
      [](LayerGroup) { return true; }, per_layer, rng);
}

}  // namespace capro::test
