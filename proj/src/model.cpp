#include "capro/model.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <string>

#include "capro/bootstrap.hpp"
#include "capro/errors.hpp"

namespace capro {
namespace {

Dense make_dense(std::size_t in, std::size_t out, double sd, Rng& rng) {
  Dense d{Matrix(out, in), Vector(out, 0.0)};
  for (double& w : d.weight.values()) {
    w = sd * rng.normal();
  }
  return d;
}

double he_sd(std::size_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); }
double lecun_sd(std::size_t fan_in) { return std::sqrt(1.0 / static_cast<double>(fan_in)); }

Matrix dense_forward(const Dense& layer, const Matrix& x) {
  Matrix y(x.rows(), layer.out());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto xr = x.row(r);
    auto yr = y.row(r);
    for (std::size_t o = 0; o < layer.out(); ++o) {
      yr[o] = dot(xr, layer.weight.row(o)) + layer.bias[o];
    }
  }
  return y;
}

/// Accumulates dW += dy^T x, db += sum dy and, when requested, dx += dy W.
void dense_backward(const Dense& layer, const Matrix& x, const Matrix& dy, Dense& grad,
                    Matrix* dx) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto xr = x.row(r);
    const auto dyr = dy.row(r);
    for (std::size_t o = 0; o < layer.out(); ++o) {
      const double g = dyr[o];
      if (g == 0.0) {
        continue;
      }
      grad.bias[o] += g;
      axpy(g, xr, grad.weight.row(o));
      if (dx != nullptr) {
        axpy(g, layer.weight.row(o), dx->row(r));
      }
    }
  }
}

Matrix relu(const Matrix& x) {
  Matrix y = x;
  for (double& v : y.values()) {
    v = v > 0.0 ? v : 0.0;
  }
  return y;
}

void relu_backward(const Matrix& pre, Matrix& grad) {
  auto p = pre.values();
  auto g = grad.values();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(p[i] > 0.0)) {
      g[i] = 0.0;
    }
  }
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const Vector p = softmax(logits.row(r));
    std::copy(p.begin(), p.end(), out.row(r).begin());
  }
  return out;
}

Matrix normalize_rows(const Matrix& u, Vector* norms) {
  Matrix z(u.rows(), u.cols());
  if (norms != nullptr) {
    norms->resize(u.rows());
  }
  for (std::size_t r = 0; r < u.rows(); ++r) {
    const double n = norm(u.row(r));
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw NumericError("projector produced an embedding of norm " + std::to_string(n) + " for row " + std::to_string(r));
    }
    if (norms != nullptr) {
      (*norms)[r] = n;
    }
    for (std::size_t c = 0; c < u.cols(); ++c) {
      z(r, c) = u(r, c) / n;
    }
  }
  return z;
}

struct TermWeights {
  double cls = 0.0;
  double prj = 0.0;
  double pro = 0.0;
  double ins = 0.0;
  double bts = 0.0;
};

TermWeights weights_for(const RunConfig& config, Stage stage) {
  TermWeights w;
  switch (stage) {
    case Stage::pretrain:
      w.cls = 1.0;
      w.prj = config.lambda_prj;
      break;
    case Stage::train: {
      const double bts =
          config.reference_provider == ReferenceProvider::collective ? config.lambda_bts : 0.0;
      w.cls = 1.0 - bts;
      w.bts = bts;
      w.prj = config.prj_in_train ? config.lambda_prj : 0.0;
      w.pro = config.lambda_pro;
      w.ins = config.lambda_ins;
      break;
    }
    case Stage::finetune:
      w.cls = 1.0;
      break;
  }
  return w;
}

std::string describe_batch(const TrainingBatch& batch, const LossTerms& t) {
  std::ostringstream os;
  os << "non-finite objective (cls=" << t.cls << " prj=" << t.prj << " pro=" << t.pro
     << " ins=" << t.ins << " bts=" << t.bts << ") on a batch of " << batch.inputs.rows()
     << " samples; labels:";
  for (ClassId y : batch.labels) {
    os << ' ' << y;
  }
  for (std::size_t r = 0; r < batch.inputs.rows(); ++r) {
    if (!all_finite(batch.inputs.row(r))) {
      os << "; input row " << r << " is non-finite";
    }
  }
  return os.str();
}

}  // namespace

ModelDims ModelDims::from_config(const RunConfig& config) {
  return {config.input_dim, config.hidden_dim, config.feature_dim, config.embed_dim,
          config.num_classes};
}

ModelParams init_model(const ModelDims& d, Rng& rng) {
  if (d.input == 0 || d.hidden == 0 || d.feature == 0 || d.embed == 0 || d.classes == 0) {
    throw ConfigError("init_model: all model dimensions must be positive");
  }
  ModelParams p;
  QueryNet& q = p.query;
  q.encoder_hidden = make_dense(d.input, d.hidden, he_sd(d.input), rng);
  q.encoder_out = make_dense(d.hidden, d.feature, lecun_sd(d.hidden), rng);
  q.classifier = make_dense(d.feature, d.classes, lecun_sd(d.feature), rng);
  q.projector_hidden = make_dense(d.feature, d.embed, he_sd(d.feature), rng);
  q.projector_out = make_dense(d.embed, d.embed, lecun_sd(d.embed), rng);
  q.reconstructor_hidden = make_dense(d.embed, d.embed, he_sd(d.embed), rng);
  q.reconstructor_out = make_dense(d.embed, d.feature, lecun_sd(d.embed), rng);
  q.aux_classifier = make_dense(d.embed, d.classes, lecun_sd(d.embed), rng);
  p.key = {q.encoder_hidden, q.encoder_out, q.projector_hidden, q.projector_out};
  return p;
}

QueryNet zeros_like(const QueryNet& like) {
  QueryNet out = like;
  for_each_layer(out, [](std::string_view, Dense& layer, LayerGroup) {
    std::fill(layer.weight.values().begin(), layer.weight.values().end(), 0.0);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  });
  return out;
}

Activations forward(const QueryNet& net, const Matrix& inputs) {
  if (inputs.cols() != net.encoder_hidden.in()) {
    throw DataError("forward: input dimension " + std::to_string(inputs.cols()) +
                    " does not match the encoder (" + std::to_string(net.encoder_hidden.in()) +
                    ")");
  }
  if (!all_finite(inputs.values())) throw NumericError("forward: non-finite input");
  Activations a;
  a.hidden_pre = dense_forward(net.encoder_hidden, inputs);
  a.hidden = relu(a.hidden_pre);
  a.v = dense_forward(net.encoder_out, a.hidden);
  a.class_logits = dense_forward(net.classifier, a.v);
  a.p = softmax_rows(a.class_logits);
  a.proj_hidden_pre = dense_forward(net.projector_hidden, a.v);
  a.proj_hidden = relu(a.proj_hidden_pre);
  a.u = dense_forward(net.projector_out, a.proj_hidden);
  a.z = normalize_rows(a.u, &a.u_norm);
  a.rec_hidden_pre = dense_forward(net.reconstructor_hidden, a.z);
  a.rec_hidden = relu(a.rec_hidden_pre);
  a.recon = dense_forward(net.reconstructor_out, a.rec_hidden);
  a.aux_logits = dense_forward(net.aux_classifier, a.z);
  a.q = softmax_rows(a.aux_logits);
  return a;
}

Matrix key_embed(const KeyNet& net, const Matrix& inputs) {
  const Matrix v = dense_forward(net.encoder_out, relu(dense_forward(net.encoder_hidden, inputs)));
  const Matrix u = dense_forward(net.projector_out, relu(dense_forward(net.projector_hidden, v)));
  return normalize_rows(u, nullptr);
}

Matrix aux_predict(const QueryNet& net, const Matrix& embeddings) {
  return softmax_rows(dense_forward(net.aux_classifier, embeddings));
}

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::pretrain:
      return "pretrain";
    case Stage::train:
      return "train";
    case Stage::finetune:
      return "finetune";
  }
  return "pretrain";
}

Matrix augment(const Matrix& inputs, double noise_sd, double mask_fraction, Rng& rng) {
  Matrix out = inputs;
  for (double& x : out.values()) {
    if (mask_fraction > 0.0 && rng.uniform() < mask_fraction) {
      x = 0.0;
    }
    if (noise_sd > 0.0) {
      x += noise_sd * rng.normal();
    }
  }
  return out;
}

LossResult loss_and_gradients(const ModelParams& params, const TrainingBatch& batch,
                              const PrototypeBank* bank, const KeyDictionary* dict,
                              const RunConfig& config, Stage stage) {
  const QueryNet& net = params.query;
  const std::size_t m = batch.inputs.rows();
  const std::size_t num_classes = net.classifier.out();
  if (m == 0 || batch.labels.size() != m) {
    throw DataError("loss_and_gradients: batch is empty or labels do not match inputs");
  }
  const TermWeights w = weights_for(config, stage);
  if (w.pro > 0.0 && bank == nullptr) {
    throw DataError("loss_and_gradients: prototype term requires a prototype bank");
  }
  const bool use_dict = (w.ins > 0.0 || w.bts > 0.0) && dict != nullptr && !dict->empty();
  if (w.ins > 0.0 && use_dict && batch.positive_slots.size() != m) {
    throw DataError("loss_and_gradients: instance term requires one positive key per sample");
  }

  LossResult res;
  res.activations = forward(net, batch.inputs);
  const Activations& a = res.activations;
  res.gradients = zeros_like(net);
  QueryNet& g = res.gradients;
  const double inv_m = 1.0 / static_cast<double>(m);
  const std::size_t dv = net.encoder_out.out();
  const std::size_t dp = net.projector_out.out();

  Matrix d_class(m, num_classes);
  Matrix d_aux(m, num_classes);
  Matrix d_z(m, dp);
  Matrix d_recon(m, dv);
  Matrix d_v(m, dv);
  LossTerms& t = res.terms;

  for (std::size_t i = 0; i < m; ++i) {
    const ClassId y = batch.labels[i];
    const bool supervised = is_class(y, num_classes);
    if (!supervised && y != kOodLabel) {
      throw DataError("loss_and_gradients: label " + std::to_string(y) + " out of range");
    }
    const std::size_t yi = supervised ? static_cast<std::size_t>(y) : 0;

    if (w.cls > 0.0 && supervised) {
      t.cls -= log_softmax(a.class_logits.row(i))[yi];
      for (std::size_t c = 0; c < num_classes; ++c) {
        d_class(i, c) = w.cls * inv_m * (a.p(i, c) - (c == yi ? 1.0 : 0.0));
      }
    }
    if (w.prj > 0.0) {
      for (std::size_t d = 0; d < dv; ++d) {
        const double e = a.recon(i, d) - a.v(i, d);
        t.prj += e * e;
        d_recon(i, d) += 2.0 * w.prj * inv_m * e;
        d_v(i, d) -= 2.0 * w.prj * inv_m * e;
      }
      if (supervised) {
        t.prj -= log_softmax(a.aux_logits.row(i))[yi];
        for (std::size_t c = 0; c < num_classes; ++c) {
          d_aux(i, c) += w.prj * inv_m * (a.q(i, c) - (c == yi ? 1.0 : 0.0));
        }
      }
    }
    if (w.pro > 0.0 && supervised) {
      const LossGrad lg = proto_loss(a.z.row(i), *bank, yi, config.tau);
      t.pro += lg.loss;
      axpy(w.pro * inv_m, lg.grad, d_z.row(i));
    }
    if (w.ins > 0.0 && use_dict) {
      const LossGrad lg = instance_loss(a.z.row(i), *dict, batch.positive_slots[i], config.tau);
      t.ins += lg.loss;
      axpy(w.ins * inv_m, lg.grad, d_z.row(i));
    }
    if (w.bts > 0.0 && use_dict && supervised) {
      if (auto target = bootstrap_target(a.z.row(i), *dict, config.alpha, config.tau)) {
        const LossGrad lg = kl_loss(a.q.row(i), target->target);
        t.bts += lg.loss;
        axpy(w.bts * inv_m, lg.grad, d_aux.row(i));
      }
    }
  }
  t.cls *= inv_m;
  t.prj *= inv_m;
  t.pro *= inv_m;
  t.ins *= inv_m;
  t.bts *= inv_m;
  t.total = w.cls * t.cls + w.prj * t.prj + w.pro * t.pro + w.ins * t.ins + w.bts * t.bts;
  if (!std::isfinite(t.total)) {
    throw NumericError(describe_batch(batch, t));
  }

  if (stage == Stage::finetune) {
    dense_backward(net.classifier, a.v, d_class, g.classifier, nullptr);
    return res;
  }

  dense_backward(net.aux_classifier, a.z, d_aux, g.aux_classifier, &d_z);
  Matrix d_rec_hidden(m, net.reconstructor_out.in());
  dense_backward(net.reconstructor_out, a.rec_hidden, d_recon, g.reconstructor_out, &d_rec_hidden);
  relu_backward(a.rec_hidden_pre, d_rec_hidden);
  dense_backward(net.reconstructor_hidden, a.z, d_rec_hidden, g.reconstructor_hidden, &d_z);

  // Through z = u / |u|: du = (dz - z (z . dz)) / |u|.
  Matrix d_u(m, dp);
  for (std::size_t i = 0; i < m; ++i) {
    const double proj = dot(a.z.row(i), d_z.row(i));
    for (std::size_t d = 0; d < dp; ++d) {
      d_u(i, d) = (d_z(i, d) - a.z(i, d) * proj) / a.u_norm[i];
    }
  }
  Matrix d_proj_hidden(m, net.projector_out.in());
  dense_backward(net.projector_out, a.proj_hidden, d_u, g.projector_out, &d_proj_hidden);
  relu_backward(a.proj_hidden_pre, d_proj_hidden);
  dense_backward(net.projector_hidden, a.v, d_proj_hidden, g.projector_hidden, &d_v);
  dense_backward(net.classifier, a.v, d_class, g.classifier, &d_v);

  Matrix d_hidden(m, net.encoder_out.in());
  dense_backward(net.encoder_out, a.hidden, d_v, g.encoder_out, &d_hidden);
  relu_backward(a.hidden_pre, d_hidden);
  dense_backward(net.encoder_hidden, batch.inputs, d_hidden, g.encoder_hidden, nullptr);
  return res;
}

bool Trainable::allows(LayerGroup g) const {
  switch (g) {
    case LayerGroup::encoder:
      return encoder;
    case LayerGroup::classifier:
      return classifier;
    case LayerGroup::projector:
      return projector;
    case LayerGroup::reconstructor:
      return reconstructor;
    case LayerGroup::aux:
      return aux;
  }
  return false;
}

SgdOptimizer::SgdOptimizer(const QueryNet& like, double momentum, double weight_decay)
    : velocity_(zeros_like(like)), momentum_(momentum), weight_decay_(weight_decay) {}

void SgdOptimizer::step(QueryNet& params, const QueryNet& gradients, double lr,
                        Trainable trainable) {
  // Visit the three nets in lockstep; member order is identical.
  std::vector<Dense*> param_layers;
  std::vector<LayerGroup> groups;
  for_each_layer(params, [&](std::string_view, Dense& layer, LayerGroup group) {
    param_layers.push_back(&layer);
    groups.push_back(group);
  });
  std::vector<Dense*> velocity_layers;
  for_each_layer(velocity_, [&](std::string_view, Dense& layer, LayerGroup) {
    velocity_layers.push_back(&layer);
  });
  std::vector<const Dense*> grad_layers;
  for_each_layer(gradients, [&](std::string_view, const Dense& layer, LayerGroup) {
    grad_layers.push_back(&layer);
  });

  auto update = [&](std::span<double> theta, std::span<double> vel, std::span<const double> grad) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
      vel[i] = momentum_ * vel[i] + (grad[i] + weight_decay_ * theta[i]);
      theta[i] -= lr * vel[i];
    }
  };
  for (std::size_t l = 0; l < param_layers.size(); ++l) {
    if (!trainable.allows(groups[l])) {
      continue;
    }
    update(param_layers[l]->weight.values(), velocity_layers[l]->weight.values(),
           grad_layers[l]->weight.values());
    update(param_layers[l]->bias, velocity_layers[l]->bias, grad_layers[l]->bias);
  }
}

double lr_at(std::size_t epoch, std::size_t step, std::size_t steps_per_epoch,
             const Schedule& schedule) {
  const double t = static_cast<double>(epoch) +
                   static_cast<double>(step) / static_cast<double>(std::max<std::size_t>(1, steps_per_epoch));
  const double warmup = static_cast<double>(schedule.warmup_epochs);
  if (t < warmup) {
    return schedule.base_lr * t / warmup;
  }
  const double span = static_cast<double>(schedule.epochs) - warmup;
  if (span <= 0.0) {
    return schedule.base_lr;
  }
  const double progress = std::clamp((t - warmup) / span, 0.0, 1.0);
  return schedule.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void momentum_sync(ModelParams& params, double momentum) {
  auto blend = [momentum](Dense& key, const Dense& query) {
    auto kw = key.weight.values();
    auto qw = query.weight.values();
    for (std::size_t i = 0; i < kw.size(); ++i) {
      kw[i] = momentum * kw[i] + (1.0 - momentum) * qw[i];
    }
    for (std::size_t i = 0; i < key.bias.size(); ++i) {
      key.bias[i] = momentum * key.bias[i] + (1.0 - momentum) * query.bias[i];
    }
  };
  blend(params.key.encoder_hidden, params.query.encoder_hidden);
  blend(params.key.encoder_out, params.query.encoder_out);
  blend(params.key.projector_hidden, params.query.projector_hidden);
  blend(params.key.projector_out, params.query.projector_out);
}

}  // namespace capro
