#pragma once

#include <concepts>
#include <cstddef>
#include <type_traits>
#include <string_view>
#include <vector>

#include "capro/config.hpp"
#include "capro/linalg.hpp"
#include "capro/proto.hpp"
#include "capro/rng.hpp"
#include "capro/types.hpp"

namespace capro {

/// Affine layer y = W x + b, W stored out x in.
struct Dense {
  Matrix weight;
  Vector bias;

  std::size_t in() const { return weight.cols(); }
  std::size_t out() const { return weight.rows(); }
  bool operator==(const Dense&) const = default;
};

enum class LayerGroup { encoder, classifier, projector, reconstructor, aux };

/// Query-side network: encoder -> v, classifier -> p, projector -> z,
/// reconstructor -> v~, auxiliary classifier -> q.
struct QueryNet {
  Dense encoder_hidden;        // d_x -> h, ReLU
  Dense encoder_out;           // h -> d_v
  Dense classifier;            // d_v -> C
  Dense projector_hidden;      // d_v -> d_p, ReLU
  Dense projector_out;         // d_p -> d_p, then l2-normalized
  Dense reconstructor_hidden;  // d_p -> d_p, ReLU
  Dense reconstructor_out;     // d_p -> d_v
  Dense aux_classifier;        // d_p -> C

  bool operator==(const QueryNet&) const = default;
};

/// Momentum copy of the encoder and projector that produces dictionary keys.
struct KeyNet {
  Dense encoder_hidden;
  Dense encoder_out;
  Dense projector_hidden;
  Dense projector_out;

  bool operator==(const KeyNet&) const = default;
};

struct ModelParams {
  QueryNet query;
  KeyNet key;

  bool operator==(const ModelParams&) const = default;
};

template <class Net, class F>
  requires std::same_as<std::remove_const_t<Net>, QueryNet>
void for_each_layer(Net& net, F&& f) {
  f(std::string_view("encoder_hidden"), net.encoder_hidden, LayerGroup::encoder);
  f(std::string_view("encoder_out"), net.encoder_out, LayerGroup::encoder);
  f(std::string_view("classifier"), net.classifier, LayerGroup::classifier);
  f(std::string_view("projector_hidden"), net.projector_hidden, LayerGroup::projector);
  f(std::string_view("projector_out"), net.projector_out, LayerGroup::projector);
  f(std::string_view("reconstructor_hidden"), net.reconstructor_hidden, LayerGroup::reconstructor);
  f(std::string_view("reconstructor_out"), net.reconstructor_out, LayerGroup::reconstructor);
  f(std::string_view("aux_classifier"), net.aux_classifier, LayerGroup::aux);
}

template <class Net, class F>
  requires std::same_as<std::remove_const_t<Net>, KeyNet>
void for_each_layer(Net& net, F&& f) {
  f(std::string_view("encoder_hidden"), net.encoder_hidden, LayerGroup::encoder);
  f(std::string_view("encoder_out"), net.encoder_out, LayerGroup::encoder);
  f(std::string_view("projector_hidden"), net.projector_hidden, LayerGroup::projector);
  f(std::string_view("projector_out"), net.projector_out, LayerGroup::projector);
}

struct ModelDims {
  std::size_t input = 0;
  std::size_t hidden = 0;
  std::size_t feature = 0;
  std::size_t embed = 0;
  std::size_t classes = 0;

  static ModelDims from_config(const RunConfig& config);
};

/// He-normal weights for ReLU-fed layers, 1/sqrt(fan_in) otherwise; zero
/// biases. The key network starts as an exact copy.
ModelParams init_model(const ModelDims& dims, Rng& rng);

/// Zero tensors shaped like `like`.
QueryNet zeros_like(const QueryNet& like);

/// All intermediate values of one batched forward pass.
struct Activations {
  Matrix hidden_pre;       // encoder hidden, before ReLU
  Matrix hidden;
  Matrix v;
  Matrix class_logits;
  Matrix p;
  Matrix proj_hidden_pre;
  Matrix proj_hidden;
  Matrix u;                // projector output before normalization
  Vector u_norm;
  Matrix z;
  Matrix rec_hidden_pre;
  Matrix rec_hidden;
  Matrix recon;            // v~
  Matrix aux_logits;
  Matrix q;
};

Activations forward(const QueryNet& net, const Matrix& inputs);

/// Unit-norm key embeddings from the momentum network.
Matrix key_embed(const KeyNet& net, const Matrix& inputs);

/// Softmax of the auxiliary classifier applied to given embeddings.
Matrix aux_predict(const QueryNet& net, const Matrix& embeddings);

enum class Stage { pretrain, train, finetune };
std::string_view to_string(Stage s);

/// Gaussian noise plus random coordinate masking.
Matrix augment(const Matrix& inputs, double noise_sd, double mask_fraction, Rng& rng);

struct TrainingBatch {
  Matrix inputs;
  /// Current labels; kOodLabel drops the supervised terms for that sample.
  std::vector<ClassId> labels;
  /// FIFO position of each sample's own key view in the dictionary.
  std::vector<std::size_t> positive_slots;
};

/// Batch-mean values of each objective term, before weighting.
struct LossTerms {
  double total = 0.0;
  double cls = 0.0;
  double prj = 0.0;
  double pro = 0.0;
  double ins = 0.0;
  double bts = 0.0;

  bool operator==(const LossTerms&) const = default;
};

struct LossResult {
  LossTerms terms;
  QueryNet gradients;
  Activations activations;
};

/// Objective and analytic gradients for one batch.
///   pretrain: cls + prj
///   train:    (1 - l_bts) cls + l_bts bts + l_prj prj + l_pro pro + l_ins ins
///   finetune: cls, classifier gradients only
/// Prototypes, dictionary keys and bootstrap targets are constants.
/// Throws NumericError on a non-finite objective.
LossResult loss_and_gradients(const ModelParams& params, const TrainingBatch& batch,
                              const PrototypeBank* bank, const KeyDictionary* dict,
                              const RunConfig& config, Stage stage);

/// Which layer groups an optimizer step may touch.
struct Trainable {
  bool encoder = true;
  bool classifier = true;
  bool projector = true;
  bool reconstructor = true;
  bool aux = true;

  bool allows(LayerGroup g) const;
  static Trainable all() { return {}; }
  static Trainable heads_only() { return {false, true, true, true, true}; }
  static Trainable classifier_only() { return {false, true, false, false, false}; }
};

/// SGD with classical momentum; weight decay enters the gradient as an L2
/// term: vel = mu vel + (g + wd theta); theta -= lr vel.
class SgdOptimizer {
 public:
  SgdOptimizer(const QueryNet& like, double momentum, double weight_decay);

  void step(QueryNet& params, const QueryNet& gradients, double lr,
            Trainable trainable = Trainable::all());

 private:
  QueryNet velocity_;
  double momentum_;
  double weight_decay_;
};

/// Linear warm-up from 0 to base over the warm-up epochs, then half-cosine
/// decay reaching 0 at the end of the last epoch.
double lr_at(std::size_t epoch, std::size_t step, std::size_t steps_per_epoch,
             const Schedule& schedule);

/// key <- m key + (1 - m) query, elementwise.
void momentum_sync(ModelParams& params, double momentum);

}  // namespace capro
