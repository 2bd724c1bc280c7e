#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string_view>

#include "sckd/autodiff.hpp"
#include "sckd/data.hpp"

namespace sckd {

struct EncoderDims {
  int vocab_size = 0;
  int model_dim = 64;   // h: token representation width
  int heads = 4;
  int ffn_dim = 128;
  int hidden_dim = 64;  // d: width of the projected hidden representation
};

enum class ParamGroup { kEncoder, kProjection, kClassifier };

enum class ParamId : int {
  kTokenEmbedding,
  kQuery, kQueryBias,
  kKey, kKeyBias,
  kValue, kValueBias,
  kAttnOut, kAttnOutBias,
  kAttnNormGain, kAttnNormBias,
  kFfnIn, kFfnInBias,
  kFfnOut, kFfnOutBias,
  kFfnNormGain, kFfnNormBias,
  kProjection, kProjectionBias,
  kHiddenNormGain, kHiddenNormBias,
  kClassifier, kClassifierBias,
  kCount
};

inline constexpr int kParamCount = static_cast<int>(ParamId::kCount);

std::string_view param_name(ParamId id);
ParamGroup param_group(ParamId id);

inline constexpr Scalar kLayerNormEps = 1e-5;

/// Trainable state: one-layer bidirectional self-attention encoder, the
/// dropout + projection + layer-norm hidden head, and a growable linear
/// classifier whose rows follow observed-relation order.
///
/// All linear weights are stored out x in; vectors are 1 x n rows.
class Model {
 public:
  Model() = default;
  /// Random initialisation; the classifier starts with zero rows.
  static Model initialize(const EncoderDims& dims, Scalar dropout_ratio, Rng& rng);

  const EncoderDims& dims() const { return dims_; }
  Scalar dropout_ratio() const { return dropout_ratio_; }
  void set_dropout_ratio(Scalar p);
  int relation_count() const { return static_cast<int>(tensors_[static_cast<int>(ParamId::kClassifier)].rows()); }

  Matrix& operator[](ParamId id) { return tensors_[static_cast<int>(id)]; }
  const Matrix& operator[](ParamId id) const { return tensors_[static_cast<int>(id)]; }
  std::array<Matrix, kParamCount>& tensors() { return tensors_; }
  const std::array<Matrix, kParamCount>& tensors() const { return tensors_; }

  bool all_finite() const;
  friend bool bit_identical(const Model& a, const Model& b);

 private:
  EncoderDims dims_;
  Scalar dropout_ratio_ = 0.0;
  std::array<Matrix, kParamCount> tensors_;
};

bool bit_identical(const Model& a, const Model& b);

/// Frozen copy of a model, used as the distillation teacher.
class ModelSnapshot {
 public:
  explicit ModelSnapshot(const Model& m) : model_(std::make_shared<const Model>(m)) {}
  const Model& model() const { return *model_; }

 private:
  std::shared_ptr<const Model> model_;
};

using ModelGradients = std::array<Matrix, kParamCount>;
ModelGradients zero_gradients(const Model& m);
void add_gradients(ModelGradients& into, const ModelGradients& g);

/// Model parameters placed on a tape, as trainable leaves or as constants.
struct BoundModel {
  const Model* model = nullptr;
  std::array<ad::Var, kParamCount> params;
  ad::Var operator[](ParamId id) const { return params[static_cast<int>(id)]; }
};
BoundModel bind(ad::Tape& tape, const Model& m, bool trainable);

/// Dropout mask source. Present only in train mode.
struct DropoutSource {
  Rng* rng = nullptr;
};

struct ForwardVars {
  ad::Var features;  // 1 x 2h
  ad::Var hidden;    // 1 x d
  ad::Var logits;    // 1 x |R|
};

ad::Var encode_features(const BoundModel& m, const Sample& sample);
ad::Var project_hidden(const BoundModel& m, ad::Var features, const DropoutSource* dropout);
ad::Var classify(const BoundModel& m, ad::Var hidden);
ForwardVars forward(const BoundModel& m, const Sample& sample, const DropoutSource* dropout);

// Value-level wrappers. train_mode draws a dropout mask from `rng`.
RowVector encode_features(const Model& m, const Sample& sample);
RowVector project_hidden(const Model& m, const RowVector& features, Rng* train_rng = nullptr);
RowVector classify(const Model& m, const RowVector& hidden);

struct ForwardValues {
  RowVector features;
  RowVector hidden;
  RowVector logits;
};
/// Eval-mode forward pass.
ForwardValues forward_eval(const Model& m, const Sample& sample);

/// Appends one classifier row per new relation, drawn from N(0, 0.02^2).
void extend_classifier(Model& m, int new_relations, Rng& rng);

/// Runs backward on `loss` and collects gradients for the bound parameters.
/// Parameters off the loss path receive zeros.
ModelGradients compute_gradients(ad::Tape& tape, ad::Var loss, const BoundModel& bound);

struct LearningRates {
  Scalar encoder = 1e-5;
  Scalar projection = 1e-5;
  Scalar classifier = 1e-3;
  Scalar for_group(ParamGroup g) const;
};

struct AdamConfig {
  LearningRates lr;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar eps = 1e-8;
};

class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig config = {}) : config_(config) {}
  /// One Adam step. Moment buffers grow with the classifier.
  /// Throws TrainingError naming the first parameter with a non-finite gradient.
  void step(Model& m, const ModelGradients& grads);
  long steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  long t_ = 0;
  std::array<Matrix, kParamCount> m_;
  std::array<Matrix, kParamCount> v_;
};

/// Checkpoint: one JSON manifest line (name, shape, dtype, offset) followed by raw float64 data.
void save_checkpoint(const Model& m, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

/// Sinusoidal position table, rows 0..length-1.
Matrix positional_encoding(int length, int dim);

}  // namespace sckd
