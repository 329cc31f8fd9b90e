#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "speechconf/features.hpp"
#include "speechconf/matrix.hpp"
#include "speechconf/rng.hpp"

namespace speechconf::nn {

enum class LayerKind { Dense, BatchNorm, Gelu, Relu, Dropout, SigmoidGate, Softmax };

std::string_view layer_kind_name(LayerKind k);
LayerKind parse_layer_kind(std::string_view s);

struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  double p = 0.0;  // dropout probability

  static LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::Dense, in, out, 0.0}; }
  static LayerSpec batch_norm(std::size_t d) { return {LayerKind::BatchNorm, d, d, 0.0}; }
  static LayerSpec gelu(std::size_t d) { return {LayerKind::Gelu, d, d, 0.0}; }
  static LayerSpec relu(std::size_t d) { return {LayerKind::Relu, d, d, 0.0}; }
  static LayerSpec dropout(std::size_t d, double p) { return {LayerKind::Dropout, d, d, p}; }
  static LayerSpec sigmoid_gate(std::size_t d) { return {LayerKind::SigmoidGate, d, d, 0.0}; }
  static LayerSpec softmax(std::size_t d) { return {LayerKind::Softmax, d, d, 0.0}; }
};

inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEps = 1e-5;

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
};

enum class Mode { Train, Eval };

struct Layer {
  LayerSpec spec;
  std::vector<Param> params;  // dense: W (in x out), b (1 x out); batch norm: gamma, beta; gate: g (1 x d)
  Matrix running_mean, running_var;  // batch norm only

  // Forward caches for backward.
  Matrix input, output, aux;
  std::vector<double> inv_std;
  Mode cached_mode = Mode::Eval;
};

/// Sequential network of the layer kinds above.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<LayerSpec> specs, std::uint64_t seed);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::uint64_t seed() const { return seed_; }

  /// Forward pass. Train mode uses batch statistics and draws dropout masks
  /// from the model's RNG; eval mode is deterministic.
  Matrix forward(const Matrix& x, Mode mode);
  /// Back-propagates d(loss)/d(output) through the last forward pass,
  /// accumulating parameter gradients. Returns d(loss)/d(input).
  Matrix backward(const Matrix& dout);

  void zero_grad();
  std::vector<Param*> parameters();
  std::size_t parameter_count() const;

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<LayerSpec> specs() const;
  Rng& rng() { return rng_; }

 private:
  std::vector<Layer> layers_;
  std::uint64_t seed_ = 0;
  Rng rng_{0};
};

/// Layer sequence Dense-ReLU-Dropout per hidden width, then Dense to `classes`.
std::vector<LayerSpec> relu_mlp_specs(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t classes,
                                      double dropout);

struct LossResult {
  double loss = 0.0;
  Matrix dlogits;
};

/// Softmax cross-entropy with weighted-mean reduction:
/// sum_i w_i * omega_{y_i} * CE_i / sum_i w_i * omega_{y_i}.
/// Empty weight spans mean all ones.
LossResult cross_entropy(const Matrix& logits, std::span<const int> labels, std::span<const double> sample_weights = {},
                         std::span<const double> class_weights = {});

enum class OptimizerKind { Adam, AdamW };

struct ParamGroup {
  std::vector<Param*> params;
  double lr = 1e-3;
  double weight_decay = 0.0;
};

/// Adam / AdamW with bias correction. Adam adds weight_decay * theta to the
/// gradient; AdamW decays parameters directly by lr * weight_decay * theta.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, std::vector<ParamGroup> groups, double beta1 = 0.9, double beta2 = 0.999,
            double eps = 1e-8);

  void step();
  std::size_t step_count() const { return t_; }
  std::vector<ParamGroup>& groups() { return groups_; }

 private:
  OptimizerKind kind_;
  std::vector<ParamGroup> groups_;
  double beta1_, beta2_, eps_;
  std::vector<std::vector<Matrix>> m_, v_;
  std::size_t t_ = 0;
};

struct CosineSchedule {
  double lr_max = 1e-3;
  std::size_t total_steps = 1;
  double lr_min = 0.0;
};

double cosine_lr(const CosineSchedule& s, std::size_t step);

struct SamplerConfig {
  std::map<int, std::size_t> class_counts;
  std::uint64_t seed = 0;

  static SamplerConfig from_labels(std::span<const int> labels, std::uint64_t seed = 0);
  double weight_of(int label) const;  // 1 / count
};

/// I.i.d. draws with replacement, P(i) proportional to 1 / count(label_i).
std::vector<std::size_t> weighted_sample(const SamplerConfig& cfg, std::span<const int> labels, std::size_t n_draws);

/// Max over parameters of |analytic - numeric| / max(|analytic|, |numeric|, 1e-3),
/// numeric gradients by central differences. `loss` evaluates the scalar
/// loss; `analytic` zeroes and fills Param::grad.
double grad_check(const std::vector<Param*>& params, const std::function<double()>& loss,
                  const std::function<void()>& analytic, double h = 1e-5);

/// Convenience: eval-mode model with softmax cross-entropy.
double grad_check(Mlp& model, const Matrix& x, std::span<const int> labels, std::span<const double> sample_weights = {},
                  std::span<const double> class_weights = {}, double h = 1e-5);

enum class StopMetric { ValLoss, ValMacroF1 };

struct EarlyStopConfig {
  StopMetric metric = StopMetric::ValLoss;
  std::size_t patience = 10;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_macro_f1 = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  bool stopped_early = false;
};

struct ValidationResult {
  double loss = 0.0;
  double macro_f1 = 0.0;
};

struct LoopCallbacks {
  std::function<double(std::size_t epoch)> train_epoch;  // mean training loss
  std::function<ValidationResult()> validate;
  std::function<void()> save_best;
  std::function<void()> restore_best;
};

/// Runs up to `max_epochs`, tracking the best epoch by the chosen metric and
/// stopping after `patience` epochs without strict improvement. Restores the
/// best snapshot before returning.
TrainHistory train_loop(std::size_t max_epochs, const EarlyStopConfig& stop, const LoopCallbacks& cb);

/// Dataset view for classifier training.
struct LabelledMatrix {
  Matrix x;
  std::vector<int> y;
};

struct ClassifierTrainConfig {
  std::size_t max_epochs = 100;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.0;
  OptimizerKind optimizer = OptimizerKind::Adam;
  EarlyStopConfig early_stop{};
  bool weighted_sampling = true;
  std::uint64_t seed = 0;
};

/// Mini-batch training of a single MLP with softmax cross-entropy. One epoch
/// draws as many samples as the training set holds (weighted sampler when
/// enabled, otherwise a seeded permutation).
TrainHistory fit_classifier(Mlp& model, const LabelledMatrix& train, const LabelledMatrix& val,
                            const ClassifierTrainConfig& cfg);

/// Softmax probabilities in eval mode.
Matrix predict_proba(Mlp& model, const Matrix& x);
/// Eval-mode logits.
Matrix predict_logits(Mlp& model, const Matrix& x);

// ---- checkpoints ------------------------------------------------------------

struct NamedModel {
  std::string name;
  Mlp model;
};

struct Checkpoint {
  std::vector<NamedModel> models;
  std::optional<Normalizer> normalizer;
  std::string extra_json = "{}";  // caller-defined metadata object
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Binary: "CSNN", u16 version, u32 metadata length, JSON metadata (layer
/// specs, seeds, normalizer reference), then per model and layer the
/// parameters and batch-norm running statistics as little-endian f64.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace speechconf::nn
