#pragma once

#include <array>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "speechconf/embedding_store.hpp"
#include "speechconf/features.hpp"
#include "speechconf/neural.hpp"

namespace speechconf {

enum class Source { GroundTruth, Pseudo };

std::string_view source_name(Source s);  // ground_truth|pseudo
Source parse_source(std::string_view s);  // throws UnknownSource

enum class HybridMode { Hybrid, EmbeddingOnly, FeatureOnly };

std::string_view hybrid_mode_name(HybridMode m);  // hybrid|embedding_only|feature_only
HybridMode parse_hybrid_mode(std::string_view s);

struct HybridConfig {
  double lambda_fv = 0.3;
  double gt_boost = 18.0;
  std::array<double, 3> class_weights{1.0, 1.2, 1.0};
  double lr_embedding_stream = 2.5e-5;
  double lr_feature_stream = 1e-3;
  double weight_decay = 1e-5;
  double dropout = 0.3;
  std::vector<std::size_t> hidden{128, 64};
  std::size_t max_epochs = 60;
  std::size_t batch_size = 32;
  std::size_t patience = 10;  // epochs without a better validation macro-F1
  double val_fraction = 0.2;
  HybridMode mode = HybridMode::Hybrid;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Rows of aligned model inputs. Features are normalized with the normalizer
/// whose tag is recorded.
struct SampleSet {
  std::vector<std::string> ids;
  Matrix features;    // n x 94
  Matrix embeddings;  // n x dim
  std::vector<int> labels;
  std::vector<Source> sources;
  std::uint64_t normalizer_tag = 0;

  std::size_t size() const { return ids.size(); }
  SampleSet subset(std::span<const std::size_t> rows) const;
  /// Appends `other`; normalizer tags and embedding widths must agree.
  void append(const SampleSet& other);
};

/// Joins normalized feature vectors with their embeddings. Throws
/// NormalizerMismatch for raw or mixed normalization and MissingStore for a
/// missing embedding.
SampleSet make_sample_set(std::span<const FeatureVector> vectors, const EmbeddingStore& embeddings,
                          std::span<const int> labels, Source source);

struct HybridOutput {
  Matrix fused;
  Matrix embedding_logits;
  Matrix feature_logits;
};

/// Late fusion of a linear projection head over fixed embeddings and a gated
/// feature MLP: fused = embedding_logits + lambda * feature_logits.
class HybridModel {
 public:
  HybridModel() = default;
  HybridModel(std::size_t embedding_dim, const HybridConfig& cfg);

  HybridOutput forward(const Matrix& embeddings, const Matrix& features, nn::Mode mode);
  /// Back-propagates d(loss)/d(fused) through the last forward pass.
  void backward(const Matrix& dfused);
  void zero_grad();

  nn::Mlp& projection_head() { return head_; }
  nn::Mlp& feature_stream() { return stream_; }
  std::vector<nn::Param*> embedding_params() { return head_.parameters(); }
  std::vector<nn::Param*> feature_params() { return stream_.parameters(); }

  double lambda() const { return lambda_; }
  HybridMode mode() const { return mode_; }
  std::size_t embedding_dim() const { return head_.input_dim(); }

  // Statistics the inputs must carry. When `normalizer` is unset, `input_tag`
  // (0 = unchecked) is compared instead.
  std::optional<Normalizer> normalizer;
  std::uint64_t input_tag = 0;
  std::uint64_t expected_tag() const { return normalizer ? normalizer->tag() : input_tag; }

 private:
  friend nn::Checkpoint hybrid_checkpoint(const HybridModel& m);
  friend HybridModel hybrid_from_checkpoint(const nn::Checkpoint& c);

  nn::Mlp head_;
  nn::Mlp stream_;
  double lambda_ = 0.3;
  HybridMode mode_ = HybridMode::Hybrid;
};

/// Gated feature stream: gate, Dense-BN-GELU per hidden width, dropout, Dense to 3.
std::vector<nn::LayerSpec> feature_stream_specs(const std::vector<std::size_t>& hidden, double dropout);

/// Weighted cross-entropy with per-sample weight gt_boost for ground-truth
/// rows and 1 for pseudo rows, times the class weight of the label.
nn::LossResult source_boosted_loss(const Matrix& fused, std::span<const int> labels, std::span<const Source> sources,
                                   const HybridConfig& cfg);

struct HybridTrainResult {
  HybridModel model;
  nn::TrainHistory history;
  std::vector<std::string> train_ids;  // ground-truth and pseudo ids used for fitting
  std::vector<std::string> val_ids;
};

/// Trains on the ground-truth training part plus every pseudo row. A stratified
/// share of the ground truth is held out for model selection by macro-F1.
HybridTrainResult train_hybrid(const SampleSet& gt, const SampleSet& pseudo, const std::set<std::string>& forbidden_ids,
                               const HybridConfig& cfg);

struct Prediction {
  Matrix probs;
  std::vector<int> labels;
};

/// Eval-mode softmax of the fused logits. Rows must carry the model's normalizer tag.
Prediction predict(HybridModel& model, const SampleSet& samples);

nn::Checkpoint hybrid_checkpoint(const HybridModel& m);
HybridModel hybrid_from_checkpoint(const nn::Checkpoint& c);

}  // namespace speechconf
