#pragma once

#include <array>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "speechconf/calibration.hpp"
#include "speechconf/features.hpp"
#include "speechconf/neural.hpp"

namespace speechconf {

struct LabellerConfig {
  std::vector<std::size_t> hidden{128, 64};
  double dropout = 0.3;
  double lr = 1e-3;
  std::size_t internal_folds = 5;  // 0 or 1 skips the internal report
  std::size_t patience = 10;       // on validation loss
  std::size_t max_epochs = 100;
  std::size_t batch_size = 32;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LabellerReport {
  std::vector<double> fold_macro_f1;
  double macro_f1 = 0.0;             // mean over internal folds
  std::array<double, 3> class_f1{};  // mean over internal folds
  std::size_t best_epoch = 0;        // of the final model
};

struct Labeller {
  nn::Mlp model;
  Normalizer normalizer;
  CalibrationModel calibration;
  LabellerReport report;
  std::vector<std::string> train_ids;  // every id the labeller saw, sorted

  /// Class probabilities for normalized vectors, temperature-scaled when `calibrated`.
  Matrix probabilities(std::span<const FeatureVector> vectors, bool calibrated);
};

/// Trains the feature-only MLP on normalized ground-truth vectors. Any id in
/// `forbidden_ids` (the held-out test fold) raises LeakageDetected. Vectors
/// must carry `normalizer`'s tag. The final model is early-stopped on a
/// stratified validation split, which also fits the labeller's temperature.
Labeller train_labeller(std::span<const FeatureVector> gt, std::span<const int> labels,
                        const std::set<std::string>& forbidden_ids, const Normalizer& normalizer,
                        const LabellerConfig& cfg);

nn::Checkpoint labeller_checkpoint(const Labeller& l);
Labeller labeller_from_checkpoint(const nn::Checkpoint& c);
/// SHA-256 of the encoded checkpoint.
std::string labeller_hash(const Labeller& l);

struct PseudoLabelConfig {
  double tau = 0.8;
  bool calibrate_before_filter = true;

  void validate() const;
};

struct PseudoSample {
  std::string clip_id;
  int label = 0;
  double max_prob = 0.0;
  int fold = 0;
};

struct PseudoSet {
  std::vector<PseudoSample> samples;
  std::string provenance;  // labeller checkpoint hash
  std::size_t pool_size = 0;
  std::size_t retained = 0;
  double tau = 0.0;
  int fold = 0;

  std::array<std::size_t, 3> class_histogram() const;
  std::vector<std::string> ids() const;
  std::vector<int> labels() const;
};

/// Keeps rows whose max probability is >= tau, labelled with the argmax.
PseudoSet filter_by_confidence(std::span<const std::string> ids, const Matrix& probs, double tau, int fold);

/// Scores the pool and filters it. The pool must be disjoint from
/// `ground_truth_ids` (PoolOverlapsGroundTruth) and normalized with the
/// labeller's normalizer (NormalizerMismatch).
PseudoSet generate_pseudo_labels(Labeller& labeller, std::span<const FeatureVector> pool,
                                 const std::set<std::string>& ground_truth_ids, const PseudoLabelConfig& cfg,
                                 int fold);

/// Inverse-frequency sampler weights over the retained labels. Warns for
/// classes with no retained sample.
nn::SamplerConfig pseudo_class_balance(const PseudoSet& pseudo, std::uint64_t seed = 0);

/// CSV clip_id,label,max_prob,fold plus `<path>.json` with provenance.
void write_pseudo_set(const std::filesystem::path& csv_path, const PseudoSet& s);
PseudoSet read_pseudo_set(const std::filesystem::path& csv_path);

}  // namespace speechconf
