#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "speechconf/annotation.hpp"
#include "speechconf/embedding_store.hpp"
#include "speechconf/features.hpp"

namespace speechconf::synthetic {

struct SimulatedRatings {
  RaterMatrix matrix;
  std::vector<int> truth;  // per clip
};

/// Clips with true classes drawn from `class_probs`, rated by one simulated
/// rater per entry of `accuracies`. Each rater labels exactly
/// round(accuracy * n_c) clips of every true class c correctly; errors split
/// evenly over the two other classes. The empirical accuracy of every rater
/// therefore equals its generating value up to rounding.
SimulatedRatings simulate_ratings(std::size_t n_clips, const std::vector<double>& accuracies,
                                  const std::vector<double>& class_probs, std::uint64_t seed);

/// Settings of the two-stream corpus generator. Classes are ordinal: every
/// informative feature moves with (label - 1).
struct CorpusConfig {
  std::size_t n_gt = 300;
  std::size_t n_pool = 3000;
  std::size_t embedding_dim = 16;
  std::array<double, 3> class_probs{0.15, 0.35, 0.5};
  // Share of clips whose embedding points at the true class; the rest point
  // at an adjacent class.
  double embedding_accuracy = 0.8;
  double embedding_scale = 200.0;  // distance of the class centres from the origin
  double feature_signal = 2.0;     // multiplies every informative feature shift
  // Share of clips (annotated and pool alike) whose features sit halfway to
  // an adjacent class. A labeller trained on such data is unsure about them
  // and labels them wrong about half the time.
  double ambiguous_fraction = 0.3;
  std::uint64_t seed = 0;
};

struct Corpus {
  std::vector<FeatureVector> gt_features;  // raw
  std::vector<int> gt_labels;
  std::vector<FeatureVector> pool_features;  // raw
  std::vector<int> pool_truth;
  std::vector<bool> pool_ambiguous;
  std::vector<bool> gt_embedding_wrong;
  EmbeddingStore embeddings;  // gt and pool ids
};

/// Feature with the strongest class signal (jitterLocal_mean).
std::size_t dominant_feature();
/// A feature that carries no class information.
std::size_t irrelevant_feature();

/// Ground-truth ids are gt0000.., pool ids pool00000...
Corpus make_corpus(const CorpusConfig& cfg);

}  // namespace speechconf::synthetic
