#include "speechconf/synthetic.hpp"

#include <cmath>
#include <cstdio>

#include "speechconf/error.hpp"
#include "speechconf/rng.hpp"

namespace speechconf::synthetic {

namespace {

std::string numbered(const char* prefix, std::size_t i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i);
  return buf;
}

int draw_class(Rng& rng, const std::vector<double>& probs) {
  double u = rng.uniform();
  for (std::size_t c = 0; c + 1 < probs.size(); ++c) {
    if (u < probs[c]) return static_cast<int>(c);
    u -= probs[c];
  }
  return static_cast<int>(probs.size() - 1);
}

}  // namespace

SimulatedRatings simulate_ratings(std::size_t n_clips, const std::vector<double>& accuracies,
                                  const std::vector<double>& class_probs, std::uint64_t seed) {
  if (class_probs.size() != kNumClasses) throw Error(Errc::InvalidArgument, "need 3 class probabilities");
  Rng rng(seed);
  SimulatedRatings out;
  out.matrix.clips.reserve(n_clips);
  for (std::size_t i = 0; i < n_clips; ++i) {
    out.matrix.clips.push_back(numbered("clip", i, 4));
    out.truth.push_back(draw_class(rng, class_probs));
  }
  for (std::size_t r = 0; r < accuracies.size(); ++r) out.matrix.raters.push_back(numbered("r", r, 2));
  out.matrix.cells.assign(n_clips * accuracies.size(), RaterMatrix::kMissingCell);

  for (std::size_t r = 0; r < accuracies.size(); ++r) {
    for (int c = 0; c < static_cast<int>(kNumClasses); ++c) {
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < n_clips; ++i) {
        if (out.truth[i] == c) members.push_back(i);
      }
      rng.shuffle(members);
      const auto n_correct = static_cast<std::size_t>(std::llround(accuracies[r] * static_cast<double>(members.size())));
      for (std::size_t j = 0; j < members.size(); ++j) {
        int label = c;
        if (j >= n_correct) {
          // Alternate between the two wrong classes.
          const int offset = 1 + static_cast<int>((j - n_correct) % 2);
          label = (c + offset) % static_cast<int>(kNumClasses);
        }
        out.matrix.at(members[j], r) = label;
      }
    }
  }
  return out;
}

}  // namespace speechconf::synthetic

namespace speechconf::synthetic {

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::size_t slot(const char* name) {
  const auto i = FeatureLayout::egemaps_lite_88().index_of(name);
  if (i >= kProsodicDim) throw Error(Errc::UnfilledSlot, std::string("layout has no slot ") + name);
  return i;
}

struct Informative {
  std::size_t index;
  double shift;  // per ordinal step, in noise standard deviations
};

const std::vector<Informative>& informative() {
  static const std::vector<Informative> v = {
      {slot("jitterLocal_mean"), 2.0},
      {slot("shimmerLocal_mean"), 0.8},
      {slot("F0semitoneFrom27.5Hz_mean"), 0.6},
      {slot("loudness_mean"), 0.4},
      {slot("hnr_voiced_mean"), -0.5},
  };
  return v;
}

int adjacent_class(Rng& rng, int y) {
  if (y == 0) return 1;
  if (y == 2) return 1;
  return rng.uniform() < 0.5 ? 0 : 2;
}

/// Raw feature vector for ordinal position `code` (label - 1, possibly
/// fractional).
FeatureVector draw_features(Rng& rng, std::string id, double code, double signal) {
  FeatureVector fv;
  fv.id = std::move(id);
  for (auto& v : fv.prosodic) v = rng.normal();
  for (const auto& inf : informative()) fv.prosodic[inf.index] += signal * inf.shift * code;
  for (auto& p : fv.disfluency_probs) p = logistic(0.4 * signal * code + rng.normal());
  fv.stress_prob = logistic(0.3 * signal * code + rng.normal());
  return fv;
}

}  // namespace

std::size_t dominant_feature() { return informative().front().index; }

std::size_t irrelevant_feature() { return slot("mfcc4_unvoiced_mean"); }

Corpus make_corpus(const CorpusConfig& cfg) {
  Rng rng(cfg.seed);
  Corpus c;
  c.embeddings = EmbeddingStore(cfg.embedding_dim);
  std::vector<std::vector<double>> centre(kNumClasses, std::vector<double>(cfg.embedding_dim));
  for (auto& ctr : centre) {
    double norm = 0.0;
    for (double& v : ctr) {
      v = rng.normal();
      norm += v * v;
    }
    for (double& v : ctr) v *= cfg.embedding_scale / std::sqrt(norm);
  }
  const std::vector<double> probs(cfg.class_probs.begin(), cfg.class_probs.end());
  std::vector<double> e(cfg.embedding_dim);

  auto embed = [&](const std::string& id, int y) {
    const bool wrong = rng.uniform() >= cfg.embedding_accuracy;
    const int shown = wrong ? adjacent_class(rng, y) : y;
    for (std::size_t d = 0; d < e.size(); ++d) e[d] = centre[static_cast<std::size_t>(shown)][d] + rng.normal();
    c.embeddings.put(id, e);
    return wrong;
  };

  // Ambiguous clips sit halfway between their class and an adjacent one, so
  // their features cannot tell the two apart.
  auto ambiguous = [&] { return rng.uniform() < cfg.ambiguous_fraction; };
  auto midpoint = [&](int y) { return 0.5 * (y + adjacent_class(rng, y)) - 1.0; };

  for (std::size_t i = 0; i < cfg.n_gt; ++i) {
    const int y = draw_class(rng, probs);
    const auto id = numbered("gt", i, 4);
    const double code = ambiguous() ? midpoint(y) : y - 1.0;
    c.gt_features.push_back(draw_features(rng, id, code, cfg.feature_signal));
    c.gt_labels.push_back(y);
    c.gt_embedding_wrong.push_back(embed(id, y));
  }
  for (std::size_t i = 0; i < cfg.n_pool; ++i) {
    const int y = draw_class(rng, probs);
    const auto id = numbered("pool", i, 5);
    const bool amb = ambiguous();
    const double code = amb ? midpoint(y) : y - 1.0;
    c.pool_features.push_back(draw_features(rng, id, code, cfg.feature_signal));
    c.pool_truth.push_back(y);
    c.pool_ambiguous.push_back(amb);
    embed(id, y);
  }
  return c;
}

}  // namespace speechconf::synthetic
