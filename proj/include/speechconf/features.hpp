#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "speechconf/audio.hpp"

namespace speechconf {

inline constexpr std::size_t kProsodicDim = 88;
inline constexpr std::size_t kDisfluencyDim = 5;
inline constexpr std::size_t kFeatureDim = kProsodicDim + kDisfluencyDim + 1;  // 94

struct FrameConfig {
  double frame_len_ms = 25.0;
  double hop_ms = 10.0;
  double f0_min = 55.0;
  double f0_max = 1000.0;
  std::size_t mel_bands = 26;
  std::size_t mfcc_count = 4;
  double voicing_clarity = 0.45;

  void validate(int sample_rate) const;
};

/// Per-frame low-level descriptors plus per-period tracks of voiced runs.
struct LLDSeries {
  double hop_s = 0.01;
  std::vector<double> f0_hz;  // 0 where unvoiced
  std::vector<bool> voiced;
  std::vector<double> rms_db;
  std::vector<double> hnr_db;
  std::vector<double> slope_0_500;     // dB/Hz
  std::vector<double> slope_500_1500;  // dB/Hz
  std::vector<double> alpha_ratio;     // dB
  std::vector<std::vector<double>> mfcc;  // [coefficient][frame], coefficients 1..mfcc_count

  std::vector<double> period_lengths_s;
  std::vector<double> period_peak_amps;
  std::vector<int> period_run;  // voiced-run index of each period

  std::size_t frames() const { return f0_hz.size(); }
};

/// Ordered functional slot names. Order is frozen per layout name.
struct FeatureLayout {
  std::string name;
  std::vector<std::string> slots;

  /// The built-in 88-slot layout, "egemaps-lite-88".
  static const FeatureLayout& egemaps_lite_88();
  std::size_t index_of(const std::string& slot) const;  // npos when absent
};

struct ProsodicFunctionals {
  std::vector<double> values;    // layout order
  bool no_voiced_frames = false;  // voiced-only slots were zero-filled
};

/// Clip-level acoustic vector: 88 prosodic slots, 5 disfluency
/// probabilities (block, prolongation, interjection, word repetition, sound
/// repetition) and one stress probability.
struct FeatureVector {
  std::string id;
  std::array<double, kProsodicDim> prosodic{};
  std::array<double, kDisfluencyDim> disfluency_probs{};
  double stress_prob = 0.0;
  bool normalized = false;
  std::uint64_t normalizer_tag = 0;  // fingerprint of the normalizer applied, 0 if raw

  std::array<double, kFeatureDim> values() const;
  void set_values(std::span<const double> v);  // size 94
};

/// Per-dimension z-score statistics fitted on a training partition.
struct Normalizer {
  std::array<double, kFeatureDim> mean{};
  std::array<double, kFeatureDim> std{};
  std::vector<std::string> fit_ids;  // sorted

  std::uint64_t tag() const;  // fingerprint of mean/std
};

inline constexpr double kStdFloor = 1e-8;

LLDSeries compute_llds(const AudioClip& clip, const FrameConfig& cfg = {});

ProsodicFunctionals apply_functionals(const LLDSeries& llds,
                                      const FeatureLayout& layout = FeatureLayout::egemaps_lite_88());

/// Convenience: compute_llds + apply_functionals.
ProsodicFunctionals extract_prosodic(const AudioClip& clip, const FrameConfig& cfg = {});

/// Reads `id,<layout slots...>`. Throws HeaderMismatch / DimensionMismatch /
/// NonFiniteValue.
std::map<std::string, std::vector<double>> ingest_external_features(
    const std::filesystem::path& path, const FeatureLayout& layout = FeatureLayout::egemaps_lite_88());

FeatureVector assemble_feature_vector(std::string id, std::span<const double> prosodic,
                                      std::span<const double> disfluency_probs, double stress_prob);

Normalizer normalizer_fit(std::span<const FeatureVector> train);
FeatureVector normalizer_apply(const Normalizer& n, const FeatureVector& fv);

/// Feature store CSV: `id,f_000..f_087,disf_block,disf_prolong,disf_interj,
/// disf_wordrep,disf_soundrep,stress`.
std::string feature_store_header();
void write_feature_store(const std::filesystem::path& path, std::span<const FeatureVector> vectors);
std::vector<FeatureVector> read_feature_store(const std::filesystem::path& path);

}  // namespace speechconf
