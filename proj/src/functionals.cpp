#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "speechconf/error.hpp"
#include "speechconf/features.hpp"

namespace speechconf {

namespace {

constexpr double kSemitoneRefHz = 27.5;

const char* const kStat6[] = {"mean", "cv", "pctl20", "pctl50", "pctl80", "pctlrange20_80"};
const char* const kSlope4[] = {"risingSlope_mean", "risingSlope_std", "fallingSlope_mean", "fallingSlope_std"};
const char* const kSpectralVoiced[] = {"hnr", "alphaRatio", "slope0_500", "slope500_1500",
                                       "mfcc1", "mfcc2", "mfcc3", "mfcc4"};
const char* const kUnvoicedMeans[] = {"alphaRatio", "slope0_500", "slope500_1500", "mfcc1",
                                      "mfcc2",      "mfcc3",      "mfcc4",         "loudness"};

std::vector<std::string> build_lite_slots() {
  std::vector<std::string> s;
  for (const char* lld : {"F0semitoneFrom27.5Hz", "loudness"}) {
    for (const char* st : kStat6) s.push_back(std::string(lld) + "_" + st);
    for (const char* st : kSlope4) s.push_back(std::string(lld) + "_" + st);
  }
  for (const char* lld : kSpectralVoiced) {
    for (const char* st : kStat6) s.push_back(std::string(lld) + "_voiced_" + st);
  }
  for (const char* st : {"jitterLocal_mean", "jitterLocal_cv", "shimmerLocal_mean", "shimmerLocal_cv"}) s.push_back(st);
  for (const char* lld : kUnvoicedMeans) s.push_back(std::string(lld) + "_unvoiced_mean");
  for (const char* st : {"loudnessPeaksPerSec", "voicedSegmentsPerSec", "voicedSegmentLength_mean",
                         "voicedSegmentLength_std", "unvoicedSegmentLength_mean", "unvoicedSegmentLength_std",
                         "equivalentSoundLevel_dB", "voicedFrameRatio"}) {
    s.push_back(st);
  }
  return s;
}

double mean_of(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

void put_stat6(std::map<std::string, double>& out, const std::string& prefix, const std::vector<double>& v) {
  const double m = mean_of(v);
  const double sd = std_of(v);
  const double p20 = percentile(v, 0.2), p50 = percentile(v, 0.5), p80 = percentile(v, 0.8);
  out[prefix + "_mean"] = m;
  out[prefix + "_cv"] = std::abs(m) > 1e-12 ? sd / std::abs(m) : 0.0;
  out[prefix + "_pctl20"] = p20;
  out[prefix + "_pctl50"] = p50;
  out[prefix + "_pctl80"] = p80;
  out[prefix + "_pctlrange20_80"] = p80 - p20;
}

/// Slopes (units per second) of maximal strictly rising / falling stretches
/// within each contiguous segment.
void put_slopes(std::map<std::string, double>& out, const std::string& prefix,
                const std::vector<std::vector<double>>& segments, double hop_s) {
  std::vector<double> rising, falling;
  for (const auto& seg : segments) {
    std::size_t i = 0;
    while (i + 1 < seg.size()) {
      const double d = seg[i + 1] - seg[i];
      if (d == 0.0) {
        ++i;
        continue;
      }
      std::size_t j = i + 1;
      while (j + 1 < seg.size() && (seg[j + 1] - seg[j]) * d > 0.0) ++j;
      const double slope = (seg[j] - seg[i]) / (static_cast<double>(j - i) * hop_s);
      (d > 0.0 ? rising : falling).push_back(slope);
      i = j;
    }
  }
  out[prefix + "_risingSlope_mean"] = mean_of(rising);
  out[prefix + "_risingSlope_std"] = std_of(rising);
  out[prefix + "_fallingSlope_mean"] = mean_of(falling);
  out[prefix + "_fallingSlope_std"] = std_of(falling);
}

/// Relative consecutive differences |v_i - v_{i-1}| / mean(v) within runs.
std::vector<double> local_perturbation(const std::vector<double>& v, const std::vector<int>& run) {
  std::vector<double> out;
  const double m = mean_of(v);
  if (m <= 0.0) return out;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (run[i] == run[i - 1]) out.push_back(std::abs(v[i] - v[i - 1]) / m);
  }
  return out;
}

std::vector<std::size_t> run_lengths(const std::vector<bool>& flags, bool value) {
  std::vector<std::size_t> out;
  std::size_t cur = 0;
  for (bool f : flags) {
    if (f == value) {
      ++cur;
    } else if (cur) {
      out.push_back(cur);
      cur = 0;
    }
  }
  if (cur) out.push_back(cur);
  return out;
}

}  // namespace

const FeatureLayout& FeatureLayout::egemaps_lite_88() {
  static const FeatureLayout layout{"egemaps-lite-88", build_lite_slots()};
  return layout;
}

std::size_t FeatureLayout::index_of(const std::string& slot) const {
  const auto it = std::find(slots.begin(), slots.end(), slot);
  return it == slots.end() ? std::string::npos : static_cast<std::size_t>(it - slots.begin());
}

ProsodicFunctionals apply_functionals(const LLDSeries& llds, const FeatureLayout& layout) {
  const std::size_t n = llds.frames();
  std::map<std::string, double> v;
  ProsodicFunctionals result;

  std::vector<std::vector<double>> f0_segments;
  std::vector<double> f0_st;
  for (std::size_t i = 0; i < n; ++i) {
    if (!llds.voiced[i]) continue;
    const double st = 12.0 * std::log2(llds.f0_hz[i] / kSemitoneRefHz);
    f0_st.push_back(st);
    if (i == 0 || !llds.voiced[i - 1]) f0_segments.emplace_back();
    f0_segments.back().push_back(st);
  }
  result.no_voiced_frames = f0_st.empty();

  put_stat6(v, "F0semitoneFrom27.5Hz", f0_st);
  put_slopes(v, "F0semitoneFrom27.5Hz", f0_segments, llds.hop_s);
  put_stat6(v, "loudness", llds.rms_db);
  put_slopes(v, "loudness", {llds.rms_db}, llds.hop_s);

  auto split = [&](const std::vector<double>& track, bool voiced) {
    std::vector<double> out;
    for (std::size_t i = 0; i < n; ++i) {
      if (llds.voiced[i] == voiced) out.push_back(track[i]);
    }
    return out;
  };
  std::map<std::string, const std::vector<double>*> tracks{
      {"hnr", &llds.hnr_db},
      {"alphaRatio", &llds.alpha_ratio},
      {"slope0_500", &llds.slope_0_500},
      {"slope500_1500", &llds.slope_500_1500},
      {"loudness", &llds.rms_db},
  };
  for (std::size_t c = 0; c < llds.mfcc.size(); ++c) tracks["mfcc" + std::to_string(c + 1)] = &llds.mfcc[c];
  for (const auto& [name, track] : tracks) {
    if (name != "loudness") put_stat6(v, name + "_voiced", split(*track, true));
    v[name + "_unvoiced_mean"] = mean_of(split(*track, false));
  }

  const auto jit = local_perturbation(llds.period_lengths_s, llds.period_run);
  const auto shim = local_perturbation(llds.period_peak_amps, llds.period_run);
  const double jm = mean_of(jit), sm = mean_of(shim);
  v["jitterLocal_mean"] = jm;
  v["jitterLocal_cv"] = jm > 0.0 ? std_of(jit) / jm : 0.0;
  v["shimmerLocal_mean"] = sm;
  v["shimmerLocal_cv"] = sm > 0.0 ? std_of(shim) / sm : 0.0;

  const double duration = static_cast<double>(n) * llds.hop_s;
  std::size_t peaks = 0;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double l = llds.rms_db[i];
    if (l > llds.rms_db[i - 1] && l >= llds.rms_db[i + 1] && l > -100.0) ++peaks;
  }
  v["loudnessPeaksPerSec"] = duration > 0.0 ? static_cast<double>(peaks) / duration : 0.0;
  auto to_seconds = [&](const std::vector<std::size_t>& lens) {
    std::vector<double> out;
    for (auto l : lens) out.push_back(static_cast<double>(l) * llds.hop_s);
    return out;
  };
  const auto voiced_runs = to_seconds(run_lengths(llds.voiced, true));
  const auto unvoiced_runs = to_seconds(run_lengths(llds.voiced, false));
  v["voicedSegmentsPerSec"] = duration > 0.0 ? static_cast<double>(voiced_runs.size()) / duration : 0.0;
  v["voicedSegmentLength_mean"] = mean_of(voiced_runs);
  v["voicedSegmentLength_std"] = std_of(voiced_runs);
  v["unvoicedSegmentLength_mean"] = mean_of(unvoiced_runs);
  v["unvoicedSegmentLength_std"] = std_of(unvoiced_runs);
  double power = 0.0;
  for (double db : llds.rms_db) power += std::pow(10.0, db / 10.0);
  v["equivalentSoundLevel_dB"] = n ? 10.0 * std::log10(power / static_cast<double>(n)) : 0.0;
  v["voicedFrameRatio"] = n ? static_cast<double>(f0_st.size()) / static_cast<double>(n) : 0.0;

  result.values.reserve(layout.slots.size());
  for (const auto& slot : layout.slots) {
    const auto it = v.find(slot);
    if (it == v.end()) throw Error(Errc::UnfilledSlot, "extractor cannot compute slot '" + slot + "'");
    result.values.push_back(it->second);
  }
  return result;
}

}  // namespace speechconf
