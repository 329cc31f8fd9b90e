#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "speechconf/dsp.hpp"
#include "speechconf/error.hpp"
#include "speechconf/features.hpp"

namespace speechconf {

namespace {

struct PitchEstimate {
  double f0 = 0.0;
  double clarity = 0.0;
};

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

/// Triangular mel filters over rfft bins, 0 Hz to Nyquist.
std::vector<std::vector<double>> mel_filterbank(std::size_t bands, std::size_t n_fft, int sr) {
  const std::size_t n_bins = n_fft / 2 + 1;
  const double mel_hi = hz_to_mel(sr / 2.0);
  std::vector<double> edges(bands + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_hi * static_cast<double>(i) / static_cast<double>(bands + 1));
  }
  std::vector<std::vector<double>> fb(bands, std::vector<double>(n_bins, 0.0));
  for (std::size_t b = 0; b < bands; ++b) {
    const double lo = edges[b], mid = edges[b + 1], hi = edges[b + 2];
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sr / static_cast<double>(n_fft);
      if (f > lo && f < mid) fb[b][k] = (f - lo) / (mid - lo);
      else if (f >= mid && f < hi) fb[b][k] = (hi - f) / (hi - mid);
    }
  }
  return fb;
}

/// Least-squares slope of power in dB against frequency over [lo, hi] Hz.
double spectral_slope(std::span<const double> power, double bin_hz, double lo, double hi) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (std::size_t k = 0; k < power.size(); ++k) {
    const double f = static_cast<double>(k) * bin_hz;
    if (f < lo || f > hi) continue;
    const double y = 10.0 * std::log10(power[k] + 1e-12);
    sx += f;
    sy += y;
    sxx += f * f;
    sxy += f * y;
    ++n;
  }
  const double den = n * sxx - sx * sx;
  return (n < 2 || den == 0.0) ? 0.0 : (n * sxy - sx * sy) / den;
}

double band_energy(std::span<const double> power, double bin_hz, double lo, double hi) {
  double e = 0.0;
  for (std::size_t k = 0; k < power.size(); ++k) {
    const double f = static_cast<double>(k) * bin_hz;
    if (f >= lo && f <= hi) e += power[k];
  }
  return e;
}

/// Normalized autocorrelation pitch search on a mean-removed window.
PitchEstimate estimate_pitch(std::span<const double> x, int sr, std::size_t min_lag, std::size_t max_lag,
                             double clarity_threshold) {
  const std::size_t w = x.size();
  if (w < max_lag + 2) max_lag = w > 2 ? w - 2 : 0;
  if (max_lag <= min_lag + 1) return {};
  std::vector<double> prefix(w + 1, 0.0);  // prefix sums of squares
  for (std::size_t i = 0; i < w; ++i) prefix[i + 1] = prefix[i] + x[i] * x[i];
  if (prefix[w] < 1e-12) return {};

  const std::size_t lo = min_lag - 1, hi = max_lag + 1;
  std::vector<double> r(hi + 1, 0.0);
  for (std::size_t lag = lo; lag <= hi && lag < w; ++lag) {
    double acc = 0.0;
    for (std::size_t i = 0; i + lag < w; ++i) acc += x[i] * x[i + lag];
    const double e0 = prefix[w - lag];
    const double e1 = prefix[w] - prefix[lag];
    const double den = std::sqrt(e0 * e1);
    r[lag] = den > 1e-20 ? acc / den : 0.0;
  }
  double best = -1.0;
  for (std::size_t lag = min_lag; lag <= max_lag; ++lag) {
    if (r[lag] >= r[lag - 1] && r[lag] > r[lag + 1]) best = std::max(best, r[lag]);
  }
  if (best <= 0.0) return {};
  // The shortest-lag peak close to the best one guards against octave errors.
  for (std::size_t lag = min_lag; lag <= max_lag; ++lag) {
    if (!(r[lag] >= r[lag - 1] && r[lag] > r[lag + 1]) || r[lag] < 0.9 * best) continue;
    const double a = r[lag - 1], b = r[lag], c = r[lag + 1];
    const double den = a - 2.0 * b + c;
    const double delta = den != 0.0 ? std::clamp(0.5 * (a - c) / den, -0.5, 0.5) : 0.0;
    PitchEstimate est;
    est.clarity = std::min(b - 0.25 * (a - c) * delta, 1.0);
    if (est.clarity >= clarity_threshold) est.f0 = sr / (static_cast<double>(lag) + delta);
    return est;
  }
  return {};
}

/// Sub-sample location and height of a local maximum at index m.
std::pair<double, double> refine_peak(std::span<const double> x, std::size_t m) {
  if (m == 0 || m + 1 >= x.size()) return {static_cast<double>(m), x[m]};
  const double a = x[m - 1], b = x[m], c = x[m + 1];
  const double den = a - 2.0 * b + c;
  if (den >= 0.0) return {static_cast<double>(m), b};
  const double delta = std::clamp(0.5 * (a - c) / den, -0.5, 0.5);
  return {static_cast<double>(m) + delta, b - 0.25 * (a - c) * delta};
}

}  // namespace

void FrameConfig::validate(int sample_rate) const {
  if (!(frame_len_ms > hop_ms && hop_ms > 0.0)) throw Error(Errc::InvalidArgument, "need frame_len_ms > hop_ms > 0");
  if (!(f0_min > 0.0 && f0_min < f0_max && f0_max < sample_rate / 2.0)) {
    throw Error(Errc::InvalidArgument, "need 0 < f0_min < f0_max < sample_rate/2");
  }
  if (mel_bands < mfcc_count + 1) throw Error(Errc::InvalidArgument, "mel_bands must exceed mfcc_count");
}

LLDSeries compute_llds(const AudioClip& clip, const FrameConfig& cfg) {
  if (!clip.is_canonical()) {
    throw Error(Errc::NonCanonicalRate, clip.id + " has rate " + std::to_string(clip.sample_rate));
  }
  const int sr = clip.sample_rate;
  cfg.validate(sr);
  const auto frame_len = static_cast<std::size_t>(std::lround(cfg.frame_len_ms * sr / 1000.0));
  const auto hop = static_cast<std::size_t>(std::lround(cfg.hop_ms * sr / 1000.0));
  const std::size_t n = clip.samples.size();
  const std::size_t n_frames = n >= frame_len ? 1 + (n - frame_len) / hop : 0;
  if (n_frames < 3) throw Error(Errc::ClipTooShort, clip.id + " yields fewer than 3 frames");

  const auto min_lag = static_cast<std::size_t>(std::floor(sr / cfg.f0_max));
  const auto max_lag = static_cast<std::size_t>(std::ceil(sr / cfg.f0_min));
  const std::size_t pitch_win = std::min(n, std::max(frame_len, 2 * max_lag));

  std::size_t n_fft = 2;
  while (n_fft < frame_len) n_fft *= 2;
  const double bin_hz = static_cast<double>(sr) / static_cast<double>(n_fft);
  const auto window = dsp::hann_window(frame_len, false);
  const auto fbank = mel_filterbank(cfg.mel_bands, n_fft, sr);
  dsp::RealFft fft(n_fft);

  LLDSeries out;
  out.hop_s = static_cast<double>(hop) / sr;
  out.f0_hz.assign(n_frames, 0.0);
  out.voiced.assign(n_frames, false);
  out.rms_db.resize(n_frames);
  out.hnr_db.resize(n_frames);
  out.slope_0_500.resize(n_frames);
  out.slope_500_1500.resize(n_frames);
  out.alpha_ratio.resize(n_frames);
  out.mfcc.assign(cfg.mfcc_count, std::vector<double>(n_frames));

  std::vector<double> frame(frame_len), pitch_buf(pitch_win), power(fft.bins()), log_mel(cfg.mel_bands);
  std::vector<std::complex<double>> spec;
  const std::span<const double> x(clip.samples);
  for (std::size_t f = 0; f < n_frames; ++f) {
    const std::size_t start = f * hop;
    double energy = 0.0;
    for (std::size_t i = 0; i < frame_len; ++i) energy += x[start + i] * x[start + i];
    const double rms = std::sqrt(energy / static_cast<double>(frame_len));
    out.rms_db[f] = 20.0 * std::log10(std::max(rms, 1e-10));

    // Pitch window centred on the frame, shifted to stay inside the clip.
    const std::size_t centre = start + frame_len / 2;
    std::size_t p0 = centre > pitch_win / 2 ? centre - pitch_win / 2 : 0;
    p0 = std::min(p0, n - pitch_win);
    double mean = 0.0;
    for (std::size_t i = 0; i < pitch_win; ++i) mean += x[p0 + i];
    mean /= static_cast<double>(pitch_win);
    for (std::size_t i = 0; i < pitch_win; ++i) pitch_buf[i] = x[p0 + i] - mean;
    PitchEstimate pitch;
    if (rms > 1e-6) pitch = estimate_pitch(pitch_buf, sr, min_lag, max_lag, cfg.voicing_clarity);
    if (pitch.f0 > 0.0) {
      out.voiced[f] = true;
      out.f0_hz[f] = std::clamp(pitch.f0, cfg.f0_min, cfg.f0_max);
    }
    const double r = std::clamp(pitch.clarity, 1e-6, 1.0 - 1e-6);
    out.hnr_db[f] = 10.0 * std::log10(r / (1.0 - r));

    for (std::size_t i = 0; i < frame_len; ++i) frame[i] = x[start + i] * window[i];
    fft.forward(frame, spec);
    for (std::size_t k = 0; k < spec.size(); ++k) power[k] = std::norm(spec[k]);
    out.slope_0_500[f] = spectral_slope(power, bin_hz, 0.0, 500.0);
    out.slope_500_1500[f] = spectral_slope(power, bin_hz, 500.0, 1500.0);
    out.alpha_ratio[f] = 10.0 * std::log10(band_energy(power, bin_hz, 50.0, 1000.0) + 1e-12) -
                         10.0 * std::log10(band_energy(power, bin_hz, 1000.0, 5000.0) + 1e-12);
    for (std::size_t b = 0; b < cfg.mel_bands; ++b) {
      double e = 0.0;
      for (std::size_t k = 0; k < power.size(); ++k) e += fbank[b][k] * power[k];
      log_mel[b] = std::log(e + 1e-10);
    }
    const auto bands = static_cast<double>(cfg.mel_bands);
    for (std::size_t c = 0; c < cfg.mfcc_count; ++c) {
      const double k = static_cast<double>(c + 1);
      double acc = 0.0;
      for (std::size_t m = 0; m < cfg.mel_bands; ++m) {
        acc += log_mel[m] * std::cos(std::numbers::pi * k * (static_cast<double>(m) + 0.5) / bands);
      }
      out.mfcc[c][f] = acc;
    }
  }

  // Cycle-to-cycle tracking inside each voiced run: successive waveform
  // maxima searched 0.7-1.3 local periods after the previous one.
  int run = 0;
  for (std::size_t f = 0; f < n_frames;) {
    if (!out.voiced[f]) {
      ++f;
      continue;
    }
    std::size_t g = f;
    while (g < n_frames && out.voiced[g]) ++g;
    const std::size_t run_begin = f * hop;
    const std::size_t run_end = std::min(n, (g - 1) * hop + frame_len);
    auto local_period = [&](double pos) {
      const double idx = (pos - frame_len / 2.0) / static_cast<double>(hop);
      const auto fi = static_cast<std::size_t>(std::clamp(std::lround(idx), static_cast<long>(f), static_cast<long>(g - 1)));
      return sr / out.f0_hz[fi];
    };
    const double t0 = local_period(static_cast<double>(run_begin));
    std::size_t first_end = std::min(run_end, run_begin + static_cast<std::size_t>(std::ceil(t0)));
    std::size_t m = run_begin;
    for (std::size_t i = run_begin; i < first_end; ++i) {
      if (x[i] > x[m]) m = i;
    }
    double prev_t = refine_peak(x, m).first;
    while (true) {
      const double period = local_period(prev_t);
      const auto lo = static_cast<std::size_t>(std::ceil(prev_t + 0.7 * period));
      const auto hi = static_cast<std::size_t>(std::floor(prev_t + 1.3 * period));
      if (hi >= run_end || lo > hi) break;
      std::size_t best = lo;
      for (std::size_t i = lo; i <= hi; ++i) {
        if (x[i] > x[best]) best = i;
      }
      auto [t, a] = refine_peak(x, best);
      out.period_lengths_s.push_back((t - prev_t) / sr);
      out.period_peak_amps.push_back(a);
      out.period_run.push_back(run);
      prev_t = t;
    }
    ++run;
    f = g;
  }
  return out;
}

ProsodicFunctionals extract_prosodic(const AudioClip& clip, const FrameConfig& cfg) {
  return apply_functionals(compute_llds(clip, cfg));
}

}  // namespace speechconf
