#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace speechconf {

inline constexpr int kCanonicalRate = 16000;

/// Mono PCM clip with real amplitudes.
struct AudioClip {
  std::string id;
  std::vector<double> samples;
  int sample_rate = kCanonicalRate;

  double duration() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
  bool is_canonical() const { return sample_rate == kCanonicalRate; }
};

/// Stationary spectral-gating parameters.
struct DenoiseConfig {
  double noise_floor_percentile = 0.1;  // fraction of quietest frames defining the floor
  double gate_threshold_db = 6.0;       // bins below floor + this are attenuated
  std::size_t fft_size = 1024;          // power of two
  std::size_t smoothing_bands = 2;      // half-width of the frequency smoothing of the mask

  void validate() const;
};

/// Reads a RIFF/WAVE file (PCM 8/16/24/32-bit int or 32-bit float, 1-2
/// channels). Stereo is averaged to mono; the id is the file stem.
AudioClip load_clip(const std::filesystem::path& path);

/// Same as load_clip but from an in-memory RIFF image.
AudioClip decode_wav(std::span<const std::uint8_t> bytes, std::string id);

/// 16-bit PCM mono RIFF image of the clip (samples clipped to [-1, 1]).
std::vector<std::uint8_t> encode_wav_pcm16(const AudioClip& clip);
void write_wav_pcm16(const std::filesystem::path& path, const AudioClip& clip);

/// Kaiser-windowed sinc resampler, 64 taps. Returns the input unchanged when
/// the rates match.
std::vector<double> resample(std::span<const double> input, int from_rate, int to_rate);

inline constexpr double kPeakTarget = 0.95;

/// Resample to `target_rate` and peak-normalize to 0.95 (all-zero clips are
/// left as-is). Throws EmptyClip.
AudioClip preprocess(const AudioClip& clip, int target_rate = kCanonicalRate);

/// Spectral gating against a per-bin noise floor estimated from the quietest
/// frames. Output keeps the length and rate of the input. Throws
/// ClipTooShort when the clip does not exceed one FFT window.
AudioClip denoise(const AudioClip& clip, const DenoiseConfig& cfg = {});

/// False (with a logged warning) for clips outside the 5-12 s range of the
/// labelled set. Such clips are still processed.
bool duration_in_expected_range(const AudioClip& clip);

}  // namespace speechconf
