#include "speechconf/audio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstring>
#include <numbers>
#include <numeric>

#include "speechconf/dsp.hpp"
#include "speechconf/error.hpp"
#include "speechconf/log.hpp"
#include "speechconf/textio.hpp"

namespace speechconf {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t read_u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}
void put_tag(std::vector<std::uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

double decode_sample(const std::uint8_t* p, std::uint16_t format, std::uint16_t bits) {
  if (format == kFormatFloat) {
    float f;
    std::uint32_t u = read_u32(p);
    std::memcpy(&f, &u, sizeof f);
    return static_cast<double>(f);
  }
  switch (bits) {
    case 8:
      return (static_cast<double>(p[0]) - 128.0) / 128.0;
    case 16:
      return static_cast<double>(static_cast<std::int16_t>(read_u16(p))) / 32768.0;
    case 24: {
      std::int32_t v = static_cast<std::int32_t>(p[0] | (p[1] << 8) | (p[2] << 16));
      if (v & 0x800000) v -= 0x1000000;
      return static_cast<double>(v) / 8388608.0;
    }
    case 32:
      return static_cast<double>(static_cast<std::int32_t>(read_u32(p))) / 2147483648.0;
    default:
      throw Error(Errc::UnsupportedEncoding, "unsupported PCM bit depth " + std::to_string(bits));
  }
}

double kaiser(double x, double beta) {
  // x in [-1, 1]
  const double arg = 1.0 - x * x;
  if (arg <= 0.0) return 0.0;
  return std::cyl_bessel_i(0.0, beta * std::sqrt(arg)) / std::cyl_bessel_i(0.0, beta);
}

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

// Lower-rank percentile: always an observed value, so q -> 0 yields the
// quietest frame exactly.
double percentile_sorted(const std::vector<double>& sorted, double q) {
  const auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(sorted.size() - 1)));
  return sorted[std::min(idx, sorted.size() - 1)];
}

}  // namespace

void DenoiseConfig::validate() const {
  if (!(noise_floor_percentile > 0.0 && noise_floor_percentile < 1.0)) {
    throw Error(Errc::InvalidArgument, "noise_floor_percentile must lie in (0, 1)");
  }
  if (!(gate_threshold_db >= 0.0)) throw Error(Errc::InvalidArgument, "gate_threshold_db must be >= 0");
  if (!dsp::is_power_of_two(fft_size)) throw Error(Errc::InvalidArgument, "fft_size must be a power of two");
}

AudioClip decode_wav(std::span<const std::uint8_t> bytes, std::string id) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw Error(Errc::CorruptHeader, "missing RIFF/WAVE signature in " + id);
  }
  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0, block_align = 0;
  std::uint32_t rate = 0;
  std::span<const std::uint8_t> data;
  bool have_data = false;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* hdr = bytes.data() + pos;
    const std::uint32_t len = read_u32(hdr + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (len < 16 || body + len > bytes.size()) throw Error(Errc::CorruptHeader, "truncated fmt chunk in " + id);
      const std::uint8_t* f = bytes.data() + body;
      format = read_u16(f);
      channels = read_u16(f + 2);
      rate = read_u32(f + 4);
      block_align = read_u16(f + 12);
      bits = read_u16(f + 14);
      if (format == kFormatExtensible) {
        if (len < 40) throw Error(Errc::CorruptHeader, "truncated extensible fmt chunk in " + id);
        format = read_u16(f + 24);  // first two bytes of the sub-format GUID
      }
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      const std::size_t avail = bytes.size() - body;
      // Streaming writers sometimes leave the size at 0 or 0xFFFFFFFF.
      const std::size_t n = (len == 0 || len == 0xFFFFFFFFu || len > avail) ? avail : len;
      data = bytes.subspan(body, n);
      have_data = true;
      break;
    }
    pos = body + len + (len & 1);
  }
  if (!have_fmt || !have_data) throw Error(Errc::CorruptHeader, "missing fmt or data chunk in " + id);
  if (format != kFormatPcm && format != kFormatFloat) {
    throw Error(Errc::UnsupportedEncoding, "non-PCM codec (format tag " + std::to_string(format) + ") in " + id);
  }
  if (format == kFormatFloat && bits != 32) throw Error(Errc::UnsupportedEncoding, "only 32-bit float is supported");
  if (channels < 1 || channels > 2) {
    throw Error(Errc::UnsupportedEncoding, std::to_string(channels) + " channels in " + id);
  }
  if (rate == 0) throw Error(Errc::CorruptHeader, "zero sample rate in " + id);
  const std::size_t bytes_per_sample = bits / 8;
  if (bits % 8 != 0 || bytes_per_sample == 0 || block_align != bytes_per_sample * channels) {
    throw Error(Errc::CorruptHeader, "inconsistent block alignment in " + id);
  }

  AudioClip clip;
  clip.id = std::move(id);
  clip.sample_rate = static_cast<int>(rate);
  const std::size_t frames = data.size() / block_align;
  clip.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    const std::uint8_t* p = data.data() + i * block_align;
    double acc = 0.0;
    for (std::uint16_t c = 0; c < channels; ++c) acc += decode_sample(p + c * bytes_per_sample, format, bits);
    clip.samples[i] = acc / channels;
  }
  return clip;
}

AudioClip load_clip(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(Errc::NotFound, path.string());
  return decode_wav(textio::read_binary(path), path.stem().string());
}

std::vector<std::uint8_t> encode_wav_pcm16(const AudioClip& clip) {
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  std::vector<std::uint8_t> out;
  out.reserve(44 + 2 * n);
  put_tag(out, "RIFF");
  put_u32(out, 36 + 2 * n);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  put_tag(out, "data");
  put_u32(out, 2 * n);
  for (double s : clip.samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    const auto v = static_cast<std::int16_t>(std::clamp(std::lround(c * 32768.0), -32768L, 32767L));
    put_u16(out, static_cast<std::uint16_t>(v));
  }
  return out;
}

void write_wav_pcm16(const std::filesystem::path& path, const AudioClip& clip) {
  textio::write_binary(path, encode_wav_pcm16(clip));
}

std::vector<double> resample(std::span<const double> input, int from_rate, int to_rate) {
  if (from_rate <= 0 || to_rate <= 0) throw Error(Errc::InvalidArgument, "sample rates must be positive");
  if (from_rate == to_rate) return {input.begin(), input.end()};
  constexpr int kHalfTaps = 32;
  constexpr double kBeta = 8.0;
  // Cutoff relative to the input Nyquist; a little below the output Nyquist
  // when decimating so the transition band stays out of the passband edge.
  const double cutoff = to_rate < from_rate ? 0.97 * static_cast<double>(to_rate) / from_rate : 1.0;

  // Output sample n sits at input position n*from/to. Its fractional part
  // takes only to/gcd distinct values, so kernels are built once per phase.
  const long long g = std::gcd(from_rate, to_rate);
  const long long from = from_rate / g, to = to_rate / g;
  std::vector<std::array<double, 2 * kHalfTaps>> kernels(static_cast<std::size_t>(to));
  for (long long phase = 0; phase < to; ++phase) {
    const double frac = static_cast<double>(phase) / static_cast<double>(to);
    auto& kern = kernels[static_cast<std::size_t>(phase)];
    double norm = 0.0;
    for (int j = 0; j < 2 * kHalfTaps; ++j) {
      const double d = frac + kHalfTaps - 1 - j;  // distance from tap to output position
      kern[static_cast<std::size_t>(j)] = cutoff * sinc(cutoff * d) * kaiser(d / kHalfTaps, kBeta);
      norm += kern[static_cast<std::size_t>(j)];
    }
    for (double& h : kern) h /= norm;
  }

  const auto n_in = static_cast<long long>(input.size());
  const auto out_len = static_cast<std::size_t>((n_in * to + from - 1) / from);
  std::vector<double> out(out_len);
  for (std::size_t n = 0; n < out_len; ++n) {
    const long long num = static_cast<long long>(n) * from;
    const long long base = num / to;
    const auto& kern = kernels[static_cast<std::size_t>(num % to)];
    double acc = 0.0;
    for (int j = 0; j < 2 * kHalfTaps; ++j) {
      const long long k = base - kHalfTaps + 1 + j;
      if (k >= 0 && k < n_in) acc += kern[static_cast<std::size_t>(j)] * input[static_cast<std::size_t>(k)];
    }
    out[n] = acc;
  }
  return out;
}

AudioClip preprocess(const AudioClip& clip, int target_rate) {
  if (clip.samples.empty()) throw Error(Errc::EmptyClip, clip.id);
  AudioClip out;
  out.id = clip.id;
  out.sample_rate = target_rate;
  out.samples = resample(clip.samples, clip.sample_rate, target_rate);
  double peak = 0.0;
  for (double s : out.samples) peak = std::max(peak, std::abs(s));
  // Already at target (e.g. a second pass) stays sample-exact.
  if (peak > 0.0 && std::abs(peak - kPeakTarget) > 1e-12) {
    const double gain = kPeakTarget / peak;
    for (double& s : out.samples) s *= gain;
  }
  return out;
}

AudioClip denoise(const AudioClip& clip, const DenoiseConfig& cfg) {
  cfg.validate();
  const std::size_t n_fft = cfg.fft_size;
  const std::size_t n = clip.samples.size();
  if (n <= n_fft) throw Error(Errc::ClipTooShort, clip.id + " is not longer than one FFT window");
  const std::size_t hop = n_fft / 4;
  const std::size_t lead = n_fft;
  const std::size_t tail = n_fft + (hop - n % hop) % hop;
  std::vector<double> padded(lead + n + tail, 0.0);
  std::copy(clip.samples.begin(), clip.samples.end(), padded.begin() + static_cast<std::ptrdiff_t>(lead));

  const auto window = dsp::hann_window(n_fft, true);
  dsp::RealFft fft(n_fft);
  const std::size_t n_bins = fft.bins();
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + n_fft <= padded.size(); s += hop) starts.push_back(s);

  std::vector<std::vector<std::complex<double>>> spectra(starts.size());
  std::vector<double> frame(n_fft);
  for (std::size_t f = 0; f < starts.size(); ++f) {
    for (std::size_t i = 0; i < n_fft; ++i) frame[i] = padded[starts[f] + i] * window[i];
    fft.forward(frame, spectra[f]);
  }
  auto power_db = [](std::complex<double> c) { return 10.0 * std::log10(std::norm(c) + 1e-20); };

  // Frames lying entirely inside the clip drive both the noise estimate and
  // the gate; frames overhanging an edge reuse the nearest interior decision.
  std::vector<std::size_t> interior;
  for (std::size_t f = 0; f < starts.size(); ++f) {
    if (starts[f] >= lead && starts[f] + n_fft <= lead + n) interior.push_back(f);
  }
  std::vector<double> floor_db(n_bins);
  std::vector<double> column(interior.size());
  for (std::size_t k = 0; k < n_bins; ++k) {
    for (std::size_t j = 0; j < interior.size(); ++j) column[j] = power_db(spectra[interior[j]][k]);
    std::sort(column.begin(), column.end());
    floor_db[k] = percentile_sorted(column, cfg.noise_floor_percentile);
  }

  auto nearest_interior = [&](std::size_t f) {
    if (f < interior.front()) return interior.front();
    if (f > interior.back()) return interior.back();
    return f;
  };
  const auto half = static_cast<long long>(cfg.smoothing_bands);
  std::vector<double> mask(n_bins), smooth(n_bins);
  std::vector<double> out(padded.size(), 0.0), wsum(padded.size(), 0.0), recon;
  for (std::size_t f = 0; f < starts.size(); ++f) {
    const auto& decide = spectra[nearest_interior(f)];
    for (std::size_t k = 0; k < n_bins; ++k) {
      mask[k] = power_db(decide[k]) >= floor_db[k] + cfg.gate_threshold_db ? 1.0 : 0.0;
    }
    for (std::size_t k = 0; k < n_bins; ++k) {
      double acc = 0.0;
      int cnt = 0;
      for (long long d = -half; d <= half; ++d) {
        const long long j = static_cast<long long>(k) + d;
        if (j < 0 || j >= static_cast<long long>(n_bins)) continue;
        acc += mask[static_cast<std::size_t>(j)];
        ++cnt;
      }
      smooth[k] = acc / cnt;
    }
    auto spec = spectra[f];
    for (std::size_t k = 0; k < n_bins; ++k) spec[k] *= smooth[k];
    fft.inverse(spec, recon);
    for (std::size_t i = 0; i < n_fft; ++i) {
      out[starts[f] + i] += recon[i];
      wsum[starts[f] + i] += window[i];
    }
  }

  AudioClip result;
  result.id = clip.id;
  result.sample_rate = clip.sample_rate;
  result.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t p = lead + i;
    const double v = wsum[p] > 1e-12 ? out[p] / wsum[p] : 0.0;
    result.samples[i] = std::clamp(v, -1.0, 1.0);
  }
  return result;
}

bool duration_in_expected_range(const AudioClip& clip) {
  const double d = clip.duration();
  if (d < 5.0 || d > 12.0) {
    warn("clip " + clip.id + " lasts " + textio::format_double(d) + " s, outside the 5-12 s labelled range");
    return false;
  }
  return true;
}

}  // namespace speechconf
