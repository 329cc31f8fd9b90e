#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>

#include "doctest.h"
#include "signals.hpp"
#include "speechconf/audio.hpp"
#include "speechconf/dsp.hpp"
#include "speechconf/error.hpp"
#include "speechconf/textio.hpp"

using namespace speechconf;

namespace {

std::vector<std::uint8_t> pcm16(const std::vector<std::int16_t>& v) {
  std::vector<std::uint8_t> out;
  for (auto s : v) {
    const auto u = static_cast<std::uint16_t>(s);
    out.push_back(u & 0xFF);
    out.push_back(u >> 8);
  }
  return out;
}

double peak_abs(const std::vector<double>& v) {
  double p = 0.0;
  for (double x : v) p = std::max(p, std::abs(x));
  return p;
}

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return Errc::Io;
}

}  // namespace

TEST_CASE("load_clip: one second of 16-bit silence") {
  const auto bytes = testsig::wav_bytes(1, 1, 16000, 16, pcm16(std::vector<std::int16_t>(16000, 0)));
  const auto path = std::filesystem::temp_directory_path() / "speechconf_silence.wav";
  textio::write_binary(path, bytes);
  const AudioClip clip = load_clip(path);
  CHECK(clip.id == "speechconf_silence");
  CHECK(clip.sample_rate == 16000);
  CHECK(clip.samples.size() == 16000);
  CHECK(std::all_of(clip.samples.begin(), clip.samples.end(), [](double s) { return s == 0.0; }));
  CHECK(clip.duration() == doctest::Approx(1.0));
  std::filesystem::remove(path);
}

TEST_CASE("load_clip: stereo (+0.5, -0.5) averages to zero") {
  std::vector<std::int16_t> interleaved;
  for (int i = 0; i < 100; ++i) {
    interleaved.push_back(16384);
    interleaved.push_back(-16384);
  }
  const auto clip = decode_wav(testsig::wav_bytes(1, 2, 16000, 16, pcm16(interleaved)), "st");
  REQUIRE(clip.samples.size() == 100);
  for (double s : clip.samples) CHECK(s == 0.0);
}

TEST_CASE("load_clip: PCM scaling conventions") {
  // -32768 is full-scale negative; the reference decoder (Python's wave +
  // numpy int16 / 32768) yields exactly -1.0.
  auto c16 = decode_wav(testsig::wav_bytes(1, 1, 8000, 16, pcm16({-32768, 32767, 0})), "a");
  CHECK(c16.samples[0] == -1.0);
  CHECK(c16.samples[1] == doctest::Approx(32767.0 / 32768.0));

  auto c8 = decode_wav(testsig::wav_bytes(1, 1, 8000, 8, {0, 128, 255}), "b");
  CHECK(c8.samples[0] == -1.0);
  CHECK(c8.samples[1] == 0.0);

  auto c24 = decode_wav(testsig::wav_bytes(1, 1, 8000, 24, {0x00, 0x00, 0x80, 0xFF, 0xFF, 0x7F}), "c");
  CHECK(c24.samples[0] == -1.0);
  CHECK(c24.samples[1] == doctest::Approx(8388607.0 / 8388608.0));

  float f = -0.25f;
  std::uint8_t fb[4];
  std::memcpy(fb, &f, 4);
  auto cf = decode_wav(testsig::wav_bytes(3, 1, 8000, 32, {fb[0], fb[1], fb[2], fb[3]}), "d");
  CHECK(cf.samples[0] == -0.25);
}

TEST_CASE("load_clip: error paths") {
  CHECK(code_of([] { load_clip("/nonexistent/definitely_missing.wav"); }) == Errc::NotFound);
  CHECK(code_of([] { decode_wav(testsig::wav_bytes(2, 1, 8000, 4, {0, 0}), "adpcm"); }) == Errc::UnsupportedEncoding);
  CHECK(code_of([] { decode_wav(testsig::wav_bytes(1, 3, 8000, 16, std::vector<std::uint8_t>(12)), "x"); }) ==
        Errc::UnsupportedEncoding);
  std::vector<std::uint8_t> junk = {'R', 'I', 'F', 'X', 0, 0, 0, 0, 'W', 'A', 'V', 'E'};
  CHECK(code_of([&] { decode_wav(junk, "junk"); }) == Errc::CorruptHeader);
  auto truncated = testsig::wav_bytes(1, 1, 8000, 16, pcm16({1, 2, 3}));
  truncated.resize(30);  // cuts the fmt chunk
  CHECK(code_of([&] { decode_wav(truncated, "t"); }) == Errc::CorruptHeader);
}

TEST_CASE("encode_wav_pcm16 round-trips through decode_wav") {
  Rng rng(3);
  AudioClip clip;
  clip.id = "rt";
  for (int i = 0; i < 500; ++i) clip.samples.push_back(std::round(rng.uniform(-1.0, 1.0) * 32767.0) / 32768.0);
  const auto back = decode_wav(encode_wav_pcm16(clip), "rt");
  REQUIRE(back.samples.size() == clip.samples.size());
  for (std::size_t i = 0; i < clip.samples.size(); ++i) CHECK(back.samples[i] == clip.samples[i]);
}

TEST_CASE("preprocess: identity at canonical rate and 0.95 peak") {
  auto clip = testsig::sine(300.0, 0.5, 16000, 0.95);
  // Make the peak exactly 0.95.
  const double p = peak_abs(clip.samples);
  for (double& s : clip.samples) s *= 0.95 / p;
  const double p2 = peak_abs(clip.samples);
  for (double& s : clip.samples) {
    if (std::abs(s) == p2) s = s > 0 ? 0.95 : -0.95;
  }
  const auto out = preprocess(clip);
  CHECK(out.samples == clip.samples);
}

TEST_CASE("preprocess: peak normalization and idempotence") {
  const auto clip = testsig::sine(200.0, 0.5, 16000, 0.1);
  const auto once = preprocess(clip);
  CHECK(peak_abs(once.samples) == doctest::Approx(0.95).epsilon(1e-6));
  const auto twice = preprocess(once);
  CHECK(twice.samples == once.samples);

  AudioClip zeros{"z", std::vector<double>(1000, 0.0), 16000};
  CHECK(preprocess(zeros).samples == zeros.samples);
  CHECK(code_of([] { preprocess(AudioClip{"e", {}, 16000}); }) == Errc::EmptyClip);
}

TEST_CASE("preprocess: 440 Hz at 44.1 kHz keeps its DFT peak") {
  const auto clip = testsig::sine(440.0, 0.5, 44100, 0.5);
  const auto out = preprocess(clip);
  CHECK(out.sample_rate == 16000);
  CHECK(out.samples.size() == 8000);
  // 4000-sample analysis segment: 4 Hz bins, 440 Hz is bin 110.
  std::vector<double> seg(out.samples.begin() + 2000, out.samples.begin() + 6000);
  const auto bin = testsig::dft_peak_bin(seg);
  CHECK(std::abs(static_cast<long>(bin) - 110) <= 1);
}

TEST_CASE("resample preserves the dominant frequency of tones below 7 kHz") {
  for (double f : {100.0, 1000.0, 3000.0, 6500.0}) {
    for (int rate : {22050, 44100, 48000, 8000}) {
      if (f >= rate / 2.0 * 0.9) continue;
      const auto clip = testsig::sine(f, 0.3, rate, 0.5);
      const auto out = resample(clip.samples, rate, 16000);
      std::vector<double> seg(out.begin() + 400, out.begin() + 400 + 2000);  // 8 Hz bins
      const auto bin = testsig::dft_peak_bin(seg);
      CAPTURE(f);
      CAPTURE(rate);
      CHECK(std::abs(static_cast<double>(bin) * 8.0 - f) <= 8.0);
    }
  }
}

TEST_CASE("denoise: silence stays silent; lengths preserved") {
  AudioClip silence{"s", std::vector<double>(8000, 0.0), 16000};
  const auto out = denoise(silence);
  CHECK(out.samples.size() == silence.samples.size());
  CHECK(std::all_of(out.samples.begin(), out.samples.end(), [](double s) { return s == 0.0; }));
  CHECK(code_of([] { denoise(AudioClip{"short", std::vector<double>(1024, 0.1), 16000}); }) == Errc::ClipTooShort);
}

TEST_CASE("denoise: degenerate gate is an identity") {
  auto clip = testsig::sine(220.0, 0.5, 16000, 0.4);
  const auto noise = testsig::white_noise(clip.samples.size(), 0.05, 11);
  for (std::size_t i = 0; i < clip.samples.size(); ++i) clip.samples[i] += noise[i];
  DenoiseConfig cfg;
  cfg.gate_threshold_db = 0.0;
  cfg.noise_floor_percentile = 1e-9;
  const auto out = denoise(clip, cfg);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    max_diff = std::max(max_diff, std::abs(out.samples[i] - clip.samples[i]));
  }
  CHECK(max_diff < 1e-3);
}

TEST_CASE("denoise: tone-in-noise SNR improves, band energy never grows") {
  // Tone 30 dB below the broadband noise power.
  const std::size_t n = 16000;
  auto clip = testsig::sine(220.0, 1.0, 16000, 0.02);
  const auto noise = testsig::white_noise(n, 0.02 * std::sqrt(0.5) * std::pow(10.0, 1.5), 5);
  for (std::size_t i = 0; i < n; ++i) clip.samples[i] += noise[i];
  const auto out = denoise(clip);
  CHECK(out.samples.size() == n);
  CHECK(peak_abs(out.samples) <= 1.0);

  std::vector<double> in_seg(clip.samples.begin() + 4000, clip.samples.begin() + 8000);
  std::vector<double> out_seg(out.samples.begin() + 4000, out.samples.begin() + 8000);
  auto snr = [](const std::vector<double>& x) {
    const double tone = testsig::band_energy(x, 16000, 200.0, 240.0);
    const double total = testsig::band_energy(x, 16000, 0.0, 8000.0);
    return tone / (total - tone);
  };
  CHECK(snr(out_seg) > snr(in_seg));

  // Per 500 Hz band, output energy does not exceed input energy.
  for (double lo = 0.0; lo < 8000.0; lo += 500.0) {
    const double ein = testsig::band_energy(in_seg, 16000, lo, lo + 500.0);
    const double eout = testsig::band_energy(out_seg, 16000, lo, lo + 500.0);
    CAPTURE(lo);
    CHECK(eout <= ein * (1.0 + 1e-9));
  }
}

TEST_CASE("denoise never produces samples beyond full scale") {
  auto clip = testsig::sine(500.0, 0.5, 16000, 1.0);
  const auto out = denoise(clip);
  CHECK(peak_abs(out.samples) <= 1.0);
}

TEST_CASE("DenoiseConfig validation") {
  DenoiseConfig cfg;
  cfg.fft_size = 1000;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.fft_size = 512;
  cfg.gate_threshold_db = -1;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("rfft/irfft invert each other") {
  const auto x = testsig::white_noise(256, 1.0, 2);
  const auto back = dsp::irfft(dsp::rfft(x, 256), 256);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(back[i] == doctest::Approx(x[i]).epsilon(1e-12));
}

TEST_CASE("duration range check warns but accepts") {
  CHECK_FALSE(duration_in_expected_range(testsig::sine(100, 1.0)));
  CHECK(duration_in_expected_range(testsig::sine(100, 6.0)));
}
