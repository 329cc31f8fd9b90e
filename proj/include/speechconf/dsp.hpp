#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

namespace speechconf::dsp {

/// Reusable real FFT of a fixed power-of-two size. Holds FFTW plans and
/// aligned buffers; not shareable across threads, cheap to create one per call.
class RealFft {
 public:
  explicit RealFft(std::size_t n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
  RealFft(RealFft&&) noexcept;
  RealFft& operator=(RealFft&&) noexcept;

  std::size_t size() const noexcept { return n_; }
  std::size_t bins() const noexcept { return n_ / 2 + 1; }

  /// Zero-pads `frame` to n when shorter.
  void forward(std::span<const double> frame, std::vector<std::complex<double>>& out);
  /// Unnormalized FFTW inverse divided by n.
  void inverse(std::span<const std::complex<double>> bins, std::vector<double>& out);

 private:
  struct Impl;
  std::size_t n_ = 0;
  std::unique_ptr<Impl> impl_;
};

/// One-shot helpers over RealFft.
std::vector<std::complex<double>> rfft(std::span<const double> frame, std::size_t n);
/// Inverse of rfft: irfft(rfft(x, n), n) == x.
std::vector<double> irfft(std::span<const std::complex<double>> bins, std::size_t n);

std::vector<double> hann_window(std::size_t n, bool periodic);
bool is_power_of_two(std::size_t n);

}  // namespace speechconf::dsp
