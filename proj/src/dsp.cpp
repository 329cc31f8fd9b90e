#include "speechconf/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>

#include "speechconf/audio.hpp"
#include "speechconf/error.hpp"

namespace speechconf::dsp {

namespace {
// The FFTW planner is not thread-safe; execution is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

struct RealFft::Impl {
  double* real = nullptr;
  fftw_complex* spec = nullptr;
  fftw_plan fwd = nullptr;
  fftw_plan inv = nullptr;

  ~Impl() {
    std::lock_guard lock(planner_mutex());
    if (fwd) fftw_destroy_plan(fwd);
    if (inv) fftw_destroy_plan(inv);
    fftw_free(real);
    fftw_free(spec);
  }
};

RealFft::RealFft(std::size_t n) : n_(n), impl_(std::make_unique<Impl>()) {
  if (!is_power_of_two(n)) throw Error(Errc::InvalidArgument, "FFT size must be a power of two");
  std::lock_guard lock(planner_mutex());
  impl_->real = fftw_alloc_real(n);
  impl_->spec = fftw_alloc_complex(n / 2 + 1);
  const int ni = static_cast<int>(n);
  impl_->fwd = fftw_plan_dft_r2c_1d(ni, impl_->real, impl_->spec, FFTW_ESTIMATE);
  impl_->inv = fftw_plan_dft_c2r_1d(ni, impl_->spec, impl_->real, FFTW_ESTIMATE);
}

RealFft::~RealFft() = default;
RealFft::RealFft(RealFft&&) noexcept = default;
RealFft& RealFft::operator=(RealFft&&) noexcept = default;

void RealFft::forward(std::span<const double> frame, std::vector<std::complex<double>>& out) {
  const std::size_t m = std::min(frame.size(), n_);
  std::copy_n(frame.begin(), m, impl_->real);
  std::fill(impl_->real + m, impl_->real + n_, 0.0);
  fftw_execute(impl_->fwd);
  out.resize(bins());
  for (std::size_t k = 0; k < bins(); ++k) out[k] = {impl_->spec[k][0], impl_->spec[k][1]};
}

void RealFft::inverse(std::span<const std::complex<double>> in, std::vector<double>& out) {
  if (in.size() != bins()) throw Error(Errc::ShapeMismatch, "inverse FFT bin count");
  for (std::size_t k = 0; k < bins(); ++k) {
    impl_->spec[k][0] = in[k].real();
    impl_->spec[k][1] = in[k].imag();
  }
  fftw_execute(impl_->inv);  // c2r destroys its input, which is ours
  out.resize(n_);
  const double scale = 1.0 / static_cast<double>(n_);
  for (std::size_t i = 0; i < n_; ++i) out[i] = impl_->real[i] * scale;
}

std::vector<std::complex<double>> rfft(std::span<const double> frame, std::size_t n) {
  RealFft fft(n);
  std::vector<std::complex<double>> out;
  fft.forward(frame, out);
  return out;
}

std::vector<double> irfft(std::span<const std::complex<double>> bins, std::size_t n) {
  RealFft fft(n);
  std::vector<double> out;
  fft.inverse(bins, out);
  return out;
}

std::vector<double> hann_window(std::size_t n, bool periodic) {
  std::vector<double> w(n);
  const double denom = periodic ? static_cast<double>(n) : static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / denom);
  }
  return w;
}

bool is_power_of_two(std::size_t n) { return n >= 2 && (n & (n - 1)) == 0; }

}  // namespace speechconf::dsp
