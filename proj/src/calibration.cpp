#include "speechconf/calibration.hpp"

#include <cmath>
#include <set>

#include "speechconf/error.hpp"
#include "speechconf/log.hpp"
#include "speechconf/textio.hpp"

namespace speechconf {

namespace {

void check_inputs(const Matrix& logits, std::span<const int> labels) {
  if (logits.rows() != labels.size()) throw Error(Errc::DimMismatch, "logits and labels differ in length");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols()) {
      throw Error(Errc::InvalidArgument, "label out of range: " + std::to_string(y));
    }
  }
}

}  // namespace

double temperature_nll(const Matrix& logits, std::span<const int> labels, double temperature) {
  if (!(temperature > 0.0)) throw Error(Errc::NonPositiveTemperature, "temperature must be positive");
  check_inputs(logits, labels);
  if (labels.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    double mx = -INFINITY;
    for (double z : row) mx = std::max(mx, z / temperature);
    double s = 0.0;
    for (double z : row) s += std::exp(z / temperature - mx);
    total += mx + std::log(s) - row[static_cast<std::size_t>(labels[i])] / temperature;
  }
  return total / static_cast<double>(labels.size());
}

CalibrationModel fit_temperature(const Matrix& logits, std::span<const int> labels) {
  check_inputs(logits, labels);
  const std::set<int> distinct(labels.begin(), labels.end());
  if (labels.size() < 2 || distinct.size() < 2) {
    throw Error(Errc::DegenerateLabels, "temperature fitting needs at least 2 samples and 2 distinct labels");
  }
  auto f = [&](double log_t) { return temperature_nll(logits, labels, std::exp(log_t)); };

  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = std::log(kMinTemperature), b = std::log(kMaxTemperature);
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > 1e-6) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = f(d);
    }
  }

  CalibrationModel m;
  m.nll_before = f(0.0);
  double best_log_t = 0.5 * (a + b);
  double best = f(best_log_t);
  // The objective is unimodal in practice but not guaranteed; never return
  // something worse than the identity or a bound.
  for (double cand : {0.0, std::log(kMinTemperature), std::log(kMaxTemperature)}) {
    const double v = f(cand);
    if (v < best) {
      best = v;
      best_log_t = cand;
    }
  }
  m.temperature = std::exp(best_log_t);
  m.nll_after = best;
  const double span = std::log(kMaxTemperature) - std::log(kMinTemperature);
  if (best_log_t - std::log(kMinTemperature) < 1e-4 * span || std::log(kMaxTemperature) - best_log_t < 1e-4 * span) {
    warn("fitted temperature " + textio::format_double(m.temperature) + " sits at the search bound");
  }
  return m;
}

Matrix apply_temperature(const Matrix& logits, double temperature) {
  if (!(temperature > 0.0)) throw Error(Errc::NonPositiveTemperature, "temperature must be positive");
  if (temperature == 1.0) return softmax_rows(logits);
  Matrix scaled = logits;
  for (double& z : scaled.data()) z /= temperature;
  return softmax_rows(scaled);
}

}  // namespace speechconf
