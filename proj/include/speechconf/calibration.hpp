#pragma once

#include <span>

#include "speechconf/matrix.hpp"

namespace speechconf {

struct CalibrationModel {
  double temperature = 1.0;
  double nll_before = 0.0;  // at T = 1
  double nll_after = 0.0;
};

inline constexpr double kMinTemperature = 0.05;
inline constexpr double kMaxTemperature = 20.0;

/// Mean negative log-likelihood of softmax(z / T).
double temperature_nll(const Matrix& logits, std::span<const int> labels, double temperature);

/// Golden-section search on log T over [log 0.05, log 20]. The result is never
/// worse than T = 1 or either bound. Warns when a bound is the optimum.
CalibrationModel fit_temperature(const Matrix& logits, std::span<const int> labels);

/// softmax(z / T) row-wise.
Matrix apply_temperature(const Matrix& logits, double temperature);

}  // namespace speechconf
