#pragma once

#include <array>
#include <cstddef>
#include <span>

#include "speechconf/matrix.hpp"

namespace speechconf {

struct ClassificationMetrics {
  std::array<double, 3> f1{};         // low, medium, high
  std::array<double, 3> precision{};
  std::array<double, 3> recall{};
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  Matrix confusion;                    // 3x3, rows = true class, row-normalized
  std::array<std::size_t, 3> support{};
};

/// Per-class F1 with 0 for undefined ratios, unweighted macro mean, and the
/// confusion matrix normalized by true-class counts (an empty row stays 0).
/// Throws EmptyInput on empty input, DimMismatch on unequal lengths.
ClassificationMetrics classification_metrics(std::span<const int> predicted, std::span<const int> truth);

}  // namespace speechconf
