#include "speechconf/metrics.hpp"

#include <string>

#include "speechconf/error.hpp"

namespace speechconf {

ClassificationMetrics classification_metrics(std::span<const int> predicted, std::span<const int> truth) {
  if (truth.empty()) throw Error(Errc::EmptyInput, "no predictions to score");
  if (predicted.size() != truth.size()) {
    throw Error(Errc::DimMismatch, std::to_string(predicted.size()) + " predictions for " +
                                       std::to_string(truth.size()) + " labels");
  }
  Matrix counts(3, 3);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] > 2 || predicted[i] < 0 || predicted[i] > 2) {
      throw Error(Errc::InvalidArgument, "labels must be 0, 1 or 2");
    }
    counts(static_cast<std::size_t>(truth[i]), static_cast<std::size_t>(predicted[i])) += 1.0;
  }
  ClassificationMetrics m;
  m.confusion = Matrix(3, 3);
  double correct = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    double row = 0.0, col = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      row += counts(c, j);
      col += counts(j, c);
    }
    const double tp = counts(c, c);
    correct += tp;
    m.support[c] = static_cast<std::size_t>(row);
    m.precision[c] = col > 0.0 ? tp / col : 0.0;
    m.recall[c] = row > 0.0 ? tp / row : 0.0;
    const double denom = m.precision[c] + m.recall[c];
    m.f1[c] = denom > 0.0 ? 2.0 * m.precision[c] * m.recall[c] / denom : 0.0;
    for (std::size_t j = 0; j < 3; ++j) m.confusion(c, j) = row > 0.0 ? counts(c, j) / row : 0.0;
  }
  m.macro_f1 = (m.f1[0] + m.f1[1] + m.f1[2]) / 3.0;
  m.accuracy = correct / static_cast<double>(truth.size());
  return m;
}

}  // namespace speechconf
