#include "speechconf/matrix.hpp"

#include <algorithm>
#include <cmath>

#include "speechconf/error.hpp"

namespace speechconf {

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> init) {
  rows_ = init.size();
  cols_ = rows_ ? init.begin()->size() : 0;
  data_.reserve(rows_ * cols_);
  for (const auto& r : init) {
    if (r.size() != cols_) throw Error(Errc::ShapeMismatch, "ragged matrix initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return {};
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != m.cols()) throw Error(Errc::ShapeMismatch, "ragged rows");
    std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  }
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw Error(Errc::ShapeMismatch, "matmul inner dimensions differ");
  Matrix out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.data().data() + i * n;
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.data().data() + k * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += aik * brow[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw Error(Errc::ShapeMismatch, "matmul_nt inner dimensions differ");
  Matrix out(a.rows(), b.rows());
  const std::size_t inner = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.data().data() + i * inner;
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* brow = b.data().data() + j * inner;
      double acc = 0.0;
      for (std::size_t k = 0; k < inner; ++k) acc += arow[k] * brow[k];
      out(i, j) = acc;
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw Error(Errc::ShapeMismatch, "matmul_tn inner dimensions differ");
  Matrix out(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double* brow = b.data().data() + r * n;
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double ari = a(r, i);
      if (ari == 0.0) continue;
      double* o = out.data().data() + i * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += ari * brow[j];
    }
  }
  return out;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), m.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    auto src = m.row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto z = logits.row(i);
    auto p = out.row(i);
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
      p[j] = std::exp(z[j] - mx);
      sum += p[j];
    }
    for (double& v : p) v /= sum;
  }
  return out;
}

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

}  // namespace speechconf
