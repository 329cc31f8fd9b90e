#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "speechconf/audio.hpp"
#include "speechconf/calibration.hpp"
#include "speechconf/error.hpp"
#include "speechconf/features.hpp"
#include "speechconf/log.hpp"
#include "speechconf/rng.hpp"

using namespace speechconf;

using oracle::calibrated_set;

TEST_CASE("apply_temperature: closed forms") {
  const Matrix z{{2.0, 0.0, 0.0}};
  const auto p = apply_temperature(z, 2.0);
  CHECK(p(0, 0) == doctest::Approx(0.5761).epsilon(1e-4));
  CHECK(p(0, 1) == doctest::Approx(0.2119).epsilon(1e-4));
  CHECK(p(0, 2) == doctest::Approx(0.2119).epsilon(1e-4));
  CHECK(apply_temperature(z, 1.0) == softmax_rows(z));
  const auto flat = apply_temperature(Matrix{{2.0, 0.0, -1.0}}, 1000.0);
  for (double v : flat.row(0)) CHECK(std::abs(v - 1.0 / 3.0) < 1e-3);
  for (double t : {0.0, -1.0}) {
    try {
      apply_temperature(z, t);
      FAIL("expected NonPositiveTemperature");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::NonPositiveTemperature);
    }
  }
}

TEST_CASE("apply_temperature: argmax invariance and normalization") {
  Rng rng(3);
  Matrix z(10000, 3);
  for (double& v : z.data()) v = 4.0 * rng.normal();
  for (double t : {0.05, 0.7, 1.0, 3.0, 20.0}) {
    const auto p = apply_temperature(z, t);
    for (std::size_t i = 0; i < z.rows(); ++i) {
      const auto r = p.row(i);
      REQUIRE(argmax(r) == argmax(z.row(i)));
      REQUIRE(std::abs(std::accumulate(r.begin(), r.end(), 0.0) - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("fit_temperature: calibrated set stays near T = 1") {
  const auto s = calibrated_set(5000, 11);
  const auto m = fit_temperature(s.logits, s.labels);
  CHECK(std::abs(m.temperature - 1.0) <= 0.05);
  CHECK(m.nll_after <= m.nll_before + 1e-12);
}

TEST_CASE("fit_temperature: scaled logits recover the scale") {
  auto s = calibrated_set(5000, 12);
  for (double& v : s.logits.data()) v *= 3.0;
  const auto m = fit_temperature(s.logits, s.labels);
  CHECK(std::abs(m.temperature / 3.0 - 1.0) <= 0.05);
  // Grid oracle on the same objective.
  CHECK(std::abs(m.temperature - oracle::grid_temperature(s.logits, s.labels)) < 1e-3);
  CHECK(std::abs(temperature_nll(s.logits, s.labels, 2.0) - oracle::nll(s.logits, s.labels, 2.0)) < 1e-12);
}

TEST_CASE("fit_temperature: never worse than identity or bounds") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    Rng rng(seed);
    Matrix z(40, 3);
    for (double& v : z.data()) v = 3.0 * rng.normal();
    std::vector<int> y(40);
    for (int& v : y) v = static_cast<int>(rng.index(3));
    y[0] = 0;
    y[1] = 1;
    int warnings = 0;
    set_warning_sink([&](std::string_view) { ++warnings; });
    const auto m = fit_temperature(z, y);
    set_warning_sink(nullptr);
    CHECK(m.temperature > 0.0);
    CHECK(m.nll_after <= temperature_nll(z, y, 1.0) + 1e-12);
    CHECK(m.nll_after <= temperature_nll(z, y, kMinTemperature) + 1e-12);
    CHECK(m.nll_after <= temperature_nll(z, y, kMaxTemperature) + 1e-12);
  }
}

TEST_CASE("fit_temperature: bound hit warns; degenerate labels throw") {
  // Random labels on confident logits want an enormous temperature.
  Rng rng(5);
  Matrix z(300, 3);
  std::vector<int> y(300);
  for (std::size_t i = 0; i < 300; ++i) {
    for (std::size_t c = 0; c < 3; ++c) z(i, c) = 1e4 * rng.normal();
    y[i] = static_cast<int>(i % 3);
  }
  std::vector<std::string> messages;
  set_warning_sink([&](std::string_view m) { messages.emplace_back(m); });
  const auto m = fit_temperature(z, y);
  set_warning_sink(nullptr);
  CHECK(m.temperature == doctest::Approx(kMaxTemperature).epsilon(1e-3));
  CHECK(messages.size() == 1);

  const std::vector<int> same{1, 1, 1};
  try {
    fit_temperature(Matrix(3, 3), same);
    FAIL("expected DegenerateLabels");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::DegenerateLabels);
  }
}

TEST_CASE("calibrated auxiliary probabilities compose into a feature vector") {
  AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples.resize(16000);
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    clip.samples[i] = 0.3 * std::sin(2.0 * M_PI * 180.0 * static_cast<double>(i) / 16000.0);
  }
  const auto prosodic = extract_prosodic(clip);
  // Five disfluency logits and one two-class stress head.
  const auto disfluency = apply_temperature(Matrix{{1.0, -2.0, 0.5, 3.0, -1.0}}, 1.7);
  const auto stress = apply_temperature(Matrix{{0.4, -0.4}}, 1.7);
  const auto fv = assemble_feature_vector("clip", prosodic.values, disfluency.row(0), stress(0, 0));
  CHECK_FALSE(fv.normalized);
  const auto v = fv.values();
  CHECK(v.size() == kFeatureDim);
  for (double x : v) CHECK(std::isfinite(x));
  CHECK(v[kProsodicDim + 3] == disfluency(0, 3));
  CHECK(v[kFeatureDim - 1] == stress(0, 0));
}
