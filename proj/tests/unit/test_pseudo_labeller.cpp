#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "expect.hpp"
#include "speechconf/log.hpp"
#include "speechconf/pseudo_labeller.hpp"
#include "speechconf/rng.hpp"
#include "speechconf/textio.hpp"

using namespace speechconf;
using testing::code_of;

namespace {

/// Three well separated classes along the first ten dimensions.
struct Separable {
  std::vector<FeatureVector> raw;
  std::vector<int> labels;
};

Separable separable(std::size_t n, std::uint64_t seed, const std::string& prefix = "s") {
  Rng rng(seed);
  Separable s;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 3);
    FeatureVector fv;
    fv.id = prefix + std::to_string(i);
    for (auto& v : fv.prosodic) v = rng.normal();
    for (std::size_t d = 0; d < 10; ++d) fv.prosodic[d] += 4.0 * (y - 1);
    for (auto& p : fv.disfluency_probs) p = 0.5;
    fv.stress_prob = 0.5;
    s.raw.push_back(fv);
    s.labels.push_back(y);
  }
  return s;
}

std::vector<FeatureVector> normalized(const Normalizer& n, const std::vector<FeatureVector>& raw) {
  std::vector<FeatureVector> out;
  for (const auto& fv : raw) out.push_back(normalizer_apply(n, fv));
  return out;
}

Matrix random_probs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Matrix z(n, 3);
  for (double& v : z.data()) v = 2.0 * rng.normal();
  return softmax_rows(z);
}

std::vector<std::string> ids_of(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("p" + std::to_string(i));
  return ids;
}

LabellerConfig quick_config() {
  LabellerConfig cfg;
  cfg.max_epochs = 40;
  cfg.internal_folds = 0;
  return cfg;
}

}  // namespace

TEST_CASE("filter_by_confidence: five-item threshold example") {
  const Matrix p{{0.95, 0.03, 0.02}, {0.05, 0.85, 0.10}, {0.20, 0.10, 0.70},
                 {0.09, 0.10, 0.81}, {0.30, 0.30, 0.40}};
  // Three classes cannot have a max below 1/3, so the last row uses 0.40.
  const auto ids = ids_of(5);
  const auto s = filter_by_confidence(ids, p, 0.8, 2);
  CHECK(s.retained == 3);
  CHECK(s.pool_size == 5);
  CHECK(s.ids() == std::vector<std::string>{"p0", "p1", "p3"});
  CHECK(s.labels() == std::vector<int>{0, 1, 2});
  for (const auto& x : s.samples) CHECK(x.fold == 2);

  // max probability exactly at the threshold is kept
  const Matrix edge{{0.8, 0.1, 0.1}};
  const std::vector<std::string> one{"e"};
  CHECK(filter_by_confidence(one, edge, 0.8, 0).retained == 1);
}

TEST_CASE("filter_by_confidence: tau 0 keeps all, thresholds nest, mean >= tau") {
  const auto p = random_probs(1000, 4);
  const auto ids = ids_of(1000);
  CHECK(filter_by_confidence(ids, p, 0.0, 0).retained == 1000);
  const auto s8 = filter_by_confidence(ids, p, 0.8, 0);
  const auto s9 = filter_by_confidence(ids, p, 0.9, 0);
  REQUIRE(s9.retained > 0);
  REQUIRE(s9.retained < s8.retained);
  const auto a = s8.ids(), b = s9.ids();
  const std::set<std::string> keep8(a.begin(), a.end());
  for (const auto& id : b) CHECK(keep8.count(id) == 1);
  for (double tau : {0.5, 0.8, 0.9}) {
    const auto s = filter_by_confidence(ids, p, tau, 0);
    double mean = 0.0;
    for (const auto& x : s.samples) {
      CHECK(x.max_prob >= tau);
      mean += x.max_prob / static_cast<double>(s.retained);
    }
    CHECK(mean >= tau);
  }
  CHECK(code_of([&] {
          const std::vector<std::string> short_ids{"a"};
          filter_by_confidence(short_ids, p, 0.8, 0);
        }) == Errc::DimMismatch);
}

TEST_CASE("PseudoLabelConfig: tau range") {
  PseudoLabelConfig c;
  CHECK(c.tau == 0.8);
  CHECK(c.calibrate_before_filter);
  c.validate();
  c.tau = 1.0;
  c.validate();
  c.tau = 1.2;
  CHECK(code_of([&] { c.validate(); }) == Errc::InvalidConfig);
  c.tau = -0.1;
  CHECK(code_of([&] { c.validate(); }) == Errc::InvalidConfig);
}

TEST_CASE("pseudo_class_balance: inverse frequency and absent-class warning") {
  PseudoSet s;
  for (int i = 0; i < 10; ++i) s.samples.push_back({"l" + std::to_string(i), 0, 0.9, 0});
  for (int i = 0; i < 90; ++i) s.samples.push_back({"h" + std::to_string(i), 2, 0.9, 0});
  s.retained = s.samples.size();
  std::vector<std::string> warnings;
  set_warning_sink([&](std::string_view m) { warnings.emplace_back(m); });
  const auto cfg = pseudo_class_balance(s);
  set_warning_sink(nullptr);
  CHECK(cfg.weight_of(0) == doctest::Approx(1.0 / 10.0));
  CHECK(cfg.weight_of(2) == doctest::Approx(1.0 / 90.0));
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("medium") != std::string::npos);

  PseudoSet balanced;
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 4; ++i) balanced.samples.push_back({std::to_string(c) + "_" + std::to_string(i), c, 0.9, 0});
  }
  const auto b = pseudo_class_balance(balanced);
  CHECK(b.weight_of(0) == b.weight_of(1));
  CHECK(b.weight_of(1) == b.weight_of(2));

  CHECK(code_of([] { pseudo_class_balance(PseudoSet{}); }) == Errc::EmptyPseudoSet);
}

TEST_CASE("pseudo_class_balance: 30000 draws over counts 50/100/150 are uniform") {
  PseudoSet s;
  const int counts[3] = {50, 100, 150};
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < counts[c]; ++i) s.samples.push_back({std::to_string(c) + "_" + std::to_string(i), c, 0.9, 0});
  }
  const auto cfg = pseudo_class_balance(s, 11);
  const auto labels = s.labels();
  const auto draws = nn::weighted_sample(cfg, labels, 30000);
  std::array<double, 3> freq{};
  for (auto i : draws) freq[static_cast<std::size_t>(labels[i])] += 1.0 / 30000.0;
  for (double f : freq) CHECK(std::abs(f - 1.0 / 3.0) < 0.01);
}

TEST_CASE("train_labeller: separable data, guards and determinism") {
  const auto data = separable(300, 1);
  const auto norm = normalizer_fit(data.raw);
  const auto gt = normalized(norm, data.raw);

  const auto lab = train_labeller(gt, data.labels, {}, norm, LabellerConfig{});
  REQUIRE(lab.report.fold_macro_f1.size() == 5);
  CHECK(lab.report.macro_f1 >= 0.95);
  CHECK(lab.calibration.temperature > 0.0);
  CHECK(lab.train_ids.size() == 300);

  CHECK(code_of([&] { train_labeller(gt, data.labels, {"s17"}, norm, quick_config()); }) == Errc::LeakageDetected);
  CHECK(code_of([&] { train_labeller(normalized(normalizer_fit(std::span(data.raw).first(100)), data.raw), data.labels,
                                     {}, norm, quick_config()); }) == Errc::NormalizerMismatch);
  std::vector<int> two_classes = data.labels;
  for (int& y : two_classes) y = y == 1 ? 0 : y;
  CHECK(code_of([&] { train_labeller(gt, two_classes, {}, norm, quick_config()); }) == Errc::ClassAbsent);

  auto a = train_labeller(gt, data.labels, {}, norm, quick_config());
  auto b = train_labeller(gt, data.labels, {}, norm, quick_config());
  CHECK(labeller_hash(a) == labeller_hash(b));
}

TEST_CASE("generate_pseudo_labels: disjointness, determinism, provenance and files") {
  const auto data = separable(150, 2, "gt");
  const auto norm = normalizer_fit(data.raw);
  const auto gt = normalized(norm, data.raw);
  auto lab = train_labeller(gt, data.labels, {}, norm, quick_config());

  const auto pool_data = separable(400, 3, "pool");
  const auto pool = normalized(norm, pool_data.raw);
  const std::set<std::string> gt_ids(lab.train_ids.begin(), lab.train_ids.end());

  PseudoLabelConfig pc;
  const auto s = generate_pseudo_labels(lab, pool, gt_ids, pc, 1);
  CHECK(s.pool_size == 400);
  CHECK(s.retained == s.samples.size());
  CHECK(s.retained > 300);
  CHECK(s.provenance == labeller_hash(lab));
  CHECK(s.fold == 1);
  std::size_t correct = 0;
  for (const auto& x : s.samples) {
    CHECK(gt_ids.count(x.clip_id) == 0);
    CHECK(x.max_prob >= pc.tau);
    correct += x.label == pool_data.labels[std::stoul(x.clip_id.substr(4))];
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(s.retained) > 0.97);

  const auto again = generate_pseudo_labels(lab, pool, gt_ids, pc, 1);
  CHECK(again.ids() == s.ids());
  CHECK(again.labels() == s.labels());

  std::vector<FeatureVector> overlapping = pool;
  overlapping.push_back(gt[0]);
  CHECK(code_of([&] { generate_pseudo_labels(lab, overlapping, gt_ids, pc, 1); }) == Errc::PoolOverlapsGroundTruth);
  CHECK(code_of([&] { generate_pseudo_labels(lab, pool_data.raw, gt_ids, pc, 1); }) == Errc::NormalizerMismatch);

  testing::TempDir dir("pseudo");
  write_pseudo_set(dir / "p.csv", s);
  const auto back = read_pseudo_set(dir / "p.csv");
  CHECK(back.ids() == s.ids());
  CHECK(back.labels() == s.labels());
  CHECK(back.provenance == s.provenance);
  CHECK(back.pool_size == s.pool_size);
  CHECK(back.tau == s.tau);
  CHECK(std::filesystem::exists(dir / "p.csv.json"));
  // Dropping a row no longer matches the sidecar.
  auto lines = textio::read_lines(dir / "p.csv");
  lines.pop_back();
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  textio::write_file(dir / "p.csv", text);
  CHECK(code_of([&] { read_pseudo_set(dir / "p.csv"); }) == Errc::ChecksumMismatch);
}

TEST_CASE("labeller checkpoint round trip") {
  const auto data = separable(120, 5);
  const auto norm = normalizer_fit(data.raw);
  const auto gt = normalized(norm, data.raw);
  auto lab = train_labeller(gt, data.labels, {}, norm, quick_config());
  auto back = labeller_from_checkpoint(nn::decode_checkpoint(nn::encode_checkpoint(labeller_checkpoint(lab))));
  CHECK(back.calibration.temperature == lab.calibration.temperature);
  CHECK(back.train_ids == lab.train_ids);
  CHECK(back.normalizer.tag() == norm.tag());
  CHECK(back.probabilities(gt, true) == lab.probabilities(gt, true));
  CHECK(labeller_hash(back) == labeller_hash(lab));
}
