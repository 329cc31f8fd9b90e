// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (capped at 1). An optional argument filters
// criteria by substring of their name.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "signals.hpp"
#include "speechconf/annotation.hpp"
#include "speechconf/calibration.hpp"
#include "speechconf/error.hpp"
#include "speechconf/evaluation.hpp"
#include "speechconf/features.hpp"
#include "speechconf/hybrid.hpp"
#include "speechconf/log.hpp"
#include "speechconf/neural.hpp"
#include "speechconf/pseudo_labeller.hpp"
#include "speechconf/synthetic.hpp"
#include "speechconf/textio.hpp"

using namespace speechconf;

namespace {

/// Collects failed conditions with a short reason each.
class Verdict {
 public:
  void require(bool ok, const std::string& what) {
    if (!ok) failures_.push_back(what);
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool pass() const { return failures_.empty(); }
  std::string detail() const {
    std::string s;
    const auto& parts = pass() ? notes_ : failures_;
    for (const auto& p : parts) s += (s.empty() ? "" : "; ") + p;
    return s;
  }

 private:
  std::vector<std::string> failures_, notes_;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Matrix m(r, c);
  for (double& v : m.data()) v = scale * rng.normal();
  return m;
}

std::vector<int> random_labels(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> y(n);
  for (int& v : y) v = static_cast<int>(rng.index(3));
  return y;
}

/// Worst relative error of an analytic logit gradient against central differences.
template <class LossFn>
double logit_fd_error(Matrix z, const Matrix& analytic, LossFn loss) {
  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t k = 0; k < z.size(); ++k) {
    const double keep = z.data()[k];
    z.data()[k] = keep + h;
    const double up = loss(z);
    z.data()[k] = keep - h;
    const double down = loss(z);
    z.data()[k] = keep;
    const double num = (up - down) / (2 * h);
    const double a = analytic.data()[k];
    worst = std::max(worst, std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-3}));
  }
  return worst;
}

// ---- criteria ---------------------------------------------------------------

void gradient_correctness(Verdict& v) {
  using namespace nn;
  const auto x = random_matrix(6, 5, 21);
  const auto y = random_labels(6, 22);
  auto layer_check = [&](const char* name, Mlp m, double bound) {
    const double e = grad_check(m, x, y);
    v.require(e < bound, std::string(name) + " rel err " + fmt(e));
    return e;
  };
  const double linear = layer_check("linear-only", Mlp({LayerSpec::dense(5, 3)}, 0), 1e-7);

  double worst = 0.0;
  worst = std::max(worst, layer_check("dense+gelu", Mlp({LayerSpec::dense(5, 8), LayerSpec::gelu(8), LayerSpec::dense(8, 3)}, 0), 1e-4));
  worst = std::max(worst, layer_check("dense+relu", Mlp({LayerSpec::dense(5, 8), LayerSpec::relu(8), LayerSpec::dense(8, 3)}, 1), 1e-4));
  {
    Mlp m({LayerSpec::sigmoid_gate(5), LayerSpec::dense(5, 3)}, 2);
    Rng rng(5);
    for (double& g : m.layers()[0].params[0].value.data()) g = rng.normal();
    worst = std::max(worst, layer_check("sigmoid gate", m, 1e-4));
  }
  {
    Mlp m({LayerSpec::dense(5, 4), LayerSpec::batch_norm(4), LayerSpec::gelu(4), LayerSpec::dense(4, 3)}, 3);
    Rng rng(6);
    auto& bn = m.layers()[1];
    for (double& s : bn.running_mean.data()) s = rng.normal();
    for (double& s : bn.running_var.data()) s = 0.5 + rng.uniform();
    for (double& s : bn.params[0].value.data()) s = 0.5 + rng.uniform();
    for (double& s : bn.params[1].value.data()) s = rng.normal();
    worst = std::max(worst, layer_check("batch norm (frozen stats)", m, 1e-4));
  }

  // plain cross-entropy
  const auto z = random_matrix(8, 3, 5, 2.0);
  const auto yz = random_labels(8, 6);
  const double ce = logit_fd_error(z, cross_entropy(z, yz).dlogits, [&](const Matrix& m) { return cross_entropy(m, yz).loss; });
  v.require(ce < 1e-4, "plain CE rel err " + fmt(ce));

  // source-boosted cross-entropy at the default boost and class weights
  HybridConfig hc;
  v.require(hc.gt_boost == 18.0 && hc.class_weights[1] == 1.2, "loss defaults are not gt_boost 18, medium 1.2");
  std::vector<Source> src;
  for (std::size_t i = 0; i < 8; ++i) src.push_back(i % 3 == 0 ? Source::GroundTruth : Source::Pseudo);
  const double sb = logit_fd_error(z, source_boosted_loss(z, yz, src, hc).dlogits,
                                   [&](const Matrix& m) { return source_boosted_loss(m, yz, src, hc).loss; });
  v.require(sb < 1e-4, "source-boosted CE rel err " + fmt(sb));

  // the assembled two-stream model under the boosted loss
  HybridConfig small = hc;
  small.dropout = 0.0;
  small.hidden = {6, 5};
  HybridModel hm(4, small);
  {
    Rng rng(9);
    for (auto* p : hm.embedding_params()) {
      for (double& w : p->value.data()) w = 0.3 * rng.normal();
    }
  }
  const auto e = random_matrix(7, 4, 1), f = random_matrix(7, kFeatureDim, 2);
  const std::vector<int> y7{0, 1, 2, 1, 0, 2, 1};
  std::vector<Source> s7;
  for (std::size_t i = 0; i < 7; ++i) s7.push_back(i % 2 ? Source::Pseudo : Source::GroundTruth);
  auto loss = [&] { return source_boosted_loss(hm.forward(e, f, Mode::Eval).fused, y7, s7, small).loss; };
  auto analytic = [&] {
    hm.zero_grad();
    hm.backward(source_boosted_loss(hm.forward(e, f, Mode::Eval).fused, y7, s7, small).dlogits);
  };
  auto params = hm.embedding_params();
  for (auto* p : hm.feature_params()) params.push_back(p);
  const double hybrid = grad_check(params, loss, analytic);
  v.require(hybrid < 1e-4, "two-stream model rel err " + fmt(hybrid));

  v.note("max rel err: layers " + fmt(worst, 2) + ", linear " + fmt(linear, 2) + ", CE " + fmt(ce, 2) +
         ", boosted CE " + fmt(sb, 2) + ", two-stream " + fmt(hybrid, 2));
}

void dawid_skene_oracle(Verdict& v) {
  const std::vector<double> acc{0.9, 0.8, 0.7, 0.6, 0.4};
  const auto sim = synthetic::simulate_ratings(200, acc, {0.35, 0.5, 0.15}, 2024);
  const auto ds = dawid_skene(sim.matrix);
  double worst = 0.0;
  for (std::size_t r = 0; r < acc.size(); ++r) worst = std::max(worst, std::abs(ds.rater_accuracy(r) - acc[r]));
  v.require(worst <= 0.05, "rater accuracy off by " + fmt(worst));
  std::size_t drops = 0;
  for (std::size_t t = 1; t < ds.objective.size(); ++t) {
    drops += ds.objective[t] < ds.objective[t - 1] - 1e-9 * std::abs(ds.objective[t - 1]);
  }
  v.require(drops == 0, std::to_string(drops) + " log-likelihood decreases");
  const auto mv = majority_vote(sim.matrix);
  std::size_t ds_hits = 0, mv_hits = 0;
  for (std::size_t i = 0; i < sim.truth.size(); ++i) {
    ds_hits += ds.labels[i] == sim.truth[i];
    mv_hits += mv[i] == sim.truth[i];
  }
  v.require(ds_hits > mv_hits, "consensus " + std::to_string(ds_hits) + " <= majority " + std::to_string(mv_hits));
  v.note("max accuracy error " + fmt(worst, 3) + ", " + std::to_string(ds.iterations) + " EM iterations, consensus " +
         std::to_string(ds_hits) + "/200 vs majority " + std::to_string(mv_hits) + "/200");
}

void icc_oracle(Verdict& v) {
  const auto fixture = oracle::read_numeric_table(std::filesystem::path(SPEECHCONF_FIXTURE_DIR) / "icc_6x4.csv");
  std::vector<Matrix> tables{fixture};
  Rng rng(17);
  while (tables.size() < 21) {
    const auto t = oracle::ordinal_table(3 + rng.index(30), 2 + rng.index(6), rng);
    if (std::isfinite(oracle::icc(t).single)) tables.push_back(t);
  }
  double worst = 0.0;
  for (const auto& t : tables) {
    const auto lib = icc_2k(t);
    const auto ref = oracle::icc(t);
    worst = std::max({worst, std::abs(lib.icc_average - ref.average), std::abs(lib.icc_single - ref.single)});
  }
  v.require(worst < 1e-9, "max deviation from ANOVA reference " + fmt(worst));

  const auto same = icc_2k(oracle::matrix_of({{0, 0, 0}, {1, 1, 1}, {2, 2, 2}, {1, 1, 1}}));
  v.require(std::abs(same.icc_average - 1.0) < 1e-12, "identical raters give " + fmt(same.icc_average, 15));

  auto biased = fixture;
  for (std::size_t i = 0; i < biased.rows(); ++i) biased(i, 0) += 3.0;
  const double before = icc_2k(fixture).icc_average, after = icc_2k(biased).icc_average;
  v.require(after < before, "rater bias did not lower ICC(2,k): " + fmt(before) + " -> " + fmt(after));
  v.note(std::to_string(tables.size()) + " tables, max deviation " + fmt(worst, 2) + "; bias " + fmt(before, 3) +
         " -> " + fmt(after, 3));
}

void calibration(Verdict& v) {
  auto s = oracle::calibrated_set(5000, 12);
  for (double& z : s.logits.data()) z *= 3.0;
  const auto m = fit_temperature(s.logits, s.labels);
  v.require(std::abs(m.temperature / 3.0 - 1.0) <= 0.05, "recovered T " + fmt(m.temperature));
  const double grid = oracle::grid_temperature(s.logits, s.labels);
  v.require(std::abs(m.temperature - grid) <= 1e-3, "grid search T " + fmt(grid, 6) + " vs " + fmt(m.temperature, 6));

  Matrix z(10000, 3);
  Rng rng(3);
  for (double& x : z.data()) x = 4.0 * rng.normal();
  std::size_t flips = 0;
  for (double t : {0.05, 0.7, 3.0, 20.0}) {
    const auto p = apply_temperature(z, t);
    for (std::size_t i = 0; i < z.rows(); ++i) flips += argmax(p.row(i)) != argmax(z.row(i));
  }
  v.require(flips == 0, std::to_string(flips) + " argmax changes");

  std::size_t worse = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r(seed);
    Matrix l(60, 3);
    for (double& x : l.data()) x = 3.0 * r.normal();
    auto y = random_labels(60, seed + 100);
    y[0] = 0;
    y[1] = 1;
    y[2] = 2;
    const auto fit = fit_temperature(l, y);
    worse += oracle::nll(l, y, fit.temperature) > oracle::nll(l, y, 1.0) + 1e-12;
  }
  v.require(worse == 0, std::to_string(worse) + "/20 fits worse than T=1");
  v.note("T " + fmt(m.temperature, 5) + " (grid " + fmt(grid, 5) + "), 40000 rows argmax-stable, 20/20 fits NLL <= NLL(1)");
}

void pseudo_filter(Verdict& v) {
  Rng rng(4);
  Matrix z(1000, 3);
  for (double& x : z.data()) x = 2.0 * rng.normal();
  const auto p = softmax_rows(z);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < 1000; ++i) ids.push_back("p" + std::to_string(i));
  const auto s0 = filter_by_confidence(ids, p, 0.0, 0);
  const auto s8 = filter_by_confidence(ids, p, 0.8, 0);
  const auto s9 = filter_by_confidence(ids, p, 0.9, 0);
  v.require(s0.retained == 1000, "tau 0 kept " + std::to_string(s0.retained));
  const auto a = s8.ids(), b = s9.ids();
  const std::set<std::string> keep8(a.begin(), a.end());
  v.require(std::all_of(b.begin(), b.end(), [&](const std::string& id) { return keep8.count(id) == 1; }),
            "tau 0.9 set not inside tau 0.8 set");
  for (const auto* s : {&s8, &s9}) {
    double mean = 0.0;
    for (const auto& x : s->samples) mean += x.max_prob / static_cast<double>(s->retained);
    v.require(s->retained > 0 && mean >= s->tau, "mean max-prob " + fmt(mean) + " below " + fmt(s->tau));
  }

  // Disjointness through the full generator.
  const auto c = synthetic::make_corpus({.n_gt = 90, .n_pool = 300, .seed = 5});
  const auto norm = normalizer_fit(c.gt_features);
  std::vector<FeatureVector> gt, pool;
  for (const auto& f : c.gt_features) gt.push_back(normalizer_apply(norm, f));
  for (const auto& f : c.pool_features) pool.push_back(normalizer_apply(norm, f));
  LabellerConfig lc;
  lc.internal_folds = 0;
  lc.max_epochs = 20;
  auto lab = train_labeller(gt, c.gt_labels, {}, norm, lc);
  std::set<std::string> gt_ids;
  for (const auto& f : c.gt_features) gt_ids.insert(f.id);
  const auto ps = generate_pseudo_labels(lab, pool, gt_ids, PseudoLabelConfig{}, 0);
  const auto got = ps.ids();
  v.require(std::none_of(got.begin(), got.end(), [&](const std::string& id) { return gt_ids.count(id) > 0; }),
            "pseudo set contains a ground-truth id");
  auto overlapping = pool;
  overlapping.push_back(gt.front());
  Errc code = Errc::Io;
  try {
    generate_pseudo_labels(lab, overlapping, gt_ids, PseudoLabelConfig{}, 0);
  } catch (const Error& e) {
    code = e.code();
  }
  v.require(code == Errc::PoolOverlapsGroundTruth, "overlapping pool was not rejected");
  v.note("kept 1000/" + std::to_string(s8.retained) + "/" + std::to_string(s9.retained) +
         " at tau 0/0.8/0.9; generator kept " + std::to_string(ps.retained) + "/300, none in ground truth");
}

CvData corpus_data(const synthetic::Corpus& c) {
  CvData d;
  for (std::size_t i = 0; i < c.gt_features.size(); ++i) {
    d.features[c.gt_features[i].id] = c.gt_features[i];
    d.labels[c.gt_features[i].id] = c.gt_labels[i];
  }
  for (const auto& f : c.pool_features) {
    d.features[f.id] = f;
    d.pool_ids.push_back(f.id);
  }
  d.embeddings = c.embeddings;
  return d;
}

/// Mean macro-F1 per arm of a 5-fold run on one seeded corpus.
std::map<Arm, double> cv_run(const synthetic::CorpusConfig& cc, std::span<const Arm> arms) {
  const auto d = corpus_data(synthetic::make_corpus(cc));
  const auto plan = make_fold_plan(d.labels, 5, cc.seed);
  CvConfig cfg;
  cfg.labeller.internal_folds = 0;
  cfg.labeller.seed = cc.seed;
  cfg.hybrid.max_epochs = 30;
  cfg.hybrid.seed = cc.seed;
  const auto r = run_cv(plan, d, arms, cfg);
  std::map<Arm, double> out;
  for (const auto& s : r.summaries) out[s.arm] = s.macro_f1.mean;
  return out;
}

void filtered_pseudo_labels(Verdict& v) {
  // 300 annotated clips, a 3000-clip pool, 30% of clips halfway between two
  // classes (their labels are a coin flip between the neighbours).
  const std::vector<Arm> arms{Arm::GtOnly, Arm::Proposed, Arm::NoFilter};
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    synthetic::CorpusConfig cc;
    cc.seed = seed;
    const auto f1 = cv_run(cc, arms);
    const double gt = f1.at(Arm::GtOnly), prop = f1.at(Arm::Proposed), nf = f1.at(Arm::NoFilter);
    const std::string tag = "seed " + std::to_string(seed);
    v.require(prop > nf, tag + ": proposed " + fmt(prop, 3) + " <= no_filter " + fmt(nf, 3));
    v.require(prop >= gt - 0.02, tag + ": proposed " + fmt(prop, 3) + " < gt_only " + fmt(gt, 3) + " - 0.02");
    v.note(tag + " proposed/no_filter/gt_only " + fmt(prop, 3) + "/" + fmt(nf, 3) + "/" + fmt(gt, 3));
  }
}

void hybrid_vs_embedding(Verdict& v) {
  // Embeddings point at the true class 80% of the time; features are informative everywhere.
  const std::vector<Arm> arms{Arm::Proposed, Arm::EmbeddingOnly};
  double gap = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    synthetic::CorpusConfig cc;
    cc.seed = seed;
    cc.n_gt = 600;
    cc.n_pool = 1000;
    cc.ambiguous_fraction = 0.0;
    const auto f1 = cv_run(cc, arms);
    gap += (f1.at(Arm::Proposed) - f1.at(Arm::EmbeddingOnly)) / 3.0;
    v.note("seed " + std::to_string(seed) + " hybrid/embedding " + fmt(f1.at(Arm::Proposed), 3) + "/" +
           fmt(f1.at(Arm::EmbeddingOnly), 3));
  }
  v.require(gap >= 0.03, "mean gap " + fmt(gap, 3) + " below 0.03");
  v.note("mean gap " + fmt(gap, 3));
}

void leakage_audit_criterion(Verdict& v) {
  const auto d = corpus_data(synthetic::make_corpus({.n_gt = 150, .n_pool = 300, .seed = 3}));
  const auto plan = make_fold_plan(d.labels, 5, 3);
  CvConfig cfg;
  cfg.labeller.internal_folds = 0;
  cfg.labeller.max_epochs = 10;
  cfg.hybrid.max_epochs = 5;
  const std::vector<Arm> arms{Arm::GtOnly, Arm::Proposed, Arm::NoFilter, Arm::EmbeddingOnly, Arm::FvOnly};
  const auto r = run_cv(plan, d, arms, cfg);
  v.require(r.audit.pass(), "pipeline audit failed: " + r.audit.text());
  // Re-audit after a serialization round trip of the recorded artifacts.
  const auto arts = parse_fold_artifacts_json(fold_artifacts_json(r.artifacts));
  const auto again = leakage_audit(plan, arts);
  v.require(again.pass(), "re-audit failed");
  const auto outcomes = audit_mutation_test(plan, arts);
  std::size_t exact = 0;
  for (const auto& o : outcomes) exact += o.exact();
  v.require(!outcomes.empty() && exact == outcomes.size(),
            std::to_string(exact) + "/" + std::to_string(outcomes.size()) + " injections caught exactly");
  v.note(std::to_string(r.audit.checks_run) + " checks pass over 5 arms; " + std::to_string(exact) + "/" +
         std::to_string(outcomes.size()) + " injections each yield one named violation");
}

void dsp_sanity(Verdict& v) {
  const auto& layout = FeatureLayout::egemaps_lite_88();
  const auto jit = layout.index_of("jitterLocal_mean");
  const auto llds = compute_llds(testsig::sine(220.0, 1.0));
  const double f0 = std::accumulate(llds.f0_hz.begin(), llds.f0_hz.end(), 0.0) / static_cast<double>(llds.frames());
  v.require(std::abs(f0 - 220.0) <= 2.0, "F0 mean " + fmt(f0));
  const double clean = extract_prosodic(testsig::sine(220.0, 1.0)).values[jit];
  v.require(clean < 0.001, "pure-tone jitter " + fmt(clean));
  double lo = 1.0, hi = 0.0;
  for (std::uint64_t seed : {7u, 8u, 9u}) {
    const double j = extract_prosodic(testsig::jittered_tone(150.0, 2.0, 0.02, seed)).values[jit];
    lo = std::min(lo, j);
    hi = std::max(hi, j);
  }
  v.require(lo >= 0.015 && hi <= 0.025, "2% jitter measured in [" + fmt(lo) + ", " + fmt(hi) + "]");
  const AudioClip silence{"s", std::vector<double>(16000, 0.0), 16000};
  const auto sl = compute_llds(silence);
  const auto voiced = std::count(sl.voiced.begin(), sl.voiced.end(), true);
  v.require(voiced == 0, std::to_string(voiced) + " voiced frames in silence");
  const auto out = preprocess(testsig::sine(440.0, 0.5, 44100, 0.5));
  const std::vector<double> seg(out.samples.begin() + 2000, out.samples.begin() + 6000);  // 4 Hz bins
  const auto bin = static_cast<long>(testsig::dft_peak_bin(seg));
  v.require(std::abs(bin - 110) <= 1, "resampled 440 Hz peak at bin " + std::to_string(bin));
  v.note("F0 " + fmt(f0, 5) + " Hz, jitter " + fmt(clean, 2) + ", 2% jitter -> [" + fmt(lo, 3) + ", " + fmt(hi, 3) +
         "], silence unvoiced, 440 Hz peak bin " + std::to_string(bin) + "/110");
}

std::map<std::string, int> counts_90_210_300() {
  std::map<std::string, int> labels;
  int next = 0;
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < std::array{90, 210, 300}[static_cast<std::size_t>(c)]; ++i) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "c%04d", next++);
      labels[buf] = c;
    }
  }
  return labels;
}

void fold_plan(Verdict& v) {
  const auto labels = counts_90_210_300();
  const auto a = make_fold_plan(labels, 5, 0, "1970-01-01T00:00:00Z");
  const auto b = make_fold_plan(labels, 5, 0, "2030-01-01T00:00:00Z");
  for (int k = 0; k < 5; ++k) {
    std::array<int, 3> per{};
    for (const auto& id : a.test_ids(k)) ++per[static_cast<std::size_t>(labels.at(id))];
    v.require(per == std::array{18, 42, 60}, "fold " + std::to_string(k) + " has " + std::to_string(per[0]) + "/" +
                                                  std::to_string(per[1]) + "/" + std::to_string(per[2]));
  }
  v.require(a.checksum == b.checksum, "checksum changed between runs");
  v.require(a.compute_checksum() == a.checksum, "checksum does not verify");
  v.note("5 folds of 18/42/60, checksum " + a.checksum.substr(0, 12) + "... stable");
}

void weighted_sampler(Verdict& v) {
  std::vector<int> labels;
  labels.insert(labels.end(), 90, 0);
  labels.insert(labels.end(), 210, 1);
  labels.insert(labels.end(), 300, 2);
  const auto draws = nn::weighted_sample(nn::SamplerConfig::from_labels(labels, 42), labels, 30000);
  std::array<double, 3> counts{};
  for (auto i : draws) counts[static_cast<std::size_t>(labels[i])] += 1.0;
  double chi2 = 0.0, worst = 0.0;
  for (double c : counts) {
    worst = std::max(worst, std::abs(c / 30000.0 - 1.0 / 3.0));
    chi2 += (c - 10000.0) * (c - 10000.0) / 10000.0;
  }
  const double p = std::exp(-chi2 / 2.0);  // chi-square survival, two degrees of freedom
  v.require(worst <= 0.01, "class frequency off by " + fmt(worst));
  v.require(p > 0.001, "chi-square p " + fmt(p));
  v.note("counts " + fmt(counts[0], 6) + "/" + fmt(counts[1], 6) + "/" + fmt(counts[2], 6) + ", chi2 " + fmt(chi2, 3) +
         ", p " + fmt(p, 3));
}

void fusion_identities(Verdict& v) {
  double worst = 0.0;
  bool bit_equal = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto e = random_matrix(16, 10, 100 + seed), f = random_matrix(16, kFeatureDim, 200 + seed);
    HybridConfig cfg;
    cfg.seed = seed;
    cfg.lambda_fv = 0.0;
    HybridModel zero(10, cfg);
    Rng rng(seed);
    for (auto* p : zero.embedding_params()) {
      for (double& w : p->value.data()) w = 0.3 * rng.normal();
    }
    const auto out0 = zero.forward(e, f, nn::Mode::Eval);
    bit_equal = bit_equal && out0.fused == zero.projection_head().forward(e, nn::Mode::Eval);

    cfg.lambda_fv = 0.3;
    HybridModel m(10, cfg);
    for (auto* p : m.embedding_params()) {
      for (double& w : p->value.data()) w = 0.3 * rng.normal();
    }
    const auto out = m.forward(e, f, nn::Mode::Eval);
    const auto emb = m.projection_head().forward(e, nn::Mode::Eval);
    const auto fv = m.feature_stream().forward(f, nn::Mode::Eval);
    for (std::size_t k = 0; k < emb.size(); ++k) {
      worst = std::max(worst, std::abs(out.fused.data()[k] - (emb.data()[k] + 0.3 * fv.data()[k])));
    }
  }
  v.require(bit_equal, "lambda 0 output differs from the embedding stream");
  v.require(worst < 1e-12, "fused differs from emb + 0.3 fv by " + fmt(worst));
  v.note("10 random models: lambda 0 bit-equal, max |fused - (emb + 0.3 fv)| = " + fmt(worst, 2));
}

struct Criterion {
  const char* name;
  void (*run)(Verdict&);
  double budget_seconds;  // 0 = no limit
};

}  // namespace

int main(int argc, char** argv) {
  const std::string filter = argc > 1 ? argv[1] : "";
  set_warning_sink([](std::string_view) {});
  const std::vector<Criterion> criteria{
      {"gradient correctness", gradient_correctness, 30},
      {"dawid-skene oracle", dawid_skene_oracle, 10},
      {"icc(2,k) oracle", icc_oracle, 0},
      {"temperature calibration", calibration, 0},
      {"pseudo-label filter", pseudo_filter, 0},
      {"confidence filter ordering across arms", filtered_pseudo_labels, 180},
      {"hybrid beats embedding-only", hybrid_vs_embedding, 0},
      {"leakage audit and mutation test", leakage_audit_criterion, 0},
      {"dsp sanity", dsp_sanity, 0},
      {"fold plan", fold_plan, 0},
      {"weighted sampler", weighted_sampler, 0},
      {"fusion identities", fusion_identities, 0},
  };
  int failed = 0, ran = 0;
  for (const auto& c : criteria) {
    if (!filter.empty() && std::string(c.name).find(filter) == std::string::npos) continue;
    ++ran;
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(v);
    } catch (const std::exception& e) {
      v.require(false, std::string("threw: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_seconds > 0) v.require(secs < c.budget_seconds, "took " + fmt(secs, 3) + " s, limit " + fmt(c.budget_seconds, 3));
    failed += !v.pass();
    std::printf("%s  %-40s %6.1fs  %s\n", v.pass() ? "PASS" : "FAIL", c.name, secs, v.detail().c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed == 0 && ran > 0 ? 0 : 1;
}
