#include "speechconf/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "json.hpp"
#include "speechconf/annotation.hpp"
#include "speechconf/error.hpp"
#include "speechconf/rng.hpp"
#include "speechconf/splits.hpp"
#include "speechconf/textio.hpp"

namespace speechconf {

using nlohmann::json;
using nlohmann::ordered_json;

// ---- fold plan --------------------------------------------------------------

std::vector<std::string> FoldPlan::test_ids(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : assignments) {
    if (f == fold) out.push_back(id);
  }
  return out;
}

std::vector<std::string> FoldPlan::train_ids(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : assignments) {
    if (f != fold) out.push_back(id);
  }
  return out;
}

std::string FoldPlan::compute_checksum() const {
  std::string canon;
  for (const auto& [id, f] : assignments) canon += id + '\t' + std::to_string(f) + '\n';
  return textio::sha256_hex(canon);
}

void FoldPlan::verify() const {
  if (compute_checksum() != checksum) throw Error(Errc::ChecksumMismatch, "fold plan assignments do not match its checksum");
  for (const auto& [id, f] : assignments) {
    if (f < 0 || static_cast<std::size_t>(f) >= k) throw Error(Errc::ChecksumMismatch, "fold index out of range for " + id);
  }
}

FoldPlan make_fold_plan(const std::map<std::string, int>& labels, std::size_t k, std::uint64_t seed,
                        std::string created_at) {
  if (k < 2) throw Error(Errc::InvalidArgument, "a fold plan needs k >= 2");
  std::map<int, std::size_t> counts;
  for (const auto& [id, y] : labels) ++counts[y];
  for (const auto& [y, n] : counts) {
    if (n < k) {
      throw Error(Errc::ClassTooSmall, "class " + std::string(class_name(y)) + " has " + std::to_string(n) +
                                           " clips, fewer than k = " + std::to_string(k));
    }
  }
  std::vector<int> ys;
  std::vector<std::string> ids;
  for (const auto& [id, y] : labels) {
    ids.push_back(id);
    ys.push_back(y);
  }
  const auto folds = stratified_assign(ys, k, seed);
  FoldPlan p;
  p.k = k;
  p.seed = seed;
  p.created_at = std::move(created_at);
  for (std::size_t i = 0; i < ids.size(); ++i) p.assignments[ids[i]] = folds[i];
  p.checksum = p.compute_checksum();
  return p;
}

std::string fold_plan_json(const FoldPlan& p) {
  ordered_json j;
  j["k"] = p.k;
  j["seed"] = p.seed;
  j["created_at"] = p.created_at;
  j["checksum"] = p.checksum;
  ordered_json a = ordered_json::object();
  for (const auto& [id, f] : p.assignments) a[id] = f;
  j["assignments"] = a;
  return j.dump(2) + "\n";
}

FoldPlan parse_fold_plan(std::string_view text) {
  FoldPlan p;
  try {
    const auto j = json::parse(text);
    p.k = j.at("k").get<std::size_t>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.created_at = j.value("created_at", "");
    p.checksum = j.at("checksum").get<std::string>();
    for (const auto& [id, f] : j.at("assignments").items()) p.assignments[id] = f.get<int>();
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("malformed fold plan: ") + e.what());
  }
  p.verify();
  return p;
}

void write_fold_plan(const std::filesystem::path& path, const FoldPlan& p) { textio::write_file(path, fold_plan_json(p)); }

FoldPlan read_fold_plan(const std::filesystem::path& path) { return parse_fold_plan(textio::read_file(path)); }

// ---- leakage audit ----------------------------------------------------------

std::string_view audit_check_name(AuditCheck c) {
  switch (c) {
    case AuditCheck::LabellerTrain: return "labeller_train";
    case AuditCheck::HybridTrain: return "hybrid_train";
    case AuditCheck::PoolExclusion: return "pool_exclusion";
    case AuditCheck::NormalizerFit: return "normalizer_fit";
  }
  return "?";
}

namespace {

constexpr AuditCheck kChecks[] = {AuditCheck::LabellerTrain, AuditCheck::HybridTrain, AuditCheck::PoolExclusion,
                                  AuditCheck::NormalizerFit};

std::vector<std::string>& artifact_list(FoldArtifacts& a, AuditCheck c) {
  switch (c) {
    case AuditCheck::LabellerTrain: return a.labeller_train_ids;
    case AuditCheck::HybridTrain: return a.hybrid_train_ids;
    case AuditCheck::PoolExclusion: return a.pseudo_ids;
    case AuditCheck::NormalizerFit: return a.normalizer_fit_ids;
  }
  return a.labeller_train_ids;
}

}  // namespace

std::string AuditReport::text() const {
  std::ostringstream os;
  os << "leakage audit: " << (pass() ? "PASS" : "FAIL") << " (" << checks_run << " checks, " << violations.size()
     << " violations)\n";
  for (const auto& v : violations) {
    os << "violation fold " << v.fold << ' ' << audit_check_name(v.check) << ": " << v.id << '\n';
  }
  return os.str();
}

AuditReport leakage_audit(const FoldPlan& plan, std::span<const FoldArtifacts> artifacts) {
  AuditReport r;
  for (const auto& a : artifacts) {
    auto test_of = [&](const std::string& id) {
      const auto it = plan.assignments.find(id);
      return it != plan.assignments.end() && it->second == a.fold;
    };
    for (const auto& id : a.labeller_train_ids) {
      if (test_of(id)) r.violations.push_back({AuditCheck::LabellerTrain, a.fold, id});
    }
    for (const auto& id : a.hybrid_train_ids) {
      if (test_of(id)) r.violations.push_back({AuditCheck::HybridTrain, a.fold, id});
    }
    for (const auto& id : a.pseudo_ids) {
      if (plan.assignments.count(id)) r.violations.push_back({AuditCheck::PoolExclusion, a.fold, id});
    }
    for (const auto& id : a.normalizer_fit_ids) {
      const auto it = plan.assignments.find(id);
      if (it == plan.assignments.end() || it->second == a.fold) {
        r.violations.push_back({AuditCheck::NormalizerFit, a.fold, id});
      }
    }
    r.checks_run += 4;
  }
  return r;
}

bool MutationOutcome::exact() const {
  return found.size() == 1 && found[0].check == target && found[0].fold == fold && found[0].id == injected_id;
}

std::vector<MutationOutcome> audit_mutation_test(const FoldPlan& plan, std::span<const FoldArtifacts> artifacts) {
  if (!leakage_audit(plan, artifacts).pass()) {
    throw Error(Errc::InvalidArgument, "mutation testing needs artifacts that pass the audit");
  }
  std::vector<MutationOutcome> out;
  for (std::size_t i = 0; i < artifacts.size(); ++i) {
    const auto test = plan.test_ids(artifacts[i].fold);
    if (test.empty()) continue;
    for (auto check : kChecks) {
      std::vector<FoldArtifacts> mutated(artifacts.begin(), artifacts.end());
      artifact_list(mutated[i], check).push_back(test.front());
      out.push_back({check, artifacts[i].fold, test.front(), leakage_audit(plan, mutated).violations});
    }
  }
  return out;
}

// ---- cross-validation -------------------------------------------------------

std::string_view arm_name(Arm a) {
  switch (a) {
    case Arm::GtOnly: return "gt_only";
    case Arm::Proposed: return "proposed";
    case Arm::NoFilter: return "no_filter";
    case Arm::FvOnly: return "fv_only";
    case Arm::EmbeddingOnly: return "embedding_only";
  }
  return "?";
}

Arm parse_arm(std::string_view s) {
  for (auto a : {Arm::GtOnly, Arm::Proposed, Arm::NoFilter, Arm::FvOnly, Arm::EmbeddingOnly}) {
    if (arm_name(a) == s) return a;
  }
  throw Error(Errc::InvalidArgument, "unknown arm '" + std::string(s) + "'");
}

std::vector<Arm> parse_arms(std::string_view comma_list) {
  std::vector<Arm> out;
  for (const auto& part : textio::split(comma_list, ',')) {
    const auto name = textio::trim(part);
    if (name.empty()) continue;
    const auto a = parse_arm(name);
    if (std::find(out.begin(), out.end(), a) == out.end()) out.push_back(a);
  }
  if (out.empty()) throw Error(Errc::InvalidArgument, "no arm selected");
  return out;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd m;
  if (values.empty()) return m;
  for (double v : values) m.mean += v;
  m.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return m;
}

ArmSummary summarize(Arm arm, std::span<const FoldReport> reports) {
  ArmSummary s;
  s.arm = arm;
  std::vector<double> macro;
  std::array<std::vector<double>, 3> cls;
  for (const auto& r : reports) {
    if (r.arm != arm) continue;
    macro.push_back(r.metrics.macro_f1);
    for (std::size_t c = 0; c < 3; ++c) cls[c].push_back(r.metrics.f1[c]);
  }
  s.folds = macro.size();
  s.macro_f1 = mean_std(macro);
  for (std::size_t c = 0; c < 3; ++c) s.class_f1[c] = mean_std(cls[c]);
  return s;
}

namespace {

bool needs_pseudo(Arm a) { return a != Arm::GtOnly; }

HybridMode mode_for(Arm a) {
  switch (a) {
    case Arm::FvOnly: return HybridMode::FeatureOnly;
    case Arm::EmbeddingOnly: return HybridMode::EmbeddingOnly;
    default: return HybridMode::Hybrid;
  }
}

std::vector<FeatureVector> raw_vectors(const CvData& d, std::span<const std::string> ids) {
  std::vector<FeatureVector> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(d.features.at(id));
  return out;
}

std::vector<FeatureVector> normalized(const Normalizer& n, std::span<const FeatureVector> raw) {
  std::vector<FeatureVector> out;
  out.reserve(raw.size());
  for (const auto& fv : raw) out.push_back(normalizer_apply(n, fv));
  return out;
}

void check_stores(const FoldPlan& plan, const CvData& d) {
  auto check = [&](const std::string& id) {
    if (!d.features.count(id)) throw Error(Errc::MissingStore, "no feature vector for " + id);
    if (!d.embeddings.contains(id)) throw Error(Errc::MissingStore, "no embedding for " + id);
  };
  for (const auto& [id, f] : plan.assignments) {
    check(id);
    if (!d.labels.count(id)) throw Error(Errc::MissingStore, "no label for " + id);
  }
  for (const auto& id : d.pool_ids) check(id);
}

std::vector<std::string> sorted_unique(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace

CvResult run_cv(const FoldPlan& plan, const CvData& data, std::span<const Arm> arms, const CvConfig& cfg,
                const ProgressFn& progress) {
  plan.verify();
  cfg.labeller.validate();
  cfg.pseudo.validate();
  cfg.hybrid.validate();
  check_stores(plan, data);
  auto say = [&](const std::string& s) {
    if (progress) progress(s);
  };

  std::set<std::string> all_gt;
  for (const auto& [id, f] : plan.assignments) all_gt.insert(id);
  for (const auto& id : data.pool_ids) {
    if (all_gt.count(id)) throw Error(Errc::PoolOverlapsGroundTruth, "pool item " + id + " is a ground-truth clip");
  }

  CvResult res;
  res.plan_checksum = plan.checksum;
  const bool any_pseudo = std::any_of(arms.begin(), arms.end(), needs_pseudo);

  for (int k = 0; k < static_cast<int>(plan.k); ++k) {
    const auto test_ids = plan.test_ids(k);
    const auto train_ids = plan.train_ids(k);
    const std::set<std::string> forbidden(test_ids.begin(), test_ids.end());
    FoldArtifacts art;
    art.fold = k;

    const auto train_raw = raw_vectors(data, train_ids);
    Normalizer norm = normalizer_fit(train_raw);
    art.normalizer_fit_ids = norm.fit_ids;
    const auto train_fv = normalized(norm, train_raw);
    const auto test_fv = normalized(norm, raw_vectors(data, test_ids));
    std::vector<int> train_y, test_y;
    for (const auto& id : train_ids) train_y.push_back(data.labels.at(id));
    for (const auto& id : test_ids) test_y.push_back(data.labels.at(id));

    const SampleSet gt = make_sample_set(train_fv, data.embeddings, train_y, Source::GroundTruth);
    const SampleSet test = make_sample_set(test_fv, data.embeddings, test_y, Source::GroundTruth);

    PseudoSet filtered, unfiltered;
    std::vector<FeatureVector> pool_fv;
    if (any_pseudo) {
      LabellerConfig lc = cfg.labeller;
      lc.seed = cfg.labeller.seed * 7919ULL + static_cast<std::uint64_t>(k);
      say("fold " + std::to_string(k) + ": training labeller");
      Labeller labeller = train_labeller(train_fv, train_y, forbidden, norm, lc);
      res.labeller_macro_f1.push_back(labeller.report.macro_f1);
      art.labeller_train_ids = labeller.train_ids;
      pool_fv = normalized(norm, raw_vectors(data, data.pool_ids));
      filtered = generate_pseudo_labels(labeller, pool_fv, all_gt, cfg.pseudo, k);
      if (std::find(arms.begin(), arms.end(), Arm::NoFilter) != arms.end()) {
        PseudoLabelConfig open = cfg.pseudo;
        open.tau = 0.0;
        unfiltered = generate_pseudo_labels(labeller, pool_fv, all_gt, open, k);
      }
    }

    std::map<std::string, std::size_t> pool_row;
    for (std::size_t i = 0; i < pool_fv.size(); ++i) pool_row[pool_fv[i].id] = i;
    auto pseudo_samples = [&](const PseudoSet& ps) {
      std::vector<FeatureVector> rows;
      for (const auto& s : ps.samples) rows.push_back(pool_fv[pool_row.at(s.clip_id)]);
      const auto labels = ps.labels();
      return make_sample_set(rows, data.embeddings, labels, Source::Pseudo);
    };

    for (const Arm arm : arms) {
      say("fold " + std::to_string(k) + ": arm " + std::string(arm_name(arm)));
      SampleSet pseudo;
      if (arm == Arm::NoFilter) {
        pseudo = pseudo_samples(unfiltered);
      } else if (needs_pseudo(arm)) {
        pseudo = pseudo_samples(filtered);
      }
      HybridConfig hc = cfg.hybrid;
      hc.mode = mode_for(arm);
      hc.seed = cfg.hybrid.seed * 7919ULL + static_cast<std::uint64_t>(k);
      auto trained = train_hybrid(gt, pseudo, forbidden, hc);
      trained.model.normalizer = norm;
      art.hybrid_train_ids.insert(art.hybrid_train_ids.end(), trained.train_ids.begin(), trained.train_ids.end());
      art.hybrid_train_ids.insert(art.hybrid_train_ids.end(), trained.val_ids.begin(), trained.val_ids.end());
      art.pseudo_ids.insert(art.pseudo_ids.end(), pseudo.ids.begin(), pseudo.ids.end());

      const auto pred = predict(trained.model, test);
      FoldReport fr;
      fr.fold = k;
      fr.arm = arm;
      fr.metrics = classification_metrics(pred.labels, test_y);
      fr.n_pseudo_used = pseudo.size();
      fr.n_train = trained.train_ids.size();
      fr.n_test = test.size();
      res.reports.push_back(fr);
    }
    art.hybrid_train_ids = sorted_unique(std::move(art.hybrid_train_ids));
    art.pseudo_ids = sorted_unique(std::move(art.pseudo_ids));
    res.artifacts.push_back(std::move(art));
  }

  res.audit = leakage_audit(plan, res.artifacts);
  if (!res.audit.pass()) throw Error(Errc::LeakageDetected, res.audit.text());
  for (const Arm arm : arms) res.summaries.push_back(summarize(arm, res.reports));
  return res;
}

std::vector<double> permutation_importance(HybridModel& model, const SampleSet& test, std::size_t n_repeats,
                                           std::uint64_t seed) {
  if (n_repeats == 0) throw Error(Errc::TooFewSamples, "permutation importance needs at least one repeat");
  if (test.size() < 20) throw Error(Errc::TooFewSamples, "permutation importance needs at least 20 samples");
  const double base = classification_metrics(predict(model, test).labels, test.labels).macro_f1;
  std::vector<double> out(kFeatureDim, 0.0);
  Rng rng(seed);
  SampleSet work = test;
  std::vector<std::size_t> perm(test.size());
  for (std::size_t d = 0; d < kFeatureDim; ++d) {
    for (std::size_t r = 0; r < n_repeats; ++r) {
      for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
      rng.shuffle(perm);
      for (std::size_t i = 0; i < perm.size(); ++i) work.features(i, d) = test.features(perm[i], d);
      out[d] += base - classification_metrics(predict(model, work).labels, test.labels).macro_f1;
    }
    out[d] /= static_cast<double>(n_repeats);
    for (std::size_t i = 0; i < perm.size(); ++i) work.features(i, d) = test.features(i, d);
  }
  return out;
}

// ---- reports ----------------------------------------------------------------

namespace {

ordered_json matrix_json(const Matrix& m) {
  ordered_json rows = ordered_json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) rows.push_back(std::vector<double>(m.row(i).begin(), m.row(i).end()));
  return rows;
}

ordered_json mean_std_json(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}}; }

MeanStd mean_std_from(const json& j) { return {j.at("mean").get<double>(), j.at("std").get<double>()}; }

}  // namespace

std::string cv_report_json(const CvResult& r) {
  ordered_json j;
  j["fold_plan_checksum"] = r.plan_checksum;
  ordered_json summaries = ordered_json::array();
  for (const auto& s : r.summaries) {
    summaries.push_back({{"arm", arm_name(s.arm)},
                         {"folds", s.folds},
                         {"macro_f1", mean_std_json(s.macro_f1)},
                         {"f1_low", mean_std_json(s.class_f1[0])},
                         {"f1_medium", mean_std_json(s.class_f1[1])},
                         {"f1_high", mean_std_json(s.class_f1[2])}});
  }
  j["summaries"] = summaries;
  ordered_json folds = ordered_json::array();
  for (const auto& f : r.reports) {
    folds.push_back({{"fold", f.fold},
                     {"arm", arm_name(f.arm)},
                     {"macro_f1", f.metrics.macro_f1},
                     {"f1", f.metrics.f1},
                     {"accuracy", f.metrics.accuracy},
                     {"confusion", matrix_json(f.metrics.confusion)},
                     {"support", f.metrics.support},
                     {"n_pseudo_used", f.n_pseudo_used},
                     {"n_train", f.n_train},
                     {"n_test", f.n_test}});
  }
  j["folds"] = folds;
  j["labeller_internal_macro_f1"] = r.labeller_macro_f1;
  ordered_json violations = ordered_json::array();
  for (const auto& v : r.audit.violations) {
    violations.push_back({{"check", audit_check_name(v.check)}, {"fold", v.fold}, {"id", v.id}});
  }
  j["audit"] = {{"pass", r.audit.pass()}, {"checks", r.audit.checks_run}, {"violations", violations}};
  return j.dump(2) + "\n";
}

CvResult parse_cv_report_json(std::string_view text) {
  CvResult r;
  try {
    const auto j = json::parse(text);
    r.plan_checksum = j.at("fold_plan_checksum").get<std::string>();
    for (const auto& s : j.at("summaries")) {
      ArmSummary a;
      a.arm = parse_arm(s.at("arm").get<std::string>());
      a.folds = s.at("folds").get<std::size_t>();
      a.macro_f1 = mean_std_from(s.at("macro_f1"));
      a.class_f1 = {mean_std_from(s.at("f1_low")), mean_std_from(s.at("f1_medium")), mean_std_from(s.at("f1_high"))};
      r.summaries.push_back(a);
    }
    for (const auto& f : j.at("folds")) {
      FoldReport fr;
      fr.fold = f.at("fold").get<int>();
      fr.arm = parse_arm(f.at("arm").get<std::string>());
      fr.metrics.macro_f1 = f.at("macro_f1").get<double>();
      fr.metrics.f1 = f.at("f1").get<std::array<double, 3>>();
      fr.metrics.accuracy = f.at("accuracy").get<double>();
      fr.metrics.confusion = Matrix::from_rows(f.at("confusion").get<std::vector<std::vector<double>>>());
      fr.metrics.support = f.at("support").get<std::array<std::size_t, 3>>();
      fr.n_pseudo_used = f.at("n_pseudo_used").get<std::size_t>();
      fr.n_train = f.at("n_train").get<std::size_t>();
      fr.n_test = f.at("n_test").get<std::size_t>();
      r.reports.push_back(fr);
    }
    r.labeller_macro_f1 = j.value("labeller_internal_macro_f1", std::vector<double>{});
    const auto& audit = j.at("audit");
    r.audit.checks_run = audit.at("checks").get<std::size_t>();
    for (const auto& v : audit.at("violations")) {
      const auto name = v.at("check").get<std::string>();
      AuditCheck c = AuditCheck::LabellerTrain;
      for (auto k : kChecks) {
        if (audit_check_name(k) == name) c = k;
      }
      r.audit.violations.push_back({c, v.at("fold").get<int>(), v.at("id").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("malformed cv report: ") + e.what());
  }
  return r;
}

std::string fold_reports_csv(const CvResult& r) {
  std::ostringstream os;
  os << "arm,fold,macro_f1,f1_low,f1_medium,f1_high,accuracy,n_pseudo_used,n_train,n_test\n";
  for (const auto& f : r.reports) {
    os << arm_name(f.arm) << ',' << f.fold << ',' << textio::format_double(f.metrics.macro_f1);
    for (double v : f.metrics.f1) os << ',' << textio::format_double(v);
    os << ',' << textio::format_double(f.metrics.accuracy) << ',' << f.n_pseudo_used << ',' << f.n_train << ','
       << f.n_test << '\n';
  }
  return os.str();
}

std::string summary_csv(const CvResult& r) {
  std::ostringstream os;
  os << "arm,folds,macro_f1_mean,macro_f1_std,f1_low_mean,f1_low_std,f1_medium_mean,f1_medium_std,f1_high_mean,"
        "f1_high_std\n";
  for (const auto& s : r.summaries) {
    os << arm_name(s.arm) << ',' << s.folds << ',' << textio::format_double(s.macro_f1.mean) << ','
       << textio::format_double(s.macro_f1.std);
    for (const auto& c : s.class_f1) os << ',' << textio::format_double(c.mean) << ',' << textio::format_double(c.std);
    os << '\n';
  }
  return os.str();
}

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string macro_f1_svg(const CvResult& r) {
  const int bar_w = 80, gap = 30, h = 260, top = 30, left = 50;
  const int w = left + static_cast<int>(r.summaries.size()) * (bar_w + gap) + gap;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h + 70 << "\">\n";
  os << "<text x=\"" << left << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\">Mean macro-F1 per arm</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top + h << "\" x2=\"" << w << "\" y2=\"" << top + h
     << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double y = top + h - h * t / 4.0;
    os << "<text x=\"" << left - 8 << "\" y=\"" << fixed(y + 4, 1) << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
       << "font-size=\"10\">" << fixed(t / 4.0, 2) << "</text>\n";
  }
  for (std::size_t i = 0; i < r.summaries.size(); ++i) {
    const auto& s = r.summaries[i];
    const double x = left + gap + static_cast<double>(i) * (bar_w + gap);
    const double bh = h * std::clamp(s.macro_f1.mean, 0.0, 1.0);
    os << "<rect x=\"" << fixed(x, 1) << "\" y=\"" << fixed(top + h - bh, 1) << "\" width=\"" << bar_w << "\" height=\""
       << fixed(bh, 1) << "\" fill=\"#4a78b5\"/>\n";
    const double lo = h * std::clamp(s.macro_f1.mean - s.macro_f1.std, 0.0, 1.0);
    const double hi = h * std::clamp(s.macro_f1.mean + s.macro_f1.std, 0.0, 1.0);
    const double cx = x + bar_w / 2.0;
    os << "<line x1=\"" << fixed(cx, 1) << "\" y1=\"" << fixed(top + h - lo, 1) << "\" x2=\"" << fixed(cx, 1)
       << "\" y2=\"" << fixed(top + h - hi, 1) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << fixed(cx, 1) << "\" y=\"" << top + h + 16
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << arm_name(s.arm) << "</text>\n";
    os << "<text x=\"" << fixed(cx, 1) << "\" y=\"" << top + h + 32
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << fixed(s.macro_f1.mean, 3) << " ± "
       << fixed(s.macro_f1.std, 3) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string confusion_svg(const Matrix& confusion, std::string_view title) {
  const int cell = 70, left = 80, top = 40;
  const char* names[] = {"low", "medium", "high"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + 3 * cell + 20 << "\" height=\""
     << top + 3 * cell + 50 << "\">\n";
  os << "<text x=\"10\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
  for (std::size_t r = 0; r < 3; ++r) {
    os << "<text x=\"" << left - 8 << "\" y=\"" << top + static_cast<int>(r) * cell + cell / 2 + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << names[r] << "</text>\n";
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = confusion.rows() == 3 && confusion.cols() == 3 ? confusion(r, c) : 0.0;
      const int shade = 255 - static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 200.0));
      const int x = left + static_cast<int>(c) * cell, y = top + static_cast<int>(r) * cell;
      os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"rgb("
         << shade << ',' << shade << ",255)\" stroke=\"white\"/>\n";
      os << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4
         << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << fixed(v, 2) << "</text>\n";
    }
  }
  for (std::size_t c = 0; c < 3; ++c) {
    os << "<text x=\"" << left + static_cast<int>(c) * cell + cell / 2 << "\" y=\"" << top + 3 * cell + 18
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << names[c] << "</text>\n";
  }
  os << "<text x=\"" << left + 3 * cell / 2 << "\" y=\"" << top + 3 * cell + 38
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">predicted</text>\n";
  os << "</svg>\n";
  return os.str();
}

Matrix mean_confusion(const CvResult& r, Arm arm) {
  Matrix m(3, 3);
  std::size_t n = 0;
  for (const auto& f : r.reports) {
    if (f.arm != arm || f.metrics.confusion.size() != 9) continue;
    for (std::size_t k = 0; k < 9; ++k) m.data()[k] += f.metrics.confusion.data()[k];
    ++n;
  }
  if (n) {
    for (double& v : m.data()) v /= static_cast<double>(n);
  }
  return m;
}

std::string fold_artifacts_json(std::span<const FoldArtifacts> artifacts) {
  ordered_json j = ordered_json::array();
  for (const auto& a : artifacts) {
    j.push_back({{"fold", a.fold},
                 {"labeller_train_ids", a.labeller_train_ids},
                 {"hybrid_train_ids", a.hybrid_train_ids},
                 {"normalizer_fit_ids", a.normalizer_fit_ids},
                 {"pseudo_ids", a.pseudo_ids}});
  }
  return j.dump(1) + "\n";
}

std::vector<FoldArtifacts> parse_fold_artifacts_json(std::string_view text) {
  std::vector<FoldArtifacts> out;
  try {
    for (const auto& e : json::parse(text)) {
      FoldArtifacts a;
      a.fold = e.at("fold").get<int>();
      a.labeller_train_ids = e.at("labeller_train_ids").get<std::vector<std::string>>();
      a.hybrid_train_ids = e.at("hybrid_train_ids").get<std::vector<std::string>>();
      a.normalizer_fit_ids = e.at("normalizer_fit_ids").get<std::vector<std::string>>();
      a.pseudo_ids = e.at("pseudo_ids").get<std::vector<std::string>>();
      out.push_back(std::move(a));
    }
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("malformed fold artifacts: ") + e.what());
  }
  return out;
}

void write_cv_reports(const std::filesystem::path& dir, const CvResult& r) {
  std::filesystem::create_directories(dir);
  textio::write_file(dir / "cv_report.json", cv_report_json(r));
  textio::write_file(dir / "artifacts.json", fold_artifacts_json(r.artifacts));
  textio::write_file(dir / "folds.csv", fold_reports_csv(r));
  textio::write_file(dir / "summary.csv", summary_csv(r));
  textio::write_file(dir / "macro_f1.svg", macro_f1_svg(r));
  textio::write_file(dir / "audit.txt", r.audit.text());
  for (const auto& s : r.summaries) {
    const std::string name(arm_name(s.arm));
    textio::write_file(dir / ("confusion_" + name + ".svg"), confusion_svg(mean_confusion(r, s.arm), "Confusion: " + name));
  }
}

}  // namespace speechconf
