#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "speechconf/embedding_store.hpp"
#include "speechconf/features.hpp"
#include "speechconf/hybrid.hpp"
#include "speechconf/metrics.hpp"
#include "speechconf/pseudo_labeller.hpp"

namespace speechconf {

// ---- fold plan --------------------------------------------------------------

struct FoldPlan {
  std::size_t k = 5;
  std::uint64_t seed = 0;
  std::string created_at;
  std::map<std::string, int> assignments;  // clip id -> fold
  std::string checksum;                    // SHA-256 of the sorted (id, fold) pairs

  std::vector<std::string> test_ids(int fold) const;
  std::vector<std::string> train_ids(int fold) const;
  std::string compute_checksum() const;
  /// Throws ChecksumMismatch when the assignments no longer match the checksum.
  void verify() const;
};

/// Stratified plan: per class, a seeded shuffle of the sorted ids is dealt
/// round-robin over the folds. Throws ClassTooSmall when a class has fewer than k clips.
FoldPlan make_fold_plan(const std::map<std::string, int>& labels, std::size_t k, std::uint64_t seed,
                        std::string created_at = "");

std::string fold_plan_json(const FoldPlan& p);
/// Parses and verifies the checksum.
FoldPlan parse_fold_plan(std::string_view json_text);
void write_fold_plan(const std::filesystem::path& path, const FoldPlan& p);
FoldPlan read_fold_plan(const std::filesystem::path& path);

// ---- leakage audit ----------------------------------------------------------

/// Id lists of everything trained or fitted for one fold.
struct FoldArtifacts {
  int fold = 0;
  std::vector<std::string> labeller_train_ids;
  std::vector<std::string> hybrid_train_ids;
  std::vector<std::string> normalizer_fit_ids;
  std::vector<std::string> pseudo_ids;
};

enum class AuditCheck { LabellerTrain, HybridTrain, PoolExclusion, NormalizerFit };

std::string_view audit_check_name(AuditCheck c);

struct Violation {
  AuditCheck check;
  int fold = 0;
  std::string id;
};

struct AuditReport {
  std::vector<Violation> violations;
  std::size_t checks_run = 0;  // four per audited fold

  bool pass() const { return violations.empty(); }
  /// Verdict line, then one line per violation.
  std::string text() const;
};

/// Per fold: test ids never in labeller or hybrid training data, pseudo ids
/// never ground-truth clips, and normalizer statistics fitted on that fold's
/// training ids only.
AuditReport leakage_audit(const FoldPlan& plan, std::span<const FoldArtifacts> artifacts);

struct MutationOutcome {
  AuditCheck target;
  int fold = 0;
  std::string injected_id;
  std::vector<Violation> found;

  /// Exactly one violation, naming the injected id, fold and check.
  bool exact() const;
};

/// Injects one held-out id into each artifact list of each fold in turn and
/// audits the result. Artifacts must pass the audit unmodified.
std::vector<MutationOutcome> audit_mutation_test(const FoldPlan& plan, std::span<const FoldArtifacts> artifacts);

// ---- cross-validation -------------------------------------------------------

enum class Arm { GtOnly, Proposed, NoFilter, FvOnly, EmbeddingOnly };

std::string_view arm_name(Arm a);  // gt_only|proposed|no_filter|fv_only|embedding_only
Arm parse_arm(std::string_view s);
std::vector<Arm> parse_arms(std::string_view comma_list);

struct CvData {
  std::map<std::string, FeatureVector> features;  // raw vectors of ground-truth and pool clips
  EmbeddingStore embeddings;
  std::map<std::string, int> labels;  // ground truth
  std::vector<std::string> pool_ids;
};

struct CvConfig {
  LabellerConfig labeller;
  PseudoLabelConfig pseudo;
  HybridConfig hybrid;
};

struct FoldReport {
  int fold = 0;
  Arm arm = Arm::Proposed;
  ClassificationMetrics metrics;
  std::size_t n_pseudo_used = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // n - 1 denominator; 0 for a single fold
};

struct ArmSummary {
  Arm arm = Arm::Proposed;
  std::size_t folds = 0;
  MeanStd macro_f1;
  std::array<MeanStd, 3> class_f1{};
};

struct CvResult {
  std::string plan_checksum;
  std::vector<FoldReport> reports;
  std::vector<ArmSummary> summaries;
  AuditReport audit;
  std::vector<FoldArtifacts> artifacts;
  std::vector<double> labeller_macro_f1;  // internal report per fold, when a labeller was trained
};

MeanStd mean_std(std::span<const double> values);
ArmSummary summarize(Arm arm, std::span<const FoldReport> reports);

using ProgressFn = std::function<void(std::string_view)>;

/// Runs every arm on every fold of the verified plan: fit the normalizer on
/// the fold's training clips, train the labeller and score the pool when the
/// arm needs pseudo labels, train the model and evaluate it on the test fold.
/// Throws ChecksumMismatch, MissingStore, or LeakageDetected when the audit
/// fails (no summary is produced then).
CvResult run_cv(const FoldPlan& plan, const CvData& data, std::span<const Arm> arms, const CvConfig& cfg,
                const ProgressFn& progress = {});

/// Mean drop in macro-F1 over `n_repeats` seeded shuffles of each of the 94
/// feature columns. Embeddings are left in place. Throws TooFewSamples for
/// fewer than 20 samples or zero repeats.
std::vector<double> permutation_importance(HybridModel& model, const SampleSet& test, std::size_t n_repeats,
                                           std::uint64_t seed);

// ---- reports ----------------------------------------------------------------

std::string cv_report_json(const CvResult& r);
CvResult parse_cv_report_json(std::string_view text);
std::string fold_reports_csv(const CvResult& r);
std::string summary_csv(const CvResult& r);
/// Bar chart of mean macro-F1 per arm with one-std whiskers.
std::string macro_f1_svg(const CvResult& r);
/// Heatmap of a row-normalized 3x3 confusion matrix.
std::string confusion_svg(const Matrix& confusion, std::string_view title);
/// Mean confusion matrix of an arm over its folds.
Matrix mean_confusion(const CvResult& r, Arm arm);

/// Id lists per fold, for re-auditing a finished run.
std::string fold_artifacts_json(std::span<const FoldArtifacts> artifacts);
std::vector<FoldArtifacts> parse_fold_artifacts_json(std::string_view text);

/// cv_report.json, artifacts.json, folds.csv, summary.csv, macro_f1.svg,
/// confusion_<arm>.svg, audit.txt
void write_cv_reports(const std::filesystem::path& dir, const CvResult& r);

}  // namespace speechconf
