#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "speechconf/matrix.hpp"

namespace speechconf {

inline constexpr std::size_t kNumClasses = 3;

enum class Rating : int { Low = 0, Medium = 1, High = 2, NotClear = 3 };

std::string_view rating_name(Rating r);           // low|medium|high|not_clear
std::optional<Rating> parse_rating(std::string_view s);
std::string_view class_name(int label);           // low|medium|high

struct AnnotationRecord {
  std::string clip_id;
  std::string rater_id;
  Rating value = Rating::Low;
  double ts = 0.0;  // UTC seconds
};

/// One JSON object per line: {"clip_id", "rater_id", "value", "ts"}.
std::string annotation_to_json(const AnnotationRecord& r);
AnnotationRecord annotation_from_json(std::string_view line);
std::vector<AnnotationRecord> read_annotations_jsonl(const std::filesystem::path& path);
void write_annotations_jsonl(const std::filesystem::path& path, std::span<const AnnotationRecord> records);

/// Clips x raters. Cells hold 0/1/2, kNotClearCell or kMissingCell.
struct RaterMatrix {
  static constexpr int kMissingCell = -1;
  static constexpr int kNotClearCell = 3;

  std::vector<std::string> clips;
  std::vector<std::string> raters;
  std::vector<int> cells;  // row-major

  int at(std::size_t clip, std::size_t rater) const { return cells[clip * raters.size() + rater]; }
  int& at(std::size_t clip, std::size_t rater) { return cells[clip * raters.size() + rater]; }
  bool row_complete(std::size_t clip) const;
  std::vector<std::size_t> complete_rows() const;
  std::size_t valid_count(std::size_t clip) const;  // ordinal cells in the row
};

/// Union of ids (sorted); duplicates resolved by latest timestamp, with
/// later input order breaking timestamp ties.
RaterMatrix build_rater_matrix(std::span<const AnnotationRecord> records);

/// CSV: `clip_id,<rater ids...>`, cells `0|1|2|NC|` (empty = missing).
std::string rater_matrix_csv(const RaterMatrix& m);
void write_rater_matrix_csv(const std::filesystem::path& path, const RaterMatrix& m);
RaterMatrix read_rater_matrix_csv(const std::filesystem::path& path);

struct IccResult {
  double icc_single = 0.0;   // ICC(2,1)
  double icc_average = 0.0;  // ICC(2,k)
  double f_stat = 0.0;       // MSR / MSE
  std::size_t df1 = 0;
  std::size_t df2 = 0;
  double ci95_low = 0.0;  // ICC(2,k) bounds
  double ci95_high = 0.0;
  double ci95_single_low = 0.0;
  double ci95_single_high = 0.0;
  double msr = 0.0, msc = 0.0, mse = 0.0;
  std::size_t n_used = 0;
  std::size_t k = 0;
};

/// Two-way random effects, absolute agreement, over the complete-case rows.
IccResult icc_2k(const RaterMatrix& m);
/// Same statistics on an explicit n x k table.
IccResult icc_2k(const Matrix& table);

struct ConsensusLabels {
  std::vector<std::string> clips;
  std::vector<std::string> raters;
  Matrix posteriors;                 // clips x 3
  std::vector<int> labels;           // argmax
  std::array<double, kNumClasses> priors{};
  std::vector<Matrix> confusion;     // per rater, 3x3, rows = true class
  std::vector<double> objective;     // penalized log-likelihood per iteration
  std::size_t iterations = 0;
  bool converged = false;

  /// Probability that rater r reports the true class under the fitted model.
  double rater_accuracy(std::size_t r) const;
};

inline constexpr double kDawidSkeneSmoothing = 0.01;

/// Dawid-Skene EM with majority-vote initialization. Throws
/// ClipWithoutValidAnnotations when a clip has no ordinal rating.
ConsensusLabels dawid_skene(const RaterMatrix& m, std::size_t max_iters = 100, double tol = 1e-6);

/// Per-clip majority vote; ties resolve to the lowest tied class.
std::vector<int> majority_vote(const RaterMatrix& m);

struct ConsensusEntry {
  std::string clip_id;
  int label = 0;
  double confidence = 0.0;  // max posterior
  bool ambiguous = false;   // confidence < 0.5
};

std::vector<ConsensusEntry> derive_consensus_dataset(const RaterMatrix& m, const ConsensusLabels& consensus);

/// CSV `clip_id,label,confidence,ambiguous` with label names.
void write_consensus_csv(const std::filesystem::path& path, std::span<const ConsensusEntry> entries);
std::vector<ConsensusEntry> read_consensus_csv(const std::filesystem::path& path);

}  // namespace speechconf
