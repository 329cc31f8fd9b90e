#include "speechconf/annotation.hpp"

#include <algorithm>
#include <boost/math/distributions/fisher_f.hpp>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "speechconf/error.hpp"
#include "speechconf/textio.hpp"

namespace speechconf {

using json = nlohmann::json;

std::string_view rating_name(Rating r) {
  switch (r) {
    case Rating::Low: return "low";
    case Rating::Medium: return "medium";
    case Rating::High: return "high";
    case Rating::NotClear: return "not_clear";
  }
  return "?";
}

std::optional<Rating> parse_rating(std::string_view s) {
  if (s == "low") return Rating::Low;
  if (s == "medium") return Rating::Medium;
  if (s == "high") return Rating::High;
  if (s == "not_clear") return Rating::NotClear;
  return std::nullopt;
}

std::string_view class_name(int label) {
  if (label < 0 || label >= static_cast<int>(kNumClasses)) {
    throw Error(Errc::InvalidArgument, "class index " + std::to_string(label) + " out of range");
  }
  return rating_name(static_cast<Rating>(label));
}

std::string annotation_to_json(const AnnotationRecord& r) {
  json j{{"clip_id", r.clip_id}, {"rater_id", r.rater_id}, {"value", rating_name(r.value)}, {"ts", r.ts}};
  return j.dump();
}

AnnotationRecord annotation_from_json(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("annotation is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(Errc::InvalidArgument, "annotation must be a JSON object");
  AnnotationRecord r;
  try {
    r.clip_id = j.at("clip_id").get<std::string>();
    r.rater_id = j.at("rater_id").get<std::string>();
    const auto v = j.at("value").get<std::string>();
    const auto parsed = parse_rating(v);
    if (!parsed) throw Error(Errc::InvalidArgument, "unknown rating value '" + v + "'");
    r.value = *parsed;
    r.ts = j.at("ts").get<double>();
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("annotation field: ") + e.what());
  }
  if (r.clip_id.empty() || r.rater_id.empty()) throw Error(Errc::InvalidArgument, "empty clip_id or rater_id");
  if (!std::isfinite(r.ts)) throw Error(Errc::NonFiniteValue, "annotation timestamp");
  return r;
}

std::vector<AnnotationRecord> read_annotations_jsonl(const std::filesystem::path& path) {
  std::vector<AnnotationRecord> out;
  const auto lines = textio::read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      out.push_back(annotation_from_json(lines[i]));
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return out;
}

void write_annotations_jsonl(const std::filesystem::path& path, std::span<const AnnotationRecord> records) {
  std::string s;
  for (const auto& r : records) s += annotation_to_json(r) + "\n";
  textio::write_file(path, s);
}

bool RaterMatrix::row_complete(std::size_t clip) const {
  for (std::size_t r = 0; r < raters.size(); ++r) {
    const int v = at(clip, r);
    if (v < 0 || v >= static_cast<int>(kNumClasses)) return false;
  }
  return !raters.empty();
}

std::vector<std::size_t> RaterMatrix::complete_rows() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (row_complete(i)) out.push_back(i);
  }
  return out;
}

std::size_t RaterMatrix::valid_count(std::size_t clip) const {
  std::size_t n = 0;
  for (std::size_t r = 0; r < raters.size(); ++r) {
    const int v = at(clip, r);
    if (v >= 0 && v < static_cast<int>(kNumClasses)) ++n;
  }
  return n;
}

RaterMatrix build_rater_matrix(std::span<const AnnotationRecord> records) {
  std::set<std::string> clip_set, rater_set;
  std::map<std::pair<std::string, std::string>, const AnnotationRecord*> latest;
  for (const auto& r : records) {
    clip_set.insert(r.clip_id);
    rater_set.insert(r.rater_id);
    auto& slot = latest[{r.clip_id, r.rater_id}];
    if (!slot || r.ts >= slot->ts) slot = &r;
  }
  RaterMatrix m;
  m.clips.assign(clip_set.begin(), clip_set.end());
  m.raters.assign(rater_set.begin(), rater_set.end());
  m.cells.assign(m.clips.size() * m.raters.size(), RaterMatrix::kMissingCell);
  std::map<std::string, std::size_t> ci, ri;
  for (std::size_t i = 0; i < m.clips.size(); ++i) ci[m.clips[i]] = i;
  for (std::size_t i = 0; i < m.raters.size(); ++i) ri[m.raters[i]] = i;
  for (const auto& [key, rec] : latest) m.at(ci[key.first], ri[key.second]) = static_cast<int>(rec->value);
  return m;
}

std::string rater_matrix_csv(const RaterMatrix& m) {
  std::ostringstream os;
  os << "clip_id";
  for (const auto& r : m.raters) os << ',' << textio::csv_escape(r);
  os << '\n';
  for (std::size_t i = 0; i < m.clips.size(); ++i) {
    os << textio::csv_escape(m.clips[i]);
    for (std::size_t r = 0; r < m.raters.size(); ++r) {
      const int v = m.at(i, r);
      os << ',';
      if (v == RaterMatrix::kNotClearCell) {
        os << "NC";
      } else if (v >= 0) {
        os << v;
      }
    }
    os << '\n';
  }
  return os.str();
}

void write_rater_matrix_csv(const std::filesystem::path& path, const RaterMatrix& m) {
  textio::write_file(path, rater_matrix_csv(m));
}

RaterMatrix read_rater_matrix_csv(const std::filesystem::path& path) {
  const auto lines = textio::read_lines(path);
  if (lines.empty()) throw Error(Errc::HeaderMismatch, path.string() + " is empty");
  const auto header = textio::split_csv_line(lines[0]);
  if (header.empty() || textio::trim(header[0]) != "clip_id") {
    throw Error(Errc::HeaderMismatch, "rater matrix must start with a clip_id column");
  }
  RaterMatrix m;
  for (std::size_t i = 1; i < header.size(); ++i) m.raters.push_back(textio::trim(header[i]));
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto f = textio::split_csv_line(lines[li]);
    if (f.size() != header.size()) {
      throw Error(Errc::DimensionMismatch, "row " + std::to_string(li + 1) + " has " + std::to_string(f.size()) +
                                               " fields, expected " + std::to_string(header.size()));
    }
    m.clips.push_back(textio::trim(f[0]));
    for (std::size_t r = 1; r < f.size(); ++r) {
      const auto cell = textio::trim(f[r]);
      if (cell.empty()) {
        m.cells.push_back(RaterMatrix::kMissingCell);
      } else if (cell == "NC") {
        m.cells.push_back(RaterMatrix::kNotClearCell);
      } else if (cell == "0" || cell == "1" || cell == "2") {
        m.cells.push_back(cell[0] - '0');
      } else {
        throw Error(Errc::InvalidArgument, "bad rater cell '" + cell + "' on row " + std::to_string(li + 1));
      }
    }
  }
  return m;
}

IccResult icc_2k(const RaterMatrix& m) {
  const auto rows = m.complete_rows();
  if (rows.size() < 2 || m.raters.size() < 2) {
    throw Error(Errc::InsufficientCompleteCases, "ICC needs at least 2 complete rows and 2 raters, have " +
                                                     std::to_string(rows.size()) + " x " +
                                                     std::to_string(m.raters.size()));
  }
  Matrix table(rows.size(), m.raters.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t r = 0; r < m.raters.size(); ++r) table(i, r) = m.at(rows[i], r);
  }
  return icc_2k(table);
}

IccResult icc_2k(const Matrix& x) {
  const std::size_t n = x.rows(), k = x.cols();
  if (n < 2 || k < 2) throw Error(Errc::InsufficientCompleteCases, "ICC needs at least a 2 x 2 table");
  const double nd = static_cast<double>(n), kd = static_cast<double>(k);
  std::vector<double> row_mean(n, 0.0), col_mean(k, 0.0);
  double grand = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      row_mean[i] += x(i, j);
      col_mean[j] += x(i, j);
      grand += x(i, j);
    }
  }
  for (auto& v : row_mean) v /= kd;
  for (auto& v : col_mean) v /= nd;
  grand /= nd * kd;
  double ss_total = 0.0, ss_rows = 0.0, ss_cols = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) ss_total += (x(i, j) - grand) * (x(i, j) - grand);
  }
  for (double v : row_mean) ss_rows += kd * (v - grand) * (v - grand);
  for (double v : col_mean) ss_cols += nd * (v - grand) * (v - grand);
  const double ss_err = std::max(0.0, ss_total - ss_rows - ss_cols);

  IccResult res;
  res.n_used = n;
  res.k = k;
  res.df1 = n - 1;
  res.df2 = (n - 1) * (k - 1);
  res.msr = ss_rows / static_cast<double>(res.df1);
  res.msc = ss_cols / (kd - 1.0);
  res.mse = ss_err / static_cast<double>(res.df2);
  const double msr = res.msr, msc = res.msc, mse = res.mse;

  const double denom_single = msr + (kd - 1.0) * mse + kd * (msc - mse) / nd;
  const double denom_avg = msr + (msc - mse) / nd;
  res.icc_single = denom_single != 0.0 ? (msr - mse) / denom_single : 0.0;
  res.icc_average = denom_avg != 0.0 ? (msr - mse) / denom_avg : 0.0;

  // Zero residual variance: perfect agreement up to rater-free noise.
  const double scale = std::max({msr, msc, 1e-300});
  if (mse <= 1e-14 * scale) {
    res.f_stat = std::numeric_limits<double>::infinity();
    res.ci95_low = res.ci95_high = res.icc_average;
    res.ci95_single_low = res.ci95_single_high = res.icc_single;
    return res;
  }
  res.f_stat = msr / mse;

  // McGraw & Wong F-bounds with Satterthwaite degrees of freedom.
  const double icc = res.icc_single;
  const double fc = msc / mse;
  const double a = kd * icc * fc + nd * (1.0 + (kd - 1.0) * icc) - kd * icc;
  const double v = (kd - 1.0) * (nd - 1.0) * a * a /
                   ((nd - 1.0) * kd * kd * icc * icc * fc * fc + std::pow(nd * (1.0 + (kd - 1.0) * icc) - kd * icc, 2));
  using boost::math::fisher_f_distribution;
  using boost::math::quantile;
  double fl = 1.0, fu = 1.0;
  if (std::isfinite(v) && v > 0.0) {
    fl = quantile(fisher_f_distribution<double>(nd - 1.0, v), 0.975);
    fu = quantile(fisher_f_distribution<double>(v, nd - 1.0), 0.975);
  }
  const double lo = nd * (msr - fl * mse) / (fl * (kd * msc + (kd * nd - kd - nd) * mse) + nd * msr);
  const double hi = nd * (fu * msr - mse) / (kd * msc + (kd * nd - kd - nd) * mse + nd * fu * msr);
  auto spearman_brown = [kd](double r) { return kd * r / (1.0 + (kd - 1.0) * r); };
  res.ci95_single_low = lo;
  res.ci95_single_high = hi;
  res.ci95_low = spearman_brown(lo);
  res.ci95_high = spearman_brown(hi);
  return res;
}

double ConsensusLabels::rater_accuracy(std::size_t r) const {
  double acc = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) acc += priors[c] * confusion.at(r)(c, c);
  return acc;
}

namespace {

Matrix majority_posteriors(const RaterMatrix& m) {
  Matrix t(m.clips.size(), kNumClasses);
  for (std::size_t i = 0; i < m.clips.size(); ++i) {
    std::array<int, kNumClasses> votes{};
    for (std::size_t r = 0; r < m.raters.size(); ++r) {
      const int v = m.at(i, r);
      if (v >= 0 && v < static_cast<int>(kNumClasses)) ++votes[static_cast<std::size_t>(v)];
    }
    const int best = *std::max_element(votes.begin(), votes.end());
    const auto tied = std::count(votes.begin(), votes.end(), best);
    for (std::size_t c = 0; c < kNumClasses; ++c) t(i, c) = votes[c] == best ? 1.0 / static_cast<double>(tied) : 0.0;
  }
  return t;
}

}  // namespace

std::vector<int> majority_vote(const RaterMatrix& m) {
  const auto t = majority_posteriors(m);
  std::vector<int> out(m.clips.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<int>(argmax(t.row(i)));
  return out;
}

ConsensusLabels dawid_skene(const RaterMatrix& m, std::size_t max_iters, double tol) {
  const std::size_t n = m.clips.size(), nr = m.raters.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (m.valid_count(i) == 0) {
      throw Error(Errc::ClipWithoutValidAnnotations, "clip " + m.clips[i] + " has no low/medium/high rating");
    }
  }
  constexpr double s = kDawidSkeneSmoothing;
  constexpr std::size_t C = kNumClasses;

  ConsensusLabels out;
  out.clips = m.clips;
  out.raters = m.raters;
  out.posteriors = majority_posteriors(m);
  out.confusion.assign(nr, Matrix(C, C));

  std::array<double, C> log_prior{};
  std::vector<Matrix> log_conf(nr, Matrix(C, C));
  Matrix next(n, C);
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    // M-step: smoothed (Dirichlet MAP) priors and confusion matrices.
    const Matrix& t = out.posteriors;
    for (std::size_t c = 0; c < C; ++c) {
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) sum += t(i, c);
      out.priors[c] = (sum + s) / (static_cast<double>(n) + C * s);
      log_prior[c] = std::log(out.priors[c]);
    }
    for (std::size_t r = 0; r < nr; ++r) {
      Matrix counts(C, C, s);
      for (std::size_t i = 0; i < n; ++i) {
        const int v = m.at(i, r);
        if (v < 0 || v >= static_cast<int>(C)) continue;
        for (std::size_t c = 0; c < C; ++c) counts(c, static_cast<std::size_t>(v)) += t(i, c);
      }
      for (std::size_t c = 0; c < C; ++c) {
        double row = 0.0;
        for (std::size_t l = 0; l < C; ++l) row += counts(c, l);
        for (std::size_t l = 0; l < C; ++l) {
          out.confusion[r](c, l) = counts(c, l) / row;
          log_conf[r](c, l) = std::log(out.confusion[r](c, l));
        }
      }
    }

    // E-step, accumulating the penalized log-likelihood of the current parameters.
    double objective = 0.0;
    for (std::size_t c = 0; c < C; ++c) objective += s * log_prior[c];
    for (std::size_t r = 0; r < nr; ++r) {
      for (double lc : log_conf[r].data()) objective += s * lc;
    }
    double max_change = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::array<double, C> lp{};
      for (std::size_t c = 0; c < C; ++c) {
        lp[c] = log_prior[c];
        for (std::size_t r = 0; r < nr; ++r) {
          const int v = m.at(i, r);
          if (v >= 0 && v < static_cast<int>(C)) lp[c] += log_conf[r](c, static_cast<std::size_t>(v));
        }
      }
      const double mx = *std::max_element(lp.begin(), lp.end());
      double z = 0.0;
      for (double x : lp) z += std::exp(x - mx);
      objective += mx + std::log(z);
      for (std::size_t c = 0; c < C; ++c) {
        next(i, c) = std::exp(lp[c] - mx) / z;
        max_change = std::max(max_change, std::abs(next(i, c) - t(i, c)));
      }
    }
    out.objective.push_back(objective);
    out.posteriors = next;
    out.iterations = iter + 1;
    if (max_change < tol) {
      out.converged = true;
      break;
    }
  }
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.labels[i] = static_cast<int>(argmax(out.posteriors.row(i)));
  return out;
}

std::vector<ConsensusEntry> derive_consensus_dataset(const RaterMatrix& m, const ConsensusLabels& consensus) {
  if (m.clips != consensus.clips) throw Error(Errc::InvalidArgument, "consensus was computed on a different matrix");
  std::vector<ConsensusEntry> out;
  for (std::size_t i = 0; i < consensus.clips.size(); ++i) {
    const auto row = consensus.posteriors.row(i);
    const auto best = argmax(row);
    ConsensusEntry e;
    e.clip_id = consensus.clips[i];
    e.label = static_cast<int>(best);
    e.confidence = row[best];
    e.ambiguous = e.confidence < 0.5;
    out.push_back(std::move(e));
  }
  return out;
}

void write_consensus_csv(const std::filesystem::path& path, std::span<const ConsensusEntry> entries) {
  std::ostringstream os;
  os << "clip_id,label,confidence,ambiguous\n";
  for (const auto& e : entries) {
    os << textio::csv_escape(e.clip_id) << ',' << class_name(e.label) << ',' << textio::format_double(e.confidence)
       << ',' << (e.ambiguous ? 1 : 0) << '\n';
  }
  textio::write_file(path, os.str());
}

std::vector<ConsensusEntry> read_consensus_csv(const std::filesystem::path& path) {
  const auto lines = textio::read_lines(path);
  if (lines.empty() || lines[0] != "clip_id,label,confidence,ambiguous") {
    throw Error(Errc::HeaderMismatch, "unexpected consensus header in " + path.string());
  }
  std::vector<ConsensusEntry> out;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto f = textio::split_csv_line(lines[li]);
    if (f.size() != 4) throw Error(Errc::DimensionMismatch, "consensus row " + std::to_string(li + 1));
    const auto r = parse_rating(f[1]);
    if (!r || *r == Rating::NotClear) throw Error(Errc::InvalidArgument, "bad consensus label '" + f[1] + "'");
    out.push_back({f[0], static_cast<int>(*r), textio::parse_double(f[2]), f[3] == "1"});
  }
  return out;
}

}  // namespace speechconf
