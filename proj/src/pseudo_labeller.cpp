#include "speechconf/pseudo_labeller.hpp"

#include <algorithm>
#include <sstream>

#include "json.hpp"
#include "speechconf/annotation.hpp"
#include "speechconf/error.hpp"
#include "speechconf/log.hpp"
#include "speechconf/metrics.hpp"
#include "speechconf/splits.hpp"
#include "speechconf/textio.hpp"

namespace speechconf {

using nlohmann::json;

namespace {

Matrix feature_matrix(std::span<const FeatureVector> vectors) {
  Matrix x(vectors.size(), kFeatureDim);
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    const auto v = vectors[i].values();
    std::copy(v.begin(), v.end(), x.row(i).begin());
  }
  return x;
}

void check_normalized(std::span<const FeatureVector> vectors, const Normalizer& n) {
  const auto tag = n.tag();
  for (const auto& fv : vectors) {
    if (!fv.normalized || fv.normalizer_tag != tag) {
      throw Error(Errc::NormalizerMismatch, fv.id + " is not normalized with the labeller's statistics");
    }
  }
}

nn::LabelledMatrix subset(const Matrix& x, std::span<const int> y, std::span<const std::size_t> idx) {
  nn::LabelledMatrix m{gather_rows(x, idx), {}};
  for (auto i : idx) m.y.push_back(y[i]);
  return m;
}

nn::ClassifierTrainConfig classifier_config(const LabellerConfig& cfg, std::uint64_t seed) {
  nn::ClassifierTrainConfig c;
  c.max_epochs = cfg.max_epochs;
  c.batch_size = cfg.batch_size;
  c.lr = cfg.lr;
  c.optimizer = nn::OptimizerKind::Adam;
  c.early_stop = {nn::StopMetric::ValLoss, cfg.patience};
  c.weighted_sampling = true;
  c.seed = seed;
  return c;
}

struct FitResult {
  nn::Mlp model;
  nn::TrainHistory history;
  nn::LabelledMatrix val;
};

FitResult fit_with_holdout(const Matrix& x, std::span<const int> y, std::span<const std::size_t> rows,
                           const LabellerConfig& cfg, std::uint64_t seed) {
  std::vector<int> ys;
  for (auto i : rows) ys.push_back(y[i]);
  const auto split = stratified_holdout(ys, cfg.val_fraction, seed);
  std::vector<std::size_t> tr, va;
  for (auto i : split.train) tr.push_back(rows[i]);
  for (auto i : split.holdout) va.push_back(rows[i]);
  FitResult r{nn::Mlp(nn::relu_mlp_specs(kFeatureDim, cfg.hidden, kNumClasses, cfg.dropout), seed), {},
              subset(x, y, va)};
  r.history = nn::fit_classifier(r.model, subset(x, y, tr), r.val, classifier_config(cfg, seed));
  return r;
}

std::vector<int> argmax_rows(const Matrix& m) {
  std::vector<int> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = static_cast<int>(argmax(m.row(i)));
  return out;
}

}  // namespace

void LabellerConfig::validate() const {
  if (hidden.empty()) throw Error(Errc::InvalidConfig, "labeller needs at least one hidden layer");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(Errc::InvalidConfig, "labeller dropout must be in [0, 1)");
  if (!(lr > 0.0)) throw Error(Errc::InvalidConfig, "labeller learning rate must be positive");
  if (batch_size == 0) throw Error(Errc::InvalidConfig, "labeller batch size must be positive");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw Error(Errc::InvalidConfig, "labeller validation fraction must be in (0, 1)");
  }
}

void PseudoLabelConfig::validate() const {
  if (!(tau >= 0.0 && tau <= 1.0)) throw Error(Errc::InvalidConfig, "tau must lie in [0, 1]");
}

Matrix Labeller::probabilities(std::span<const FeatureVector> vectors, bool calibrated) {
  check_normalized(vectors, normalizer);
  const Matrix logits = nn::predict_logits(model, feature_matrix(vectors));
  return calibrated ? apply_temperature(logits, calibration.temperature) : softmax_rows(logits);
}

Labeller train_labeller(std::span<const FeatureVector> gt, std::span<const int> labels,
                        const std::set<std::string>& forbidden_ids, const Normalizer& normalizer,
                        const LabellerConfig& cfg) {
  cfg.validate();
  if (gt.size() != labels.size()) throw Error(Errc::DimMismatch, "labeller inputs and labels differ in length");
  if (gt.empty()) throw Error(Errc::EmptyTrainingSet, "labeller training set is empty");
  for (const auto& fv : gt) {
    if (forbidden_ids.count(fv.id)) throw Error(Errc::LeakageDetected, "held-out id " + fv.id + " in labeller input");
  }
  check_normalized(gt, normalizer);
  std::array<std::size_t, kNumClasses> counts{};
  for (int y : labels) {
    if (y < 0 || y >= static_cast<int>(kNumClasses)) throw Error(Errc::InvalidArgument, "label out of range");
    ++counts[static_cast<std::size_t>(y)];
  }
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (counts[c] == 0) throw Error(Errc::ClassAbsent, "no training sample of class " + std::string(class_name(static_cast<int>(c))));
  }

  const Matrix x = feature_matrix(gt);
  Labeller out;
  out.normalizer = normalizer;
  for (const auto& fv : gt) out.train_ids.push_back(fv.id);
  std::sort(out.train_ids.begin(), out.train_ids.end());

  if (cfg.internal_folds >= 2) {
    const auto folds = stratified_assign(labels, cfg.internal_folds, cfg.seed ^ 0xf01dULL);
    for (int j = 0; j < static_cast<int>(cfg.internal_folds); ++j) {
      const auto split = fold_split(folds, j);
      if (split.holdout.empty()) continue;
      auto fit = fit_with_holdout(x, labels, split.train, cfg, cfg.seed + 101 * static_cast<std::uint64_t>(j + 1));
      const auto test = subset(x, labels, split.holdout);
      const auto m = classification_metrics(argmax_rows(nn::predict_logits(fit.model, test.x)), test.y);
      out.report.fold_macro_f1.push_back(m.macro_f1);
      for (std::size_t c = 0; c < kNumClasses; ++c) out.report.class_f1[c] += m.f1[c];
    }
    const double nf = static_cast<double>(out.report.fold_macro_f1.size());
    for (double f : out.report.fold_macro_f1) out.report.macro_f1 += f / nf;
    for (double& f : out.report.class_f1) f /= nf;
  }

  std::vector<std::size_t> all(gt.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  auto fit = fit_with_holdout(x, labels, all, cfg, cfg.seed);
  out.model = std::move(fit.model);
  out.report.best_epoch = fit.history.best_epoch;
  try {
    out.calibration = fit_temperature(nn::predict_logits(out.model, fit.val.x), fit.val.y);
  } catch (const Error& e) {
    if (e.code() != Errc::DegenerateLabels) throw;
    warn("labeller validation split too small to fit a temperature; using T = 1");
    out.calibration = CalibrationModel{};
  }
  return out;
}

nn::Checkpoint labeller_checkpoint(const Labeller& l) {
  json extra = {{"role", "labeller"},
                {"temperature", l.calibration.temperature},
                {"nll_before", l.calibration.nll_before},
                {"nll_after", l.calibration.nll_after},
                {"internal_macro_f1", l.report.macro_f1},
                {"internal_fold_macro_f1", l.report.fold_macro_f1},
                {"internal_class_f1", l.report.class_f1},
                {"best_epoch", l.report.best_epoch},
                {"train_ids", l.train_ids}};
  return nn::Checkpoint{{nn::NamedModel{"labeller", l.model}}, l.normalizer, extra.dump()};
}

Labeller labeller_from_checkpoint(const nn::Checkpoint& c) {
  if (c.models.size() != 1 || c.models[0].name != "labeller" || !c.normalizer) {
    throw Error(Errc::CorruptHeader, "checkpoint does not hold a labeller");
  }
  const auto extra = json::parse(c.extra_json);
  Labeller l;
  l.model = c.models[0].model;
  l.normalizer = *c.normalizer;
  l.calibration.temperature = extra.at("temperature").get<double>();
  l.calibration.nll_before = extra.at("nll_before").get<double>();
  l.calibration.nll_after = extra.at("nll_after").get<double>();
  l.report.macro_f1 = extra.at("internal_macro_f1").get<double>();
  l.report.fold_macro_f1 = extra.at("internal_fold_macro_f1").get<std::vector<double>>();
  l.report.class_f1 = extra.at("internal_class_f1").get<std::array<double, 3>>();
  l.report.best_epoch = extra.at("best_epoch").get<std::size_t>();
  l.train_ids = extra.at("train_ids").get<std::vector<std::string>>();
  return l;
}

std::string labeller_hash(const Labeller& l) { return textio::sha256_hex(nn::encode_checkpoint(labeller_checkpoint(l))); }

std::array<std::size_t, 3> PseudoSet::class_histogram() const {
  std::array<std::size_t, 3> h{};
  for (const auto& s : samples) ++h[static_cast<std::size_t>(s.label)];
  return h;
}

std::vector<std::string> PseudoSet::ids() const {
  std::vector<std::string> out;
  for (const auto& s : samples) out.push_back(s.clip_id);
  return out;
}

std::vector<int> PseudoSet::labels() const {
  std::vector<int> out;
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

PseudoSet filter_by_confidence(std::span<const std::string> ids, const Matrix& probs, double tau, int fold) {
  PseudoLabelConfig{tau, false}.validate();
  if (ids.size() != probs.rows()) throw Error(Errc::DimMismatch, "pool ids and probabilities differ in length");
  PseudoSet s;
  s.pool_size = ids.size();
  s.tau = tau;
  s.fold = fold;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto row = probs.row(i);
    const auto c = argmax(row);
    // Non-strict: a probability equal to tau is retained.
    if (row[c] >= tau) s.samples.push_back({ids[i], static_cast<int>(c), row[c], fold});
  }
  s.retained = s.samples.size();
  return s;
}

PseudoSet generate_pseudo_labels(Labeller& labeller, std::span<const FeatureVector> pool,
                                 const std::set<std::string>& ground_truth_ids, const PseudoLabelConfig& cfg,
                                 int fold) {
  cfg.validate();
  std::vector<std::string> ids;
  for (const auto& fv : pool) {
    if (ground_truth_ids.count(fv.id)) {
      throw Error(Errc::PoolOverlapsGroundTruth, "pool item " + fv.id + " is a ground-truth clip");
    }
    ids.push_back(fv.id);
  }
  auto s = filter_by_confidence(ids, labeller.probabilities(pool, cfg.calibrate_before_filter), cfg.tau, fold);
  s.provenance = labeller_hash(labeller);
  for (const auto& p : s.samples) {
    if (ground_truth_ids.count(p.clip_id)) throw Error(Errc::PoolOverlapsGroundTruth, "pseudo set overlaps ground truth");
  }
  return s;
}

nn::SamplerConfig pseudo_class_balance(const PseudoSet& pseudo, std::uint64_t seed) {
  if (pseudo.samples.empty()) throw Error(Errc::EmptyPseudoSet, "no pseudo-labelled sample was retained");
  const auto h = pseudo.class_histogram();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (h[c] == 0) warn("pseudo set has no sample of class " + std::string(class_name(static_cast<int>(c))));
  }
  const auto labels = pseudo.labels();
  return nn::SamplerConfig::from_labels(labels, seed);
}

void write_pseudo_set(const std::filesystem::path& csv_path, const PseudoSet& s) {
  std::ostringstream os;
  os << "clip_id,label,max_prob,fold\n";
  for (const auto& p : s.samples) {
    os << textio::csv_escape(p.clip_id) << ',' << class_name(p.label) << ',' << textio::format_double(p.max_prob) << ','
       << p.fold << '\n';
  }
  textio::write_file(csv_path, os.str());
  const auto h = s.class_histogram();
  json side = {{"labeller_checkpoint_sha256", s.provenance},
               {"tau", s.tau},
               {"fold", s.fold},
               {"pool_size", s.pool_size},
               {"retained", s.retained},
               {"class_histogram", {{"low", h[0]}, {"medium", h[1]}, {"high", h[2]}}}};
  textio::write_file(csv_path.string() + ".json", side.dump(2) + "\n");
}

PseudoSet read_pseudo_set(const std::filesystem::path& csv_path) {
  const auto lines = textio::read_lines(csv_path);
  if (lines.empty() || lines[0] != "clip_id,label,max_prob,fold") {
    throw Error(Errc::HeaderMismatch, "unexpected pseudo set header in " + csv_path.string());
  }
  PseudoSet s;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (textio::trim(lines[i]).empty()) continue;
    const auto f = textio::split_csv_line(lines[i]);
    if (f.size() != 4) throw Error(Errc::DimensionMismatch, "pseudo set row needs 4 fields");
    const auto r = parse_rating(f[1]);
    if (!r || *r == Rating::NotClear) throw Error(Errc::InvalidArgument, "bad pseudo label '" + f[1] + "'");
    s.samples.push_back({f[0], static_cast<int>(*r), textio::parse_double(f[2]), static_cast<int>(textio::parse_int(f[3]))});
  }
  s.retained = s.samples.size();
  s.pool_size = s.retained;
  if (!s.samples.empty()) s.fold = s.samples.front().fold;
  const std::filesystem::path side = csv_path.string() + ".json";
  if (std::filesystem::exists(side)) {
    const auto j = json::parse(textio::read_file(side));
    s.provenance = j.at("labeller_checkpoint_sha256").get<std::string>();
    s.tau = j.at("tau").get<double>();
    s.fold = j.at("fold").get<int>();
    s.pool_size = j.at("pool_size").get<std::size_t>();
    if (j.at("retained").get<std::size_t>() != s.retained) {
      throw Error(Errc::ChecksumMismatch, "pseudo set sidecar disagrees with its CSV");
    }
  }
  return s;
}

}  // namespace speechconf
