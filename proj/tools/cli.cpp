#include "cli.hpp"

#include <algorithm>
#include <csignal>
#include <cstdlib>
#include <ctime>
#include <functional>
#include <map>
#include <set>

#include "CLI11.hpp"
#include "annotation_server.hpp"
#include "json.hpp"
#include "manifest.hpp"
#include "run_config.hpp"
#include "speechconf/annotation.hpp"
#include "speechconf/audio.hpp"
#include "speechconf/calibration.hpp"
#include "speechconf/error.hpp"
#include "speechconf/evaluation.hpp"
#include "speechconf/log.hpp"
#include "speechconf/synthetic.hpp"
#include "speechconf/textio.hpp"

namespace speechconf::cli {

using nlohmann::ordered_json;

namespace {

struct Io {
  std::ostream& out;
  std::ostream& err;
};

void log_line(std::ostream& err, std::string_view level, std::string_view message, const char* code = nullptr) {
  ordered_json j{{"level", level}};
  if (code) j["code"] = code;
  j["message"] = message;
  err << j.dump() << '\n';
}

/// Flags of one verb. Parse errors become InvalidArgument.
class Flags {
 public:
  explicit Flags(std::string verb, std::string description) : app_(std::move(description), std::move(verb)) {}
  CLI::App& app() { return app_; }

  /// False when help was requested (and printed).
  bool parse(const std::vector<std::string>& args, Io& io) {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
      app_.parse(reversed);
    } catch (const CLI::CallForHelp&) {
      io.out << app_.help();
      return false;
    } catch (const CLI::ParseError& e) {
      throw Error(Errc::InvalidArgument, app_.get_name() + ": " + e.what());
    }
    return true;
  }

 private:
  CLI::App app_;
};

std::vector<FeatureVector> normalized(const Normalizer& n, const Dataset& d, const std::vector<std::string>& ids) {
  std::vector<FeatureVector> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(normalizer_apply(n, d.features.at(id)));
  return out;
}

std::vector<int> labels_of(const Dataset& d, const std::vector<std::string>& ids) {
  std::vector<int> y;
  for (const auto& id : ids) y.push_back(d.labels.at(id));
  return y;
}

FoldPlan load_plan(const DatasetManifest& m, const std::string& flag) {
  return read_fold_plan(flag.empty() ? m.require(m.fold_plan, "fold_plan") : std::filesystem::path(flag));
}

void check_fold(const FoldPlan& plan, int fold) {
  if (fold < 0 || fold >= static_cast<int>(plan.k)) {
    throw Error(Errc::InvalidArgument, "fold " + std::to_string(fold) + " outside 0.." + std::to_string(plan.k - 1));
  }
}

RunConfig load_config(const std::string& path) { return path.empty() ? RunConfig{} : read_run_config(path); }

// ---- verbs ------------------------------------------------------------------

int cmd_preprocess(const std::vector<std::string>& args, Io& io) {
  Flags f("preprocess", "Resample clips to 16 kHz mono, peak-normalize and optionally denoise");
  std::string manifest_path, out_dir;
  bool do_denoise = false;
  f.app().add_option("--manifest", manifest_path, "dataset manifest")->required();
  f.app().add_option("--out", out_dir, "output directory for canonical WAVs")->required();
  f.app().add_flag("--denoise", do_denoise, "apply spectral gating after resampling");
  if (!f.parse(args, io)) return 0;
  const auto m = read_manifest(manifest_path);
  std::filesystem::create_directories(out_dir);
  std::size_t n = 0;
  for (const auto& c : m.clips) {
    if (c.audio.empty()) continue;
    const auto path = m.resolve(c.audio);
    if (!std::filesystem::exists(path)) throw Error(Errc::NotFound, "clip " + c.id + ": audio " + path.string() + " not found");
    auto clip = preprocess(load_clip(path));
    clip.id = c.id;
    duration_in_expected_range(clip);
    if (do_denoise) clip = denoise(clip);
    write_wav_pcm16(std::filesystem::path(out_dir) / (c.id + ".wav"), clip);
    ++n;
  }
  io.out << "preprocessed " << n << " clips\n";
  return 0;
}

std::map<std::string, std::vector<double>> read_auxiliary(const std::filesystem::path& path) {
  const auto lines = textio::read_lines(path);
  if (lines.empty()) throw Error(Errc::HeaderMismatch, path.string() + " is empty");
  const std::vector<std::string> header{"id",          "disf_block",    "disf_prolong", "disf_interj",
                                        "disf_wordrep", "disf_soundrep", "stress"};
  if (textio::split_csv_line(lines[0]) != header) {
    throw Error(Errc::HeaderMismatch, path.string() + ": expected id,disf_block,...,stress");
  }
  std::map<std::string, std::vector<double>> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (textio::trim(lines[i]).empty()) continue;
    const auto fields = textio::split_csv_line(lines[i]);
    if (fields.size() != header.size()) throw Error(Errc::DimensionMismatch, path.string() + ": line " + std::to_string(i + 1));
    std::vector<double> v;
    for (std::size_t k = 1; k < fields.size(); ++k) v.push_back(textio::parse_double(fields[k]));
    out[fields[0]] = std::move(v);
  }
  return out;
}

int cmd_extract(const std::vector<std::string>& args, Io& io) {
  Flags f("extract", "Assemble 94-dim feature vectors (88 prosodic functionals + 6 auxiliary probabilities)");
  std::string manifest_path, audio_dir, aux, external, out;
  f.app().add_option("--manifest", manifest_path, "dataset manifest")->required();
  f.app().add_option("--audio-dir", audio_dir, "read <id>.wav from here instead of the manifest paths");
  f.app().add_option("--aux", aux, "auxiliary probabilities CSV (defaults to the manifest entry)");
  f.app().add_option("--external", external, "prosodic functionals CSV to use instead of extraction");
  f.app().add_option("--out", out, "feature store CSV")->required();
  if (!f.parse(args, io)) return 0;
  const auto m = read_manifest(manifest_path);
  const auto aux_probs = read_auxiliary(aux.empty() ? m.require(m.auxiliary, "auxiliary") : std::filesystem::path(aux));
  std::map<std::string, std::vector<double>> ingested;
  if (!external.empty()) ingested = ingest_external_features(external);

  std::vector<FeatureVector> vectors;
  for (const auto& c : m.clips) {
    std::vector<double> prosodic;
    if (!external.empty()) {
      const auto it = ingested.find(c.id);
      if (it == ingested.end()) throw Error(Errc::MissingStore, "clip " + c.id + " missing from " + external);
      prosodic = it->second;
    } else {
      const auto path = audio_dir.empty() ? m.resolve(c.audio) : std::filesystem::path(audio_dir) / (c.id + ".wav");
      if (c.audio.empty() && audio_dir.empty()) throw Error(Errc::NotFound, "clip " + c.id + " has no audio path");
      if (!std::filesystem::exists(path)) throw Error(Errc::NotFound, "clip " + c.id + ": audio " + path.string() + " not found");
      auto clip = load_clip(path);
      if (!clip.is_canonical()) clip = preprocess(clip);
      const auto p = extract_prosodic(clip);
      prosodic.assign(p.values.begin(), p.values.end());
    }
    const auto a = aux_probs.find(c.id);
    if (a == aux_probs.end()) throw Error(Errc::MissingStore, "clip " + c.id + " has no auxiliary probabilities");
    vectors.push_back(assemble_feature_vector(c.id, prosodic, std::span(a->second).first(kDisfluencyDim), a->second[5]));
  }
  write_feature_store(out, vectors);
  io.out << "extracted " << vectors.size() << " feature vectors\n";
  return 0;
}

int cmd_calibrate(const std::vector<std::string>& args, Io& io) {
  Flags f("calibrate", "Fit a temperature on labelled logits and emit calibrated probabilities");
  std::string logits_path, out;
  f.app().add_option("--logits", logits_path, "CSV id,z_0..z_{c-1},label")->required();
  f.app().add_option("--out", out, "write probabilities here instead of standard output");
  if (!f.parse(args, io)) return 0;
  if (!std::filesystem::exists(logits_path)) throw Error(Errc::NotFound, "logits " + logits_path + " not found");
  const auto lines = textio::read_lines(logits_path);
  if (lines.empty()) throw Error(Errc::HeaderMismatch, "logits file is empty");
  const auto header = textio::split_csv_line(lines[0]);
  if (header.size() < 4 || header.front() != "id" || header.back() != "label") {
    throw Error(Errc::HeaderMismatch, "logits header must be id,z_0,...,label");
  }
  const std::size_t c = header.size() - 2;
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (textio::trim(lines[i]).empty()) continue;
    const auto fields = textio::split_csv_line(lines[i]);
    if (fields.size() != header.size()) throw Error(Errc::DimensionMismatch, "logits line " + std::to_string(i + 1));
    ids.push_back(fields[0]);
    std::vector<double> z;
    for (std::size_t k = 1; k <= c; ++k) z.push_back(textio::parse_double(fields[k]));
    rows.push_back(std::move(z));
    const auto y = textio::parse_int(fields.back());
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw Error(Errc::InvalidArgument, "label out of range on line " + std::to_string(i + 1));
    labels.push_back(static_cast<int>(y));
  }
  const auto z = Matrix::from_rows(rows);
  const auto model = fit_temperature(z, labels);
  const auto p = apply_temperature(z, model.temperature);
  std::string csv = "id";
  for (std::size_t k = 0; k < c; ++k) csv += ",p_" + std::to_string(k);
  csv += '\n';
  for (std::size_t i = 0; i < ids.size(); ++i) {
    csv += textio::csv_escape(ids[i]);
    for (std::size_t k = 0; k < c; ++k) csv += "," + textio::format_double(p(i, k));
    csv += '\n';
  }
  io.out << "# temperature=" << textio::format_double(model.temperature)
         << " nll_before=" << textio::format_double(model.nll_before)
         << " nll_after=" << textio::format_double(model.nll_after) << '\n';
  if (out.empty()) {
    io.out << csv;
  } else {
    textio::write_file(out, csv);
  }
  return 0;
}

int cmd_aggregate(const std::vector<std::string>& args, Io& io) {
  Flags f("aggregate", "Build the rater matrix, ICC(2,k) report and Dawid-Skene consensus labels");
  std::string annotations, out_dir;
  f.app().add_option("--annotations", annotations, "annotations JSONL")->required();
  f.app().add_option("--out", out_dir, "output directory")->required();
  if (!f.parse(args, io)) return 0;
  const auto records = read_annotations_jsonl(annotations);
  const auto m = build_rater_matrix(records);
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  write_rater_matrix_csv(dir / "rater_matrix.csv", m);

  ordered_json report;
  try {
    const auto icc = icc_2k(m);
    report["icc_2k"] = {{"value", icc.icc_average},
                        {"ci95", {icc.ci95_low, icc.ci95_high}},
                        {"icc_2_1", icc.icc_single},
                        {"ci95_single", {icc.ci95_single_low, icc.ci95_single_high}},
                        {"f", icc.f_stat},
                        {"df1", icc.df1},
                        {"df2", icc.df2},
                        {"n_complete", icc.n_used},
                        {"k", icc.k}};
    io.out << "ICC(2,k) = " << textio::format_double(icc.icc_average) << " [" << textio::format_double(icc.ci95_low) << ", "
           << textio::format_double(icc.ci95_high) << "] over " << icc.n_used << " complete clips x " << icc.k
           << " raters\n";
  } catch (const Error& e) {
    if (e.code() != Errc::InsufficientCompleteCases) throw;
    warn(e.what());
    report["icc_2k"] = nullptr;
  }
  const auto ds = dawid_skene(m);
  const auto entries = derive_consensus_dataset(m, ds);
  write_consensus_csv(dir / "consensus.csv", entries);
  ordered_json raters = ordered_json::object();
  for (std::size_t r = 0; r < ds.raters.size(); ++r) raters[ds.raters[r]] = ds.rater_accuracy(r);
  report["dawid_skene"] = {{"iterations", ds.iterations}, {"converged", ds.converged}, {"priors", ds.priors},
                           {"rater_accuracy", raters}};
  std::array<std::size_t, 3> counts{};
  std::size_t ambiguous = 0;
  for (const auto& e : entries) {
    ++counts[static_cast<std::size_t>(e.label)];
    ambiguous += e.ambiguous;
  }
  report["consensus"] = {{"clips", entries.size()}, {"class_counts", counts}, {"ambiguous", ambiguous}};
  textio::write_file(dir / "annotation_report.json", report.dump(2) + "\n");
  io.out << "consensus labels for " << entries.size() << " clips (low " << counts[0] << ", medium " << counts[1]
         << ", high " << counts[2] << ")\n";
  return 0;
}

int cmd_foldplan(const std::vector<std::string>& args, Io& io) {
  Flags f("foldplan", "Create the fixed stratified k-fold plan of the labelled clips");
  std::string manifest_path, labels_path, out;
  std::size_t k = 5;
  std::uint64_t seed = 0;
  f.app().add_option("--manifest", manifest_path, "dataset manifest (labels entry)");
  f.app().add_option("--labels", labels_path, "consensus CSV (overrides the manifest)");
  f.app().add_option("--k", k, "number of folds");
  f.app().add_option("--seed", seed, "shuffle seed");
  f.app().add_option("--out", out, "plan JSON (defaults to the manifest's fold_plan)");
  if (!f.parse(args, io)) return 0;
  std::optional<DatasetManifest> m;
  if (!manifest_path.empty()) m = read_manifest(manifest_path);
  if (labels_path.empty() && !m) throw Error(Errc::InvalidArgument, "foldplan needs --labels or --manifest");
  const auto lp = labels_path.empty() ? m->require(m->labels, "labels") : std::filesystem::path(labels_path);
  std::set<std::string> pool;
  if (m) {
    for (const auto& id : m->ids(SplitRole::Pool)) pool.insert(id);
  }
  std::map<std::string, int> labels;
  for (const auto& e : read_consensus_csv(lp)) {
    if (!pool.count(e.clip_id)) labels[e.clip_id] = e.label;
  }
  const auto plan = make_fold_plan(labels, k, seed, creation_time());
  std::filesystem::path target = out;
  if (target.empty() && m && !m->fold_plan.empty()) target = m->resolve(m->fold_plan);
  if (!target.empty()) write_fold_plan(target, plan);
  io.out << "checksum " << plan.checksum << '\n';
  return 0;
}

struct FoldInputs {
  DatasetManifest manifest;
  Dataset data;
  FoldPlan plan;
  int fold = 0;
  Normalizer normalizer;
  std::vector<std::string> train_ids, test_ids;
};

FoldInputs fold_inputs(const std::string& manifest_path, const std::string& plan_path, int fold) {
  FoldInputs in;
  in.manifest = read_manifest(manifest_path);
  in.data = load_dataset(in.manifest);
  in.plan = load_plan(in.manifest, plan_path);
  check_fold(in.plan, fold);
  in.fold = fold;
  in.train_ids = in.plan.train_ids(fold);
  in.test_ids = in.plan.test_ids(fold);
  std::vector<FeatureVector> raw;
  for (const auto& id : in.train_ids) {
    const auto it = in.data.features.find(id);
    if (it == in.data.features.end()) throw Error(Errc::MissingStore, "no feature vector for " + id);
    raw.push_back(it->second);
  }
  in.normalizer = normalizer_fit(raw);
  return in;
}

int cmd_train_labeller(const std::vector<std::string>& args, Io& io) {
  Flags f("train-labeller", "Train the feature-only labeller on one fold's training clips");
  std::string manifest_path, plan_path, config_path, out;
  int fold = 0;
  f.app().add_option("--manifest", manifest_path, "dataset manifest")->required();
  f.app().add_option("--plan", plan_path, "fold plan (defaults to the manifest entry)");
  f.app().add_option("--fold", fold, "fold index")->required();
  f.app().add_option("--config", config_path, "run config");
  f.app().add_option("--out", out, "labeller checkpoint")->required();
  if (!f.parse(args, io)) return 0;
  const auto cfg = load_config(config_path);
  const auto in = fold_inputs(manifest_path, plan_path, fold);
  const std::set<std::string> forbidden(in.test_ids.begin(), in.test_ids.end());
  const auto lab = train_labeller(normalized(in.normalizer, in.data, in.train_ids), labels_of(in.data, in.train_ids),
                                  forbidden, in.normalizer, cfg.labeller);
  nn::save_checkpoint(out, labeller_checkpoint(lab));
  io.out << "labeller fold " << fold << ": internal macro-F1 "
         << (lab.report.fold_macro_f1.empty() ? "skipped" : textio::format_double(lab.report.macro_f1))
         << ", temperature " << textio::format_double(lab.calibration.temperature) << ", sha256 " << labeller_hash(lab)
         << '\n';
  return 0;
}

int cmd_pseudo(const std::vector<std::string>& args, Io& io) {
  Flags f("pseudo", "Score the unlabelled pool and keep confident pseudo labels");
  std::string manifest_path, plan_path, labeller_path, config_path, out;
  int fold = 0;
  std::optional<double> tau;
  bool no_calibrate = false;
  f.app().add_option("--manifest", manifest_path, "dataset manifest")->required();
  f.app().add_option("--plan", plan_path, "fold plan (defaults to the manifest entry)");
  f.app().add_option("--fold", fold, "fold index")->required();
  f.app().add_option("--labeller", labeller_path, "labeller checkpoint")->required();
  f.app().add_option("--config", config_path, "run config");
  f.app().add_option("--tau", tau, "confidence threshold (overrides the config)");
  f.app().add_flag("--no-calibrate", no_calibrate, "filter on uncalibrated probabilities");
  f.app().add_option("--out", out, "pseudo-label CSV (sidecar JSON is written next to it)")->required();
  if (!f.parse(args, io)) return 0;
  auto cfg = load_config(config_path);
  if (tau) cfg.pseudo.tau = *tau;
  if (no_calibrate) cfg.pseudo.calibrate_before_filter = false;
  cfg.pseudo.validate();
  const auto m = read_manifest(manifest_path);
  const auto data = load_dataset(m);
  const auto plan = load_plan(m, plan_path);
  check_fold(plan, fold);
  auto lab = labeller_from_checkpoint(nn::load_checkpoint(labeller_path));
  const auto pool = normalized(lab.normalizer, data, data.pool_ids);
  std::set<std::string> gt;
  for (const auto& [id, y] : data.labels) gt.insert(id);
  const auto s = generate_pseudo_labels(lab, pool, gt, cfg.pseudo, fold);
  write_pseudo_set(out, s);
  const auto h = s.class_histogram();
  io.out << "retained " << s.retained << " of " << s.pool_size << " (low " << h[0] << ", medium " << h[1] << ", high "
         << h[2] << ") at tau " << textio::format_double(s.tau) << '\n';
  return 0;
}

int cmd_train_hybrid(const std::vector<std::string>& args, Io& io) {
  Flags f("train-hybrid", "Train the two-stream model on one fold and score its test clips");
  std::string manifest_path, plan_path, pseudo_path, config_path, out, mode = "hybrid";
  int fold = 0;
  f.app().add_option("--manifest", manifest_path, "dataset manifest")->required();
  f.app().add_option("--plan", plan_path, "fold plan (defaults to the manifest entry)");
  f.app().add_option("--fold", fold, "fold index")->required();
  f.app().add_option("--pseudo", pseudo_path, "pseudo-label CSV from the pseudo verb");
  f.app().add_option("--config", config_path, "run config");
  f.app().add_option("--mode", mode, "hybrid|embedding_only|feature_only");
  f.app().add_option("--out", out, "model checkpoint")->required();
  if (!f.parse(args, io)) return 0;
  auto cfg = load_config(config_path);
  cfg.hybrid.mode = parse_hybrid_mode(mode);
  const auto in = fold_inputs(manifest_path, plan_path, fold);
  const auto gt = make_sample_set(normalized(in.normalizer, in.data, in.train_ids), in.data.embeddings,
                                  labels_of(in.data, in.train_ids), Source::GroundTruth);
  SampleSet pseudo = gt.subset(std::vector<std::size_t>{});
  if (!pseudo_path.empty()) {
    const auto ps = read_pseudo_set(pseudo_path);
    if (ps.fold != fold) throw Error(Errc::InvalidArgument, "pseudo set belongs to fold " + std::to_string(ps.fold));
    const auto ids = ps.ids();
    for (const auto& id : ids) {
      if (!in.data.features.count(id)) throw Error(Errc::MissingStore, "no feature vector for pseudo clip " + id);
    }
    pseudo = make_sample_set(normalized(in.normalizer, in.data, ids), in.data.embeddings, ps.labels(), Source::Pseudo);
  }
  const std::set<std::string> forbidden(in.test_ids.begin(), in.test_ids.end());
  auto r = train_hybrid(gt, pseudo, forbidden, cfg.hybrid);
  r.model.normalizer = in.normalizer;
  nn::save_checkpoint(out, hybrid_checkpoint(r.model));
  const auto test = make_sample_set(normalized(in.normalizer, in.data, in.test_ids), in.data.embeddings,
                                    labels_of(in.data, in.test_ids), Source::GroundTruth);
  const auto p = predict(r.model, test);
  const auto metrics = classification_metrics(p.labels, test.labels);
  io.out << "fold " << fold << " " << hybrid_mode_name(cfg.hybrid.mode) << ": test macro-F1 "
         << textio::format_double(metrics.macro_f1) << " (best epoch " << r.history.best_epoch << ", "
         << pseudo.size() << " pseudo rows)\n";
  return 0;
}

int cmd_cv(const std::vector<std::string>& args, Io& io) {
  Flags f("cv", "Run every arm on every fold and write reports, audit and provenance");
  std::string config_path, manifest_path, arms, out = "cv_out";
  f.app().add_option("--config", config_path, "run config")->required();
  f.app().add_option("--manifest", manifest_path, "dataset manifest (overrides the config)");
  f.app().add_option("--arms", arms, "comma-separated arms (overrides the config)");
  f.app().add_option("--out", out, "report directory");
  if (!f.parse(args, io)) return 0;
  auto cfg = load_config(config_path);
  if (!arms.empty()) cfg.arms = parse_arms(arms);
  if (!manifest_path.empty()) cfg.manifest = manifest_path;
  if (cfg.manifest.empty()) throw Error(Errc::InvalidConfig, "no manifest given (config key 'manifest' or --manifest)");
  const auto m = read_manifest(cfg.manifest);
  const auto data = load_dataset(m);
  const auto plan = load_plan(m, "");
  CvData cv{data.features, data.embeddings, data.labels, data.pool_ids};
  const auto result = run_cv(plan, cv, cfg.arms, cfg.cv(), [&](std::string_view msg) { log_line(io.err, "info", msg); });

  const std::filesystem::path dir(out);
  write_cv_reports(dir, result);
  textio::write_file(dir / "resolved_config.cfg", resolved_run_config(cfg));
  ordered_json prov;
  prov["fold_plan_checksum"] = plan.checksum;
  prov["feature_store_sha256"] = textio::sha256_hex(textio::read_binary(m.resolve(m.feature_store)));
  prov["embedding_store_sha256"] = textio::sha256_hex(textio::read_binary(m.resolve(m.embedding_store)));
  prov["labels_sha256"] = textio::sha256_hex(textio::read_binary(m.resolve(m.labels)));
  prov["config_sha256"] = textio::sha256_hex(resolved_run_config(cfg));
  textio::write_file(dir / "provenance.json", prov.dump(2) + "\n");

  for (const auto& s : result.summaries) {
    io.out << arm_name(s.arm) << ": macro-F1 " << textio::format_double(s.macro_f1.mean) << " +- "
           << textio::format_double(s.macro_f1.std) << " over " << s.folds << " folds\n";
  }
  io.out << result.audit.text();
  return 0;
}

int cmd_report(const std::vector<std::string>& args, Io& io) {
  Flags f("report", "Regenerate CSV and SVG reports from a cv_report.json");
  std::string input, out;
  f.app().add_option("--cv", input, "cv_report.json")->required();
  f.app().add_option("--out", out, "output directory")->required();
  if (!f.parse(args, io)) return 0;
  if (!std::filesystem::exists(input)) throw Error(Errc::NotFound, input + " not found");
  const auto r = parse_cv_report_json(textio::read_file(input));
  const std::filesystem::path dir(out);
  std::filesystem::create_directories(dir);
  textio::write_file(dir / "folds.csv", fold_reports_csv(r));
  textio::write_file(dir / "summary.csv", summary_csv(r));
  textio::write_file(dir / "macro_f1.svg", macro_f1_svg(r));
  for (const auto& s : r.summaries) {
    const std::string name(arm_name(s.arm));
    textio::write_file(dir / ("confusion_" + name + ".svg"), confusion_svg(mean_confusion(r, s.arm), "Confusion: " + name));
  }
  io.out << summary_csv(r);
  return 0;
}

int cmd_audit(const std::vector<std::string>& args, Io& io) {
  Flags f("audit", "Check fold artifacts for test-set leakage");
  std::string plan_path, artifacts_path;
  bool mutation = false;
  f.app().add_option("--plan", plan_path, "fold plan JSON")->required();
  f.app().add_option("--artifacts", artifacts_path, "artifacts.json written by cv")->required();
  f.app().add_flag("--mutation-test", mutation, "also inject one test id into every artifact and report detection");
  if (!f.parse(args, io)) return 0;
  const auto plan = read_fold_plan(plan_path);
  if (!std::filesystem::exists(artifacts_path)) throw Error(Errc::NotFound, artifacts_path + " not found");
  const auto arts = parse_fold_artifacts_json(textio::read_file(artifacts_path));
  const auto report = leakage_audit(plan, arts);
  io.out << report.text();
  if (!report.pass()) return 1;
  if (mutation) {
    std::size_t exact = 0;
    const auto outcomes = audit_mutation_test(plan, arts);
    for (const auto& o : outcomes) {
      io.out << "mutation fold " << o.fold << ' ' << audit_check_name(o.target) << " <- " << o.injected_id << ": "
             << (o.exact() ? "detected" : "NOT detected exactly") << '\n';
      exact += o.exact();
    }
    io.out << "mutation test: " << exact << "/" << outcomes.size() << " exact\n";
    if (exact != outcomes.size()) return 1;
  }
  return 0;
}

std::function<void()> g_stop;

extern "C" void handle_signal(int) {
  if (g_stop) g_stop();
}

int cmd_serve(const std::vector<std::string>& args, Io& io) {
  Flags f("serve", "Serve the annotation API");
  std::string manifest_path, annotations, host = "127.0.0.1";
  int port = 8080;
  f.app().add_option("--manifest", manifest_path, "dataset manifest")->required();
  f.app().add_option("--annotations", annotations, "annotations JSONL (defaults to the manifest entry)");
  f.app().add_option("--host", host, "bind address");
  f.app().add_option("--port", port, "port (0 picks a free one)");
  if (!f.parse(args, io)) return 0;
  const auto m = read_manifest(manifest_path);
  const auto store = annotations.empty() ? m.require(m.annotations, "annotations") : std::filesystem::path(annotations);
  AnnotationServer server(m, store);
  const int bound = server.bind(host, port);
  io.out << "serving on http://" << host << ':' << bound << std::endl;
  g_stop = [&server] { server.stop(); };
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  server.run();
  g_stop = nullptr;
  return 0;
}

int cmd_synth(const std::vector<std::string>& args, Io& io) {
  Flags f("synth", "Write a synthetic dataset (features, embeddings, labels, fold plan, manifest, config)");
  std::string out;
  synthetic::CorpusConfig cc;
  std::size_t k = 5;
  f.app().add_option("--out", out, "output directory")->required();
  f.app().add_option("--n-gt", cc.n_gt, "labelled clips");
  f.app().add_option("--n-pool", cc.n_pool, "unlabelled pool clips");
  f.app().add_option("--ambiguous", cc.ambiguous_fraction, "share of clips halfway between two classes");
  f.app().add_option("--embedding-accuracy", cc.embedding_accuracy, "share of embeddings pointing at the true class");
  f.app().add_option("--seed", cc.seed, "generator seed");
  f.app().add_option("--k", k, "folds of the written plan");
  if (!f.parse(args, io)) return 0;
  const auto c = synthetic::make_corpus(cc);
  const std::filesystem::path dir(out);
  std::filesystem::create_directories(dir);

  std::vector<FeatureVector> all = c.gt_features;
  all.insert(all.end(), c.pool_features.begin(), c.pool_features.end());
  write_feature_store(dir / "features.csv", all);
  write_embedding_store(dir / "embeddings.bin", c.embeddings);
  std::vector<ConsensusEntry> entries;
  std::map<std::string, int> labels;
  for (std::size_t i = 0; i < c.gt_features.size(); ++i) {
    entries.push_back({c.gt_features[i].id, c.gt_labels[i], 1.0, false});
    labels[c.gt_features[i].id] = c.gt_labels[i];
  }
  write_consensus_csv(dir / "labels.csv", entries);
  write_fold_plan(dir / "folds.json", make_fold_plan(labels, k, cc.seed, creation_time()));

  DatasetManifest m;
  m.feature_store = "features.csv";
  m.embedding_store = "embeddings.bin";
  m.labels = "labels.csv";
  m.fold_plan = "folds.json";
  m.annotations = "annotations.jsonl";
  for (const auto& fv : c.gt_features) m.clips.push_back({fv.id, "", SplitRole::Labelled});
  for (const auto& fv : c.pool_features) m.clips.push_back({fv.id, "", SplitRole::Pool});
  write_manifest(dir / "manifest.json", m);

  RunConfig rc;
  rc.manifest = "manifest.json";
  rc.labeller.internal_folds = 0;
  rc.hybrid.max_epochs = 30;
  rc.folds = k;
  rc.fold_seed = cc.seed;
  textio::write_file(dir / "run.cfg", "# synthetic corpus, seed " + std::to_string(cc.seed) + "\n" + resolved_run_config(rc));
  io.out << "wrote " << c.gt_features.size() << " labelled and " << c.pool_features.size() << " pool clips to "
         << dir.string() << '\n';
  return 0;
}

using Verb = std::function<int(const std::vector<std::string>&, Io&)>;

const std::map<std::string, std::pair<Verb, const char*>>& verbs() {
  static const std::map<std::string, std::pair<Verb, const char*>> v = {
      {"preprocess", {cmd_preprocess, "audio -> canonical 16 kHz WAVs"}},
      {"extract", {cmd_extract, "audio + auxiliary probabilities -> feature store CSV"}},
      {"calibrate", {cmd_calibrate, "logits CSV -> temperature + probabilities"}},
      {"aggregate", {cmd_aggregate, "annotations JSONL -> ICC report + consensus labels"}},
      {"foldplan", {cmd_foldplan, "stratified k-fold plan"}},
      {"train-labeller", {cmd_train_labeller, "feature-only labeller for one fold"}},
      {"pseudo", {cmd_pseudo, "confidence-filtered pseudo labels for one fold"}},
      {"train-hybrid", {cmd_train_hybrid, "two-stream model for one fold"}},
      {"cv", {cmd_cv, "full multi-arm cross-validation"}},
      {"report", {cmd_report, "CSV/SVG reports from cv_report.json"}},
      {"audit", {cmd_audit, "leakage audit of fold artifacts"}},
      {"serve", {cmd_serve, "annotation HTTP API"}},
      {"synth", {cmd_synth, "synthetic dataset for trying the pipeline"}},
  };
  return v;
}

std::string usage() {
  std::string s = "usage: speechconf <verb> [flags]   (speechconf <verb> --help for flags)\n\nverbs:\n";
  for (const auto& [name, v] : verbs()) {
    s += "  " + name + std::string(16 - std::min<std::size_t>(15, name.size()), ' ') + v.second + "\n";
  }
  return s;
}

}  // namespace

std::string creation_time() {
  std::time_t t = std::time(nullptr);
  if (const char* sde = std::getenv("SOURCE_DATE_EPOCH"); sde && *sde) {
    try {
      t = static_cast<std::time_t>(textio::parse_int(sde));
    } catch (const Error&) {
      throw Error(Errc::InvalidArgument, "SOURCE_DATE_EPOCH is not an integer");
    }
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Io io{out, err};
  if (args.empty() || args[0] == "--help" || args[0] == "-h" || args[0] == "help") {
    out << usage();
    return args.empty() ? 1 : 0;
  }
  set_warning_sink([&err](std::string_view m) { log_line(err, "warning", m); });
  int code = 2;
  try {
    const auto it = verbs().find(args[0]);
    if (it == verbs().end()) throw Error(Errc::UnknownVerb, "unknown verb '" + args[0] + "'");
    code = it->second.first(std::vector<std::string>(args.begin() + 1, args.end()), io);
  } catch (const Error& e) {
    log_line(err, "error", e.what(), std::string(errc_name(e.code())).c_str());
    code = is_validation_error(e.code()) ? 1 : 2;
  } catch (const std::exception& e) {
    log_line(err, "error", e.what(), "Internal");
    code = 2;
  }
  set_warning_sink(nullptr);
  return code;
}

}  // namespace speechconf::cli
