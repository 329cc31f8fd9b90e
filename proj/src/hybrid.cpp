#include "speechconf/hybrid.hpp"

#include <algorithm>
#include <numeric>

#include "json.hpp"
#include "speechconf/annotation.hpp"
#include "speechconf/error.hpp"
#include "speechconf/metrics.hpp"
#include "speechconf/splits.hpp"

namespace speechconf {

using nlohmann::json;

std::string_view source_name(Source s) { return s == Source::GroundTruth ? "ground_truth" : "pseudo"; }

Source parse_source(std::string_view s) {
  if (s == "ground_truth") return Source::GroundTruth;
  if (s == "pseudo") return Source::Pseudo;
  throw Error(Errc::UnknownSource, "unknown sample source '" + std::string(s) + "'");
}

std::string_view hybrid_mode_name(HybridMode m) {
  switch (m) {
    case HybridMode::Hybrid: return "hybrid";
    case HybridMode::EmbeddingOnly: return "embedding_only";
    case HybridMode::FeatureOnly: return "feature_only";
  }
  return "?";
}

HybridMode parse_hybrid_mode(std::string_view s) {
  for (auto m : {HybridMode::Hybrid, HybridMode::EmbeddingOnly, HybridMode::FeatureOnly}) {
    if (hybrid_mode_name(m) == s) return m;
  }
  throw Error(Errc::InvalidConfig, "unknown hybrid mode '" + std::string(s) + "'");
}

void HybridConfig::validate() const {
  if (!(lambda_fv >= 0.0)) throw Error(Errc::InvalidConfig, "lambda must be non-negative");
  if (!(gt_boost >= 1.0)) throw Error(Errc::InvalidConfig, "gt_boost must be at least 1");
  for (double w : class_weights) {
    if (!(w > 0.0)) throw Error(Errc::InvalidConfig, "class weights must be positive");
  }
  if (!(lr_embedding_stream > 0.0 && lr_feature_stream > 0.0)) {
    throw Error(Errc::InvalidConfig, "learning rates must be positive");
  }
  if (!(weight_decay >= 0.0)) throw Error(Errc::InvalidConfig, "weight decay must be non-negative");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(Errc::InvalidConfig, "dropout must be in [0, 1)");
  if (hidden.empty()) throw Error(Errc::InvalidConfig, "feature stream needs at least one hidden layer");
  if (batch_size < 2) throw Error(Errc::InvalidConfig, "batch size must be at least 2 (batch norm)");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw Error(Errc::InvalidConfig, "val_fraction must be in [0, 1)");
}

SampleSet SampleSet::subset(std::span<const std::size_t> rows) const {
  SampleSet s;
  s.normalizer_tag = normalizer_tag;
  s.features = gather_rows(features, rows);
  s.embeddings = gather_rows(embeddings, rows);
  for (auto i : rows) {
    s.ids.push_back(ids[i]);
    s.labels.push_back(labels[i]);
    s.sources.push_back(sources[i]);
  }
  return s;
}

void SampleSet::append(const SampleSet& other) {
  if (other.size() == 0) return;
  if (size() == 0) {
    *this = other;
    return;
  }
  if (other.normalizer_tag != normalizer_tag) throw Error(Errc::NormalizerMismatch, "sample sets use different normalizers");
  if (other.embeddings.cols() != embeddings.cols()) throw Error(Errc::DimMismatch, "embedding widths differ");
  auto cat = [](const Matrix& a, const Matrix& b) {
    Matrix m(a.rows() + b.rows(), a.cols());
    std::copy(a.data().begin(), a.data().end(), m.data().begin());
    std::copy(b.data().begin(), b.data().end(), m.data().begin() + static_cast<std::ptrdiff_t>(a.size()));
    return m;
  };
  features = cat(features, other.features);
  embeddings = cat(embeddings, other.embeddings);
  ids.insert(ids.end(), other.ids.begin(), other.ids.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  sources.insert(sources.end(), other.sources.begin(), other.sources.end());
}

SampleSet make_sample_set(std::span<const FeatureVector> vectors, const EmbeddingStore& embeddings,
                          std::span<const int> labels, Source source) {
  if (vectors.size() != labels.size()) throw Error(Errc::DimMismatch, "vectors and labels differ in length");
  SampleSet s;
  s.features = Matrix(vectors.size(), kFeatureDim);
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    const auto& fv = vectors[i];
    if (!fv.normalized) throw Error(Errc::NormalizerMismatch, fv.id + " is not normalized");
    if (i == 0) s.normalizer_tag = fv.normalizer_tag;
    if (fv.normalizer_tag != s.normalizer_tag) throw Error(Errc::NormalizerMismatch, fv.id + " uses other statistics");
    const auto v = fv.values();
    std::copy(v.begin(), v.end(), s.features.row(i).begin());
    s.ids.push_back(fv.id);
  }
  s.embeddings = embeddings.rows(s.ids);
  s.labels.assign(labels.begin(), labels.end());
  s.sources.assign(vectors.size(), source);
  return s;
}

std::vector<nn::LayerSpec> feature_stream_specs(const std::vector<std::size_t>& hidden, double dropout) {
  std::vector<nn::LayerSpec> s{nn::LayerSpec::sigmoid_gate(kFeatureDim)};
  std::size_t in = kFeatureDim;
  for (auto h : hidden) {
    s.push_back(nn::LayerSpec::dense(in, h));
    s.push_back(nn::LayerSpec::batch_norm(h));
    s.push_back(nn::LayerSpec::gelu(h));
    in = h;
  }
  s.push_back(nn::LayerSpec::dropout(in, dropout));
  s.push_back(nn::LayerSpec::dense(in, kNumClasses));
  return s;
}

HybridModel::HybridModel(std::size_t embedding_dim, const HybridConfig& cfg)
    : head_({nn::LayerSpec::dense(embedding_dim, kNumClasses)}, cfg.seed + 1),
      stream_(feature_stream_specs(cfg.hidden, cfg.dropout), cfg.seed),
      lambda_(cfg.lambda_fv),
      mode_(cfg.mode) {
  // The head starts at zero: with the small embedding-stream rate a random
  // start would dominate the logits for the whole run.
  for (auto* p : head_.parameters()) p->value.fill(0.0);
}

HybridOutput HybridModel::forward(const Matrix& embeddings, const Matrix& features, nn::Mode mode) {
  if (embeddings.rows() != features.rows()) throw Error(Errc::DimMismatch, "embedding and feature batches differ");
  HybridOutput out;
  if (mode_ != HybridMode::FeatureOnly) out.embedding_logits = head_.forward(embeddings, mode);
  if (mode_ != HybridMode::EmbeddingOnly) out.feature_logits = stream_.forward(features, mode);
  switch (mode_) {
    case HybridMode::EmbeddingOnly: out.fused = out.embedding_logits; break;
    case HybridMode::FeatureOnly: out.fused = out.feature_logits; break;
    case HybridMode::Hybrid:
      out.fused = out.embedding_logits;
      // lambda = 0 leaves the embedding logits bit-identical.
      if (lambda_ != 0.0) {
        for (std::size_t k = 0; k < out.fused.size(); ++k) out.fused.data()[k] += lambda_ * out.feature_logits.data()[k];
      }
      break;
  }
  return out;
}

void HybridModel::backward(const Matrix& dfused) {
  if (mode_ != HybridMode::FeatureOnly) head_.backward(dfused);
  if (mode_ == HybridMode::FeatureOnly) {
    stream_.backward(dfused);
  } else if (mode_ == HybridMode::Hybrid) {
    Matrix d = dfused;
    for (double& v : d.data()) v *= lambda_;
    stream_.backward(d);
  }
}

void HybridModel::zero_grad() {
  head_.zero_grad();
  stream_.zero_grad();
}

nn::LossResult source_boosted_loss(const Matrix& fused, std::span<const int> labels, std::span<const Source> sources,
                                   const HybridConfig& cfg) {
  if (sources.size() != labels.size()) throw Error(Errc::DimMismatch, "sources and labels differ in length");
  std::vector<double> w(sources.size());
  for (std::size_t i = 0; i < sources.size(); ++i) {
    switch (sources[i]) {
      case Source::GroundTruth: w[i] = cfg.gt_boost; break;
      case Source::Pseudo: w[i] = 1.0; break;
      default: throw Error(Errc::UnknownSource, "sample " + std::to_string(i) + " has no valid source");
    }
  }
  return nn::cross_entropy(fused, labels, w, cfg.class_weights);
}

namespace {

std::vector<int> argmax_rows(const Matrix& m) {
  std::vector<int> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = static_cast<int>(argmax(m.row(i)));
  return out;
}

std::size_t batches_per_epoch(std::size_t n, std::size_t batch) {
  std::size_t count = 0, start = 0;
  while (start < n) {
    std::size_t end = std::min(n, start + batch);
    if (n - end == 1) end = n;
    if (end - start < 2) break;
    ++count;
    start = end;
  }
  return count;
}

}  // namespace

HybridTrainResult train_hybrid(const SampleSet& gt, const SampleSet& pseudo, const std::set<std::string>& forbidden_ids,
                               const HybridConfig& cfg) {
  cfg.validate();
  if (gt.size() == 0) throw Error(Errc::EmptyTrainingSet, "hybrid training needs ground-truth samples");
  for (const auto* set : {&gt, &pseudo}) {
    for (const auto& id : set->ids) {
      if (forbidden_ids.count(id)) throw Error(Errc::LeakageDetected, "held-out id " + id + " in hybrid training data");
    }
  }

  const auto split = stratified_holdout(gt.labels, cfg.val_fraction, cfg.seed ^ 0x7a11ULL);
  SampleSet train = gt.subset(split.train);
  train.append(pseudo);
  const SampleSet val = split.holdout.empty() ? gt : gt.subset(split.holdout);
  const std::size_t n = train.size();
  if (n < 2) throw Error(Errc::EmptyTrainingSet, "hybrid training needs at least 2 training rows");

  HybridTrainResult res;
  res.train_ids = train.ids;
  res.val_ids = val.ids;
  HybridModel& model = res.model;
  model = HybridModel(gt.embeddings.cols(), cfg);
  model.input_tag = gt.normalizer_tag;

  std::vector<nn::ParamGroup> groups;
  if (cfg.mode != HybridMode::FeatureOnly) groups.push_back({model.embedding_params(), cfg.lr_embedding_stream, cfg.weight_decay});
  if (cfg.mode != HybridMode::EmbeddingOnly) groups.push_back({model.feature_params(), cfg.lr_feature_stream, cfg.weight_decay});
  std::vector<double> lr_max;
  for (const auto& g : groups) lr_max.push_back(g.lr);
  nn::Optimizer opt(nn::OptimizerKind::AdamW, groups);
  const std::size_t total_steps = std::max<std::size_t>(1, cfg.max_epochs * batches_per_epoch(n, cfg.batch_size));
  std::size_t step = 0;
  HybridModel best = model;

  nn::LoopCallbacks cb;
  cb.train_epoch = [&](std::size_t epoch) {
    const auto sc = nn::SamplerConfig::from_labels(train.labels, cfg.seed * 1000003ULL + epoch);
    const auto idx = nn::weighted_sample(sc, train.labels, n);
    double loss_sum = 0.0;
    std::size_t batches = 0, start = 0;
    while (start < n) {
      std::size_t end = std::min(n, start + cfg.batch_size);
      if (n - end == 1) end = n;
      if (end - start < 2) break;
      const std::span<const std::size_t> b(idx.data() + start, end - start);
      const SampleSet batch = train.subset(b);
      for (std::size_t g = 0; g < groups.size(); ++g) {
        opt.groups()[g].lr = nn::cosine_lr({lr_max[g], total_steps, 0.0}, std::min(step, total_steps));
      }
      model.zero_grad();
      const auto out = model.forward(batch.embeddings, batch.features, nn::Mode::Train);
      const auto r = source_boosted_loss(out.fused, batch.labels, batch.sources, cfg);
      model.backward(r.dlogits);
      opt.step();
      ++step;
      loss_sum += r.loss;
      ++batches;
      start = end;
    }
    return batches ? loss_sum / static_cast<double>(batches) : 0.0;
  };
  cb.validate = [&] {
    const auto out = model.forward(val.embeddings, val.features, nn::Mode::Eval);
    return nn::ValidationResult{nn::cross_entropy(out.fused, val.labels).loss,
                                classification_metrics(argmax_rows(out.fused), val.labels).macro_f1};
  };
  cb.save_best = [&] { best = model; };
  cb.restore_best = [&] { model = best; };
  res.history = nn::train_loop(cfg.max_epochs, {nn::StopMetric::ValMacroF1, cfg.patience}, cb);
  return res;
}

Prediction predict(HybridModel& model, const SampleSet& samples) {
  const auto tag = model.expected_tag();
  if (tag != 0 && samples.size() > 0 && samples.normalizer_tag != tag) {
    throw Error(Errc::NormalizerMismatch, "samples were normalized with statistics the model was not trained on");
  }
  Prediction p;
  p.probs = softmax_rows(model.forward(samples.embeddings, samples.features, nn::Mode::Eval).fused);
  p.labels = argmax_rows(p.probs);
  return p;
}

nn::Checkpoint hybrid_checkpoint(const HybridModel& m) {
  json extra = {{"role", "hybrid"},
                {"lambda_fv", m.lambda_},
                {"mode", hybrid_mode_name(m.mode_)},
                {"input_tag", m.input_tag}};
  return nn::Checkpoint{{nn::NamedModel{"projection_head", m.head_}, nn::NamedModel{"feature_stream", m.stream_}},
                        m.normalizer, extra.dump()};
}

HybridModel hybrid_from_checkpoint(const nn::Checkpoint& c) {
  if (c.models.size() != 2 || c.models[0].name != "projection_head" || c.models[1].name != "feature_stream") {
    throw Error(Errc::CorruptHeader, "checkpoint does not hold a hybrid model");
  }
  const auto extra = json::parse(c.extra_json);
  HybridModel m;
  m.head_ = c.models[0].model;
  m.stream_ = c.models[1].model;
  m.lambda_ = extra.at("lambda_fv").get<double>();
  m.mode_ = parse_hybrid_mode(extra.at("mode").get<std::string>());
  m.input_tag = extra.at("input_tag").get<std::uint64_t>();
  m.normalizer = c.normalizer;
  return m;
}

}  // namespace speechconf
