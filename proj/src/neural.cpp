#include "speechconf/neural.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numbers>
#include <numeric>

#include "json.hpp"
#include "speechconf/error.hpp"
#include "speechconf/metrics.hpp"
#include "speechconf/textio.hpp"

namespace speechconf::nn {

using json = nlohmann::json;

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Param make_param(std::string name, std::size_t rows, std::size_t cols, double fill = 0.0) {
  return Param{std::move(name), Matrix(rows, cols, fill), Matrix(rows, cols)};
}

void check_spec(const LayerSpec& s) {
  if (s.in_dim == 0 || s.out_dim == 0) throw Error(Errc::DimMismatch, "layer dimensions must be positive");
  if (s.kind != LayerKind::Dense && s.in_dim != s.out_dim) {
    throw Error(Errc::DimMismatch, std::string(layer_kind_name(s.kind)) + " layer must keep its width");
  }
  if (s.kind == LayerKind::Dropout && !(s.p >= 0.0 && s.p < 1.0)) {
    throw Error(Errc::InvalidConfig, "dropout probability must be in [0, 1)");
  }
}

}  // namespace

std::string_view layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Dense: return "dense";
    case LayerKind::BatchNorm: return "batch_norm";
    case LayerKind::Gelu: return "gelu";
    case LayerKind::Relu: return "relu";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::SigmoidGate: return "sigmoid_gate";
    case LayerKind::Softmax: return "softmax";
  }
  return "?";
}

LayerKind parse_layer_kind(std::string_view s) {
  for (auto k : {LayerKind::Dense, LayerKind::BatchNorm, LayerKind::Gelu, LayerKind::Relu, LayerKind::Dropout,
                 LayerKind::SigmoidGate, LayerKind::Softmax}) {
    if (layer_kind_name(k) == s) return k;
  }
  throw Error(Errc::InvalidConfig, "unknown layer kind '" + std::string(s) + "'");
}

Mlp::Mlp(std::vector<LayerSpec> specs, std::uint64_t seed) : seed_(seed), rng_(seed) {
  if (specs.empty()) throw Error(Errc::InvalidConfig, "model needs at least one layer");
  for (std::size_t i = 0; i < specs.size(); ++i) {
    check_spec(specs[i]);
    if (i > 0 && specs[i].in_dim != specs[i - 1].out_dim) {
      throw Error(Errc::DimMismatch, "layer " + std::to_string(i) + " expects " + std::to_string(specs[i].in_dim) +
                                         " inputs but the previous layer emits " + std::to_string(specs[i - 1].out_dim));
    }
  }
  // Initialization draws from a stream separate from the dropout RNG.
  Rng init(seed ^ 0x5eedc0def00dULL);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    Layer layer;
    layer.spec = specs[i];
    const auto& s = specs[i];
    const std::string prefix = "layer" + std::to_string(i) + ".";
    switch (s.kind) {
      case LayerKind::Dense: {
        auto w = make_param(prefix + "weight", s.in_dim, s.out_dim);
        const double limit = std::sqrt(6.0 / static_cast<double>(s.in_dim + s.out_dim));
        for (double& v : w.value.data()) v = init.uniform(-limit, limit);
        layer.params.push_back(std::move(w));
        layer.params.push_back(make_param(prefix + "bias", 1, s.out_dim));
        break;
      }
      case LayerKind::BatchNorm:
        layer.params.push_back(make_param(prefix + "gamma", 1, s.in_dim, 1.0));
        layer.params.push_back(make_param(prefix + "beta", 1, s.in_dim));
        layer.running_mean = Matrix(1, s.in_dim, 0.0);
        layer.running_var = Matrix(1, s.in_dim, 1.0);
        break;
      case LayerKind::SigmoidGate:
        layer.params.push_back(make_param(prefix + "gate", 1, s.in_dim));
        break;
      default:
        break;
    }
    layers_.push_back(std::move(layer));
  }
}

std::size_t Mlp::input_dim() const { return layers_.empty() ? 0 : layers_.front().spec.in_dim; }
std::size_t Mlp::output_dim() const { return layers_.empty() ? 0 : layers_.back().spec.out_dim; }

std::vector<LayerSpec> Mlp::specs() const {
  std::vector<LayerSpec> out;
  for (const auto& l : layers_) out.push_back(l.spec);
  return out;
}

Matrix Mlp::forward(const Matrix& x, Mode mode) {
  if (x.cols() != input_dim()) {
    throw Error(Errc::DimMismatch, "input has " + std::to_string(x.cols()) + " columns, model expects " +
                                       std::to_string(input_dim()));
  }
  if (x.rows() == 0) throw Error(Errc::DimMismatch, "empty batch");
  Matrix h = x;
  for (auto& layer : layers_) {
    const std::size_t n = h.rows(), d = layer.spec.in_dim;
    layer.input = h;
    layer.cached_mode = mode;
    Matrix y;
    switch (layer.spec.kind) {
      case LayerKind::Dense: {
        y = matmul(h, layer.params[0].value);
        const auto b = layer.params[1].value.row(0);
        for (std::size_t i = 0; i < n; ++i) {
          auto r = y.row(i);
          for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
        }
        break;
      }
      case LayerKind::BatchNorm: {
        const auto gamma = layer.params[0].value.row(0);
        const auto beta = layer.params[1].value.row(0);
        std::vector<double> mean(d), var(d);
        if (mode == Mode::Train) {
          if (n < 2) throw Error(Errc::BatchTooSmallForBatchNorm, "batch norm needs at least 2 rows in train mode");
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) mean[j] += h(i, j);
          for (auto& m : mean) m /= static_cast<double>(n);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) var[j] += (h(i, j) - mean[j]) * (h(i, j) - mean[j]);
          for (std::size_t j = 0; j < d; ++j) {
            const double biased = var[j] / static_cast<double>(n);
            const double unbiased = var[j] / static_cast<double>(n - 1);
            layer.running_mean(0, j) = (1.0 - kBatchNormMomentum) * layer.running_mean(0, j) + kBatchNormMomentum * mean[j];
            layer.running_var(0, j) = (1.0 - kBatchNormMomentum) * layer.running_var(0, j) + kBatchNormMomentum * unbiased;
            var[j] = biased;
          }
        } else {
          for (std::size_t j = 0; j < d; ++j) {
            mean[j] = layer.running_mean(0, j);
            var[j] = layer.running_var(0, j);
          }
        }
        layer.inv_std.resize(d);
        for (std::size_t j = 0; j < d; ++j) layer.inv_std[j] = 1.0 / std::sqrt(var[j] + kBatchNormEps);
        layer.aux = Matrix(n, d);
        y = Matrix(n, d);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < d; ++j) {
            const double xhat = (h(i, j) - mean[j]) * layer.inv_std[j];
            layer.aux(i, j) = xhat;
            y(i, j) = gamma[j] * xhat + beta[j];
          }
        }
        break;
      }
      case LayerKind::Gelu: {
        y = Matrix(n, d);
        for (std::size_t k = 0; k < h.size(); ++k) {
          const double v = h.data()[k];
          y.data()[k] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
        }
        break;
      }
      case LayerKind::Relu: {
        y = h;
        for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
        break;
      }
      case LayerKind::Dropout: {
        y = h;
        if (mode == Mode::Train && layer.spec.p > 0.0) {
          layer.aux = Matrix(n, d);
          const double keep = 1.0 - layer.spec.p;
          for (std::size_t k = 0; k < y.size(); ++k) {
            const double m = rng_.uniform() >= layer.spec.p ? 1.0 / keep : 0.0;
            layer.aux.data()[k] = m;
            y.data()[k] *= m;
          }
        } else {
          layer.aux = Matrix();
        }
        break;
      }
      case LayerKind::SigmoidGate: {
        const auto g = layer.params[0].value.row(0);
        layer.aux = Matrix(1, d);
        for (std::size_t j = 0; j < d; ++j) layer.aux(0, j) = sigmoid(g[j]);
        y = h;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) y(i, j) *= layer.aux(0, j);
        break;
      }
      case LayerKind::Softmax:
        y = softmax_rows(h);
        break;
    }
    layer.output = y;
    h = std::move(y);
  }
  return h;
}

Matrix Mlp::backward(const Matrix& dout) {
  if (layers_.empty() || !dout.same_shape(layers_.back().output)) {
    throw Error(Errc::ShapeMismatch, "output gradient does not match the last forward pass");
  }
  Matrix g = dout;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    auto& layer = *it;
    const Matrix& x = layer.input;
    const std::size_t n = x.rows(), d = layer.spec.in_dim;
    Matrix dx;
    switch (layer.spec.kind) {
      case LayerKind::Dense: {
        const Matrix dw = matmul_tn(x, g);
        auto& gw = layer.params[0].grad.data();
        for (std::size_t k = 0; k < gw.size(); ++k) gw[k] += dw.data()[k];
        auto gb = layer.params[1].grad.row(0);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          const auto r = g.row(i);
          for (std::size_t j = 0; j < r.size(); ++j) gb[j] += r[j];
        }
        dx = matmul_nt(g, layer.params[0].value);
        break;
      }
      case LayerKind::BatchNorm: {
        const auto gamma = layer.params[0].value.row(0);
        auto dgamma = layer.params[0].grad.row(0);
        auto dbeta = layer.params[1].grad.row(0);
        const Matrix& xhat = layer.aux;
        dx = Matrix(n, d);
        for (std::size_t j = 0; j < d; ++j) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            sum_g += g(i, j);
            sum_gx += g(i, j) * xhat(i, j);
          }
          dgamma[j] += sum_gx;
          dbeta[j] += sum_g;
          const double s = gamma[j] * layer.inv_std[j];
          if (layer.cached_mode == Mode::Train) {
            const double nn = static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
              dx(i, j) = s / nn * (nn * g(i, j) - sum_g - xhat(i, j) * sum_gx);
            }
          } else {
            for (std::size_t i = 0; i < n; ++i) dx(i, j) = s * g(i, j);
          }
        }
        break;
      }
      case LayerKind::Gelu: {
        dx = Matrix(n, d);
        for (std::size_t k = 0; k < x.size(); ++k) {
          const double v = x.data()[k];
          const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
          const double dudx = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
          dx.data()[k] = g.data()[k] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dudx);
        }
        break;
      }
      case LayerKind::Relu: {
        dx = g;
        for (std::size_t k = 0; k < x.size(); ++k) {
          if (!(x.data()[k] > 0.0)) dx.data()[k] = 0.0;
        }
        break;
      }
      case LayerKind::Dropout: {
        dx = g;
        if (!layer.aux.empty()) {
          for (std::size_t k = 0; k < dx.size(); ++k) dx.data()[k] *= layer.aux.data()[k];
        }
        break;
      }
      case LayerKind::SigmoidGate: {
        auto dg = layer.params[0].grad.row(0);
        dx = g;
        for (std::size_t j = 0; j < d; ++j) {
          const double s = layer.aux(0, j);
          double acc = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            acc += g(i, j) * x(i, j);
            dx(i, j) *= s;
          }
          dg[j] += acc * s * (1.0 - s);
        }
        break;
      }
      case LayerKind::Softmax: {
        const Matrix& y = layer.output;
        dx = Matrix(n, d);
        for (std::size_t i = 0; i < n; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < d; ++j) dot += g(i, j) * y(i, j);
          for (std::size_t j = 0; j < d; ++j) dx(i, j) = y(i, j) * (g(i, j) - dot);
        }
        break;
      }
    }
    g = std::move(dx);
  }
  return g;
}

void Mlp::zero_grad() {
  for (auto& l : layers_) {
    for (auto& p : l.params) p.grad.fill(0.0);
  }
}

std::vector<Param*> Mlp::parameters() {
  std::vector<Param*> out;
  for (auto& l : layers_) {
    for (auto& p : l.params) out.push_back(&p);
  }
  return out;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) {
    for (const auto& p : l.params) n += p.value.size();
  }
  return n;
}

std::vector<LayerSpec> relu_mlp_specs(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t classes,
                                      double dropout) {
  std::vector<LayerSpec> s;
  std::size_t prev = in;
  for (std::size_t h : hidden) {
    s.push_back(LayerSpec::dense(prev, h));
    s.push_back(LayerSpec::relu(h));
    if (dropout > 0.0) s.push_back(LayerSpec::dropout(h, dropout));
    prev = h;
  }
  s.push_back(LayerSpec::dense(prev, classes));
  return s;
}

LossResult cross_entropy(const Matrix& logits, std::span<const int> labels, std::span<const double> sample_weights,
                         std::span<const double> class_weights) {
  const std::size_t n = logits.rows(), c = logits.cols();
  if (labels.size() != n) throw Error(Errc::DimMismatch, "one label per logit row required");
  if (!sample_weights.empty() && sample_weights.size() != n) {
    throw Error(Errc::DimMismatch, "one sample weight per row required");
  }
  if (!class_weights.empty() && class_weights.size() != c) {
    throw Error(Errc::DimMismatch, "one class weight per column required");
  }
  std::vector<double> w(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw Error(Errc::InvalidArgument, "label " + std::to_string(labels[i]) + " out of range");
    }
    const double sw = sample_weights.empty() ? 1.0 : sample_weights[i];
    const double cw = class_weights.empty() ? 1.0 : class_weights[static_cast<std::size_t>(labels[i])];
    if (!(sw >= 0.0) || !(cw >= 0.0)) throw Error(Errc::InvalidArgument, "weights must be non-negative");
    w[i] = sw * cw;
    total += w[i];
  }
  if (!(total > 0.0)) throw Error(Errc::AllWeightsZero, "cross-entropy weights sum to zero");

  LossResult r;
  r.dlogits = Matrix(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    const auto z = logits.row(i);
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - mx);
    const double log_z = mx + std::log(sum);
    const auto y = static_cast<std::size_t>(labels[i]);
    r.loss += w[i] * (log_z - z[y]);
    const double scale = w[i] / total;
    for (std::size_t j = 0; j < c; ++j) {
      const double p = std::exp(z[j] - log_z);
      r.dlogits(i, j) = scale * (p - (j == y ? 1.0 : 0.0));
    }
  }
  r.loss /= total;
  return r;
}

Optimizer::Optimizer(OptimizerKind kind, std::vector<ParamGroup> groups, double beta1, double beta2, double eps)
    : kind_(kind), groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& g : groups_) {
    std::vector<Matrix> m, v;
    for (const Param* p : g.params) {
      m.emplace_back(p->value.rows(), p->value.cols());
      v.emplace_back(p->value.rows(), p->value.cols());
    }
    m_.push_back(std::move(m));
    v_.push_back(std::move(v));
  }
}

void Optimizer::step() {
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    for (std::size_t pi = 0; pi < groups_[gi].params.size(); ++pi) {
      const Param* p = groups_[gi].params[pi];
      if (!p->grad.same_shape(p->value) || !p->value.same_shape(m_[gi][pi])) {
        throw Error(Errc::ShapeMismatch, "gradient shape differs from parameter " + p->name);
      }
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    const double lr = groups_[gi].lr, wd = groups_[gi].weight_decay;
    for (std::size_t pi = 0; pi < groups_[gi].params.size(); ++pi) {
      Param& p = *groups_[gi].params[pi];
      auto& theta = p.value.data();
      const auto& grad = p.grad.data();
      auto& m = m_[gi][pi].data();
      auto& v = v_[gi][pi].data();
      for (std::size_t k = 0; k < theta.size(); ++k) {
        double gk = grad[k];
        if (wd != 0.0) {
          if (kind_ == OptimizerKind::Adam) {
            gk += wd * theta[k];
          } else {
            theta[k] *= 1.0 - lr * wd;
          }
        }
        m[k] = beta1_ * m[k] + (1.0 - beta1_) * gk;
        v[k] = beta2_ * v[k] + (1.0 - beta2_) * gk * gk;
        const double mhat = m[k] / bc1;
        const double vhat = v[k] / bc2;
        theta[k] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }
}

double cosine_lr(const CosineSchedule& s, std::size_t step) {
  if (step > s.total_steps) {
    throw Error(Errc::StepOutOfRange,
                "step " + std::to_string(step) + " beyond schedule length " + std::to_string(s.total_steps));
  }
  if (s.total_steps == 0) return s.lr_max;
  const double frac = static_cast<double>(step) / static_cast<double>(s.total_steps);
  return s.lr_min + 0.5 * (s.lr_max - s.lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

SamplerConfig SamplerConfig::from_labels(std::span<const int> labels, std::uint64_t seed) {
  SamplerConfig cfg;
  cfg.seed = seed;
  for (int y : labels) ++cfg.class_counts[y];
  return cfg;
}

double SamplerConfig::weight_of(int label) const {
  const auto it = class_counts.find(label);
  if (it == class_counts.end() || it->second == 0) {
    throw Error(Errc::EmptyClass, "class " + std::to_string(label) + " has no samples");
  }
  return 1.0 / static_cast<double>(it->second);
}

std::vector<std::size_t> weighted_sample(const SamplerConfig& cfg, std::span<const int> labels, std::size_t n_draws) {
  if (labels.empty()) throw Error(Errc::EmptyClass, "cannot sample from an empty dataset");
  std::vector<double> cumulative(labels.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    acc += cfg.weight_of(labels[i]);
    cumulative[i] = acc;
  }
  Rng rng(cfg.seed);
  std::vector<std::size_t> out(n_draws);
  for (auto& idx : out) {
    const double u = rng.uniform() * acc;
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    idx = std::min(static_cast<std::size_t>(it - cumulative.begin()), labels.size() - 1);
  }
  return out;
}

double grad_check(const std::vector<Param*>& params, const std::function<double()>& loss,
                  const std::function<void()>& analytic, double h) {
  analytic();
  std::vector<Matrix> grads;
  for (const Param* p : params) grads.push_back(p->grad);
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& theta = params[pi]->value.data();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double orig = theta[k];
      theta[k] = orig + h;
      const double lp = loss();
      theta[k] = orig - h;
      const double lm = loss();
      theta[k] = orig;
      const double numeric = (lp - lm) / (2.0 * h);
      const double a = grads[pi].data()[k];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-3});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

double grad_check(Mlp& model, const Matrix& x, std::span<const int> labels, std::span<const double> sample_weights,
                  std::span<const double> class_weights, double h) {
  auto loss = [&] { return cross_entropy(model.forward(x, Mode::Eval), labels, sample_weights, class_weights).loss; };
  auto analytic = [&] {
    model.zero_grad();
    const auto r = cross_entropy(model.forward(x, Mode::Eval), labels, sample_weights, class_weights);
    model.backward(r.dlogits);
  };
  return grad_check(model.parameters(), loss, analytic, h);
}

TrainHistory train_loop(std::size_t max_epochs, const EarlyStopConfig& stop, const LoopCallbacks& cb) {
  TrainHistory hist;
  if (max_epochs == 0) return hist;
  double best = 0.0;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = cb.train_epoch(epoch);
    const auto val = cb.validate();
    rec.val_loss = val.loss;
    rec.val_macro_f1 = val.macro_f1;
    hist.epochs.push_back(rec);
    const double score = stop.metric == StopMetric::ValLoss ? -val.loss : val.macro_f1;
    if (hist.best_epoch == 0 || score > best) {
      best = score;
      hist.best_epoch = epoch;
      since_best = 0;
      if (cb.save_best) cb.save_best();
    } else if (++since_best >= stop.patience) {
      hist.stopped_early = true;
      break;
    }
  }
  if (cb.restore_best) cb.restore_best();
  return hist;
}

namespace {

bool has_batch_norm(const Mlp& m) {
  return std::any_of(m.layers().begin(), m.layers().end(),
                     [](const Layer& l) { return l.spec.kind == LayerKind::BatchNorm; });
}

}  // namespace

Matrix predict_logits(Mlp& model, const Matrix& x) { return model.forward(x, Mode::Eval); }

Matrix predict_proba(Mlp& model, const Matrix& x) { return softmax_rows(predict_logits(model, x)); }

TrainHistory fit_classifier(Mlp& model, const LabelledMatrix& train, const LabelledMatrix& val,
                            const ClassifierTrainConfig& cfg) {
  if (train.y.empty() || train.x.rows() != train.y.size()) {
    throw Error(Errc::EmptyTrainingSet, "classifier training set is empty or inconsistent");
  }
  if (cfg.batch_size == 0) throw Error(Errc::InvalidConfig, "batch size must be positive");
  Optimizer opt(cfg.optimizer, {ParamGroup{model.parameters(), cfg.lr, cfg.weight_decay}});
  const bool bn = has_batch_norm(model);
  const LabelledMatrix& v = val.y.empty() ? train : val;
  const std::size_t n = train.y.size();
  Rng order_rng(cfg.seed ^ 0x0bad5eedULL);
  Mlp best = model;

  LoopCallbacks cb;
  cb.train_epoch = [&](std::size_t epoch) {
    std::vector<std::size_t> idx;
    if (cfg.weighted_sampling) {
      auto sc = SamplerConfig::from_labels(train.y, cfg.seed * 1000003ULL + epoch);
      idx = weighted_sample(sc, train.y, n);
    } else {
      idx.resize(n);
      std::iota(idx.begin(), idx.end(), 0);
      order_rng.shuffle(idx);
    }
    double loss_sum = 0.0;
    std::size_t batches = 0;
    std::size_t start = 0;
    while (start < n) {
      std::size_t end = std::min(n, start + cfg.batch_size);
      // A trailing single row joins the previous batch (batch norm needs 2).
      if (bn && n - end == 1) end = n;
      if (bn && end - start < 2) break;
      std::vector<std::size_t> b(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                 idx.begin() + static_cast<std::ptrdiff_t>(end));
      const Matrix xb = gather_rows(train.x, b);
      std::vector<int> yb;
      for (auto i : b) yb.push_back(train.y[i]);
      model.zero_grad();
      const auto r = cross_entropy(model.forward(xb, Mode::Train), yb);
      model.backward(r.dlogits);
      opt.step();
      loss_sum += r.loss;
      ++batches;
      start = end;
    }
    return batches ? loss_sum / static_cast<double>(batches) : 0.0;
  };
  cb.validate = [&] {
    const Matrix logits = predict_logits(model, v.x);
    std::vector<int> pred(v.y.size());
    for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = static_cast<int>(argmax(logits.row(i)));
    return ValidationResult{cross_entropy(logits, v.y).loss, classification_metrics(pred, v.y).macro_f1};
  };
  cb.save_best = [&] { best = model; };
  cb.restore_best = [&] { model = best; };
  return train_loop(cfg.max_epochs, cfg.early_stop, cb);
}

// ---- checkpoints ------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'C', 'S', 'N', 'N'};

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v & 0xFF));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::vector<std::uint8_t>& b, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw Error(Errc::CorruptHeader, "checkpoint truncated");
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(b_[pos_] | (b_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  json meta;
  meta["format"] = "speechconf-checkpoint";
  meta["models"] = json::array();
  for (const auto& nm : c.models) {
    json layers = json::array();
    for (const auto& s : nm.model.specs()) {
      layers.push_back({{"kind", layer_kind_name(s.kind)}, {"in", s.in_dim}, {"out", s.out_dim}, {"p", s.p}});
    }
    meta["models"].push_back({{"name", nm.name}, {"seed", nm.model.seed()}, {"layers", layers}});
  }
  if (c.normalizer) {
    const auto& n = *c.normalizer;
    meta["normalizer"] = {{"tag", n.tag()},
                          {"mean", std::vector<double>(n.mean.begin(), n.mean.end())},
                          {"std", std::vector<double>(n.std.begin(), n.std.end())},
                          {"fit_ids", n.fit_ids}};
  } else {
    meta["normalizer"] = nullptr;
  }
  try {
    meta["extra"] = json::parse(c.extra_json);
  } catch (const json::exception&) {
    throw Error(Errc::InvalidArgument, "checkpoint metadata is not valid JSON");
  }
  const std::string text = meta.dump();

  std::vector<std::uint8_t> b(kMagic, kMagic + 4);
  put_u16(b, kCheckpointVersion);
  put_u32(b, static_cast<std::uint32_t>(text.size()));
  b.insert(b.end(), text.begin(), text.end());
  for (const auto& nm : c.models) {
    for (const auto& layer : nm.model.layers()) {
      for (const auto& p : layer.params) {
        for (double d : p.value.data()) put_f64(b, d);
      }
      if (layer.spec.kind == LayerKind::BatchNorm) {
        for (double d : layer.running_mean.data()) put_f64(b, d);
        for (double d : layer.running_var.data()) put_f64(b, d);
      }
    }
  }
  return b;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.bytes(4) != std::string(kMagic, 4)) throw Error(Errc::CorruptHeader, "not a speechconf checkpoint");
  const auto version = r.u16();
  if (version != kCheckpointVersion) {
    throw Error(Errc::CorruptHeader, "unsupported checkpoint version " + std::to_string(version));
  }
  json meta;
  try {
    meta = json::parse(r.bytes(r.u32()));
  } catch (const json::exception& e) {
    throw Error(Errc::CorruptHeader, std::string("checkpoint metadata: ") + e.what());
  }
  Checkpoint c;
  try {
    for (const auto& jm : meta.at("models")) {
      std::vector<LayerSpec> specs;
      for (const auto& jl : jm.at("layers")) {
        specs.push_back({parse_layer_kind(jl.at("kind").get<std::string>()), jl.at("in").get<std::size_t>(),
                         jl.at("out").get<std::size_t>(), jl.at("p").get<double>()});
      }
      NamedModel nm{jm.at("name").get<std::string>(), Mlp(specs, jm.at("seed").get<std::uint64_t>())};
      for (auto& layer : nm.model.layers()) {
        for (auto& p : layer.params) {
          for (double& d : p.value.data()) d = r.f64();
        }
        if (layer.spec.kind == LayerKind::BatchNorm) {
          for (double& d : layer.running_mean.data()) d = r.f64();
          for (double& d : layer.running_var.data()) d = r.f64();
        }
      }
      c.models.push_back(std::move(nm));
    }
    const auto& jn = meta.at("normalizer");
    if (!jn.is_null()) {
      Normalizer n;
      const auto mean = jn.at("mean").get<std::vector<double>>();
      const auto sd = jn.at("std").get<std::vector<double>>();
      if (mean.size() != kFeatureDim || sd.size() != kFeatureDim) {
        throw Error(Errc::CorruptHeader, "normalizer in checkpoint has wrong dimension");
      }
      std::copy(mean.begin(), mean.end(), n.mean.begin());
      std::copy(sd.begin(), sd.end(), n.std.begin());
      n.fit_ids = jn.at("fit_ids").get<std::vector<std::string>>();
      if (n.tag() != jn.at("tag").get<std::uint64_t>()) {
        throw Error(Errc::ChecksumMismatch, "normalizer statistics do not match their recorded tag");
      }
      c.normalizer = std::move(n);
    }
    c.extra_json = meta.at("extra").dump();
  } catch (const json::exception& e) {
    throw Error(Errc::CorruptHeader, std::string("checkpoint metadata: ") + e.what());
  }
  if (!r.done()) throw Error(Errc::CorruptHeader, "trailing bytes after checkpoint parameters");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  textio::write_binary(path, encode_checkpoint(c));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(Errc::NotFound, "checkpoint " + path.string() + " not found");
  return decode_checkpoint(textio::read_binary(path));
}

}  // namespace speechconf::nn
