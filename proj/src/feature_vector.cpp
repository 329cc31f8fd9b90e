#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "speechconf/error.hpp"
#include "speechconf/features.hpp"
#include "speechconf/textio.hpp"

namespace speechconf {

namespace {

const char* const kAuxColumns[] = {"disf_block",   "disf_prolong",  "disf_interj",
                                   "disf_wordrep", "disf_soundrep", "stress"};

void check_probability(double p, const std::string& what) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw Error(Errc::ProbabilityOutOfRange, what + " = " + textio::format_double(p) + " outside [0, 1]");
  }
}

std::uint64_t fnv1a(std::span<const double> values) {
  std::uint64_t h = 1469598103934665603ull;
  for (double d : values) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &d, sizeof d);
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ull;
    }
  }
  return h == 0 ? 1 : h;
}

}  // namespace

std::array<double, kFeatureDim> FeatureVector::values() const {
  std::array<double, kFeatureDim> v{};
  std::copy(prosodic.begin(), prosodic.end(), v.begin());
  std::copy(disfluency_probs.begin(), disfluency_probs.end(), v.begin() + kProsodicDim);
  v[kFeatureDim - 1] = stress_prob;
  return v;
}

void FeatureVector::set_values(std::span<const double> v) {
  if (v.size() != kFeatureDim) throw Error(Errc::DimensionMismatch, "feature vector needs 94 values");
  std::copy_n(v.begin(), kProsodicDim, prosodic.begin());
  std::copy_n(v.begin() + kProsodicDim, kDisfluencyDim, disfluency_probs.begin());
  stress_prob = v[kFeatureDim - 1];
}

std::uint64_t Normalizer::tag() const {
  std::vector<double> all(mean.begin(), mean.end());
  all.insert(all.end(), std.begin(), std.end());
  return fnv1a(all);
}

FeatureVector assemble_feature_vector(std::string id, std::span<const double> prosodic,
                                      std::span<const double> disfluency_probs, double stress_prob) {
  if (prosodic.size() != kProsodicDim) {
    throw Error(Errc::DimensionMismatch, "expected 88 prosodic values, got " + std::to_string(prosodic.size()));
  }
  if (disfluency_probs.size() != kDisfluencyDim) {
    throw Error(Errc::DimensionMismatch, "expected 5 disfluency probabilities");
  }
  for (double p : prosodic) {
    if (!std::isfinite(p)) throw Error(Errc::NonFiniteValue, "prosodic value in " + id);
  }
  for (std::size_t i = 0; i < kDisfluencyDim; ++i) check_probability(disfluency_probs[i], kAuxColumns[i]);
  check_probability(stress_prob, "stress");
  FeatureVector fv;
  fv.id = std::move(id);
  std::copy(prosodic.begin(), prosodic.end(), fv.prosodic.begin());
  std::copy(disfluency_probs.begin(), disfluency_probs.end(), fv.disfluency_probs.begin());
  fv.stress_prob = stress_prob;
  return fv;
}

Normalizer normalizer_fit(std::span<const FeatureVector> train) {
  if (train.size() < 2) throw Error(Errc::EmptyTrainingSet, "normalizer needs at least 2 training vectors");
  Normalizer n;
  std::array<double, kFeatureDim> sum{}, sq{};
  for (const auto& fv : train) {
    if (fv.normalized) throw Error(Errc::DoubleNormalization, "cannot fit on normalized vector " + fv.id);
    const auto v = fv.values();
    for (std::size_t d = 0; d < kFeatureDim; ++d) sum[d] += v[d];
    n.fit_ids.push_back(fv.id);
  }
  const auto count = static_cast<double>(train.size());
  for (std::size_t d = 0; d < kFeatureDim; ++d) n.mean[d] = sum[d] / count;
  for (const auto& fv : train) {
    const auto v = fv.values();
    for (std::size_t d = 0; d < kFeatureDim; ++d) sq[d] += (v[d] - n.mean[d]) * (v[d] - n.mean[d]);
  }
  for (std::size_t d = 0; d < kFeatureDim; ++d) n.std[d] = std::max(std::sqrt(sq[d] / count), kStdFloor);
  std::sort(n.fit_ids.begin(), n.fit_ids.end());
  return n;
}

FeatureVector normalizer_apply(const Normalizer& n, const FeatureVector& fv) {
  if (fv.normalized) throw Error(Errc::DoubleNormalization, fv.id + " is already normalized");
  auto v = fv.values();
  for (std::size_t d = 0; d < kFeatureDim; ++d) v[d] = (v[d] - n.mean[d]) / n.std[d];
  FeatureVector out = fv;
  out.set_values(v);
  out.normalized = true;
  out.normalizer_tag = n.tag();
  return out;
}

std::string feature_store_header() {
  std::ostringstream os;
  os << "id";
  for (std::size_t i = 0; i < kProsodicDim; ++i) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "f_%03zu", i);
    os << ',' << buf;
  }
  for (const char* c : kAuxColumns) os << ',' << c;
  return os.str();
}

void write_feature_store(const std::filesystem::path& path, std::span<const FeatureVector> vectors) {
  std::ostringstream os;
  os << feature_store_header() << '\n';
  for (const auto& fv : vectors) {
    if (fv.normalized) throw Error(Errc::DoubleNormalization, "feature store holds raw vectors only");
    os << textio::csv_escape(fv.id);
    for (double x : fv.values()) os << ',' << textio::format_double(x);
    os << '\n';
  }
  textio::write_file(path, os.str());
}

std::vector<FeatureVector> read_feature_store(const std::filesystem::path& path) {
  const auto lines = textio::read_lines(path);
  if (lines.empty() || lines.front() != feature_store_header()) {
    throw Error(Errc::HeaderMismatch, "unexpected feature store header in " + path.string());
  }
  std::vector<FeatureVector> out;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto fields = textio::split_csv_line(lines[li]);
    if (fields.size() != kFeatureDim + 1) {
      throw Error(Errc::DimensionMismatch, "row " + std::to_string(li + 1) + " has " +
                                               std::to_string(fields.size()) + " fields");
    }
    std::vector<double> v;
    v.reserve(kFeatureDim);
    for (std::size_t i = 1; i < fields.size(); ++i) v.push_back(textio::parse_double(fields[i]));
    out.push_back(assemble_feature_vector(fields[0], std::span(v).first(kProsodicDim),
                                          std::span(v).subspan(kProsodicDim, kDisfluencyDim), v.back()));
  }
  return out;
}

std::map<std::string, std::vector<double>> ingest_external_features(const std::filesystem::path& path,
                                                                     const FeatureLayout& layout) {
  const auto lines = textio::read_lines(path);
  if (lines.empty()) throw Error(Errc::HeaderMismatch, path.string() + " is empty");
  auto header = textio::split_csv_line(lines.front());
  for (auto& h : header) h = textio::trim(h);
  if (header.size() != layout.slots.size() + 1) {
    throw Error(Errc::DimensionMismatch, "header has " + std::to_string(header.size() - 1) + " feature columns, layout " +
                                             layout.name + " needs " + std::to_string(layout.slots.size()));
  }
  if (header[0] != "id") throw Error(Errc::HeaderMismatch, "first column must be 'id'");
  for (std::size_t i = 0; i < layout.slots.size(); ++i) {
    if (header[i + 1] != layout.slots[i]) {
      throw Error(Errc::HeaderMismatch, "column " + std::to_string(i + 1) + " is '" + header[i + 1] +
                                            "', expected '" + layout.slots[i] + "'");
    }
  }
  std::map<std::string, std::vector<double>> out;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto fields = textio::split_csv_line(lines[li]);
    if (fields.size() != header.size()) {
      throw Error(Errc::DimensionMismatch, "row " + std::to_string(li + 1) + " has " +
                                               std::to_string(fields.size()) + " fields");
    }
    std::vector<double> v;
    v.reserve(layout.slots.size());
    for (std::size_t i = 1; i < fields.size(); ++i) {
      try {
        v.push_back(textio::parse_double(fields[i]));
      } catch (const Error& e) {
        if (e.code() == Errc::NonFiniteValue) {
          throw Error(Errc::NonFiniteValue, "row " + std::to_string(li + 1) + ", column " + header[i]);
        }
        throw;
      }
    }
    out[textio::trim(fields[0])] = std::move(v);
  }
  return out;
}

}  // namespace speechconf
