#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "speechconf/annotation.hpp"
#include "speechconf/audio.hpp"
#include "speechconf/calibration.hpp"
#include "speechconf/error.hpp"
#include "speechconf/evaluation.hpp"
#include "speechconf/features.hpp"
#include "speechconf/pseudo_labeller.hpp"

namespace py = pybind11;
using namespace speechconf;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw Error(Errc::DimMismatch, "expected a 2-D array");
  Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.data().begin());
  return m;
}

Array from_matrix(const Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

Array from_vector(std::span<const double> v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

std::vector<double> to_vector(const Array& a) {
  if (a.ndim() != 1) throw Error(Errc::DimMismatch, "expected a 1-D array");
  return {a.data(), a.data() + a.size()};
}

RaterMatrix rater_matrix(const IntArray& a) {
  if (a.ndim() != 2) throw Error(Errc::DimMismatch, "ratings must be clips x raters");
  RaterMatrix m;
  for (py::ssize_t i = 0; i < a.shape(0); ++i) m.clips.push_back("c" + std::to_string(i));
  for (py::ssize_t r = 0; r < a.shape(1); ++r) m.raters.push_back("r" + std::to_string(r));
  m.cells.assign(a.data(), a.data() + a.size());
  return m;
}

py::dict icc_dict(const IccResult& r) {
  py::dict d;
  d["icc_2k"] = r.icc_average;
  d["icc_21"] = r.icc_single;
  d["ci95"] = py::make_tuple(r.ci95_low, r.ci95_high);
  d["ci95_single"] = py::make_tuple(r.ci95_single_low, r.ci95_single_high);
  d["f"] = r.f_stat;
  d["df1"] = r.df1;
  d["df2"] = r.df2;
  d["n_complete"] = r.n_used;
  d["k"] = r.k;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Acoustic feature extraction, rater aggregation and confidence filtering";

  // Messages start with the error code name, e.g. "ProbabilityOutOfRange: ...".
  py::register_exception<Error>(m, "SpeechconfError", PyExc_ValueError);

  m.attr("CANONICAL_RATE") = kCanonicalRate;
  m.attr("MISSING") = RaterMatrix::kMissingCell;
  m.attr("NOT_CLEAR") = RaterMatrix::kNotClearCell;

  m.def("feature_layout", [] { return FeatureLayout::egemaps_lite_88().slots; },
        "Names of the 88 prosodic functionals, in vector order.");

  m.def(
      "load_wav",
      [](const std::string& path) {
        const auto c = load_clip(path);
        return py::make_tuple(from_vector(c.samples), c.sample_rate);
      },
      py::arg("path"), "Decode a WAV file to mono float64 samples and its sample rate.");

  m.def(
      "preprocess",
      [](const Array& samples, int rate) {
        AudioClip c{"clip", to_vector(samples), rate};
        return from_vector(preprocess(c).samples);
      },
      py::arg("samples"), py::arg("rate"), "Resample to 16 kHz and peak-normalize.");

  m.def(
      "extract_prosodic",
      [](const Array& samples, int rate) {
        AudioClip c{"clip", to_vector(samples), rate};
        if (!c.is_canonical()) c = preprocess(c);
        return from_vector(extract_prosodic(c).values);
      },
      py::arg("samples"), py::arg("rate") = kCanonicalRate, "88 prosodic functionals of one clip.");

  m.def(
      "icc_2k", [](const Array& table) { return icc_dict(icc_2k(to_matrix(table))); }, py::arg("table"),
      "Two-way random, absolute agreement ICC of a complete clips x raters table.");

  m.def(
      "icc_2k_ratings", [](const IntArray& ratings) { return icc_dict(icc_2k(rater_matrix(ratings))); },
      py::arg("ratings"), "ICC(2,k) over the complete cases of an ordinal rating matrix.");

  m.def(
      "dawid_skene",
      [](const IntArray& ratings, std::size_t max_iters) {
        const auto ds = dawid_skene(rater_matrix(ratings), max_iters);
        std::vector<double> acc;
        for (std::size_t r = 0; r < ds.raters.size(); ++r) acc.push_back(ds.rater_accuracy(r));
        py::dict d;
        d["labels"] = ds.labels;
        d["posteriors"] = from_matrix(ds.posteriors);
        d["rater_accuracy"] = acc;
        d["priors"] = std::vector<double>(ds.priors.begin(), ds.priors.end());
        d["log_likelihood"] = ds.objective;
        d["converged"] = ds.converged;
        return d;
      },
      py::arg("ratings"), py::arg("max_iters") = 100,
      "Consensus labels from a clips x raters matrix (0/1/2, NOT_CLEAR or MISSING cells).");

  m.def(
      "majority_vote", [](const IntArray& ratings) { return majority_vote(rater_matrix(ratings)); },
      py::arg("ratings"));

  m.def(
      "fit_temperature",
      [](const Array& logits, const std::vector<int>& labels) {
        const auto r = fit_temperature(to_matrix(logits), labels);
        return py::make_tuple(r.temperature, r.nll_before, r.nll_after);
      },
      py::arg("logits"), py::arg("labels"), "Returns (temperature, nll at T=1, nll at the fit).");

  m.def(
      "apply_temperature", [](const Array& logits, double t) { return from_matrix(apply_temperature(to_matrix(logits), t)); },
      py::arg("logits"), py::arg("temperature"));

  m.def(
      "filter_by_confidence",
      [](const std::vector<std::string>& ids, const Array& probs, double tau) {
        PseudoLabelConfig{.tau = tau}.validate();
        const auto s = filter_by_confidence(ids, to_matrix(probs), tau, 0);
        std::vector<py::tuple> out;
        for (const auto& x : s.samples) out.push_back(py::make_tuple(x.clip_id, x.label, x.max_prob));
        return out;
      },
      py::arg("ids"), py::arg("probs"), py::arg("tau") = 0.8,
      "Rows whose maximum probability reaches tau, as (id, label, max_prob).");

  m.def(
      "make_fold_plan",
      [](const std::map<std::string, int>& labels, std::size_t k, std::uint64_t seed) {
        const auto p = make_fold_plan(labels, k, seed);
        return py::make_tuple(p.assignments, p.checksum);
      },
      py::arg("labels"), py::arg("k") = 5, py::arg("seed") = 0,
      "Stratified assignment of clip ids to folds; returns (assignments, checksum).");
}
