#include "speechconf/splits.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "speechconf/error.hpp"
#include "speechconf/rng.hpp"

namespace speechconf {

namespace {

std::map<int, std::vector<std::size_t>> by_class(std::span<const int> labels) {
  std::map<int, std::vector<std::size_t>> m;
  for (std::size_t i = 0; i < labels.size(); ++i) m[labels[i]].push_back(i);
  return m;
}

}  // namespace

std::vector<int> stratified_assign(std::span<const int> labels, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw Error(Errc::InvalidArgument, "fold count must be positive");
  Rng rng(seed);
  std::vector<int> folds(labels.size(), -1);
  std::size_t pos = 0;
  for (auto& [cls, members] : by_class(labels)) {
    rng.shuffle(members);
    for (auto i : members) folds[i] = static_cast<int>(pos++ % k);
  }
  return folds;
}

IndexSplit stratified_holdout(std::span<const int> labels, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw Error(Errc::InvalidArgument, "holdout fraction must be in [0, 1)");
  Rng rng(seed);
  IndexSplit s;
  for (auto& [cls, members] : by_class(labels)) {
    rng.shuffle(members);
    auto n_hold = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size())));
    if (fraction > 0.0 && n_hold == 0 && members.size() >= 2) n_hold = 1;
    s.holdout.insert(s.holdout.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_hold));
    s.train.insert(s.train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_hold), members.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.holdout.begin(), s.holdout.end());
  return s;
}

IndexSplit fold_split(std::span<const int> folds, int k) {
  IndexSplit s;
  for (std::size_t i = 0; i < folds.size(); ++i) (folds[i] == k ? s.holdout : s.train).push_back(i);
  return s;
}

}  // namespace speechconf
