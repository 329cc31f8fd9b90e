#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace speechconf {

/// Fold index per item: items of each class are shuffled with `seed` and dealt
/// round-robin, with the dealing position carried from one class to the next
/// so fold sizes stay within one of each other.
std::vector<int> stratified_assign(std::span<const int> labels, std::size_t k, std::uint64_t seed);

struct IndexSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> holdout;
};

/// Per class, round(fraction * count) items go to the holdout side (at least
/// one when the class has two or more items). Indices are returned sorted.
IndexSplit stratified_holdout(std::span<const int> labels, double fraction, std::uint64_t seed);

/// Items with fold == k go to holdout.
IndexSplit fold_split(std::span<const int> folds, int k);

}  // namespace speechconf
