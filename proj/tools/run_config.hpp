#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "speechconf/evaluation.hpp"

namespace speechconf::cli {

/// Settings of every pipeline stage, read from `key = value` lines. Keys are
/// `section.name`; `#` starts a comment. Unknown keys and unparsable values
/// are InvalidConfig errors naming the line.
struct RunConfig {
  LabellerConfig labeller;
  PseudoLabelConfig pseudo;
  HybridConfig hybrid;
  std::vector<Arm> arms{Arm::GtOnly, Arm::Proposed, Arm::NoFilter};
  std::size_t folds = 5;
  std::uint64_t fold_seed = 0;
  std::string manifest;  // relative to the config file's directory
  std::uint64_t permutation_repeats = 10;

  void validate() const;
  CvConfig cv() const { return {labeller, pseudo, hybrid}; }
};

RunConfig parse_run_config(std::string_view text);
/// Also resolves `manifest` against the file's directory.
RunConfig read_run_config(const std::filesystem::path& path);
/// Every key with its effective value, in a fixed order.
std::string resolved_run_config(const RunConfig& c);

}  // namespace speechconf::cli
