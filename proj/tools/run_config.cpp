#include "run_config.hpp"

#include <functional>
#include <sstream>

#include "speechconf/error.hpp"
#include "speechconf/textio.hpp"

namespace speechconf::cli {

namespace {

std::size_t to_size(std::string_view v) {
  const auto n = textio::parse_int(v);
  if (n < 0) throw Error(Errc::InvalidConfig, "expected a non-negative integer, got '" + std::string(v) + "'");
  return static_cast<std::size_t>(n);
}

bool to_bool(std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw Error(Errc::InvalidConfig, "expected a boolean, got '" + std::string(v) + "'");
}

std::vector<std::size_t> to_sizes(std::string_view v) {
  std::vector<std::size_t> out;
  for (const auto& p : textio::split(v, ',')) out.push_back(to_size(textio::trim(p)));
  return out;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string join_arms(const std::vector<Arm>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::string(arm_name(v[i]));
  return s;
}

struct Key {
  const char* name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

// `field` is a generic lambda returning a reference into the config.
template <class F>
Key real(const char* name, F field) {
  return {name, [field](RunConfig& c, std::string_view v) { field(c) = textio::parse_double(v); },
          [field](const RunConfig& c) { return textio::format_double(field(c)); }};
}

template <class F>
Key count(const char* name, F field) {
  return {name, [field](RunConfig& c, std::string_view v) { field(c) = to_size(v); },
          [field](const RunConfig& c) { return std::to_string(field(c)); }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> k = {
      {"manifest", [](RunConfig& c, std::string_view v) { c.manifest = std::string(v); },
       [](const RunConfig& c) { return c.manifest; }},
      count("cv.folds", [](auto& c) -> auto& { return c.folds; }),
      count("cv.seed", [](auto& c) -> auto& { return c.fold_seed; }),
      {"cv.arms", [](RunConfig& c, std::string_view v) { c.arms = parse_arms(v); },
       [](const RunConfig& c) { return join_arms(c.arms); }},
      count("cv.permutation_repeats", [](auto& c) -> auto& { return c.permutation_repeats; }),
      {"labeller.hidden", [](RunConfig& c, std::string_view v) { c.labeller.hidden = to_sizes(v); },
       [](const RunConfig& c) { return join_sizes(c.labeller.hidden); }},
      real("labeller.dropout", [](auto& c) -> auto& { return c.labeller.dropout; }),
      real("labeller.lr", [](auto& c) -> auto& { return c.labeller.lr; }),
      count("labeller.internal_folds", [](auto& c) -> auto& { return c.labeller.internal_folds; }),
      count("labeller.patience", [](auto& c) -> auto& { return c.labeller.patience; }),
      count("labeller.max_epochs", [](auto& c) -> auto& { return c.labeller.max_epochs; }),
      count("labeller.batch_size", [](auto& c) -> auto& { return c.labeller.batch_size; }),
      real("labeller.val_fraction", [](auto& c) -> auto& { return c.labeller.val_fraction; }),
      count("labeller.seed", [](auto& c) -> auto& { return c.labeller.seed; }),
      real("pseudo.tau", [](auto& c) -> auto& { return c.pseudo.tau; }),
      {"pseudo.calibrate", [](RunConfig& c, std::string_view v) { c.pseudo.calibrate_before_filter = to_bool(v); },
       [](const RunConfig& c) { return std::string(c.pseudo.calibrate_before_filter ? "true" : "false"); }},
      real("hybrid.lambda_fv", [](auto& c) -> auto& { return c.hybrid.lambda_fv; }),
      real("hybrid.gt_boost", [](auto& c) -> auto& { return c.hybrid.gt_boost; }),
      {"hybrid.class_weights",
       [](RunConfig& c, std::string_view v) {
         const auto parts = textio::split(v, ',');
         if (parts.size() != 3) throw Error(Errc::InvalidConfig, "class_weights needs three values");
         for (std::size_t i = 0; i < 3; ++i) c.hybrid.class_weights[i] = textio::parse_double(textio::trim(parts[i]));
       },
       [](const RunConfig& c) {
         return textio::format_double(c.hybrid.class_weights[0]) + "," + textio::format_double(c.hybrid.class_weights[1]) +
                "," + textio::format_double(c.hybrid.class_weights[2]);
       }},
      real("hybrid.lr_embedding_stream", [](auto& c) -> auto& { return c.hybrid.lr_embedding_stream; }),
      real("hybrid.lr_feature_stream", [](auto& c) -> auto& { return c.hybrid.lr_feature_stream; }),
      real("hybrid.weight_decay", [](auto& c) -> auto& { return c.hybrid.weight_decay; }),
      real("hybrid.dropout", [](auto& c) -> auto& { return c.hybrid.dropout; }),
      {"hybrid.hidden", [](RunConfig& c, std::string_view v) { c.hybrid.hidden = to_sizes(v); },
       [](const RunConfig& c) { return join_sizes(c.hybrid.hidden); }},
      count("hybrid.max_epochs", [](auto& c) -> auto& { return c.hybrid.max_epochs; }),
      count("hybrid.batch_size", [](auto& c) -> auto& { return c.hybrid.batch_size; }),
      count("hybrid.patience", [](auto& c) -> auto& { return c.hybrid.patience; }),
      real("hybrid.val_fraction", [](auto& c) -> auto& { return c.hybrid.val_fraction; }),
      count("hybrid.seed", [](auto& c) -> auto& { return c.hybrid.seed; }),
  };
  return k;
}

}  // namespace

void RunConfig::validate() const {
  labeller.validate();
  pseudo.validate();
  hybrid.validate();
  if (folds < 2) throw Error(Errc::InvalidConfig, "cv.folds must be at least 2");
  if (arms.empty()) throw Error(Errc::InvalidConfig, "cv.arms is empty");
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig c;
  std::size_t line_no = 0;
  for (const auto& raw : textio::split(text, '\n')) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto trimmed = textio::trim(line);
    if (trimmed.empty()) continue;
    const auto eq = trimmed.find('=');
    const std::string where = "line " + std::to_string(line_no);
    if (eq == std::string::npos) throw Error(Errc::InvalidConfig, where + ": expected 'key = value'");
    const auto key = textio::trim(std::string_view(trimmed).substr(0, eq));
    const auto value = textio::trim(std::string_view(trimmed).substr(eq + 1));
    const Key* found = nullptr;
    for (const auto& k : keys()) {
      if (key == k.name) found = &k;
    }
    if (!found) throw Error(Errc::InvalidConfig, where + ": unknown key '" + key + "'");
    try {
      found->set(c, value);
    } catch (const Error& e) {
      throw Error(Errc::InvalidConfig, where + " (" + key + "): " + e.what());
    }
  }
  c.validate();
  return c;
}

RunConfig read_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(Errc::NotFound, "config " + path.string() + " not found");
  auto c = parse_run_config(textio::read_file(path));
  if (!c.manifest.empty()) c.manifest = (path.parent_path() / c.manifest).lexically_normal().string();
  return c;
}

std::string resolved_run_config(const RunConfig& c) {
  std::ostringstream os;
  for (const auto& k : keys()) os << k.name << " = " << k.get(c) << '\n';
  return os.str();
}

}  // namespace speechconf::cli
