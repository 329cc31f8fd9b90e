#include "manifest.hpp"

#include <set>

#include "json.hpp"
#include "speechconf/annotation.hpp"
#include "speechconf/error.hpp"
#include "speechconf/textio.hpp"

namespace speechconf::cli {

using nlohmann::json;
using nlohmann::ordered_json;

std::filesystem::path DatasetManifest::resolve(const std::string& p) const {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : (base_dir / path).lexically_normal();
}

std::filesystem::path DatasetManifest::require(const std::string& p, const char* what) const {
  if (p.empty()) throw Error(Errc::InvalidConfig, std::string("manifest has no ") + what);
  return resolve(p);
}

const ManifestClip* DatasetManifest::find(const std::string& id) const {
  for (const auto& c : clips) {
    if (c.id == id) return &c;
  }
  return nullptr;
}

std::vector<std::string> DatasetManifest::ids(SplitRole role) const {
  std::vector<std::string> out;
  for (const auto& c : clips) {
    if (c.role == role) out.push_back(c.id);
  }
  return out;
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(Errc::NotFound, "manifest " + path.string() + " not found");
  DatasetManifest m;
  m.base_dir = path.parent_path();
  try {
    const auto j = json::parse(textio::read_file(path));
    auto str = [&](const char* key) { return j.contains(key) ? j.at(key).get<std::string>() : std::string(); };
    m.feature_store = str("feature_store");
    m.embedding_store = str("embedding_store");
    m.annotations = str("annotations");
    m.labels = str("labels");
    m.fold_plan = str("fold_plan");
    m.auxiliary = str("auxiliary");
    std::set<std::string> seen;
    for (const auto& c : j.value("clips", json::array())) {
      ManifestClip clip;
      clip.id = c.at("id").get<std::string>();
      clip.audio = c.value("audio", "");
      const auto role = c.value("split_role", "labelled");
      if (role == "labelled") {
        clip.role = SplitRole::Labelled;
      } else if (role == "pool") {
        clip.role = SplitRole::Pool;
      } else {
        throw Error(Errc::InvalidConfig, "clip " + clip.id + ": unknown split_role '" + role + "'");
      }
      // Unique ids also keep the labelled set and the pool disjoint.
      if (!seen.insert(clip.id).second) throw Error(Errc::InvalidConfig, "clip id " + clip.id + " listed twice");
      m.clips.push_back(std::move(clip));
    }
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidConfig, "manifest " + path.string() + ": " + e.what());
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  ordered_json j;
  j["feature_store"] = m.feature_store;
  j["embedding_store"] = m.embedding_store;
  j["annotations"] = m.annotations;
  j["labels"] = m.labels;
  j["fold_plan"] = m.fold_plan;
  j["auxiliary"] = m.auxiliary;
  ordered_json clips = ordered_json::array();
  for (const auto& c : m.clips) {
    clips.push_back({{"id", c.id}, {"audio", c.audio}, {"split_role", c.role == SplitRole::Pool ? "pool" : "labelled"}});
  }
  j["clips"] = clips;
  textio::write_file(path, j.dump(1) + "\n");
}

Dataset load_dataset(const DatasetManifest& m) {
  Dataset d;
  for (auto& fv : read_feature_store(m.require(m.feature_store, "feature_store"))) d.features[fv.id] = std::move(fv);
  d.embeddings = read_embedding_store(m.require(m.embedding_store, "embedding_store"));
  const auto pool = m.ids(SplitRole::Pool);
  const std::set<std::string> pool_set(pool.begin(), pool.end());
  for (const auto& e : read_consensus_csv(m.require(m.labels, "labels"))) {
    if (!pool_set.count(e.clip_id)) d.labels[e.clip_id] = e.label;
  }
  for (const auto& id : pool) {
    if (!d.features.count(id)) throw Error(Errc::MissingStore, "pool clip " + id + " has no feature vector");
    d.pool_ids.push_back(id);
  }
  for (const auto& [id, y] : d.labels) {
    if (!d.features.count(id)) throw Error(Errc::MissingStore, "labelled clip " + id + " has no feature vector");
  }
  return d;
}

}  // namespace speechconf::cli
