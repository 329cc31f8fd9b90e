#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "speechconf/embedding_store.hpp"
#include "speechconf/features.hpp"

namespace speechconf::cli {

enum class SplitRole { Labelled, Pool };

struct ManifestClip {
  std::string id;
  std::string audio;  // may be empty when features are ingested directly
  SplitRole role = SplitRole::Labelled;
};

/// JSON dataset description. Paths are stored as written and resolved against
/// the manifest's directory.
struct DatasetManifest {
  std::filesystem::path base_dir;
  std::vector<ManifestClip> clips;
  std::string feature_store;
  std::string embedding_store;
  std::string annotations;
  std::string labels;      // consensus CSV
  std::string fold_plan;
  std::string auxiliary;   // id + 6 auxiliary probabilities

  std::filesystem::path resolve(const std::string& p) const;
  /// Resolved path of a named entry; InvalidConfig when it is unset.
  std::filesystem::path require(const std::string& p, const char* what) const;
  const ManifestClip* find(const std::string& id) const;
  std::vector<std::string> ids(SplitRole role) const;
};

/// Throws InvalidConfig for duplicate ids or unknown roles.
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);

/// Everything the training verbs consume, loaded from the manifest's stores.
struct Dataset {
  std::map<std::string, FeatureVector> features;  // raw
  EmbeddingStore embeddings;
  std::map<std::string, int> labels;
  std::vector<std::string> pool_ids;
};

/// Loads features, embeddings and consensus labels. Labels skip clips the
/// manifest marks as pool. Throws MissingStore when a listed clip has no
/// feature vector.
Dataset load_dataset(const DatasetManifest& m);

}  // namespace speechconf::cli
