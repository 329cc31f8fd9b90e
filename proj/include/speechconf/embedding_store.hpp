#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "speechconf/matrix.hpp"

namespace speechconf {

/// Fixed utterance embeddings keyed by clip id. Row i of `values` belongs to ids[i].
class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  explicit EmbeddingStore(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }

  /// Adds or replaces a record. Values must be finite and match dim().
  void put(const std::string& id, std::span<const double> values);
  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  /// Throws MissingStore for unknown ids.
  std::span<const double> get(const std::string& id) const;
  /// Rows for `ids` in order.
  Matrix rows(std::span<const std::string> ids) const;

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<double> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Binary: "EMB1", u32 dim, then per record u16 id length, id bytes and
/// dim little-endian f32 values. Values are rounded to f32 on write.
std::vector<std::uint8_t> encode_embedding_store(const EmbeddingStore& s);
EmbeddingStore decode_embedding_store(std::span<const std::uint8_t> bytes);

/// CSV: id,e_000,...,e_{dim-1}
std::string embedding_store_csv(const EmbeddingStore& s);
EmbeddingStore parse_embedding_store_csv(std::string_view text);

/// Writes CSV when the extension is .csv, binary otherwise.
void write_embedding_store(const std::filesystem::path& path, const EmbeddingStore& s);
/// Detects the format from the leading bytes.
EmbeddingStore read_embedding_store(const std::filesystem::path& path);

}  // namespace speechconf
