#include "speechconf/embedding_store.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>

#include "speechconf/error.hpp"
#include "speechconf/textio.hpp"

namespace speechconf {

void EmbeddingStore::put(const std::string& id, std::span<const double> values) {
  if (dim_ == 0 && ids_.empty()) dim_ = values.size();
  if (values.size() != dim_) {
    throw Error(Errc::DimensionMismatch, "embedding " + id + " has " + std::to_string(values.size()) +
                                             " values, store dim is " + std::to_string(dim_));
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(Errc::NonFiniteValue, "embedding " + id + " has a non-finite value");
  }
  if (auto it = index_.find(id); it != index_.end()) {
    std::copy(values.begin(), values.end(), values_.begin() + static_cast<std::ptrdiff_t>(it->second * dim_));
    return;
  }
  index_[id] = ids_.size();
  ids_.push_back(id);
  values_.insert(values_.end(), values.begin(), values.end());
}

std::span<const double> EmbeddingStore::get(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw Error(Errc::MissingStore, "no embedding for " + id);
  return {values_.data() + it->second * dim_, dim_};
}

Matrix EmbeddingStore::rows(std::span<const std::string> ids) const {
  Matrix out(ids.size(), dim_);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto v = get(ids[i]);
    std::copy(v.begin(), v.end(), out.row(i).begin());
  }
  return out;
}

std::vector<std::uint8_t> encode_embedding_store(const EmbeddingStore& s) {
  std::vector<std::uint8_t> b{'E', 'M', 'B', '1'};
  auto put32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
  };
  put32(static_cast<std::uint32_t>(s.dim()));
  for (const auto& id : s.ids()) {
    if (id.size() > 0xFFFF) throw Error(Errc::InvalidArgument, "embedding id too long");
    b.push_back(static_cast<std::uint8_t>(id.size() & 0xFF));
    b.push_back(static_cast<std::uint8_t>(id.size() >> 8));
    b.insert(b.end(), id.begin(), id.end());
    for (double v : s.get(id)) put32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return b;
}

EmbeddingStore decode_embedding_store(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "EMB1", 4) != 0) {
    throw Error(Errc::CorruptHeader, "embedding store lacks EMB1 magic");
  }
  std::size_t pos = 4;
  auto need = [&](std::size_t n) {
    if (pos + n > bytes.size()) throw Error(Errc::CorruptHeader, "embedding store truncated");
  };
  auto get32 = [&] {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + static_cast<std::size_t>(i)]) << (8 * i);
    pos += 4;
    return v;
  };
  EmbeddingStore s(get32());
  std::vector<double> row(s.dim());
  while (pos < bytes.size()) {
    need(2);
    const std::size_t len = bytes[pos] | (static_cast<std::size_t>(bytes[pos + 1]) << 8);
    pos += 2;
    need(len);
    std::string id(reinterpret_cast<const char*>(bytes.data() + pos), len);
    pos += len;
    for (double& v : row) v = std::bit_cast<float>(get32());
    s.put(id, row);
  }
  return s;
}

std::string embedding_store_csv(const EmbeddingStore& s) {
  std::ostringstream os;
  os << "id";
  char name[16];
  for (std::size_t d = 0; d < s.dim(); ++d) {
    std::snprintf(name, sizeof name, "e_%03zu", d);
    os << ',' << name;
  }
  os << '\n';
  for (const auto& id : s.ids()) {
    os << textio::csv_escape(id);
    for (double v : s.get(id)) os << ',' << textio::format_double(v);
    os << '\n';
  }
  return os.str();
}

EmbeddingStore parse_embedding_store_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::HeaderMismatch, "empty embedding CSV");
  const auto header = textio::split_csv_line(textio::trim(line));
  if (header.empty() || header[0] != "id") throw Error(Errc::HeaderMismatch, "embedding CSV must start with id");
  EmbeddingStore s(header.size() - 1);
  std::vector<double> row(s.dim());
  while (std::getline(in, line)) {
    line = textio::trim(line);
    if (line.empty()) continue;
    const auto f = textio::split_csv_line(line);
    if (f.size() != header.size()) throw Error(Errc::DimensionMismatch, "embedding CSV row width differs from header");
    for (std::size_t d = 0; d < s.dim(); ++d) {
      row[d] = textio::parse_double(f[d + 1]);
      if (!std::isfinite(row[d])) throw Error(Errc::NonFiniteValue, "embedding " + f[0] + " has a non-finite value");
    }
    s.put(f[0], row);
  }
  return s;
}

void write_embedding_store(const std::filesystem::path& path, const EmbeddingStore& s) {
  if (path.extension() == ".csv") {
    textio::write_file(path, embedding_store_csv(s));
  } else {
    textio::write_binary(path, encode_embedding_store(s));
  }
}

EmbeddingStore read_embedding_store(const std::filesystem::path& path) {
  const auto bytes = textio::read_binary(path);
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), "EMB1", 4) == 0) return decode_embedding_store(bytes);
  return parse_embedding_store_csv(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace speechconf
