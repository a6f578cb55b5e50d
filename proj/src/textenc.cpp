#include "flare/textenc.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "flare/hash.hpp"
#include "flare/rng.hpp"

namespace flare {

using nlohmann::json;

std::string item_text(const Item& item) {
  std::string out;
  auto append = [&](std::string_view key, const std::string& value) {
    if (value.empty()) return;
    if (!out.empty()) out += "; ";
    out += key;
    out += ": ";
    out += value;
  };
  append("title", item.title);
  append("description", item.description);
  append("category", join_categories(item.categories));
  append("brand", item.brand.value_or(""));
  return out;
}

HashingEncoder::HashingEncoder(std::size_t buckets, std::size_t dim, std::uint64_t seed)
    : buckets_(buckets), dim_(dim), seed_(seed) {
  if (buckets == 0 || dim == 0) throw std::invalid_argument("HashingEncoder: buckets and dim must be positive");
  Rng rng(seed);
  table_.resize(buckets * dim);
  for (auto& v : table_) v = static_cast<float>(rng.normal());
}

std::vector<std::string> HashingEncoder::tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::size_t HashingEncoder::bucket(std::string_view token) const {
  // FNV alone leaves the low bits structured for similar tokens.
  return static_cast<std::size_t>(Rng::mix(fnv1a64(token) ^ seed_) % buckets_);
}

TextEmbeddingSeq HashingEncoder::encode(std::string_view text) const {
  TextEmbeddingSeq out;
  out.dim = dim_;
  const auto tokens = tokenize(text);
  out.values.reserve(tokens.size() * dim_);
  for (const auto& t : tokens) {
    const float* row = table_.data() + bucket(t) * dim_;
    out.values.insert(out.values.end(), row, row + dim_);
  }
  return out;
}

std::string HashingEncoder::fingerprint() const {
  return "hashing:" + std::to_string(buckets_) + "x" + std::to_string(dim_) + ":seed=" + std::to_string(seed_);
}

EmbeddingCache EmbeddingCache::build(const ItemVocab& vocab, const TextEncoder& encoder) {
  EmbeddingCache cache;
  cache.dim_ = encoder.dim();
  cache.provenance_ = "stand-in:" + encoder.fingerprint();
  cache.entries_.reserve(vocab.size());
  for (const auto& item : vocab.items()) cache.entries_.push_back(encoder.encode(item_text(item)));
  return cache;
}

EmbeddingCache EmbeddingCache::load_precomputed(const std::filesystem::path& path, const ItemVocab& vocab,
                                                const TextEncoder& fallback) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open embeddings file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("embeddings file is empty");
  const json header = json::parse(line);
  const auto dim = header.at("dim").get<std::size_t>();
  const auto count = header.at("count").get<std::size_t>();
  if (dim == 0) throw std::runtime_error("embeddings file: dim must be positive");

  EmbeddingCache cache;
  cache.dim_ = dim;
  cache.provenance_ = "precomputed:" + sha256_file(path);
  std::vector<std::optional<TextEmbeddingSeq>> loaded(vocab.size());

  std::size_t records = 0;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++records;
    const json rec = json::parse(line);
    TextEmbeddingSeq seq;
    seq.dim = dim;
    for (const auto& v : rec.at("vecs")) {
      if (v.size() != dim) {
        throw std::runtime_error("embeddings file line " + std::to_string(lineno) + ": vector of dim " +
                                 std::to_string(v.size()) + " under header dim " + std::to_string(dim));
      }
      for (const auto& x : v) {
        const double d = x.get<double>();
        if (!std::isfinite(d)) throw std::runtime_error("embeddings file: non-finite value");
        seq.values.push_back(static_cast<float>(d));
      }
    }
    const auto index = vocab.find(rec.at("id").get<std::string>());
    if (!index) {
      ++cache.unknown_id_count_;
      continue;
    }
    loaded[static_cast<std::size_t>(*index)] = std::move(seq);
  }
  if (records != count) {
    throw std::runtime_error("embeddings file: header count " + std::to_string(count) + " but " +
                             std::to_string(records) + " records");
  }

  cache.entries_.reserve(vocab.size());
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (loaded[i]) {
      cache.entries_.push_back(std::move(*loaded[i]));
      continue;
    }
    if (fallback.dim() != dim) {
      throw std::runtime_error("embeddings file: fallback encoder dim does not match file dim");
    }
    ++cache.fallback_count_;
    cache.entries_.push_back(fallback.encode(item_text(vocab.items()[i])));
  }
  return cache;
}

void EmbeddingCache::write_precomputed(const std::filesystem::path& path, const ItemVocab& vocab) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << json{{"dim", dim_}, {"count", entries_.size()}}.dump() << '\n';
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    json vecs = json::array();
    const auto& e = entries_[i];
    for (std::size_t r = 0; r < e.length(); ++r) {
      json row = json::array();
      for (float x : e.row(r)) row.push_back(static_cast<double>(x));
      vecs.push_back(std::move(row));
    }
    out << json{{"id", vocab.items()[i].item_id}, {"vecs", std::move(vecs)}}.dump() << '\n';
  }
}

const TextEmbeddingSeq& EmbeddingCache::at(ItemIndex item) const {
  if (item < 0 || static_cast<std::size_t>(item) >= entries_.size()) {
    throw std::out_of_range("embedding cache: no entry for item " + std::to_string(item));
  }
  return entries_[static_cast<std::size_t>(item)];
}

}  // namespace flare
