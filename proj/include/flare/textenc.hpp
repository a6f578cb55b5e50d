#pragma once

// Frozen text-encoding boundary: item text rendering, a hashing stand-in
// encoder, and a per-item embedding cache that can be filled from a file of
// embeddings computed offline by a real encoder.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flare/data.hpp"

namespace flare {

// m vectors of dimension dim, row-major.
struct TextEmbeddingSeq {
  std::size_t dim = 0;
  std::vector<float> values;

  std::size_t length() const { return dim == 0 ? 0 : values.size() / dim; }
  std::span<const float> row(std::size_t i) const { return {values.data() + i * dim, dim}; }

  friend bool operator==(const TextEmbeddingSeq&, const TextEmbeddingSeq&) = default;
};

// "title: ...; description: ...; category: a - b; brand: ..." with empty
// fields left out.
std::string item_text(const Item& item);

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::size_t dim() const = 0;
  virtual TextEmbeddingSeq encode(std::string_view text) const = 0;
  virtual std::string fingerprint() const = 0;
};

inline constexpr std::size_t kDefaultTextDim = 64;
inline constexpr std::size_t kDefaultHashBuckets = 4096;

// Lowercased alphanumeric tokens, each hashed into a row of a seeded N(0,1)
// table. The table is generated once and never changes.
class HashingEncoder final : public TextEncoder {
 public:
  HashingEncoder(std::size_t buckets, std::size_t dim, std::uint64_t seed);

  std::size_t dim() const override { return dim_; }
  std::size_t buckets() const { return buckets_; }
  TextEmbeddingSeq encode(std::string_view text) const override;
  std::string fingerprint() const override;

  static std::vector<std::string> tokenize(std::string_view text);
  std::size_t bucket(std::string_view token) const;

 private:
  std::size_t buckets_;
  std::size_t dim_;
  std::uint64_t seed_;
  std::vector<float> table_;
};

// Build-once, read-only map from item index to its encoded text.
class EmbeddingCache {
 public:
  static EmbeddingCache build(const ItemVocab& vocab, const TextEncoder& encoder);

  // JSON lines: {"dim":D,"count":N} then {"id":..., "vecs":[[...],...]}.
  // Items missing from the file are encoded with `fallback`.
  static EmbeddingCache load_precomputed(const std::filesystem::path& path, const ItemVocab& vocab,
                                         const TextEncoder& fallback);
  void write_precomputed(const std::filesystem::path& path, const ItemVocab& vocab) const;

  const TextEmbeddingSeq& at(ItemIndex item) const;
  std::size_t size() const { return entries_.size(); }
  std::size_t dim() const { return dim_; }
  const std::string& provenance() const { return provenance_; }
  std::size_t fallback_count() const { return fallback_count_; }
  std::size_t unknown_id_count() const { return unknown_id_count_; }

 private:
  std::size_t dim_ = 0;
  std::string provenance_;
  std::vector<TextEmbeddingSeq> entries_;
  std::size_t fallback_count_ = 0;
  std::size_t unknown_id_count_ = 0;
};

}  // namespace flare
