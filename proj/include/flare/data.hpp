#pragma once

// Corpus ingestion, preprocessing, splits, masking and packing.

#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "flare/rng.hpp"

namespace flare {

// Dense internal item index. Values >= item count are special tokens.
using ItemIndex = std::int32_t;

inline constexpr std::string_view kCategoryDelimiter = " - ";

struct Item {
  std::string item_id;
  ItemIndex index = -1;
  std::string title;
  std::string description;
  std::vector<std::string> categories;  // root -> leaf
  std::optional<std::string> brand;
  std::optional<double> price;
  bool missing_metadata = false;
};

struct Event {
  ItemIndex item = -1;
  std::int64_t timestamp = 0;

  friend bool operator==(const Event&, const Event&) = default;
};

struct UserSequence {
  std::string user_id;
  std::vector<Event> events;

  std::vector<ItemIndex> items() const;
};

// Bijection between external ids and dense indices. MASK and PAD sit right
// after the item range.
class ItemVocab {
 public:
  ItemIndex add(Item item);  // assigns the next index
  std::optional<ItemIndex> find(std::string_view item_id) const;
  const Item& at(ItemIndex index) const;
  Item& mutable_at(ItemIndex index);

  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  ItemIndex mask_index() const { return static_cast<ItemIndex>(items_.size()); }
  ItemIndex pad_index() const { return static_cast<ItemIndex>(items_.size() + 1); }
  std::size_t table_rows() const { return items_.size() + 2; }

  const std::vector<Item>& items() const { return items_; }

 private:
  std::vector<Item> items_;
  std::unordered_map<std::string, ItemIndex> index_of_;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& stream, std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct ParseResult {
  ItemVocab vocab;
  std::vector<UserSequence> sequences;  // sorted by user_id
  std::size_t duplicate_metadata = 0;   // asins seen more than once (last wins)
  std::size_t missing_metadata = 0;     // reviewed items without a metadata record
};

// Reviews: JSON lines with reviewerID, asin, unixReviewTime (summary ignored).
// Metadata: JSON lines with asin, title, description, category, brand, price.
ParseResult parse_reviews(std::istream& reviews, std::istream& metadata);

// Joins the raw category array with " - " and splits it again on the same
// delimiter, trimming empty components.
std::vector<std::string> parse_categories(const std::vector<std::string>& raw);
std::string join_categories(std::span<const std::string> levels);

enum class LengthMode { Trim51, Filter50 };

struct PreprocessOptions {
  LengthMode mode = LengthMode::Trim51;
  bool require_title = false;
  bool dedup = false;
  std::size_t trim_length = 51;
  std::size_t filter_length = 50;
};

std::vector<UserSequence> build_sequences(const std::vector<UserSequence>& raw, const ItemVocab& vocab,
                                          const PreprocessOptions& options);

// --- splits -----------------------------------------------------------------

enum class SplitMode { LeaveOneOut, UnseenUsers };

struct TrainSequence {
  std::string user_id;
  std::vector<ItemIndex> items;
};

struct EvalExample {
  std::string user_id;
  std::vector<ItemIndex> prefix;
  ItemIndex target = -1;
};

struct SplitSet {
  SplitMode mode = SplitMode::LeaveOneOut;
  std::vector<TrainSequence> train;
  std::vector<EvalExample> valid;
  std::vector<EvalExample> test;
};

inline constexpr std::size_t kMinEvalLength = 4;

SplitSet split_leave_one_out(const std::vector<UserSequence>& seqs);
SplitSet split_unseen_users(const std::vector<UserSequence>& seqs, std::uint64_t seed);

// --- masking ----------------------------------------------------------------

enum class MaskMode { Bidirectional, LastOnly };

struct MaskedSequence {
  std::vector<ItemIndex> inputs;           // item indices with MASK substituted
  std::vector<ItemIndex> originals;        // pre-mask items
  std::vector<std::size_t> masked_positions;  // strictly increasing
  std::vector<ItemIndex> labels;           // originals at masked_positions
  std::vector<std::optional<std::string>> critiques;  // per masked slot
  bool forced = false;  // true when no Bernoulli draw fired
};

inline constexpr double kDefaultMaskRate = 0.15;

MaskedSequence mask_sequence(std::span<const ItemIndex> seq, double rate, Rng& rng, MaskMode mode,
                             ItemIndex mask_token);

// Inference-time input: history followed by one masked slot.
MaskedSequence masked_query(std::span<const ItemIndex> history, ItemIndex mask_token,
                            std::optional<std::string> critique = std::nullopt);

// --- packing ----------------------------------------------------------------

struct MaskSlot {
  std::size_t offset = 0;  // flat position within the pack
  ItemIndex label = -1;
  std::optional<std::string> critique;
};

struct PackedBatch {
  std::size_t token_budget = 0;
  std::vector<ItemIndex> flat_inputs;
  std::vector<ItemIndex> flat_originals;
  std::vector<std::int32_t> segment_ids;
  std::vector<std::int32_t> positions;
  std::vector<MaskSlot> mask_slots;
  std::vector<std::size_t> sources;  // input index of each segment

  std::size_t size() const { return flat_inputs.size(); }
  bool may_attend(std::size_t a, std::size_t b) const { return segment_ids[a] == segment_ids[b]; }
};

// First-fit-decreasing by length (ties by input order).
std::vector<PackedBatch> pack_batches(std::span<const MaskedSequence> seqs, std::size_t token_budget);

}  // namespace flare
