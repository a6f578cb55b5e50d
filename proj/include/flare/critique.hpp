#pragma once

// Category critiques: building critique strings from an item's category
// path, the catalog category tree, hierarchical overlap, and the mutation
// protocol that swaps a critique for another valid catalog category.

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flare/data.hpp"
#include "flare/rng.hpp"

namespace flare {

enum class CritiqueLevel { None, Broad, Precise };

inline constexpr std::size_t kPreciseLevels = 4;
inline constexpr std::size_t kBroadLevels = 2;

std::string_view to_string(CritiqueLevel level);
CritiqueLevel critique_level_from_string(std::string_view s);
std::size_t level_depth(CritiqueLevel level);  // 0, 2 or 4

struct CritiqueText {
  std::optional<std::string> text;
  bool fallback = false;  // fewer category levels than the level asks for
};

// First `level_depth(level)` categories joined with " - ". Items with fewer
// levels use all they have and are flagged; items without categories yield
// no critique.
CritiqueText critique_for(const Item& item, CritiqueLevel level);

// Splits a critique string on " - ".
std::vector<std::string> split_critique(std::string_view critique);

// Number of leading levels shared by an item's category path and the
// critique levels. Hierarchy makes this the overlap count.
std::size_t category_overlap(std::span<const std::string> item_categories, std::span<const std::string> critique);

// Every category prefix in the catalog with the number of distinct items
// beneath it.
class CategoryIndex {
 public:
  explicit CategoryIndex(const ItemVocab& vocab);

  std::size_t item_count(std::span<const std::string> path) const;
  std::size_t item_count(const std::string& joined) const;
  // All catalog paths of exactly `depth` levels, in lexicographic order.
  std::vector<std::vector<std::string>> paths(std::size_t depth) const;
  std::size_t node_count() const { return counts_.size(); }

  struct Node {
    std::string name;
    std::string path;  // joined with " - "
    std::size_t items = 0;
    std::vector<Node> children;
  };
  std::vector<Node> tree() const;

 private:
  std::map<std::vector<std::string>, std::size_t> counts_;
};

struct MutationSpec {
  std::size_t level = 4;  // j: levels j..4 (1-based) are resampled
  std::size_t min_items = 5;
};

// Replaces levels j..L of the critique derived from `categories` (L = min(4,
// available levels)). Candidates keep levels < j verbatim, differ at level j,
// exist in the catalog at depth L and hold at least min_items items. Returns
// nothing when no candidate exists.
std::optional<std::string> mutate_critique(std::span<const std::string> categories, const MutationSpec& spec,
                                           const CategoryIndex& index, Rng& rng);

}  // namespace flare
