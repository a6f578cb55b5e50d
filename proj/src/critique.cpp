#include "flare/critique.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace flare {

std::string_view to_string(CritiqueLevel level) {
  switch (level) {
    case CritiqueLevel::None: return "none";
    case CritiqueLevel::Broad: return "broad";
    case CritiqueLevel::Precise: return "precise";
  }
  throw std::logic_error("bad critique level");
}

CritiqueLevel critique_level_from_string(std::string_view s) {
  if (s == "none") return CritiqueLevel::None;
  if (s == "broad") return CritiqueLevel::Broad;
  if (s == "precise") return CritiqueLevel::Precise;
  throw std::invalid_argument("unknown critique level '" + std::string(s) + "' (expected none, broad, precise)");
}

std::size_t level_depth(CritiqueLevel level) {
  switch (level) {
    case CritiqueLevel::None: return 0;
    case CritiqueLevel::Broad: return kBroadLevels;
    case CritiqueLevel::Precise: return kPreciseLevels;
  }
  throw std::logic_error("bad critique level");
}

CritiqueText critique_for(const Item& item, CritiqueLevel level) {
  const auto depth = level_depth(level);
  if (depth == 0) return {};
  if (item.categories.empty()) return {std::nullopt, true};
  const auto n = std::min(depth, item.categories.size());
  return {join_categories(std::span<const std::string>(item.categories).first(n)), n < depth};
}

std::vector<std::string> split_critique(std::string_view critique) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= critique.size()) {
    const auto pos = critique.find(kCategoryDelimiter, start);
    const auto end = pos == std::string_view::npos ? critique.size() : pos;
    if (end > start) out.emplace_back(critique.substr(start, end - start));
    if (pos == std::string_view::npos) break;
    start = pos + kCategoryDelimiter.size();
  }
  return out;
}

std::size_t category_overlap(std::span<const std::string> item_categories, std::span<const std::string> critique) {
  std::size_t n = 0;
  while (n < item_categories.size() && n < critique.size() && item_categories[n] == critique[n]) ++n;
  return n;
}

CategoryIndex::CategoryIndex(const ItemVocab& vocab) {
  for (const auto& item : vocab.items()) {
    std::vector<std::string> path;
    for (const auto& c : item.categories) {
      path.push_back(c);
      ++counts_[path];
    }
  }
}

std::size_t CategoryIndex::item_count(std::span<const std::string> path) const {
  const auto it = counts_.find(std::vector<std::string>(path.begin(), path.end()));
  return it == counts_.end() ? 0 : it->second;
}

std::size_t CategoryIndex::item_count(const std::string& joined) const { return item_count(split_critique(joined)); }

std::vector<std::vector<std::string>> CategoryIndex::paths(std::size_t depth) const {
  std::vector<std::vector<std::string>> out;
  for (const auto& [path, count] : counts_) {
    if (path.size() == depth) out.push_back(path);
  }
  return out;
}

std::vector<CategoryIndex::Node> CategoryIndex::tree() const {
  std::vector<Node> roots;
  // The map is ordered so every parent precedes its children.
  for (const auto& [path, count] : counts_) {
    auto* level = &roots;
    for (std::size_t d = 0; d + 1 < path.size(); ++d) {
      auto it = std::find_if(level->begin(), level->end(), [&](const Node& n) { return n.name == path[d]; });
      level = &it->children;
    }
    level->push_back({path.back(), join_categories(path), count, {}});
  }
  return roots;
}

std::optional<std::string> mutate_critique(std::span<const std::string> categories, const MutationSpec& spec,
                                           const CategoryIndex& index, Rng& rng) {
  if (spec.level < 1) throw std::invalid_argument("mutate_critique: level must be at least 1");
  const auto depth = std::min(kPreciseLevels, categories.size());
  if (depth < spec.level) return std::nullopt;
  const auto keep = spec.level - 1;
  std::vector<std::vector<std::string>> candidates;
  for (auto& p : index.paths(depth)) {
    if (!std::equal(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(keep), categories.begin())) continue;
    if (p[keep] == categories[keep]) continue;
    if (index.item_count(p) < spec.min_items) continue;
    candidates.push_back(std::move(p));
  }
  if (candidates.empty()) return std::nullopt;
  return join_categories(candidates[rng.below(candidates.size())]);
}

}  // namespace flare
