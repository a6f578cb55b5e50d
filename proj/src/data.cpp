#include "flare/data.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include <json.hpp>

namespace flare {

using nlohmann::json;

std::vector<ItemIndex> UserSequence::items() const {
  std::vector<ItemIndex> out;
  out.reserve(events.size());
  for (const auto& e : events) out.push_back(e.item);
  return out;
}

ItemIndex ItemVocab::add(Item item) {
  if (index_of_.count(item.item_id)) throw std::invalid_argument("duplicate item id: " + item.item_id);
  const auto index = static_cast<ItemIndex>(items_.size());
  item.index = index;
  index_of_.emplace(item.item_id, index);
  items_.push_back(std::move(item));
  return index;
}

std::optional<ItemIndex> ItemVocab::find(std::string_view item_id) const {
  auto it = index_of_.find(std::string(item_id));
  if (it == index_of_.end()) return std::nullopt;
  return it->second;
}

const Item& ItemVocab::at(ItemIndex index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= items_.size()) {
    throw std::out_of_range("item index out of range: " + std::to_string(index));
  }
  return items_[static_cast<std::size_t>(index)];
}

Item& ItemVocab::mutable_at(ItemIndex index) { return const_cast<Item&>(std::as_const(*this).at(index)); }

ParseError::ParseError(const std::string& stream, std::size_t line, const std::string& what)
    : std::runtime_error(stream + ":" + std::to_string(line) + ": " + what), line_(line) {}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

// Metadata fields are arrays of strings in some dumps and plain strings in
// others; accept both.
std::string text_field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return {};
  if (it->is_string()) return trim(it->get<std::string>());
  if (it->is_array()) {
    std::string out;
    for (const auto& part : *it) {
      if (!part.is_string()) continue;
      auto t = trim(part.get<std::string>());
      if (t.empty()) continue;
      if (!out.empty()) out += ' ';
      out += t;
    }
    return out;
  }
  return {};
}

std::optional<double> price_field(const json& j) {
  auto it = j.find("price");
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (it->is_number()) return it->get<double>();
  if (!it->is_string()) return std::nullopt;
  std::string s = it->get<std::string>();
  s.erase(std::remove_if(s.begin(), s.end(), [](char c) { return c == '$' || c == ',' || c == ' '; }), s.end());
  if (s.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

struct RawReview {
  std::string user;
  std::string asin;
  std::int64_t time;
  std::size_t order;
};

json parse_line(const std::string& line, const char* stream, std::size_t lineno) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(stream, lineno, std::string("malformed JSON: ") + e.what());
  }
}

template <class T>
T required(const json& j, const char* key, const char* stream, std::size_t lineno) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) throw ParseError(stream, lineno, std::string("missing field ") + key);
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ParseError(stream, lineno, std::string("bad type for field ") + key);
  }
}

}  // namespace

std::vector<std::string> parse_categories(const std::vector<std::string>& raw) {
  std::string joined;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (i) joined += kCategoryDelimiter;
    joined += raw[i];
  }
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= joined.size()) {
    const auto pos = joined.find(kCategoryDelimiter, start);
    const auto end = pos == std::string::npos ? joined.size() : pos;
    auto part = trim(std::string_view(joined).substr(start, end - start));
    if (!part.empty()) out.push_back(std::move(part));
    if (pos == std::string::npos) break;
    start = pos + kCategoryDelimiter.size();
  }
  return out;
}

std::string join_categories(std::span<const std::string> levels) {
  std::string out;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (i) out += kCategoryDelimiter;
    out += levels[i];
  }
  return out;
}

ParseResult parse_reviews(std::istream& reviews, std::istream& metadata) {
  ParseResult result;

  std::vector<RawReview> raw;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(reviews, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const json j = parse_line(line, "reviews", lineno);
    if (!j.is_object()) throw ParseError("reviews", lineno, "record is not an object");
    raw.push_back({required<std::string>(j, "reviewerID", "reviews", lineno),
                   required<std::string>(j, "asin", "reviews", lineno),
                   required<std::int64_t>(j, "unixReviewTime", "reviews", lineno), raw.size()});
  }

  std::map<std::string, json> meta;
  lineno = 0;
  while (std::getline(metadata, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j = parse_line(line, "metadata", lineno);
    if (!j.is_object()) throw ParseError("metadata", lineno, "record is not an object");
    auto asin = required<std::string>(j, "asin", "metadata", lineno);
    auto [it, inserted] = meta.insert_or_assign(std::move(asin), std::move(j));
    if (!inserted) ++result.duplicate_metadata;
  }

  // Items are indexed in ascending asin order, independent of file order.
  std::set<std::string> asins;
  for (const auto& r : raw) asins.insert(r.asin);
  for (const auto& asin : asins) {
    Item item;
    item.item_id = asin;
    auto it = meta.find(asin);
    if (it == meta.end()) {
      item.missing_metadata = true;
      ++result.missing_metadata;
    } else {
      const json& j = it->second;
      item.title = text_field(j, "title");
      item.description = text_field(j, "description");
      if (auto c = j.find("category"); c != j.end()) {
        std::vector<std::string> levels;
        if (c->is_array()) {
          for (const auto& v : *c) {
            if (v.is_string()) levels.push_back(v.get<std::string>());
          }
        } else if (c->is_string()) {
          levels.push_back(c->get<std::string>());
        }
        item.categories = parse_categories(levels);
      }
      if (auto b = text_field(j, "brand"); !b.empty()) item.brand = b;
      item.price = price_field(j);
    }
    result.vocab.add(std::move(item));
  }

  std::map<std::string, std::vector<const RawReview*>> by_user;
  for (const auto& r : raw) by_user[r.user].push_back(&r);
  result.sequences.reserve(by_user.size());
  for (auto& [user, list] : by_user) {
    std::stable_sort(list.begin(), list.end(), [](const RawReview* a, const RawReview* b) {
      return a->time < b->time;
    });
    UserSequence seq;
    seq.user_id = user;
    for (const auto* r : list) seq.events.push_back({*result.vocab.find(r->asin), r->time});
    result.sequences.push_back(std::move(seq));
  }
  return result;
}

std::vector<UserSequence> build_sequences(const std::vector<UserSequence>& raw, const ItemVocab& vocab,
                                          const PreprocessOptions& options) {
  std::vector<UserSequence> out;
  out.reserve(raw.size());
  for (const auto& seq : raw) {
    UserSequence s{seq.user_id, {}};
    s.events.reserve(seq.events.size());
    for (const auto& e : seq.events) {
      if (options.require_title && vocab.at(e.item).title.empty()) continue;
      if (options.dedup && !s.events.empty() && s.events.back().item == e.item) continue;
      s.events.push_back(e);
    }
    if (s.events.empty()) continue;
    if (options.mode == LengthMode::Trim51) {
      if (s.events.size() > options.trim_length) {
        s.events.erase(s.events.begin(),
                       s.events.end() - static_cast<std::ptrdiff_t>(options.trim_length));
      }
    } else if (s.events.size() > options.filter_length) {
      continue;
    }
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

// Training view of one sequence: drops the two evaluation items when the
// sequence is long enough to be evaluated, otherwise keeps everything.
std::vector<ItemIndex> training_items(const std::vector<ItemIndex>& items) {
  if (items.size() >= kMinEvalLength) return {items.begin(), items.end() - 2};
  return items;
}

}  // namespace

SplitSet split_leave_one_out(const std::vector<UserSequence>& seqs) {
  SplitSet split;
  split.mode = SplitMode::LeaveOneOut;
  for (const auto& seq : seqs) {
    const auto items = seq.items();
    if (items.empty()) continue;
    split.train.push_back({seq.user_id, training_items(items)});
    if (items.size() >= kMinEvalLength) {
      const auto n = items.size();
      split.valid.push_back({seq.user_id, {items.begin(), items.end() - 2}, items[n - 2]});
      split.test.push_back({seq.user_id, {items.begin(), items.end() - 1}, items[n - 1]});
    }
  }
  return split;
}

SplitSet split_unseen_users(const std::vector<UserSequence>& seqs, std::uint64_t seed) {
  if (seqs.size() < 10) throw std::invalid_argument("unseen-user split needs at least 10 users");
  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());

  const std::size_t n_valid = seqs.size() / 10;
  const std::size_t n_test = seqs.size() / 10;
  const std::size_t n_train = seqs.size() - n_valid - n_test;

  SplitSet split;
  split.mode = SplitMode::UnseenUsers;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto& seq = seqs[order[r]];
    const auto items = seq.items();
    if (r < n_train) {
      if (!items.empty()) split.train.push_back({seq.user_id, training_items(items)});
      continue;
    }
    if (items.size() < kMinEvalLength) continue;
    EvalExample ex{seq.user_id, {items.begin(), items.end() - 1}, items.back()};
    if (r < n_train + n_valid) {
      split.valid.push_back(std::move(ex));
    } else {
      split.test.push_back(std::move(ex));
    }
  }
  return split;
}

MaskedSequence mask_sequence(std::span<const ItemIndex> seq, double rate, Rng& rng, MaskMode mode,
                             ItemIndex mask_token) {
  if (seq.empty()) throw std::invalid_argument("mask_sequence: empty sequence");
  MaskedSequence out;
  out.originals.assign(seq.begin(), seq.end());
  out.inputs = out.originals;
  if (mode == MaskMode::LastOnly) {
    out.masked_positions.push_back(seq.size() - 1);
  } else {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (rng.bernoulli(rate)) out.masked_positions.push_back(i);
    }
    if (out.masked_positions.empty()) {
      out.masked_positions.push_back(rng.below(seq.size()));
      out.forced = true;
    }
  }
  for (auto p : out.masked_positions) {
    out.labels.push_back(out.originals[p]);
    out.inputs[p] = mask_token;
  }
  out.critiques.resize(out.masked_positions.size());
  return out;
}

MaskedSequence masked_query(std::span<const ItemIndex> history, ItemIndex mask_token,
                            std::optional<std::string> critique) {
  MaskedSequence out;
  out.originals.assign(history.begin(), history.end());
  out.originals.push_back(mask_token);
  out.inputs = out.originals;
  out.masked_positions.push_back(history.size());
  out.labels.push_back(mask_token);  // unknown at inference
  out.critiques.push_back(std::move(critique));
  return out;
}

std::vector<PackedBatch> pack_batches(std::span<const MaskedSequence> seqs, std::size_t token_budget) {
  if (token_budget == 0) throw std::invalid_argument("pack_batches: zero token budget");
  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (auto i : order) {
    if (seqs[i].inputs.size() > token_budget) {
      throw std::invalid_argument("pack_batches: sequence of length " + std::to_string(seqs[i].inputs.size()) +
                                  " exceeds token budget " + std::to_string(token_budget));
    }
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return seqs[a].inputs.size() > seqs[b].inputs.size(); });

  std::vector<PackedBatch> packs;
  for (auto i : order) {
    const auto& s = seqs[i];
    PackedBatch* target = nullptr;
    for (auto& p : packs) {
      if (p.size() + s.inputs.size() <= token_budget) {
        target = &p;
        break;
      }
    }
    if (!target) {
      packs.emplace_back();
      target = &packs.back();
      target->token_budget = token_budget;
    }
    const auto segment = static_cast<std::int32_t>(target->sources.size());
    const auto base = target->size();
    target->sources.push_back(i);
    for (std::size_t t = 0; t < s.inputs.size(); ++t) {
      target->flat_inputs.push_back(s.inputs[t]);
      target->flat_originals.push_back(s.originals[t]);
      target->segment_ids.push_back(segment);
      target->positions.push_back(static_cast<std::int32_t>(t));
    }
    for (std::size_t k = 0; k < s.masked_positions.size(); ++k) {
      target->mask_slots.push_back(
          {base + s.masked_positions[k], s.labels[k], k < s.critiques.size() ? s.critiques[k] : std::nullopt});
    }
  }
  return packs;
}

}  // namespace flare
