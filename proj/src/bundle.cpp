#include "flare/bundle.hpp"

#include <fstream>
#include <sstream>

#include "flare/hash.hpp"

namespace flare {

using nlohmann::json;

namespace {

json example_json(const EvalExample& ex) {
  return {{"user", ex.user_id}, {"prefix", ex.prefix}, {"target", ex.target}};
}

EvalExample example_from(const json& j) {
  return {j.at("user").get<std::string>(), j.at("prefix").get<std::vector<ItemIndex>>(),
          j.at("target").get<ItemIndex>()};
}

void check_items(const std::vector<ItemIndex>& items, std::size_t n, const char* where) {
  for (auto i : items) {
    if (i < 0 || static_cast<std::size_t>(i) >= n) {
      throw std::runtime_error(std::string("corpus bundle: item index out of range in ") + where);
    }
  }
}

}  // namespace

json bundle_to_json(const CorpusBundle& bundle) {
  json items = json::array();
  for (const auto& it : bundle.vocab.items()) {
    json j{{"id", it.item_id},
           {"title", it.title},
           {"description", it.description},
           {"categories", it.categories},
           {"missing_metadata", it.missing_metadata}};
    j["brand"] = it.brand ? json(*it.brand) : json(nullptr);
    j["price"] = it.price ? json(*it.price) : json(nullptr);
    items.push_back(std::move(j));
  }
  json seqs = json::array();
  for (const auto& s : bundle.sequences) {
    json ev = json::array();
    for (const auto& e : s.events) ev.push_back({e.item, e.timestamp});
    seqs.push_back({{"user", s.user_id}, {"events", std::move(ev)}});
  }
  json train = json::array();
  for (const auto& t : bundle.splits.train) train.push_back({{"user", t.user_id}, {"items", t.items}});
  json valid = json::array();
  for (const auto& e : bundle.splits.valid) valid.push_back(example_json(e));
  json test = json::array();
  for (const auto& e : bundle.splits.test) test.push_back(example_json(e));

  json doc{{"format", "flare-corpus"},
           {"version", kBundleVersion},
           {"meta", bundle.meta},
           {"items", std::move(items)},
           {"sequences", std::move(seqs)},
           {"splits",
            {{"mode", bundle.splits.mode == SplitMode::LeaveOneOut ? "leave-one-out" : "unseen-users"},
             {"train", std::move(train)},
             {"valid", std::move(valid)},
             {"test", std::move(test)}}}};
  doc["content_hash"] = bundle_content_hash(doc);
  return doc;
}

std::string bundle_content_hash(const json& doc) {
  json copy = doc;
  copy.erase("content_hash");
  return sha256_hex(copy.dump());
}

CorpusBundle bundle_from_json(const json& doc) {
  if (doc.value("format", "") != "flare-corpus") throw std::runtime_error("not a corpus bundle");
  if (doc.value("version", 0) != kBundleVersion) {
    throw std::runtime_error("unsupported corpus bundle version " + std::to_string(doc.value("version", 0)));
  }
  if (doc.contains("content_hash") && doc.at("content_hash").get<std::string>() != bundle_content_hash(doc)) {
    throw std::runtime_error("corpus bundle content hash mismatch");
  }
  CorpusBundle b;
  b.meta = doc.value("meta", json::object());
  for (const auto& j : doc.at("items")) {
    Item it;
    it.item_id = j.at("id").get<std::string>();
    it.title = j.value("title", "");
    it.description = j.value("description", "");
    it.categories = j.value("categories", std::vector<std::string>{});
    it.missing_metadata = j.value("missing_metadata", false);
    if (j.contains("brand") && j["brand"].is_string()) it.brand = j["brand"].get<std::string>();
    if (j.contains("price") && j["price"].is_number()) it.price = j["price"].get<double>();
    b.vocab.add(std::move(it));
  }
  const auto n = b.vocab.size();
  for (const auto& j : doc.at("sequences")) {
    UserSequence s;
    s.user_id = j.at("user").get<std::string>();
    for (const auto& e : j.at("events")) s.events.push_back({e.at(0).get<ItemIndex>(), e.at(1).get<std::int64_t>()});
    check_items(s.items(), n, "sequences");
    b.sequences.push_back(std::move(s));
  }
  const auto& sp = doc.at("splits");
  b.splits.mode = sp.at("mode").get<std::string>() == "unseen-users" ? SplitMode::UnseenUsers : SplitMode::LeaveOneOut;
  for (const auto& j : sp.at("train")) {
    TrainSequence t{j.at("user").get<std::string>(), j.at("items").get<std::vector<ItemIndex>>()};
    check_items(t.items, n, "train split");
    b.splits.train.push_back(std::move(t));
  }
  for (const auto& j : sp.at("valid")) b.splits.valid.push_back(example_from(j));
  for (const auto& j : sp.at("test")) b.splits.test.push_back(example_from(j));
  for (const auto* part : {&b.splits.valid, &b.splits.test}) {
    for (const auto& e : *part) {
      check_items(e.prefix, n, "eval split");
      check_items({e.target}, n, "eval split");
    }
  }
  return b;
}

void save_bundle(const CorpusBundle& bundle, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << bundle_to_json(bundle).dump() << '\n';
}

CorpusBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open corpus bundle " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return bundle_from_json(json::parse(ss.str()));
}

}  // namespace flare
