#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "flare/data.hpp"

namespace flare {

inline constexpr int kBundleVersion = 1;

// Vocabulary, preprocessed sequences and one split, serialised as a single
// JSON document whose "content_hash" is the SHA-256 of the document dumped
// without that field (see docs/formats.md).
struct CorpusBundle {
  ItemVocab vocab;
  std::vector<UserSequence> sequences;
  SplitSet splits;
  nlohmann::json meta = nlohmann::json::object();  // provenance, generator settings
};

nlohmann::json bundle_to_json(const CorpusBundle& bundle);
CorpusBundle bundle_from_json(const nlohmann::json& doc);

// Canonical hash over everything except the hash field itself.
std::string bundle_content_hash(const nlohmann::json& doc);

void save_bundle(const CorpusBundle& bundle, const std::filesystem::path& path);
// Throws on version mismatch or hash mismatch.
CorpusBundle load_bundle(const std::filesystem::path& path);

}  // namespace flare
