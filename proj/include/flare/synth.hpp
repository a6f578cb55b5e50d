#pragma once

// Synthetic corpora with known structure, used as learnability substrates.
//
// markov:   each user walks a fixed random permutation sigma of the items
//           from a random start, so the next item is sigma(previous).
// category: items sit in the leaves of a 4-level category tree; the next
//           item's leaf is a fixed permutation of the previous leaf (or, with
//           probability jump_probability, a random leaf sharing the first
//           jump_levels levels with the scheduled one) and the item is uniform
//           within that leaf.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "flare/bundle.hpp"

namespace flare {

enum class SynthStructure { Markov, Category };

std::string_view to_string(SynthStructure s);
SynthStructure synth_structure_from_string(std::string_view s);

struct SynthSpec {
  SynthStructure structure = SynthStructure::Markov;
  std::size_t n_items = 100;  // category: rounded down to whole leaves
  std::size_t n_users = 2000;
  std::size_t min_length = 5;
  std::size_t max_length = 12;
  std::uint64_t seed = 0;
  // Category structure only.
  std::vector<std::size_t> branching = {3, 2, 2, 2};
  double jump_probability = 0.0;
  std::size_t jump_levels = 0;  // 0: a jump may land anywhere
  SplitMode split = SplitMode::LeaveOneOut;

  void validate() const;
  nlohmann::json to_json() const;
  static SynthSpec from_json(const nlohmann::json& j);
};

CorpusBundle make_synthetic_corpus(const SynthSpec& spec);

// The generator's successor maps, recovered from a bundle's meta, for oracle
// checks: markov -> item successor; category -> leaf successor per leaf.
std::vector<std::size_t> synth_successors(const CorpusBundle& bundle);

}  // namespace flare
