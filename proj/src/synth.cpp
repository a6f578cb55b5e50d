#include "flare/synth.hpp"

#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "flare/rng.hpp"

namespace flare {

std::string_view to_string(SynthStructure s) { return s == SynthStructure::Markov ? "markov" : "category"; }

SynthStructure synth_structure_from_string(std::string_view s) {
  if (s == "markov") return SynthStructure::Markov;
  if (s == "category" || s == "category-driven") return SynthStructure::Category;
  throw std::invalid_argument("unknown synthetic structure '" + std::string(s) + "' (expected markov, category)");
}

namespace {

std::size_t leaf_count(const std::vector<std::size_t>& branching) {
  return std::accumulate(branching.begin(), branching.end(), std::size_t{1}, std::multiplies<>());
}

// Level names spell out their ancestry ("c1", "c1a0", "c1a0b1", ...) so each
// is a single distinctive token.
std::vector<std::string> leaf_path(std::size_t leaf, const std::vector<std::size_t>& branching) {
  static constexpr char kTags[] = {'c', 'a', 'b', 'd', 'e', 'f', 'g', 'h'};
  std::vector<std::size_t> digits(branching.size());
  for (std::size_t l = branching.size(); l-- > 0;) {
    digits[l] = leaf % branching[l];
    leaf /= branching[l];
  }
  std::vector<std::string> path;
  std::string name;
  for (std::size_t l = 0; l < digits.size(); ++l) {
    name += kTags[l % sizeof kTags];
    name += std::to_string(digits[l]);
    path.push_back(name);
  }
  return path;
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  rng.shuffle(p.begin(), p.end());
  return p;
}

}  // namespace

void SynthSpec::validate() const {
  if (n_items < 4) throw std::invalid_argument("synth: n_items must be at least 4");
  if (n_users == 0) throw std::invalid_argument("synth: n_users must be positive");
  if (min_length == 0 || min_length > max_length) throw std::invalid_argument("synth: bad length range");
  if (!(jump_probability >= 0 && jump_probability <= 1)) throw std::invalid_argument("synth: jump_probability in [0,1]");
  if (structure == SynthStructure::Category) {
    if (branching.empty() || branching.size() > 8) throw std::invalid_argument("synth: 1 to 8 category levels");
    for (auto b : branching) {
      if (b == 0) throw std::invalid_argument("synth: zero branching factor");
    }
    if (n_items < leaf_count(branching)) throw std::invalid_argument("synth: fewer items than category leaves");
    if (jump_levels >= branching.size()) throw std::invalid_argument("synth: jump_levels must be below the depth");
  }
}

nlohmann::json SynthSpec::to_json() const {
  return {{"structure", std::string(to_string(structure))},
          {"n_items", n_items},
          {"n_users", n_users},
          {"min_length", min_length},
          {"max_length", max_length},
          {"seed", seed},
          {"branching", branching},
          {"jump_probability", jump_probability},
          {"jump_levels", jump_levels},
          {"split", split == SplitMode::LeaveOneOut ? "leave-one-out" : "unseen-users"}};
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
  SynthSpec s;
  s.structure = synth_structure_from_string(j.value("structure", std::string("markov")));
  s.n_items = j.value("n_items", s.n_items);
  s.n_users = j.value("n_users", s.n_users);
  s.min_length = j.value("min_length", s.min_length);
  s.max_length = j.value("max_length", s.max_length);
  s.seed = j.value("seed", s.seed);
  s.branching = j.value("branching", s.branching);
  s.jump_probability = j.value("jump_probability", s.jump_probability);
  s.jump_levels = j.value("jump_levels", s.jump_levels);
  s.split = j.value("split", std::string("leave-one-out")) == "unseen-users" ? SplitMode::UnseenUsers
                                                                             : SplitMode::LeaveOneOut;
  s.validate();
  return s;
}

CorpusBundle make_synthetic_corpus(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  CorpusBundle b;
  const bool markov = spec.structure == SynthStructure::Markov;
  const std::size_t leaves = markov ? 0 : leaf_count(spec.branching);
  const std::size_t per_leaf = markov ? 0 : spec.n_items / leaves;
  const std::size_t n_items = markov ? spec.n_items : per_leaf * leaves;

  for (std::size_t i = 0; i < n_items; ++i) {
    Item it;
    char id[32];
    std::snprintf(id, sizeof id, "S%06zu", i);
    it.item_id = id;
    if (markov) {
      it.title = "product " + std::to_string(i);
    } else {
      // Titles name only the leaf, so text separates categories but never
      // siblings.
      it.categories = leaf_path(i / per_leaf, spec.branching);
      it.title = it.categories.back() + " product";
    }
    b.vocab.add(std::move(it));
  }

  // Leaves sharing their first jump_levels levels form contiguous blocks.
  std::size_t jump_block = leaves;
  for (std::size_t l = 0; !markov && l < spec.jump_levels; ++l) jump_block /= spec.branching[l];

  const auto succ = permutation(markov ? n_items : leaves, rng);
  for (std::size_t u = 0; u < spec.n_users; ++u) {
    UserSequence s;
    char id[32];
    std::snprintf(id, sizeof id, "U%06zu", u);
    s.user_id = id;
    const auto len = spec.min_length + rng.below(spec.max_length - spec.min_length + 1);
    std::size_t item = rng.below(n_items);
    for (std::size_t t = 0; t < len; ++t) {
      s.events.push_back({static_cast<ItemIndex>(item), static_cast<std::int64_t>(t)});
      if (markov) {
        item = succ[item];
      } else {
        std::size_t leaf = succ[item / per_leaf];
        if (spec.jump_probability > 0 && rng.bernoulli(spec.jump_probability)) {
          leaf = leaf / jump_block * jump_block + rng.below(jump_block);
        }
        item = leaf * per_leaf + rng.below(per_leaf);
      }
    }
    b.sequences.push_back(std::move(s));
  }

  b.splits = spec.split == SplitMode::LeaveOneOut ? split_leave_one_out(b.sequences)
                                                  : split_unseen_users(b.sequences, spec.seed);
  b.meta = {{"source", "synthetic"}, {"spec", spec.to_json()}, {"successor", succ}};
  if (!markov) b.meta["items_per_leaf"] = per_leaf;
  return b;
}

std::vector<std::size_t> synth_successors(const CorpusBundle& bundle) {
  return bundle.meta.at("successor").get<std::vector<std::size_t>>();
}

}  // namespace flare
