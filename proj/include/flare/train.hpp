#pragma once

// Training configuration, hyperparameter presets, text resources and the
// training loop.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "flare/bundle.hpp"
#include "flare/critique.hpp"
#include "flare/model.hpp"
#include "flare/textenc.hpp"

namespace flare {

// Where item text embeddings come from: the hashing stand-in, or a file of
// precomputed embeddings (with the stand-in filling gaps).
struct TextConfig {
  std::size_t buckets = kDefaultHashBuckets;
  std::uint64_t seed = 0x7e47;
  std::string embeddings;  // optional path to a precomputed-embedding file

  friend bool operator==(const TextConfig&, const TextConfig&) = default;
};

struct TrainConfig {
  std::string preset;  // informative: the preset this was derived from
  TransformerConfig transformer;
  PerceiverConfig perceiver;
  std::size_t d_text = kDefaultTextDim;
  TextReducer reducer = TextReducer::Perceiver;
  TextConfig text;
  LossConfig loss;
  FusionMode fusion = FusionMode::TextId;
  MaskMode masking = MaskMode::Bidirectional;
  double mask_rate = kDefaultMaskRate;
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::size_t batch = 16;        // sequences drawn per step, before packing
  std::size_t total_steps = 1000;
  std::size_t token_budget = 0;  // 0: max_positions
  std::size_t checkpoint_every = 0;  // 0: max(total_steps / 10, 100)
  bool dedup = false;
  double init_std = 0.02;
  std::uint64_t seed = 0;
  // Critique levels drawn uniformly per masked slot in critique mode.
  std::vector<CritiqueLevel> critique_mix = {CritiqueLevel::Precise, CritiqueLevel::Broad, CritiqueLevel::None};

  void validate() const;
  std::size_t effective_token_budget() const { return token_budget ? token_budget : transformer.max_positions; }
  std::size_t effective_checkpoint_every() const;
  ModelConfig model_config(std::size_t n_items) const;

  nlohmann::json to_json() const;
  // Fields present in `j` override those of `base`; unknown keys are errors.
  static TrainConfig from_json(const nlohmann::json& j, const TrainConfig& base);
  static TrainConfig from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }
};

// Preset names are "<dataset>-<variant>": dataset in games, office,
// scientific, music, arts, pets with variant id or text_id; clothing with
// small, base or large; synthetic with id, text_id or critique.
TrainConfig load_preset(const std::string& name);
std::vector<std::string> preset_names();

// Encoder plus per-item cache built once for a vocabulary.
struct TextResources {
  std::unique_ptr<HashingEncoder> encoder;
  std::unique_ptr<EmbeddingCache> cache;

  TextContext context() const { return {cache.get(), encoder.get()}; }
  std::string fingerprint() const;
};

TextResources make_text_resources(const TextConfig& cfg, std::size_t d_text, const ItemVocab& vocab);

// A checkpoint with the training config recorded in its metadata and the
// text resources that config names, rebuilt for `vocab`.
struct TrainedModel {
  FlareModel<float> model;
  TrainConfig config;
  TextResources text;
  std::string checkpoint_hash;
};

TrainedModel load_trained(const std::filesystem::path& checkpoint, const ItemVocab& vocab);

struct TrainLogRecord {
  std::size_t step = 0;
  double l_mlm = 0;
  std::optional<double> l_c;
  double l_total = 0;
  std::size_t eff_batch = 0;  // packed examples this step
  std::size_t sequences = 0;
  std::size_t mask_slots = 0;
  double wall_ms = 0;

  nlohmann::json to_json() const;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // checkpoints and diagnostics; empty: none written
  std::ostream* log = nullptr;    // JSON-lines training log
  std::function<void(const TrainLogRecord&)> on_step;
  nlohmann::json manifest = nlohmann::json::object();  // stored in checkpoint meta
};

struct TrainResult {
  FlareModel<float> model;
  std::vector<TrainLogRecord> log;
  std::vector<std::filesystem::path> checkpoints;
};

// Training sequences after the optional duplicate collapse, trimmed to the
// model's position budget.
std::vector<std::vector<ItemIndex>> training_sequences(const TrainConfig& cfg, const CorpusBundle& bundle);

// Deterministic in (config, bundle): same inputs give bit-identical
// parameters. Throws std::runtime_error on a non-finite loss after writing a
// diagnostic dump to out_dir.
TrainResult train(const TrainConfig& cfg, const CorpusBundle& bundle, const TextResources& text,
                  const TrainOptions& options = {});

}  // namespace flare
