#pragma once

// The Flare model: ID embeddings fused with Perceiver-resampled text, a
// bidirectional transformer over packed masked sequences, and a tied output
// head over the item vocabulary.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "flare/autograd.hpp"
#include "flare/data.hpp"
#include "flare/nn.hpp"
#include "flare/tensor.hpp"
#include "flare/textenc.hpp"

namespace flare {

enum class FusionMode { IdOnly, TextId, TextIdCritique };

// How the text rows of one item are reduced to a single vector. MeanPool
// skips the Perceiver and averages the projected rows.
enum class TextReducer { Perceiver, MeanPool };

std::string_view to_string(FusionMode m);
FusionMode fusion_mode_from_string(std::string_view s);
std::string_view to_string(TextReducer r);
TextReducer text_reducer_from_string(std::string_view s);

struct ModelConfig {
  std::size_t n_items = 0;
  TransformerConfig transformer;
  PerceiverConfig perceiver;
  std::size_t d_text = kDefaultTextDim;
  FusionMode fusion = FusionMode::TextId;
  TextReducer reducer = TextReducer::Perceiver;
  double init_std = 0.02;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LossConfig {
  double alpha = 0.5;
  double tau = 0.3;
  double margin = 0.2;
  bool contrastive_enabled = true;

  void validate() const;
  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

// Parameter names, fixed so checkpoints are portable.
namespace pname {
inline constexpr const char* kItemEmbeddings = "item_embeddings";
inline constexpr const char* kPositionEmbeddings = "position_embeddings";
inline constexpr const char* kEncoder = "encoder";
inline constexpr const char* kFinalNorm = "final_norm";
inline constexpr const char* kTypeText = "type_text";
inline constexpr const char* kTypeCritique = "type_critique";
inline constexpr const char* kTextMask = "text_mask_embedding";
inline constexpr const char* kTextInput = "text_input_projection";
inline constexpr const char* kPerceiver = "perceiver";
inline constexpr const char* kTextNorm = "text_norm";
inline constexpr const char* kOutputProjection = "output_projection";
}  // namespace pname

template <class T>
class FlareModel {
 public:
  // Fresh parameters. Every tensor is created regardless of fusion mode, so
  // two models built from the same seed share their ID-path weights.
  FlareModel(ModelConfig cfg, std::uint64_t seed);
  // Adopts loaded parameters after checking names and shapes.
  FlareModel(ModelConfig cfg, ParamStore<T> params);

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  std::size_t n_items() const { return cfg_.n_items; }
  ItemIndex mask_index() const { return static_cast<ItemIndex>(cfg_.n_items); }
  ItemIndex pad_index() const { return static_cast<ItemIndex>(cfg_.n_items + 1); }

  template <class U>
  FlareModel<U> cast() const {
    return FlareModel<U>(cfg_, params_.template cast<U>());
  }

 private:
  ModelConfig cfg_;
  ParamStore<T> params_;
};

// Where text comes from. `items` holds the frozen per-item encodings;
// `encoder` turns critique strings into rows. Either may be null in id_only
// mode.
struct TextContext {
  const EmbeddingCache* items = nullptr;
  const TextEncoder* encoder = nullptr;
};

// One text-fusion request: the item text (or the text mask stand-in) and an
// optional critique. The Perceiver input is [critique + theta_S ; text + theta_T].
struct FuseRequest {
  const TextEmbeddingSeq* text = nullptr;  // ignored when mask_text is set
  bool mask_text = false;
  const TextEmbeddingSeq* critique = nullptr;
};

// t for each request, request-major, shape R x d_model.
template <class T>
Var text_vectors(Tape<T>& tape, const FlareModel<T>& model, std::span<const FuseRequest> requests);

// c = e + t for a single item; `e` is 1 x d_model.
template <class T>
Matrix<T> fuse_item(const FlareModel<T>& model, const Matrix<T>& e, const TextEmbeddingSeq& text,
                    const TextEmbeddingSeq* critique = nullptr);

template <class T>
struct MlmOutput {
  Var logits;                         // mask slots x n_items
  std::vector<std::int64_t> labels;   // one per logit row
  // Populated when `want_pairs` is set and the text path is active: ID and
  // text vectors of the distinct items in the batch, row-aligned.
  std::vector<ItemIndex> pair_items;
  Var pair_ids;
  Var pair_texts;
};

// Runs every pack through one transformer pass with attention confined to
// each packed sequence. Labels may be the mask placeholder only when
// `allow_unlabelled` is set (inference).
template <class T>
MlmOutput<T> forward_mlm(Tape<T>& tape, const FlareModel<T>& model, std::span<const PackedBatch> packs,
                         FusionMode mode, const TextContext& text, bool want_pairs = false,
                         bool allow_unlabelled = false);

template <class T>
Var loss_mlm(Tape<T>& tape, Var logits, std::span<const std::int64_t> labels,
             Reduction reduction = Reduction::Mean);

// Additive-margin InfoNCE over in-batch pairs: row i of `ids` is positive
// with row i of `texts`, every other text row is a negative.
template <class T>
Var loss_contrastive(Tape<T>& tape, Var ids, Var texts, double tau, double margin);

template <class T>
Var loss_total(Tape<T>& tape, Var l_mlm, Var l_c, double alpha);

double loss_total(double l_mlm, double l_c, double alpha);

// Plain-value forms used by tools and tests.
double mlm_loss_value(const Matrix<double>& logits, std::span<const std::int64_t> labels);
double contrastive_loss_value(const Matrix<double>& ids, const Matrix<double>& texts, double tau, double margin);

struct Query {
  std::vector<ItemIndex> history;
  std::optional<std::string> critique;
};

// Scores every item for each query in one packed pass; rows follow `queries`.
// Histories longer than max_positions - 1 keep their most recent items.
template <class T>
Matrix<T> score_queries(const FlareModel<T>& model, std::span<const Query> queries, FusionMode mode,
                        const TextContext& text);

struct ScoredItem {
  ItemIndex item;
  double score;
};

// Top k by score, ties to the lower index. k is clamped to the vocabulary.
std::vector<ScoredItem> top_k(std::span<const double> scores, std::size_t k);

template <class T>
std::vector<ScoredItem> predict_topk(const FlareModel<T>& model, std::span<const ItemIndex> history,
                                     const std::optional<std::string>& critique, std::size_t k, FusionMode mode,
                                     const TextContext& text);

}  // namespace flare
