#include "flare/gradcheck.hpp"

#include <optional>
#include <string>
#include <vector>

#include "flare/model.hpp"
#include "flare/textenc.hpp"

namespace flare {

namespace {

ModelConfig toy_config() {
  ModelConfig c;
  c.n_items = 10;
  c.transformer = {2, 2, 16, 32, 16};
  c.perceiver = {2, 2, 1, 16, 0};
  c.d_text = 8;
  c.init_std = 0.3;
  return c;
}

ItemVocab toy_vocab(std::size_t n) {
  ItemVocab v;
  for (std::size_t i = 0; i < n; ++i) {
    Item it;
    it.item_id = "i" + std::to_string(i);
    it.title = "product " + std::to_string(i);
    it.categories = {"c" + std::to_string(i % 2), "c" + std::to_string(i % 2) + "s" + std::to_string(i % 3)};
    v.add(std::move(it));
  }
  return v;
}

}  // namespace

GradCheckReport model_grad_check(std::uint64_t seed, double eps, double tolerance) {
  const HashingEncoder encoder(64, 8, 17);
  const ItemVocab vocab = toy_vocab(10);
  const EmbeddingCache cache = EmbeddingCache::build(vocab, encoder);
  const TextContext ctx{&cache, &encoder};

  FlareModel<double> model(toy_config(), seed);
  // Moves t off its near-zero start so the text path has gradients worth
  // comparing.
  model.params().get(std::string(pname::kOutputProjection) + ".w").value *= 3.0;

  MaskedSequence m;
  m.originals = {3, 7, 1};
  m.inputs = m.originals;
  m.masked_positions = {1};
  m.labels = {7};
  m.inputs[1] = model.mask_index();
  m.critiques = {std::string("c1 - c1s1")};
  const auto packs = pack_batches(std::vector<MaskedSequence>{m}, 16);

  const LossConfig lc;
  LossFn<double> f = [&](ParamStore<double>&, bool with_grad) {
    Tape<double> t;
    auto out = forward_mlm(t, model, std::span<const PackedBatch>(packs), FusionMode::TextIdCritique, ctx, true);
    Var lm = loss_mlm(t, out.logits, out.labels);
    Var lcv = loss_contrastive(t, out.pair_ids, out.pair_texts, lc.tau, lc.margin);
    Var total = loss_total(t, lm, lcv, lc.alpha);
    if (with_grad) t.backward(total);
    return t.scalar(total);
  };
  return grad_check(f, model.params(), eps, tolerance);
}

}  // namespace flare
