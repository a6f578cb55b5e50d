#include "flare/nn.hpp"

#include <stdexcept>
#include <vector>

namespace flare {

void TransformerConfig::validate() const {
  if (n_layers == 0 || n_heads == 0 || d_model == 0 || d_hidden == 0 || max_positions == 0) {
    throw std::invalid_argument("transformer config: all sizes must be positive");
  }
  if (d_model % n_heads != 0) throw std::invalid_argument("transformer config: d_model not divisible by n_heads");
}

void PerceiverConfig::validate() const {
  if (n_latents == 0 || n_heads == 0 || n_layers == 0 || d_model == 0) {
    throw std::invalid_argument("perceiver config: all sizes must be positive");
  }
  if (d_model % n_heads != 0) throw std::invalid_argument("perceiver config: d_model not divisible by n_heads");
}

template <class T>
Matrix<T> random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
  Matrix<T> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.normal() * stddev);
  return m;
}

namespace {

template <class T>
void add_norm(ParamStore<T>& s, const std::string& p, std::size_t d) {
  s.add(p + ".g", Matrix<T>::Ones(1, static_cast<Eigen::Index>(d)));
  s.add(p + ".b", Matrix<T>::Zero(1, static_cast<Eigen::Index>(d)));
}

template <class T>
void add_linear(ParamStore<T>& s, const std::string& p, std::size_t in, std::size_t out, Rng& rng, double sd,
                bool bias = true) {
  s.add(p + ".w", random_matrix<T>(rng, in, out, sd));
  if (bias) s.add(p + ".b", Matrix<T>::Zero(1, static_cast<Eigen::Index>(out)));
}

template <class T>
Var norm(Tape<T>& t, const ParamStore<T>& s, const std::string& p, Var x) {
  return ag::layer_norm(t, x, t.param(s.get(p + ".g")), t.param(s.get(p + ".b")));
}

template <class T>
Var dense(Tape<T>& t, const ParamStore<T>& s, const std::string& p, Var x, bool bias = true) {
  Var y = ag::matmul(t, x, t.param(s.get(p + ".w")));
  return bias ? ag::add_row(t, y, t.param(s.get(p + ".b"))) : y;
}

template <class T>
Var feed_forward(Tape<T>& t, const ParamStore<T>& s, const std::string& p, Var x) {
  return dense(t, s, p + ".fc2", ag::gelu(t, dense(t, s, p + ".fc1", x)));
}

template <class T>
void init_feed_forward(ParamStore<T>& s, const std::string& p, std::size_t d, std::size_t hidden, Rng& rng,
                       double sd) {
  add_linear(s, p + ".fc1", d, hidden, rng, sd);
  add_linear(s, p + ".fc2", hidden, d, rng, sd);
}

std::string layer_prefix(const std::string& prefix, std::size_t i) { return prefix + ".layer" + std::to_string(i); }

}  // namespace

template <class T>
void init_attention_sublayer(ParamStore<T>& store, const std::string& prefix, std::size_t d_model, Rng& rng,
                             double init_std, bool out_bias) {
  add_linear(store, prefix + ".q", d_model, d_model, rng, init_std);
  add_linear(store, prefix + ".k", d_model, d_model, rng, init_std);
  add_linear(store, prefix + ".v", d_model, d_model, rng, init_std);
  add_linear(store, prefix + ".o", d_model, d_model, rng, init_std, out_bias);
}

template <class T>
Var attention_sublayer(Tape<T>& tape, const ParamStore<T>& store, const std::string& prefix, Var q_in, Var kv_in,
                       std::size_t n_heads, const AttendMask& mask, bool out_bias) {
  Var q = dense(tape, store, prefix + ".q", q_in);
  Var k = dense(tape, store, prefix + ".k", kv_in);
  Var v = dense(tape, store, prefix + ".v", kv_in);
  Var a = ag::attention(tape, q, k, v, n_heads, mask);
  return dense(tape, store, prefix + ".o", a, out_bias);
}

template <class T>
void init_transformer(ParamStore<T>& store, const TransformerConfig& cfg, const std::string& prefix, Rng& rng,
                      double init_std) {
  cfg.validate();
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    const auto p = layer_prefix(prefix, i);
    add_norm(store, p + ".ln1", cfg.d_model);
    init_attention_sublayer(store, p + ".attn", cfg.d_model, rng, init_std);
    add_norm(store, p + ".ln2", cfg.d_model);
    init_feed_forward(store, p + ".ffn", cfg.d_model, cfg.d_hidden, rng, init_std);
  }
}

template <class T>
Var transformer_forward(Tape<T>& tape, const ParamStore<T>& store, const TransformerConfig& cfg, const std::string& prefix,
                        Var x, const AttendMask& mask) {
  const auto& X = tape.value(x);
  if (static_cast<std::size_t>(X.cols()) != cfg.d_model) {
    throw std::invalid_argument("transformer_forward: input width " + std::to_string(X.cols()) + " != d_model " +
                                std::to_string(cfg.d_model));
  }
  if (mask.rows() != static_cast<std::size_t>(X.rows()) || mask.cols() != static_cast<std::size_t>(X.rows())) {
    throw std::invalid_argument("transformer_forward: attention relation does not match sequence length");
  }
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    const auto p = layer_prefix(prefix, i);
    Var h = norm(tape, store, p + ".ln1", x);
    x = ag::add(tape, x, attention_sublayer(tape, store, p + ".attn", h, h, cfg.n_heads, mask));
    h = norm(tape, store, p + ".ln2", x);
    x = ag::add(tape, x, feed_forward(tape, store, p + ".ffn", h));
  }
  return x;
}

template <class T>
void init_perceiver(ParamStore<T>& store, const PerceiverConfig& cfg, const std::string& prefix, Rng& rng,
                    double init_std) {
  cfg.validate();
  store.add(prefix + ".latents", random_matrix<T>(rng, cfg.n_latents, cfg.d_model, init_std));
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    const auto p = layer_prefix(prefix, i);
    add_norm(store, p + ".cross.ln_q", cfg.d_model);
    add_norm(store, p + ".cross.ln_kv", cfg.d_model);
    // No output bias: an empty input must contribute exactly nothing.
    init_attention_sublayer(store, p + ".cross.attn", cfg.d_model, rng, init_std, false);
    add_norm(store, p + ".self.ln", cfg.d_model);
    init_attention_sublayer(store, p + ".self.attn", cfg.d_model, rng, init_std);
    add_norm(store, p + ".ffn.ln", cfg.d_model);
    init_feed_forward(store, p + ".ffn", cfg.d_model, cfg.hidden(), rng, init_std);
  }
}

template <class T>
Var perceiver_resample(Tape<T>& tape, const ParamStore<T>& store, const PerceiverConfig& cfg, const std::string& prefix,
                       Var inputs, std::span<const std::size_t> lengths) {
  const auto L = cfg.n_latents;
  const auto R = lengths.size();
  std::vector<std::int64_t> latent_rows(R * L);
  std::vector<AttendMask::Block> cross_blocks;
  std::vector<AttendMask::Block> self_blocks;
  std::size_t offset = 0;
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t l = 0; l < L; ++l) latent_rows[r * L + l] = static_cast<std::int64_t>(l);
    if (lengths[r] > 0) cross_blocks.push_back({r * L, (r + 1) * L, offset, offset + lengths[r]});
    self_blocks.push_back({r * L, (r + 1) * L, r * L, (r + 1) * L});
    offset += lengths[r];
  }
  if (offset != static_cast<std::size_t>(tape.value(inputs).rows())) {
    throw std::invalid_argument("perceiver_resample: lengths do not cover the input rows");
  }
  const auto cross_mask = AttendMask::from_blocks(R * L, offset, std::move(cross_blocks));
  const auto self_mask = AttendMask::from_blocks(R * L, R * L, std::move(self_blocks));

  Var lat = ag::gather_rows(tape, tape.param(store.get(prefix + ".latents")), std::span<const std::int64_t>(latent_rows));
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    const auto p = layer_prefix(prefix, i);
    Var q = norm(tape, store, p + ".cross.ln_q", lat);
    Var kv = norm(tape, store, p + ".cross.ln_kv", inputs);
    lat = ag::add(tape, lat, attention_sublayer(tape, store, p + ".cross.attn", q, kv, cfg.n_heads, cross_mask, false));
    Var h = norm(tape, store, p + ".self.ln", lat);
    lat = ag::add(tape, lat, attention_sublayer(tape, store, p + ".self.attn", h, h, cfg.n_heads, self_mask));
    h = norm(tape, store, p + ".ffn.ln", lat);
    lat = ag::add(tape, lat, feed_forward(tape, store, p + ".ffn", h));
  }
  return lat;
}

#define FLARE_INSTANTIATE_NN(T)                                                                                    \
  template Matrix<T> random_matrix<T>(Rng&, std::size_t, std::size_t, double);                                     \
  template void init_transformer<T>(ParamStore<T>&, const TransformerConfig&, const std::string&, Rng&, double);   \
  template Var transformer_forward<T>(Tape<T>&, const ParamStore<T>&, const TransformerConfig&, const std::string&, Var, \
                                      const AttendMask&);                                                          \
  template void init_perceiver<T>(ParamStore<T>&, const PerceiverConfig&, const std::string&, Rng&, double);       \
  template Var perceiver_resample<T>(Tape<T>&, const ParamStore<T>&, const PerceiverConfig&, const std::string&, Var,    \
                                     std::span<const std::size_t>);                                                \
  template Var attention_sublayer<T>(Tape<T>&, const ParamStore<T>&, const std::string&, Var, Var, std::size_t,          \
                                     const AttendMask&, bool);                                                     \
  template void init_attention_sublayer<T>(ParamStore<T>&, const std::string&, std::size_t, Rng&, double, bool);

FLARE_INSTANTIATE_NN(float)
FLARE_INSTANTIATE_NN(double)

#undef FLARE_INSTANTIATE_NN

}  // namespace flare
