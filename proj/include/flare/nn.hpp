#pragma once

// Transformer encoder stack and Perceiver resampler on top of the tape.

#include <cstddef>
#include <span>
#include <string>

#include "flare/autograd.hpp"
#include "flare/rng.hpp"
#include "flare/tensor.hpp"

namespace flare {

struct TransformerConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t d_model = 64;
  std::size_t d_hidden = 256;
  std::size_t max_positions = 64;

  void validate() const;
  friend bool operator==(const TransformerConfig&, const TransformerConfig&) = default;
};

struct PerceiverConfig {
  std::size_t n_latents = 2;
  std::size_t n_heads = 2;
  std::size_t n_layers = 1;
  std::size_t d_model = 64;
  std::size_t d_hidden = 0;  // 0 means 4 * d_model

  std::size_t hidden() const { return d_hidden ? d_hidden : 4 * d_model; }
  void validate() const;
  friend bool operator==(const PerceiverConfig&, const PerceiverConfig&) = default;
};

// Parameter initialisation: weights N(0, init_std^2), biases 0, layer-norm
// gains 1.
template <class T>
Matrix<T> random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev);

template <class T>
void init_transformer(ParamStore<T>& store, const TransformerConfig& cfg, const std::string& prefix, Rng& rng,
                      double init_std);

// Pre-norm encoder: per layer x += Attn(LN(x)) restricted to `mask`, then
// x += FFN(LN(x)) with GELU. No trailing norm.
template <class T>
Var transformer_forward(Tape<T>& tape, const ParamStore<T>& store, const TransformerConfig& cfg, const std::string& prefix,
                        Var x, const AttendMask& mask);

template <class T>
void init_perceiver(ParamStore<T>& store, const PerceiverConfig& cfg, const std::string& prefix, Rng& rng,
                    double init_std);

// Resamples several independent inputs at once. `inputs` stacks the rows of
// every request (already projected to d_model); `lengths` gives the row count
// of each request. Returns n_latents rows per request, request-major. A
// zero-length request sees no cross-attention contribution at all.
template <class T>
Var perceiver_resample(Tape<T>& tape, const ParamStore<T>& store, const PerceiverConfig& cfg, const std::string& prefix,
                       Var inputs, std::span<const std::size_t> lengths);

// Multi-head attention sublayer: project q from q_in and k/v from kv_in,
// attend under `mask`, project back. `out_bias` adds a bias after the output
// projection.
template <class T>
Var attention_sublayer(Tape<T>& tape, const ParamStore<T>& store, const std::string& prefix, Var q_in, Var kv_in,
                       std::size_t n_heads, const AttendMask& mask, bool out_bias = true);

template <class T>
void init_attention_sublayer(ParamStore<T>& store, const std::string& prefix, std::size_t d_model, Rng& rng,
                             double init_std, bool out_bias = true);

}  // namespace flare
