#pragma once

// Parameterized layers shared by the tokenizer and the language model.

#include <cstdint>
#include <string>
#include <vector>

#include "neurotoken/checkpoint.hpp"
#include "neurotoken/diff.hpp"
#include "neurotoken/rng.hpp"

namespace neurotoken::nn {

using diff::Mat;
using diff::Tensor;

template <typename T>
struct Named {
  std::string name;
  Tensor<T> tensor;
};

// Normal(0, std^2) entries drawn in double, then cast, so float and double
// models built from the same seed hold the same values up to rounding.
template <typename T>
Tensor<T> init_normal(Rng& rng, int rows, int cols, double std);
template <typename T>
Tensor<T> init_constant(int rows, int cols, double value);

template <typename T>
struct Linear {
  Tensor<T> w;  // in x out
  Tensor<T> b;  // 1 x out, may be undefined
  // Low-rank update x A B scaled by lora_scale; B starts at zero.
  Tensor<T> lora_a;
  Tensor<T> lora_b;
  T lora_scale = T(0);

  static Linear make(Rng& rng, int in, int out, bool bias, double std);
  Tensor<T> operator()(const Tensor<T>& x) const;
  bool has_lora() const { return lora_a.defined(); }
  void add_lora(Rng& rng, int rank, double alpha);
  void collect(const std::string& prefix, std::vector<Named<T>>& out) const;
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;

  static LayerNorm make(int dim);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(const std::string& prefix, std::vector<Named<T>>& out) const;
};

// Pre-norm transformer block: x + attn(ln1 x), then x + ffn(ln2 x).
template <typename T>
struct Block {
  LayerNorm<T> ln1, ln2;
  Linear<T> q, k, v, o;
  Linear<T> up, down;

  static Block make(Rng& rng, int dim, int ffn_dim, int n_layers);
  Tensor<T> operator()(const Tensor<T>& x, int n_heads, bool causal, const std::vector<int>& segments) const;
  void collect(const std::string& prefix, std::vector<Named<T>>& out) const;
};

// Copies parameter values to float arrays for checkpointing.
template <typename T>
std::vector<NamedArray> to_arrays(const std::vector<Named<T>>& params);

// Loads values by name; MissingArtifact for an absent entry, FormatError on a
// shape mismatch.
template <typename T>
void load_arrays(const std::vector<Named<T>>& params, const std::vector<NamedArray>& arrays);

template <typename T>
long count_parameters(const std::vector<Named<T>>& params);

}  // namespace neurotoken::nn
