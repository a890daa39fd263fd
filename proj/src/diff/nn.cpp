#include "neurotoken/nn.hpp"

#include <cmath>

#include "neurotoken/error.hpp"

namespace neurotoken::nn {

template <typename T>
Tensor<T> init_normal(Rng& rng, int rows, int cols, double std) {
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(std * rng.normal());
  return Tensor<T>::parameter(std::move(m));
}

template <typename T>
Tensor<T> init_constant(int rows, int cols, double value) {
  return Tensor<T>::parameter(Mat<T>::Constant(rows, cols, static_cast<T>(value)));
}

template <typename T>
Linear<T> Linear<T>::make(Rng& rng, int in, int out, bool bias, double std) {
  Linear l;
  l.w = init_normal<T>(rng, in, out, std);
  if (bias) l.b = init_constant<T>(1, out, 0.0);
  return l;
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  Tensor<T> y = diff::linear(x, w, b);
  if (!has_lora()) return y;
  return diff::add(y, diff::scale(diff::matmul(diff::matmul(x, lora_a), lora_b), lora_scale));
}

template <typename T>
void Linear<T>::add_lora(Rng& rng, int rank, double alpha) {
  require(rank >= 1, ErrorKind::PreconditionViolation, "LoRA rank must be at least 1");
  lora_a = init_normal<T>(rng, static_cast<int>(w.rows()), rank, 1.0 / std::sqrt(static_cast<double>(w.rows())));
  lora_b = init_constant<T>(rank, static_cast<int>(w.cols()), 0.0);
  lora_scale = static_cast<T>(alpha / rank);
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, std::vector<Named<T>>& out) const {
  out.push_back({prefix + ".w", w});
  if (b.defined()) out.push_back({prefix + ".b", b});
  if (has_lora()) {
    out.push_back({prefix + ".lora_a", lora_a});
    out.push_back({prefix + ".lora_b", lora_b});
  }
}

template <typename T>
LayerNorm<T> LayerNorm<T>::make(int dim) {
  return LayerNorm{init_constant<T>(1, dim, 1.0), init_constant<T>(1, dim, 0.0)};
}

template <typename T>
Tensor<T> LayerNorm<T>::operator()(const Tensor<T>& x) const {
  return diff::layer_norm(x, gamma, beta);
}

template <typename T>
void LayerNorm<T>::collect(const std::string& prefix, std::vector<Named<T>>& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

template <typename T>
Block<T> Block<T>::make(Rng& rng, int dim, int ffn_dim, int n_layers) {
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  const double residual = s / std::sqrt(2.0 * n_layers);
  Block blk;
  blk.ln1 = LayerNorm<T>::make(dim);
  blk.ln2 = LayerNorm<T>::make(dim);
  blk.q = Linear<T>::make(rng, dim, dim, true, s);
  blk.k = Linear<T>::make(rng, dim, dim, false, s);  // a key bias cancels in the softmax
  blk.v = Linear<T>::make(rng, dim, dim, true, s);
  blk.o = Linear<T>::make(rng, dim, dim, true, residual);
  blk.up = Linear<T>::make(rng, dim, ffn_dim, true, s);
  blk.down = Linear<T>::make(rng, ffn_dim, dim, true, residual * std::sqrt(static_cast<double>(dim) / ffn_dim));
  return blk;
}

template <typename T>
Tensor<T> Block<T>::operator()(const Tensor<T>& x, int n_heads, bool causal, const std::vector<int>& segments) const {
  const auto h = ln1(x);
  const auto a = diff::attention(q(h), k(h), v(h), n_heads, causal, segments);
  const auto x1 = diff::add(x, o(a));
  return diff::add(x1, down(diff::gelu(up(ln2(x1)))));
}

template <typename T>
void Block<T>::collect(const std::string& prefix, std::vector<Named<T>>& out) const {
  ln1.collect(prefix + ".ln1", out);
  q.collect(prefix + ".attn.q", out);
  k.collect(prefix + ".attn.k", out);
  v.collect(prefix + ".attn.v", out);
  o.collect(prefix + ".attn.o", out);
  ln2.collect(prefix + ".ln2", out);
  up.collect(prefix + ".ffn.up", out);
  down.collect(prefix + ".ffn.down", out);
}

template <typename T>
std::vector<NamedArray> to_arrays(const std::vector<Named<T>>& params) {
  std::vector<NamedArray> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({p.name, p.tensor.value().template cast<float>()});
  return out;
}

template <typename T>
void load_arrays(const std::vector<Named<T>>& params, const std::vector<NamedArray>& arrays) {
  for (const auto& p : params) {
    const auto& e = find_entry(arrays, p.name);
    require(e.value.rows() == p.tensor.rows() && e.value.cols() == p.tensor.cols(), ErrorKind::FormatError,
            "checkpoint entry " + p.name + " has the wrong shape");
    auto t = p.tensor;
    t.mutable_value() = e.value.template cast<T>();
  }
}

template <typename T>
long count_parameters(const std::vector<Named<T>>& params) {
  long n = 0;
  for (const auto& p : params) n += static_cast<long>(p.tensor.value().size());
  return n;
}

#define NEUROTOKEN_NN_INSTANTIATE(T)                                                             \
  template Tensor<T> init_normal<T>(Rng&, int, int, double);                                     \
  template Tensor<T> init_constant<T>(int, int, double);                                         \
  template struct Linear<T>;                                                                     \
  template struct LayerNorm<T>;                                                                  \
  template struct Block<T>;                                                                      \
  template std::vector<NamedArray> to_arrays<T>(const std::vector<Named<T>>&);                   \
  template void load_arrays<T>(const std::vector<Named<T>>&, const std::vector<NamedArray>&);    \
  template long count_parameters<T>(const std::vector<Named<T>>&);

NEUROTOKEN_NN_INSTANTIATE(float)
NEUROTOKEN_NN_INSTANTIATE(double)

#undef NEUROTOKEN_NN_INSTANTIATE

}  // namespace neurotoken::nn
