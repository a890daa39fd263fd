#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
// Every value is two-dimensional; scalars are 1 x 1.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace neurotoken::diff {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
struct Node {
  Mat<T> value;
  Mat<T> grad;
  bool requires_grad = false;
  bool has_grad = false;
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Mat<T>& g) {
    if (!requires_grad) return;
    if (has_grad) {
      grad += g;
    } else {
      grad = g;
      has_grad = true;
    }
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor constant(Mat<T> value);
  static Tensor parameter(Mat<T> value, std::string name = {});

  bool defined() const { return node_ != nullptr; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  const Mat<T>& value() const { return node_->value; }
  Mat<T>& mutable_value() { return node_->value; }
  T item() const { return node_->value(0, 0); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->has_grad; }
  // Zero matrix when no gradient has reached this tensor.
  Mat<T> grad() const;
  void zero_grad() {
    node_->has_grad = false;
    node_->grad.resize(0, 0);
  }
  const std::string& name() const { return node_->name; }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Disables graph construction on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Gradient-checking support. While a session records, stop-gradient style ops
// remember their frozen operands; while it replays, they reuse them so that the
// replayed forward is a smooth surrogate whose exact derivative is the
// designed (straight-through, reversed, stopped) gradient.
template <typename T>
class SurrogateSession {
 public:
  enum class Mode { Record, Replay };

  explicit SurrogateSession(Mode mode, std::vector<Mat<T>>* tape);
  ~SurrogateSession();
  SurrogateSession(const SurrogateSession&) = delete;
  SurrogateSession& operator=(const SurrogateSession&) = delete;

  static SurrogateSession* current();
  Mode mode() const { return mode_; }
  // Record mode stores `value`; replay mode returns the stored value at the
  // same position in the call sequence.
  const Mat<T>& frozen(const Mat<T>& value);

 private:
  Mode mode_;
  std::vector<Mat<T>>* tape_;
  std::size_t cursor_ = 0;
  SurrogateSession* previous_;
};

// Backpropagates from a 1 x 1 loss into every reachable tensor that requires
// gradients. Throws NonScalarLoss otherwise.
template <typename T>
void backward(const Tensor<T>& loss);

// ---- ops -------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// x W + b with b broadcast over rows (b may be undefined).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);
// Same shapes, or b a single row broadcast over a's rows.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, Eigen::Index start, Eigen::Index count);
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, Eigen::Index start, Eigen::Index count);
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);
// Rows of `table` selected by `ids` (embedding lookup).
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<int>& ids);
template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> mean(const Tensor<T>& a);
// Column means over the rows: 1 x cols.
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& a);
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a);
template <typename T>
Tensor<T> log_softmax_rows(const Tensor<T>& a);
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));
// Mean next-token cross-entropy over rows whose mask is set. EmptyMask if none.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets, const std::vector<std::uint8_t>& mask);
// Pairwise cosine similarity between rows of a and rows of b. ZeroVector on a
// zero-norm row.
template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> relu(const Tensor<T>& a);
// tanh approximation.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a);
template <typename T>
Tensor<T> tanh(const Tensor<T>& a);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a);
// Mean binary cross-entropy of an n x 1 logit column against 0/1 targets.
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const std::vector<T>& targets);
template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b);
// sum(w (a - b)^2) / sum(w) for a weight matrix w of a's shape.
template <typename T>
Tensor<T> masked_mse(const Tensor<T>& a, const Tensor<T>& b, const Mat<T>& weights);

// Identity forward; backward multiplies the upstream gradient by -scale.
template <typename T>
Tensor<T> grad_reverse(const Tensor<T>& x, T scale);
// Forward value is `quantized`; backward passes the upstream gradient to z
// unchanged.
template <typename T>
Tensor<T> straight_through(const Tensor<T>& z, const Mat<T>& quantized);
// Forward copy with no gradient.
template <typename T>
Tensor<T> stop_gradient(const Tensor<T>& x);

// Multi-head scaled dot-product attention over row-stacked sequences.
// q, k, v are R x D; `segments` lists sequence lengths summing to R, and
// attention never crosses a segment. Heads split D evenly.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int n_heads, bool causal,
                    const std::vector<int>& segments);

// ---- optimization --------------------------------------------------------------

// base_lr * 0.5 * (1 + cos(pi * step / total)).
double cosine_lr(long step, long total_steps, double base_lr);

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Tensor<T>> params, AdamWConfig config);

  // One update at learning rate `lr`; parameters without a gradient are
  // treated as having a zero gradient.
  void step(double lr);
  void zero_grad();
  long step_count() const { return step_; }
  const std::vector<Tensor<T>>& params() const { return params_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<Mat<T>> m_;
  std::vector<Mat<T>> v_;
  AdamWConfig config_;
  long step_ = 0;
};

// ---- gradient checking ---------------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
  std::string worst;
};

// Central differences on every parameter coordinate, or on a seeded random
// subset of `subset` coordinates when the total exceeds `full_limit`.
// Relative error is |a - n| / max(|a|, |n|, 1e-8). `loss` must build a fresh
// graph on each call.
GradCheckResult finite_diff_check(const std::function<Tensor<double>()>& loss,
                                  const std::vector<Tensor<double>>& params, double epsilon = 1e-5,
                                  std::uint64_t seed = 1, int full_limit = 4096, int subset = 64);

}  // namespace neurotoken::diff
