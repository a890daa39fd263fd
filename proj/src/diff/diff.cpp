#include "neurotoken/diff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <unordered_set>

#include "neurotoken/error.hpp"
#include "neurotoken/rng.hpp"

namespace neurotoken::diff {

namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
thread_local SurrogateSession<T>* g_session = nullptr;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
Tensor<T> make_op(Mat<T> value, std::vector<NodePtr<T>> parents, std::function<void(Node<T>&)> fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    const bool any = std::any_of(parents.begin(), parents.end(), [](const NodePtr<T>& p) { return p->requires_grad; });
    if (any) {
      node->requires_grad = true;
      node->parents = std::move(parents);
      node->backward_fn = std::move(fn);
    }
  }
  return Tensor<T>(std::move(node));
}

std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

template <typename T>
void same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::ShapeMismatch,
          std::string(op) + ": " + shape_str(a.rows(), a.cols()) + " vs " + shape_str(b.rows(), b.cols()));
}

template <typename T>
Mat<T> row_sums(const Mat<T>& m) {
  return m.rowwise().sum();
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------------

template <typename T>
Tensor<T> Tensor<T>::constant(Mat<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::parameter(Mat<T> value, std::string name) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->name = std::move(name);
  return Tensor<T>(std::move(node));
}

template <typename T>
Mat<T> Tensor<T>::grad() const {
  if (node_->has_grad) return node_->grad;
  return Mat<T>::Zero(rows(), cols());
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

template <typename T>
SurrogateSession<T>::SurrogateSession(Mode mode, std::vector<Mat<T>>* tape)
    : mode_(mode), tape_(tape), previous_(g_session<T>) {
  if (mode_ == Mode::Record) tape_->clear();
  g_session<T> = this;
}

template <typename T>
SurrogateSession<T>::~SurrogateSession() {
  g_session<T> = previous_;
}

template <typename T>
SurrogateSession<T>* SurrogateSession<T>::current() {
  return g_session<T>;
}

template <typename T>
const Mat<T>& SurrogateSession<T>::frozen(const Mat<T>& value) {
  if (mode_ == Mode::Record) {
    tape_->push_back(value);
    return tape_->back();
  }
  require(cursor_ < tape_->size(), ErrorKind::PreconditionViolation, "surrogate replay ran past its recording");
  return (*tape_)[cursor_++];
}

// ---- backward ----------------------------------------------------------------------

template <typename T>
void backward(const Tensor<T>& loss) {
  require(loss.rows() == 1 && loss.cols() == 1, ErrorKind::NonScalarLoss,
          "loss has shape " + shape_str(loss.rows(), loss.cols()));
  Node<T>* root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->accumulate(Mat<T>::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn && node->has_grad) node->backward_fn(*node);
  }
}

// ---- ops ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.cols() == b.rows(), ErrorKind::ShapeMismatch,
          "matmul: " + shape_str(a.rows(), a.cols()) + " * " + shape_str(b.rows(), b.cols()));
  Mat<T> value = a.value() * b.value();
  return make_op<T>(std::move(value), {a.shared(), b.shared()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.accumulate(self.grad * pb.value.transpose());
    if (pb.requires_grad) pb.accumulate(pa.value.transpose() * self.grad);
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require(x.cols() == w.rows(), ErrorKind::ShapeMismatch,
          "linear: " + shape_str(x.rows(), x.cols()) + " * " + shape_str(w.rows(), w.cols()));
  Mat<T> value = x.value() * w.value();
  std::vector<NodePtr<T>> parents = {x.shared(), w.shared()};
  if (b.defined()) {
    require(b.rows() == 1 && b.cols() == w.cols(), ErrorKind::ShapeMismatch, "linear: bias shape");
    value.rowwise() += b.value().row(0);
    parents.push_back(b.shared());
  }
  return make_op<T>(std::move(value), std::move(parents), [](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    if (px.requires_grad) px.accumulate(self.grad * pw.value.transpose());
    if (pw.requires_grad) pw.accumulate(px.value.transpose() * self.grad);
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      self.parents[2]->accumulate(self.grad.colwise().sum());
    }
  });
}

namespace {

template <typename T>
bool broadcast_row(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return false;
  require(b.rows() == 1 && b.cols() == a.cols(), ErrorKind::ShapeMismatch,
          std::string(op) + ": " + shape_str(a.rows(), a.cols()) + " vs " + shape_str(b.rows(), b.cols()));
  return true;
}

template <typename T>
Tensor<T> add_signed(const Tensor<T>& a, const Tensor<T>& b, T sign, const char* op) {
  const bool bcast = broadcast_row(a, b, op);
  Mat<T> value = a.value();
  if (bcast) {
    value.rowwise() += sign * b.value().row(0);
  } else {
    value += sign * b.value();
  }
  return make_op<T>(std::move(value), {a.shared(), b.shared()}, [bcast, sign](Node<T>& self) {
    self.parents[0]->accumulate(self.grad);
    auto& pb = *self.parents[1];
    if (!pb.requires_grad) return;
    if (bcast) {
      pb.accumulate(sign * Mat<T>(self.grad.colwise().sum()));
    } else {
      pb.accumulate(sign * self.grad);
    }
  });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return add_signed(a, b, T(1), "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return add_signed(a, b, T(-1), "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  same_shape(a, b, "mul");
  Mat<T> value = a.value().cwiseProduct(b.value());
  return make_op<T>(std::move(value), {a.shared(), b.shared()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.accumulate(self.grad.cwiseProduct(pb.value));
    if (pb.requires_grad) pb.accumulate(self.grad.cwiseProduct(pa.value));
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return make_op<T>(a.value() * s, {a.shared()}, [s](Node<T>& self) { self.parents[0]->accumulate(self.grad * s); });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  return make_op<T>(a.value().transpose(), {a.shared()},
                    [](Node<T>& self) { self.parents[0]->accumulate(self.grad.transpose()); });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), ErrorKind::ShapeMismatch,
          "slice_rows out of range");
  return make_op<T>(a.value().middleRows(start, count), {a.shared()}, [start, count](Node<T>& self) {
    auto& p = *self.parents[0];
    Mat<T> g = Mat<T>::Zero(p.value.rows(), p.value.cols());
    g.middleRows(start, count) = self.grad;
    p.accumulate(g);
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), ErrorKind::ShapeMismatch,
          "slice_cols out of range");
  return make_op<T>(a.value().middleCols(start, count), {a.shared()}, [start, count](Node<T>& self) {
    auto& p = *self.parents[0];
    Mat<T> g = Mat<T>::Zero(p.value.rows(), p.value.cols());
    g.middleCols(start, count) = self.grad;
    p.accumulate(g);
  });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), ErrorKind::ShapeMismatch, "concat_rows of nothing");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts[0].cols();
  std::vector<NodePtr<T>> parents;
  for (const auto& p : parts) {
    require(p.cols() == cols, ErrorKind::ShapeMismatch, "concat_rows: column counts differ");
    rows += p.rows();
    parents.push_back(p.shared());
  }
  Mat<T> value(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    value.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return make_op<T>(std::move(value), std::move(parents), [](Node<T>& self) {
    Eigen::Index off = 0;
    for (auto& p : self.parents) {
      const Eigen::Index r = p->value.rows();
      if (p->requires_grad) p->accumulate(self.grad.middleRows(off, r));
      off += r;
    }
  });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), ErrorKind::ShapeMismatch, "concat_cols of nothing");
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts[0].rows();
  std::vector<NodePtr<T>> parents;
  for (const auto& p : parts) {
    require(p.rows() == rows, ErrorKind::ShapeMismatch, "concat_cols: row counts differ");
    cols += p.cols();
    parents.push_back(p.shared());
  }
  Mat<T> value(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    value.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make_op<T>(std::move(value), std::move(parents), [](Node<T>& self) {
    Eigen::Index off = 0;
    for (auto& p : self.parents) {
      const Eigen::Index c = p->value.cols();
      if (p->requires_grad) p->accumulate(self.grad.middleCols(off, c));
      off += c;
    }
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<int>& ids) {
  Mat<T> value(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < table.rows(), ErrorKind::ShapeMismatch,
            "gather_rows: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(table.rows()));
    value.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  }
  return make_op<T>(std::move(value), {table.shared()}, [ids](Node<T>& self) {
    auto& p = *self.parents[0];
    Mat<T> g = Mat<T>::Zero(p.value.rows(), p.value.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) g.row(ids[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    p.accumulate(g);
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  Mat<T> value(1, 1);
  value(0, 0) = a.value().sum();
  return make_op<T>(std::move(value), {a.shared()}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    p.accumulate(Mat<T>::Constant(p.value.rows(), p.value.cols(), self.grad(0, 0)));
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  const auto n = static_cast<T>(a.value().size());
  require(n > 0, ErrorKind::ShapeMismatch, "mean of empty tensor");
  Mat<T> value(1, 1);
  value(0, 0) = a.value().sum() / n;
  return make_op<T>(std::move(value), {a.shared()}, [n](Node<T>& self) {
    auto& p = *self.parents[0];
    p.accumulate(Mat<T>::Constant(p.value.rows(), p.value.cols(), self.grad(0, 0) / n));
  });
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& a) {
  require(a.rows() > 0, ErrorKind::ShapeMismatch, "mean_rows of empty tensor");
  const auto n = static_cast<T>(a.rows());
  Mat<T> value = a.value().colwise().sum() / n;
  return make_op<T>(std::move(value), {a.shared()}, [n](Node<T>& self) {
    auto& p = *self.parents[0];
    Mat<T> g(p.value.rows(), p.value.cols());
    g.rowwise() = self.grad.row(0) / n;
    p.accumulate(g);
  });
}

namespace {

template <typename T>
Mat<T> softmax_values(const Mat<T>& x) {
  Mat<T> y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

template <typename T>
Mat<T> log_softmax_values(const Mat<T>& x) {
  Mat<T> y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T m = x.row(r).maxCoeff();
    const T lse = m + std::log((x.row(r).array() - m).exp().sum());
    y.row(r) = x.row(r).array() - lse;
  }
  return y;
}

}  // namespace

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  return make_op<T>(softmax_values(a.value()), {a.shared()}, [](Node<T>& self) {
    const Mat<T>& y = self.value;
    Mat<T> dot = row_sums<T>(self.grad.cwiseProduct(y));
    Mat<T> g = self.grad;
    g.colwise() -= dot.col(0);
    self.parents[0]->accumulate(g.cwiseProduct(y));
  });
}

template <typename T>
Tensor<T> log_softmax_rows(const Tensor<T>& a) {
  return make_op<T>(log_softmax_values(a.value()), {a.shared()}, [](Node<T>& self) {
    Mat<T> p = self.value.array().exp();
    Mat<T> total = row_sums<T>(self.grad);
    Mat<T> g = self.grad;
    for (Eigen::Index r = 0; r < g.rows(); ++r) g.row(r) -= total(r, 0) * p.row(r);
    self.parents[0]->accumulate(g);
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const Eigen::Index d = x.cols();
  require(gamma.rows() == 1 && gamma.cols() == d && beta.rows() == 1 && beta.cols() == d, ErrorKind::ShapeMismatch,
          "layer_norm: affine parameters must be 1x" + std::to_string(d));
  auto xhat = std::make_shared<Mat<T>>(x.rows(), d);
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T mu = x.value().row(r).mean();
    const T var = (x.value().row(r).array() - mu).square().mean();
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(r)] = is;
    xhat->row(r) = (x.value().row(r).array() - mu) * is;
  }
  Mat<T> value = xhat->array().rowwise() * gamma.value().row(0).array();
  value.rowwise() += beta.value().row(0);
  return make_op<T>(std::move(value), {x.shared(), gamma.shared(), beta.shared()},
                    [xhat, inv_std, d](Node<T>& self) {
                      auto& px = *self.parents[0];
                      auto& pg = *self.parents[1];
                      auto& pb = *self.parents[2];
                      if (pg.requires_grad) pg.accumulate(self.grad.cwiseProduct(*xhat).colwise().sum());
                      if (pb.requires_grad) pb.accumulate(self.grad.colwise().sum());
                      if (!px.requires_grad) return;
                      Mat<T> dxhat = self.grad.array().rowwise() * pg.value.row(0).array();
                      Mat<T> dx(dxhat.rows(), d);
                      for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                        const T m1 = dxhat.row(r).mean();
                        const T m2 = dxhat.row(r).dot(xhat->row(r)) / static_cast<T>(d);
                        dx.row(r) = (dxhat.row(r).array() - m1 - xhat->row(r).array() * m2) *
                                    (*inv_std)[static_cast<std::size_t>(r)];
                      }
                      px.accumulate(dx);
                    });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets,
                        const std::vector<std::uint8_t>& mask) {
  const auto rows = static_cast<std::size_t>(logits.rows());
  require(targets.size() == rows && mask.size() == rows, ErrorKind::ShapeMismatch,
          "cross_entropy: targets and mask must have one entry per row");
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    ++count;
    require(targets[r] >= 0 && targets[r] < logits.cols(), ErrorKind::ShapeMismatch,
            "cross_entropy: target " + std::to_string(targets[r]) + " out of range");
  }
  require(count > 0, ErrorKind::EmptyMask, "cross_entropy with no unmasked position");
  const T n = static_cast<T>(count);
  auto logp = std::make_shared<Mat<T>>(log_softmax_values(logits.value()));
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (mask[r]) total -= (*logp)(static_cast<Eigen::Index>(r), targets[r]);
  }
  Mat<T> value(1, 1);
  value(0, 0) = total / n;
  return make_op<T>(std::move(value), {logits.shared()}, [logp, targets, mask, n](Node<T>& self) {
    const T g = self.grad(0, 0) / n;
    Mat<T> d = Mat<T>::Zero(logp->rows(), logp->cols());
    for (std::size_t r = 0; r < mask.size(); ++r) {
      if (!mask[r]) continue;
      const auto ri = static_cast<Eigen::Index>(r);
      d.row(ri) = logp->row(ri).array().exp() * g;
      d(ri, targets[r]) -= g;
    }
    self.parents[0]->accumulate(d);
  });
}

template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.cols() == b.cols(), ErrorKind::ShapeMismatch, "cosine_similarity: widths differ");
  auto norms = [](const Mat<T>& m) {
    std::vector<T> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      out[static_cast<std::size_t>(r)] = m.row(r).norm();
      require(out[static_cast<std::size_t>(r)] > T(0), ErrorKind::ZeroVector, "cosine_similarity of a zero row");
    }
    return out;
  };
  auto na = std::make_shared<std::vector<T>>(norms(a.value()));
  auto nb = std::make_shared<std::vector<T>>(norms(b.value()));
  auto an = std::make_shared<Mat<T>>(a.value());
  auto bn = std::make_shared<Mat<T>>(b.value());
  for (Eigen::Index r = 0; r < an->rows(); ++r) an->row(r) /= (*na)[static_cast<std::size_t>(r)];
  for (Eigen::Index r = 0; r < bn->rows(); ++r) bn->row(r) /= (*nb)[static_cast<std::size_t>(r)];
  Mat<T> value = (*an) * bn->transpose();
  return make_op<T>(std::move(value), {a.shared(), b.shared()}, [na, nb, an, bn](Node<T>& self) {
    auto project = [](const Mat<T>& dunit, const Mat<T>& unit, const std::vector<T>& norm) {
      Mat<T> d(dunit.rows(), dunit.cols());
      for (Eigen::Index r = 0; r < d.rows(); ++r) {
        const T c = unit.row(r).dot(dunit.row(r));
        d.row(r) = (dunit.row(r) - c * unit.row(r)) / norm[static_cast<std::size_t>(r)];
      }
      return d;
    };
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.accumulate(project(self.grad * (*bn), *an, *na));
    if (pb.requires_grad) pb.accumulate(project(self.grad.transpose() * (*an), *bn, *nb));
  });
}

namespace {

template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& a, F f, D df) {
  Mat<T> value = a.value().unaryExpr(f);
  return make_op<T>(std::move(value), {a.shared()}, [df](Node<T>& self) {
    auto& p = *self.parents[0];
    Mat<T> d(p.value.rows(), p.value.cols());
    for (Eigen::Index i = 0; i < d.size(); ++i) d.data()[i] = df(p.value.data()[i], self.value.data()[i]);
    p.accumulate(self.grad.cwiseProduct(d));
  });
}

}  // namespace

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T c = static_cast<T>(0.7978845608028654);  // sqrt(2 / pi)
  constexpr T k = static_cast<T>(0.044715);
  return unary(
      a, [](T x) { return T(0.5) * x * (T(1) + std::tanh(c * (x + k * x * x * x))); },
      [](T x, T) {
        const T t = std::tanh(c * (x + k * x * x * x));
        return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * c * (T(1) + T(3) * k * x * x);
      });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return unary(
      a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary(
      a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const std::vector<T>& targets) {
  require(static_cast<std::size_t>(logits.value().size()) == targets.size() && !targets.empty(),
          ErrorKind::ShapeMismatch, "bce_with_logits: one target per logit");
  const T n = static_cast<T>(targets.size());
  T total = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const T x = logits.value().data()[i];
    total += std::max(x, T(0)) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  Mat<T> value(1, 1);
  value(0, 0) = total / n;
  return make_op<T>(std::move(value), {logits.shared()}, [targets, n](Node<T>& self) {
    auto& p = *self.parents[0];
    Mat<T> d(p.value.rows(), p.value.cols());
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const T x = p.value.data()[i];
      d.data()[i] = (T(1) / (T(1) + std::exp(-x)) - targets[i]) * self.grad(0, 0) / n;
    }
    p.accumulate(d);
  });
}

template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  same_shape(a, b, "mse");
  return masked_mse(a, b, Mat<T>(Mat<T>::Ones(a.rows(), a.cols())));
}

template <typename T>
Tensor<T> masked_mse(const Tensor<T>& a, const Tensor<T>& b, const Mat<T>& weights) {
  same_shape(a, b, "masked_mse");
  require(weights.rows() == a.rows() && weights.cols() == a.cols(), ErrorKind::ShapeMismatch,
          "masked_mse: weight shape");
  const T w = weights.sum();
  require(w > T(0), ErrorKind::EmptyMask, "masked_mse with zero total weight");
  auto diff = std::make_shared<Mat<T>>(a.value() - b.value());
  Mat<T> value(1, 1);
  value(0, 0) = diff->cwiseProduct(*diff).cwiseProduct(weights).sum() / w;
  return make_op<T>(std::move(value), {a.shared(), b.shared()}, [diff, weights, w](Node<T>& self) {
    Mat<T> g = diff->cwiseProduct(weights) * (T(2) * self.grad(0, 0) / w);
    self.parents[0]->accumulate(g);
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(-g);
  });
}

template <typename T>
Tensor<T> grad_reverse(const Tensor<T>& x, T s) {
  Mat<T> value = x.value();
  if (auto* session = SurrogateSession<T>::current()) {
    const Mat<T>& base = session->frozen(x.value());
    // Replay: equal to x at the recorded point with derivative -s.
    if (session->mode() == SurrogateSession<T>::Mode::Replay) value = (T(1) + s) * base - s * x.value();
  }
  return make_op<T>(std::move(value), {x.shared()}, [s](Node<T>& self) { self.parents[0]->accumulate(-s * self.grad); });
}

template <typename T>
Tensor<T> straight_through(const Tensor<T>& z, const Mat<T>& quantized) {
  require(quantized.rows() == z.rows() && quantized.cols() == z.cols(), ErrorKind::ShapeMismatch,
          "straight_through: quantized shape");
  Mat<T> value = quantized;
  if (auto* session = SurrogateSession<T>::current()) {
    const Mat<T>& offset = session->frozen(quantized - z.value());
    if (session->mode() == SurrogateSession<T>::Mode::Replay) value = z.value() + offset;
  }
  return make_op<T>(std::move(value), {z.shared()}, [](Node<T>& self) { self.parents[0]->accumulate(self.grad); });
}

template <typename T>
Tensor<T> stop_gradient(const Tensor<T>& x) {
  if (auto* session = SurrogateSession<T>::current()) return Tensor<T>::constant(session->frozen(x.value()));
  return Tensor<T>::constant(x.value());
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int n_heads, bool causal,
                    const std::vector<int>& segments) {
  same_shape(q, k, "attention");
  same_shape(q, v, "attention");
  const Eigen::Index d = q.cols();
  require(n_heads > 0 && d % n_heads == 0, ErrorKind::ShapeMismatch,
          "attention: width " + std::to_string(d) + " not divisible by " + std::to_string(n_heads) + " heads");
  require(std::accumulate(segments.begin(), segments.end(), Eigen::Index{0}) == q.rows(), ErrorKind::ShapeMismatch,
          "attention: segment lengths do not cover the rows");
  const Eigen::Index dh = d / n_heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));

  auto probs = std::make_shared<std::vector<Mat<T>>>();
  probs->reserve(segments.size() * static_cast<std::size_t>(n_heads));
  Mat<T> out(q.rows(), d);
  Eigen::Index off = 0;
  for (int len : segments) {
    for (int h = 0; h < n_heads; ++h) {
      const auto qh = q.value().block(off, h * dh, len, dh);
      const auto kh = k.value().block(off, h * dh, len, dh);
      const auto vh = v.value().block(off, h * dh, len, dh);
      Mat<T> s = (qh * kh.transpose()) * sc;
      for (Eigen::Index i = 0; i < len; ++i) {
        const Eigen::Index limit = causal ? i + 1 : len;
        const T m = s.row(i).head(limit).maxCoeff();
        s.row(i).head(limit) = (s.row(i).head(limit).array() - m).exp();
        s.row(i).head(limit) /= s.row(i).head(limit).sum();
        if (limit < len) s.row(i).tail(len - limit).setZero();
      }
      out.block(off, h * dh, len, dh) = s * vh;
      probs->push_back(std::move(s));
    }
    off += len;
  }

  return make_op<T>(std::move(out), {q.shared(), k.shared(), v.shared()},
                    [probs, segments, n_heads, dh, sc](Node<T>& self) {
                      auto& pq = *self.parents[0];
                      auto& pk = *self.parents[1];
                      auto& pv = *self.parents[2];
                      Mat<T> dq = Mat<T>::Zero(pq.value.rows(), pq.value.cols());
                      Mat<T> dk = Mat<T>::Zero(dq.rows(), dq.cols());
                      Mat<T> dv = Mat<T>::Zero(dq.rows(), dq.cols());
                      Eigen::Index off = 0;
                      std::size_t idx = 0;
                      for (int len : segments) {
                        for (int h = 0; h < n_heads; ++h, ++idx) {
                          const Mat<T>& p = (*probs)[idx];
                          const auto go = self.grad.block(off, h * dh, len, dh);
                          const auto qh = pq.value.block(off, h * dh, len, dh);
                          const auto kh = pk.value.block(off, h * dh, len, dh);
                          const auto vh = pv.value.block(off, h * dh, len, dh);
                          dv.block(off, h * dh, len, dh) = p.transpose() * go;
                          Mat<T> dp = go * vh.transpose();
                          Mat<T> dot = row_sums<T>(dp.cwiseProduct(p));
                          dp.colwise() -= dot.col(0);
                          Mat<T> ds = p.cwiseProduct(dp) * sc;
                          dq.block(off, h * dh, len, dh) = ds * kh;
                          dk.block(off, h * dh, len, dh) = ds.transpose() * qh;
                        }
                        off += len;
                      }
                      pq.accumulate(dq);
                      pk.accumulate(dk);
                      pv.accumulate(dv);
                    });
}

// ---- optimization ------------------------------------------------------------------

double cosine_lr(long step, long total_steps, double base_lr) {
  require(total_steps > 0 && step >= 0 && step <= total_steps, ErrorKind::PreconditionViolation,
          "cosine_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  return base_lr * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

template <typename T>
AdamW<T>::AdamW(std::vector<Tensor<T>> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.push_back(Mat<T>::Zero(p.rows(), p.cols()));
    v_.push_back(Mat<T>::Zero(p.rows(), p.cols()));
  }
}

template <typename T>
void AdamW<T>::step(double lr) {
  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  const T b1 = static_cast<T>(config_.beta1);
  const T b2 = static_cast<T>(config_.beta2);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    Mat<T>& value = p.mutable_value();
    if (p.has_grad()) {
      const Mat<T>& g = p.node()->grad;
      require(g.rows() == value.rows() && g.cols() == value.cols(), ErrorKind::ShapeMismatch,
              "adamw: gradient shape differs from parameter " + p.name());
      m_[i] = b1 * m_[i] + (T(1) - b1) * g;
      v_[i] = b2 * v_[i] + (T(1) - b2) * g.cwiseProduct(g);
    } else {
      m_[i] *= b1;
      v_[i] *= b2;
    }
    value *= static_cast<T>(1.0 - lr * config_.weight_decay);
    const auto mhat = m_[i].array() / static_cast<T>(bc1);
    const auto vhat = v_[i].array() / static_cast<T>(bc2);
    value.array() -= static_cast<T>(lr) * mhat / (vhat.sqrt() + static_cast<T>(config_.eps));
  }
}

template <typename T>
void AdamW<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

// ---- gradient checking -------------------------------------------------------------

GradCheckResult finite_diff_check(const std::function<Tensor<double>()>& loss,
                                  const std::vector<Tensor<double>>& params, double epsilon, std::uint64_t seed,
                                  int full_limit, int subset) {
  std::vector<Mat<double>> tape;
  for (auto p : params) p.zero_grad();
  {
    SurrogateSession<double> session(SurrogateSession<double>::Mode::Record, &tape);
    backward(loss());
  }
  std::vector<Mat<double>> analytic;
  for (const auto& p : params) analytic.push_back(p.grad());

  std::vector<std::pair<std::size_t, Eigen::Index>> coords;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (Eigen::Index k = 0; k < params[i].value().size(); ++k) coords.emplace_back(i, k);
  }
  if (static_cast<long>(coords.size()) > full_limit) {
    Rng rng(seed);
    rng.shuffle(coords);
    coords.resize(static_cast<std::size_t>(std::max(subset, 64)));
  }

  auto evaluate = [&] {
    NoGradGuard guard;
    SurrogateSession<double> session(SurrogateSession<double>::Mode::Replay, &tape);
    return loss().item();
  };

  GradCheckResult result;
  for (const auto& [i, k] : coords) {
    auto p = params[i];
    double& x = p.mutable_value().data()[k];
    const double original = x;
    x = original + epsilon;
    const double fp = evaluate();
    x = original - epsilon;
    const double fm = evaluate();
    x = original;
    const double numeric = (fp - fm) / (2.0 * epsilon);
    const double a = analytic[i].data()[k];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    ++result.checked;
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst = (p.name().empty() ? "param" + std::to_string(i) : p.name()) + "[" + std::to_string(k) + "]";
    }
  }
  return result;
}

// ---- instantiations ----------------------------------------------------------------

#define NEUROTOKEN_DIFF_INSTANTIATE(T)                                                                           \
  template class Tensor<T>;                                                                                      \
  template class SurrogateSession<T>;                                                                            \
  template class AdamW<T>;                                                                                       \
  template void backward<T>(const Tensor<T>&);                                                                   \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                              \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                                 \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                                 \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                                 \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                              \
  template Tensor<T> transpose<T>(const Tensor<T>&);                                                             \
  template Tensor<T> slice_rows<T>(const Tensor<T>&, Eigen::Index, Eigen::Index);                                \
  template Tensor<T> slice_cols<T>(const Tensor<T>&, Eigen::Index, Eigen::Index);                                \
  template Tensor<T> concat_rows<T>(const std::vector<Tensor<T>>&);                                              \
  template Tensor<T> concat_cols<T>(const std::vector<Tensor<T>>&);                                              \
  template Tensor<T> gather_rows<T>(const Tensor<T>&, const std::vector<int>&);                                  \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                                   \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                                  \
  template Tensor<T> mean_rows<T>(const Tensor<T>&);                                                             \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&);                                                          \
  template Tensor<T> log_softmax_rows<T>(const Tensor<T>&);                                                      \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                     \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&, const std::vector<int>&, const std::vector<std::uint8_t>&); \
  template Tensor<T> cosine_similarity<T>(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                                  \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                                  \
  template Tensor<T> tanh<T>(const Tensor<T>&);                                                                  \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                                               \
  template Tensor<T> bce_with_logits<T>(const Tensor<T>&, const std::vector<T>&);                                \
  template Tensor<T> mse<T>(const Tensor<T>&, const Tensor<T>&);                                                 \
  template Tensor<T> masked_mse<T>(const Tensor<T>&, const Tensor<T>&, const Mat<T>&);                           \
  template Tensor<T> grad_reverse<T>(const Tensor<T>&, T);                                                       \
  template Tensor<T> straight_through<T>(const Tensor<T>&, const Mat<T>&);                                       \
  template Tensor<T> stop_gradient<T>(const Tensor<T>&);                                                         \
  template Tensor<T> attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, bool,               \
                                  const std::vector<int>&);

NEUROTOKEN_DIFF_INSTANTIATE(float)
NEUROTOKEN_DIFF_INSTANTIATE(double)

#undef NEUROTOKEN_DIFF_INSTANTIATE

}  // namespace neurotoken::diff
