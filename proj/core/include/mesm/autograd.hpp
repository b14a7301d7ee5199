#pragma once

// Minimal reverse-mode automatic differentiation over dense 2-D matrices.
//
// Every value is a row-major matrix. A Var is a shared handle to a graph
// node; ops build new nodes whose backward closures push gradients into
// their parents. Parameters are leaf Vars created with requires_grad=true
// and are reused across graphs; their gradients accumulate until cleared.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace mesm::ad {

using Index = Eigen::Index;

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Disables graph recording in the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Matrix<T> value;
  Matrix<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward_fn;

  Matrix<T>& grad_ref() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
      grad = Matrix<T>::Zero(value.rows(), value.cols());
    }
    return grad;
  }
  bool has_grad() const { return grad.rows() == value.rows() && grad.cols() == value.cols(); }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}
  explicit Var(Matrix<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Var scalar(T v, bool requires_grad = false) {
    Matrix<T> m(1, 1);
    m(0, 0) = v;
    return Var(std::move(m), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Matrix<T>& value() const { return node_->value; }
  Matrix<T>& mutable_value() { return node_->value; }
  const Matrix<T>& grad() const { return node_->grad_ref(); }
  Matrix<T>& mutable_grad() { return node_->grad_ref(); }
  bool has_grad() const { return node_->has_grad(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  T item() const { return node_->value(0, 0); }
  void zero_grad() { node_->grad.resize(0, 0); }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

  /// A new leaf holding the same value, cut from the graph.
  Var detach() const { return Var(node_->value, false); }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <typename T, typename Backward>
Var<T> make_op(Matrix<T> value, std::vector<Var<T>> inputs, Backward&& backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool needs = false;
  if (grad_mode()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.shared());
    Node<T>* self = node.get();
    node->backward_fn = [self, bw = std::forward<Backward>(backward)]() { bw(self->grad); };
  }
  return Var<T>(std::move(node));
}

template <typename T>
void accumulate(const Var<T>& v, const Matrix<T>& g) {
  if (v.requires_grad()) v.node()->grad_ref() += g;
}

template <typename T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
  }
}

}  // namespace detail

/// Runs reverse accumulation from a 1x1 root.
template <typename T>
void backward(const Var<T>& root) {
  if (root.rows() != 1 || root.cols() != 1) throw std::invalid_argument("backward: root must be 1x1");
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->grad_ref().setConstant(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn();
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Matrix<T> out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  return detail::make_op<T>(std::move(out), {a, b}, [a, b](const Matrix<T>& g) {
    if (a.requires_grad()) a.node()->grad_ref().noalias() += g * b.value().transpose();
    if (b.requires_grad()) b.node()->grad_ref().noalias() += a.value().transpose() * g;
  });
}

/// a * b^T
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  Matrix<T> out(a.rows(), b.rows());
  out.noalias() = a.value() * b.value().transpose();
  return detail::make_op<T>(std::move(out), {a, b}, [a, b](const Matrix<T>& g) {
    if (a.requires_grad()) a.node()->grad_ref().noalias() += g * b.value();
    if (b.requires_grad()) b.node()->grad_ref().noalias() += g.transpose() * a.value();
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  Matrix<T> out = a.value().transpose();
  return detail::make_op<T>(std::move(out), {a}, [a](const Matrix<T>& g) {
    if (a.requires_grad()) a.node()->grad_ref() += g.transpose();
  });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "add");
  Matrix<T> out = a.value() + b.value();
  return detail::make_op<T>(std::move(out), {a, b}, [a, b](const Matrix<T>& g) {
    detail::accumulate(a, g);
    detail::accumulate(b, g);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "sub");
  Matrix<T> out = a.value() - b.value();
  return detail::make_op<T>(std::move(out), {a, b}, [a, b](const Matrix<T>& g) {
    detail::accumulate(a, g);
    if (b.requires_grad()) b.node()->grad_ref() -= g;
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "mul");
  Matrix<T> out = a.value().cwiseProduct(b.value());
  return detail::make_op<T>(std::move(out), {a, b}, [a, b](const Matrix<T>& g) {
    if (a.requires_grad()) a.node()->grad_ref() += g.cwiseProduct(b.value());
    if (b.requires_grad()) b.node()->grad_ref() += g.cwiseProduct(a.value());
  });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "div");
  Matrix<T> out = a.value().cwiseQuotient(b.value());
  return detail::make_op<T>(std::move(out), {a, b}, [a, b](const Matrix<T>& g) {
    if (a.requires_grad()) a.node()->grad_ref() += g.cwiseQuotient(b.value());
    if (b.requires_grad()) {
      b.node()->grad_ref().array() -=
          g.array() * a.value().array() / (b.value().array() * b.value().array());
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Matrix<T> out = a.value() * s;
  return detail::make_op<T>(std::move(out), {a}, [a, s](const Matrix<T>& g) {
    if (a.requires_grad()) a.node()->grad_ref() += g * s;
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Matrix<T> out = a.value().array() + s;
  return detail::make_op<T>(std::move(out), {a}, [a](const Matrix<T>& g) { detail::accumulate(a, g); });
}

/// x (n x c) + row (1 x c), broadcast over rows.
template <typename T>
Var<T> add_row(const Var<T>& x, const Var<T>& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) throw std::invalid_argument("add_row: bad broadcast shape");
  Matrix<T> out = x.value();
  out.rowwise() += row.value().row(0);
  return detail::make_op<T>(std::move(out), {x, row}, [x, row](const Matrix<T>& g) {
    detail::accumulate(x, g);
    if (row.requires_grad()) row.node()->grad_ref() += g.colwise().sum();
  });
}

/// Repeats a 1 x c row n times.
template <typename T>
Var<T> repeat_rows(const Var<T>& row, Index n) {
  if (row.rows() != 1) throw std::invalid_argument("repeat_rows: expects a single row");
  Matrix<T> out = row.value().replicate(n, 1);
  return detail::make_op<T>(std::move(out), {row}, [row](const Matrix<T>& g) {
    if (row.requires_grad()) row.node()->grad_ref() += g.colwise().sum();
  });
}

/// Elementwise unary op helper: f computes the value, df(x, y) the local derivative.
template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& a, F f, DF df) {
  Matrix<T> out = a.value().unaryExpr(f);
  auto node_out = detail::make_op<T>(std::move(out), {a}, [](const Matrix<T>&) {});
  if (node_out.requires_grad()) {
    Node<T>* self = node_out.node();
    self->backward_fn = [self, a, df]() {
      if (!a.requires_grad()) return;
      auto& ga = a.node()->grad_ref();
      const auto& x = a.value();
      const auto& y = self->value;
      const auto& g = self->grad;
      for (Index i = 0; i < x.rows(); ++i)
        for (Index j = 0; j < x.cols(); ++j) ga(i, j) += g(i, j) * df(x(i, j), y(i, j));
    };
  }
  return node_out;
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return unary(a, [](T x) { return x < T(0) ? T(0) : x; }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return unary(
      a,
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

/// log(1 + exp(x)), numerically stable.
template <typename T>
Var<T> softplus(const Var<T>& a) {
  return unary(
      a, [](T x) { return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](T x, T) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        T e = std::exp(x);
        return e / (T(1) + e);
      });
}

template <typename T>
Var<T> log(const Var<T>& a) {
  return unary(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Var<T> abs(const Var<T>& a) {
  return unary(a, [](T x) { return std::abs(x); },
               [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

/// Clamps into [lo, hi]; gradient passes only where the input is inside.
template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  return unary(a, [lo, hi](T x) { return std::min(std::max(x, lo), hi); },
               [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

template <typename T>
Var<T> maximum(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "maximum");
  Matrix<T> out = a.value().cwiseMax(b.value());
  return detail::make_op<T>(std::move(out), {a, b}, [a, b](const Matrix<T>& g) {
    const auto pick_a = (a.value().array() >= b.value().array()).template cast<T>();
    if (a.requires_grad()) a.node()->grad_ref().array() += g.array() * pick_a;
    if (b.requires_grad()) b.node()->grad_ref().array() += g.array() * (T(1) - pick_a);
  });
}

template <typename T>
Var<T> minimum(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "minimum");
  Matrix<T> out = a.value().cwiseMin(b.value());
  return detail::make_op<T>(std::move(out), {a, b}, [a, b](const Matrix<T>& g) {
    const auto pick_a = (a.value().array() <= b.value().array()).template cast<T>();
    if (a.requires_grad()) a.node()->grad_ref().array() += g.array() * pick_a;
    if (b.requires_grad()) b.node()->grad_ref().array() += g.array() * (T(1) - pick_a);
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  Matrix<T> out(1, 1);
  out(0, 0) = a.value().sum();
  return detail::make_op<T>(std::move(out), {a}, [a](const Matrix<T>& g) {
    if (a.requires_grad()) a.node()->grad_ref().array() += g(0, 0);
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  const T n = static_cast<T>(a.value().size());
  return scale(sum_all(a), T(1) / n);
}

/// Column-wise mean over rows: (n x c) -> (1 x c).
template <typename T>
Var<T> mean_rows(const Var<T>& a) {
  if (a.rows() == 0) throw std::invalid_argument("mean_rows: empty input");
  const T inv = T(1) / static_cast<T>(a.rows());
  Matrix<T> out = a.value().colwise().sum() * inv;
  return detail::make_op<T>(std::move(out), {a}, [a, inv](const Matrix<T>& g) {
    if (a.requires_grad()) a.node()->grad_ref().rowwise() += g.row(0) * inv;
  });
}

/// Row-wise sum: (n x c) -> (n x 1).
template <typename T>
Var<T> sum_cols(const Var<T>& a) {
  Matrix<T> out = a.value().rowwise().sum();
  return detail::make_op<T>(std::move(out), {a}, [a](const Matrix<T>& g) {
    if (a.requires_grad()) a.node()->grad_ref().colwise() += g.col(0);
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Var<T> slice_rows(const Var<T>& a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) throw std::out_of_range("slice_rows: out of range");
  Matrix<T> out = a.value().middleRows(begin, count);
  return detail::make_op<T>(std::move(out), {a}, [a, begin, count](const Matrix<T>& g) {
    if (a.requires_grad()) a.node()->grad_ref().middleRows(begin, count) += g;
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols()) throw std::out_of_range("slice_cols: out of range");
  Matrix<T> out = a.value().middleCols(begin, count);
  return detail::make_op<T>(std::move(out), {a}, [a, begin, count](const Matrix<T>& g) {
    if (a.requires_grad()) a.node()->grad_ref().middleCols(begin, count) += g;
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix<T> out(rows, cols);
  Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return detail::make_op<T>(std::move(out), parts, [parts](const Matrix<T>& g) {
    Index r = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) p.node()->grad_ref() += g.middleRows(r, p.rows());
      r += p.rows();
    }
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix<T> out(rows, cols);
  Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return detail::make_op<T>(std::move(out), parts, [parts](const Matrix<T>& g) {
    Index c = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) p.node()->grad_ref() += g.middleCols(c, p.cols());
      c += p.cols();
    }
  });
}

/// Gathers the listed rows (indices may repeat).
template <typename T>
Var<T> gather_rows(const Var<T>& a, const std::vector<Index>& rows) {
  Matrix<T> out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) throw std::out_of_range("gather_rows: index out of range");
    out.row(static_cast<Index>(i)) = a.value().row(rows[i]);
  }
  return detail::make_op<T>(std::move(out), {a}, [a, rows](const Matrix<T>& g) {
    if (!a.requires_grad()) return;
    auto& ga = a.node()->grad_ref();
    for (std::size_t i = 0; i < rows.size(); ++i) ga.row(rows[i]) += g.row(static_cast<Index>(i));
  });
}

/// Replaces the listed rows of `a` by the single row `replacement`.
template <typename T>
Var<T> replace_rows(const Var<T>& a, const std::vector<Index>& rows, const Var<T>& replacement) {
  if (replacement.rows() != 1 || replacement.cols() != a.cols())
    throw std::invalid_argument("replace_rows: replacement must be 1 x cols");
  std::vector<char> hit(static_cast<std::size_t>(a.rows()), 0);
  Matrix<T> out = a.value();
  for (Index r : rows) {
    if (r < 0 || r >= a.rows()) throw std::out_of_range("replace_rows: index out of range");
    hit[static_cast<std::size_t>(r)] = 1;
    out.row(r) = replacement.value().row(0);
  }
  return detail::make_op<T>(std::move(out), {a, replacement}, [a, replacement, hit](const Matrix<T>& g) {
    for (Index r = 0; r < g.rows(); ++r) {
      if (hit[static_cast<std::size_t>(r)]) {
        if (replacement.requires_grad()) replacement.node()->grad_ref().row(0) += g.row(r);
      } else if (a.requires_grad()) {
        a.node()->grad_ref().row(r) += g.row(r);
      }
    }
  });
}

/// out(i, 0) = a(i, index[i]).
template <typename T>
Var<T> pick(const Var<T>& a, const std::vector<Index>& index) {
  if (static_cast<Index>(index.size()) != a.rows()) throw std::invalid_argument("pick: one index per row");
  Matrix<T> out(a.rows(), 1);
  for (Index i = 0; i < a.rows(); ++i) {
    const Index j = index[static_cast<std::size_t>(i)];
    if (j < 0 || j >= a.cols()) throw std::out_of_range("pick: index out of range");
    out(i, 0) = a.value()(i, j);
  }
  return detail::make_op<T>(std::move(out), {a}, [a, index](const Matrix<T>& g) {
    if (!a.requires_grad()) return;
    auto& ga = a.node()->grad_ref();
    for (Index i = 0; i < g.rows(); ++i) ga(i, index[static_cast<std::size_t>(i)]) += g(i, 0);
  });
}

// ---------------------------------------------------------------------------
// Normalization and probability ops

template <typename T>
Var<T> softmax_rows(const Var<T>& a) {
  Matrix<T> out(a.rows(), a.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    const T m = a.value().row(i).maxCoeff();
    out.row(i) = (a.value().row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  auto res = detail::make_op<T>(std::move(out), {a}, [](const Matrix<T>&) {});
  if (res.requires_grad()) {
    Node<T>* self = res.node();
    res.node()->backward_fn = [self, a]() {
      if (!a.requires_grad()) return;
      const auto& y = self->value;
      const auto& g = self->grad;
      Eigen::Matrix<T, Eigen::Dynamic, 1> dot = (g.cwiseProduct(y)).rowwise().sum();
      a.node()->grad_ref().array() += y.array() * (g.colwise() - dot).array();
    };
  }
  return res;
}

template <typename T>
Var<T> log_softmax_rows(const Var<T>& a) {
  Matrix<T> out(a.rows(), a.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    const T m = a.value().row(i).maxCoeff();
    const T lse = m + std::log((a.value().row(i).array() - m).exp().sum());
    out.row(i) = a.value().row(i).array() - lse;
  }
  auto res = detail::make_op<T>(std::move(out), {a}, [](const Matrix<T>&) {});
  if (res.requires_grad()) {
    Node<T>* self = res.node();
    res.node()->backward_fn = [self, a]() {
      if (!a.requires_grad()) return;
      const auto& g = self->grad;
      Matrix<T> p = self->value.array().exp();
      Eigen::Matrix<T, Eigen::Dynamic, 1> gs = g.rowwise().sum();
      a.node()->grad_ref() += g - (p.array().colwise() * gs.array()).matrix();
    };
  }
  return res;
}

/// Row-wise log-sum-exp restricted to entries where mask(i, j) != 0: (n x c) -> (n x 1).
/// Rows with an empty mask yield -inf and receive no gradient.
template <typename T>
Var<T> logsumexp_rows(const Var<T>& a, const Eigen::Matrix<char, Eigen::Dynamic, Eigen::Dynamic>& mask) {
  if (mask.rows() != a.rows() || mask.cols() != a.cols()) throw std::invalid_argument("logsumexp_rows: mask shape");
  Matrix<T> out(a.rows(), 1);
  Matrix<T> weights = Matrix<T>::Zero(a.rows(), a.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    T m = -std::numeric_limits<T>::infinity();
    for (Index j = 0; j < a.cols(); ++j)
      if (mask(i, j)) m = std::max(m, a.value()(i, j));
    if (m == -std::numeric_limits<T>::infinity()) {
      out(i, 0) = m;
      continue;
    }
    T s = 0;
    for (Index j = 0; j < a.cols(); ++j)
      if (mask(i, j)) s += std::exp(a.value()(i, j) - m);
    out(i, 0) = m + std::log(s);
    for (Index j = 0; j < a.cols(); ++j)
      if (mask(i, j)) weights(i, j) = std::exp(a.value()(i, j) - out(i, 0));
  }
  return detail::make_op<T>(std::move(out), {a}, [a, weights](const Matrix<T>& g) {
    if (a.requires_grad()) a.node()->grad_ref().array() += weights.array().colwise() * g.col(0).array();
  });
}

/// Per-row layer normalization with affine gamma/beta (1 x c each).
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  const Index n = x.rows();
  const Index c = x.cols();
  Matrix<T> xhat(n, c);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(n);
  for (Index i = 0; i < n; ++i) {
    const T mu = x.value().row(i).mean();
    const T var = (x.value().row(i).array() - mu).square().mean();
    inv_std(i) = T(1) / std::sqrt(var + eps);
    xhat.row(i) = (x.value().row(i).array() - mu) * inv_std(i);
  }
  Matrix<T> out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  return detail::make_op<T>(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std](const Matrix<T>& g) {
    if (gamma.requires_grad()) gamma.node()->grad_ref() += g.cwiseProduct(xhat).colwise().sum();
    if (beta.requires_grad()) beta.node()->grad_ref() += g.colwise().sum();
    if (!x.requires_grad()) return;
    const T c = static_cast<T>(xhat.cols());
    Matrix<T> gx = g.array().rowwise() * gamma.value().row(0).array();
    auto& out_grad = x.node()->grad_ref();
    for (Index i = 0; i < gx.rows(); ++i) {
      const T mean_g = gx.row(i).sum() / c;
      const T mean_gx = gx.row(i).dot(xhat.row(i)) / c;
      out_grad.row(i).array() += inv_std(i) * (gx.row(i).array() - mean_g - xhat.row(i).array() * mean_gx);
    }
  });
}

/// Divides each row by its L2 norm (floored at eps).
template <typename T>
Var<T> normalize_rows(const Var<T>& x, T eps = T(1e-12)) {
  Matrix<T> out(x.rows(), x.cols());
  Eigen::Matrix<T, Eigen::Dynamic, 1> norms(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    norms(i) = std::max(x.value().row(i).norm(), eps);
    out.row(i) = x.value().row(i) / norms(i);
  }
  auto res = detail::make_op<T>(std::move(out), {x}, [](const Matrix<T>&) {});
  if (res.requires_grad()) {
    Node<T>* self = res.node();
    res.node()->backward_fn = [self, x, norms, eps]() {
      if (!x.requires_grad()) return;
      const auto& y = self->value;
      const auto& g = self->grad;
      auto& gx = x.node()->grad_ref();
      for (Index i = 0; i < y.rows(); ++i) {
        if (x.value().row(i).norm() < eps) {
          gx.row(i) += g.row(i) / norms(i);
        } else {
          gx.row(i) += (g.row(i) - y.row(i) * g.row(i).dot(y.row(i))) / norms(i);
        }
      }
    };
  }
  return res;
}

/// Inverted dropout. Identity when p == 0 or rng is null.
template <typename T>
Var<T> dropout(const Var<T>& x, T p, std::mt19937_64* rng) {
  if (p <= T(0) || rng == nullptr) return x;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Matrix<T> keep(x.rows(), x.cols());
  const T s = T(1) / (T(1) - p);
  for (Index i = 0; i < keep.size(); ++i) keep.data()[i] = unif(*rng) >= static_cast<double>(p) ? s : T(0);
  Matrix<T> out = x.value().cwiseProduct(keep);
  return detail::make_op<T>(std::move(out), {x}, [x, keep](const Matrix<T>& g) {
    if (x.requires_grad()) x.node()->grad_ref() += g.cwiseProduct(keep);
  });
}

/// Sinusoidal embedding of each column of x (n x k) into `dim_per_col` features,
/// concatenated: (n x k*dim_per_col). Frequencies follow the DETR convention.
template <typename T>
Var<T> sine_embed(const Var<T>& x, Index dim_per_col, T temperature = T(10000)) {
  if (dim_per_col % 2 != 0) throw std::invalid_argument("sine_embed: dim_per_col must be even");
  const Index n = x.rows();
  const Index k = x.cols();
  const T two_pi = T(2) * std::numbers::pi_v<T>;
  std::vector<T> freq(static_cast<std::size_t>(dim_per_col / 2));
  for (Index f = 0; f < dim_per_col / 2; ++f)
    freq[static_cast<std::size_t>(f)] =
        two_pi / std::pow(temperature, T(2 * f) / static_cast<T>(dim_per_col));
  Matrix<T> out(n, k * dim_per_col);
  for (Index i = 0; i < n; ++i)
    for (Index c = 0; c < k; ++c)
      for (Index f = 0; f < dim_per_col / 2; ++f) {
        const T a = x.value()(i, c) * freq[static_cast<std::size_t>(f)];
        out(i, c * dim_per_col + 2 * f) = std::sin(a);
        out(i, c * dim_per_col + 2 * f + 1) = std::cos(a);
      }
  return detail::make_op<T>(std::move(out), {x}, [x, freq, dim_per_col](const Matrix<T>& g) {
    if (!x.requires_grad()) return;
    auto& gx = x.node()->grad_ref();
    for (Index i = 0; i < x.rows(); ++i)
      for (Index c = 0; c < x.cols(); ++c)
        for (Index f = 0; f < dim_per_col / 2; ++f) {
          const T w = freq[static_cast<std::size_t>(f)];
          const T a = x.value()(i, c) * w;
          gx(i, c) += w * (g(i, c * dim_per_col + 2 * f) * std::cos(a) -
                           g(i, c * dim_per_col + 2 * f + 1) * std::sin(a));
        }
  });
}

// ---------------------------------------------------------------------------
// Attention

/// Attention probabilities of the last forward, one (Lq x Lvalid) matrix per head.
template <typename T>
struct AttentionTrace {
  std::vector<Matrix<T>> weights;
  std::vector<Index> valid_keys;
};

/// Multi-head scaled dot-product attention over already-projected inputs.
///
/// q: Lq x (H*d), k and v: Lk x (H*d). Keys whose mask entry is false are
/// excluded before the softmax, which is equivalent to a -inf logit, and
/// their rows of k and v are never read. At least one key must be valid.
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, Index heads, const std::vector<bool>* key_mask,
                 AttentionTrace<T>* trace = nullptr) {
  if (k.rows() != v.rows()) throw std::invalid_argument("attention: key/value length mismatch");
  if (q.cols() != k.cols() || k.cols() != v.cols()) throw std::invalid_argument("attention: width mismatch");
  if (heads <= 0 || q.cols() % heads != 0) throw std::invalid_argument("attention: width not divisible by heads");
  std::vector<Index> valid;
  valid.reserve(static_cast<std::size_t>(k.rows()));
  if (key_mask != nullptr) {
    if (static_cast<Index>(key_mask->size()) != k.rows()) throw std::invalid_argument("attention: mask length");
    for (Index j = 0; j < k.rows(); ++j)
      if ((*key_mask)[static_cast<std::size_t>(j)]) valid.push_back(j);
  } else {
    for (Index j = 0; j < k.rows(); ++j) valid.push_back(j);
  }
  if (valid.empty()) throw std::invalid_argument("attention: no valid key positions");

  const Index lq = q.rows();
  const Index nv = static_cast<Index>(valid.size());
  const Index d = q.cols() / heads;
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));

  Matrix<T> kv(nv, k.cols());
  Matrix<T> vv(nv, v.cols());
  for (Index j = 0; j < nv; ++j) {
    kv.row(j) = k.value().row(valid[static_cast<std::size_t>(j)]);
    vv.row(j) = v.value().row(valid[static_cast<std::size_t>(j)]);
  }

  std::vector<Matrix<T>> probs(static_cast<std::size_t>(heads));
  Matrix<T> out(lq, q.cols());
  for (Index h = 0; h < heads; ++h) {
    Matrix<T> logits(lq, nv);
    logits.noalias() = q.value().middleCols(h * d, d) * kv.middleCols(h * d, d).transpose();
    logits *= inv_sqrt_d;
    for (Index i = 0; i < lq; ++i) {
      const T m = logits.row(i).maxCoeff();
      logits.row(i) = (logits.row(i).array() - m).exp();
      logits.row(i) /= logits.row(i).sum();
    }
    out.middleCols(h * d, d).noalias() = logits * vv.middleCols(h * d, d);
    probs[static_cast<std::size_t>(h)] = std::move(logits);
  }
  if (trace != nullptr) {
    trace->weights = probs;
    trace->valid_keys = valid;
  }

  return detail::make_op<T>(
      std::move(out), {q, k, v},
      [q, k, v, heads, d, inv_sqrt_d, valid, probs = std::move(probs), kv = std::move(kv),
       vv = std::move(vv)](const Matrix<T>& g) {
        const Index nv = static_cast<Index>(valid.size());
        Matrix<T> gq, gk, gv;
        if (q.requires_grad()) gq = Matrix<T>::Zero(q.rows(), q.cols());
        if (k.requires_grad()) gk = Matrix<T>::Zero(nv, k.cols());
        if (v.requires_grad()) gv = Matrix<T>::Zero(nv, v.cols());
        for (Index h = 0; h < heads; ++h) {
          const Matrix<T>& p = probs[static_cast<std::size_t>(h)];
          const auto gh = g.middleCols(h * d, d);
          if (v.requires_grad()) gv.middleCols(h * d, d).noalias() += p.transpose() * gh;
          if (!q.requires_grad() && !k.requires_grad()) continue;
          Matrix<T> dp(p.rows(), p.cols());
          dp.noalias() = gh * vv.middleCols(h * d, d).transpose();
          Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = dp.cwiseProduct(p).rowwise().sum();
          Matrix<T> ds = p.array() * (dp.colwise() - rowdot).array();
          ds *= inv_sqrt_d;
          if (q.requires_grad()) gq.middleCols(h * d, d).noalias() += ds * kv.middleCols(h * d, d);
          if (k.requires_grad()) gk.middleCols(h * d, d).noalias() += ds.transpose() * q.value().middleCols(h * d, d);
        }
        if (q.requires_grad()) q.node()->grad_ref() += gq;
        if (k.requires_grad()) {
          auto& dst = k.node()->grad_ref();
          for (Index j = 0; j < nv; ++j) dst.row(valid[static_cast<std::size_t>(j)]) += gk.row(j);
        }
        if (v.requires_grad()) {
          auto& dst = v.node()->grad_ref();
          for (Index j = 0; j < nv; ++j) dst.row(valid[static_cast<std::size_t>(j)]) += gv.row(j);
        }
      });
}

// ---------------------------------------------------------------------------
// Operator sugar

template <typename T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) {
  return add(a, b);
}
template <typename T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) {
  return sub(a, b);
}
template <typename T>
Var<T> operator*(const Var<T>& a, T s) {
  return scale(a, s);
}

}  // namespace mesm::ad
