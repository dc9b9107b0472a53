#pragma once

// Dense row-major matrices with a reverse-mode tape. Only the operations the
// scoring graph and its losses need are provided. Every recorded result is
// checked for NaN/Inf.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nagl/error.hpp"

namespace nagl {

template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T(0)) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw ShapeError("Matrix: data length does not match " + shape_string());
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  T operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_string() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Matrix<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Matrix<U>(rows_, cols_, std::move(out));
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<T> data_;
};

namespace linalg {

// out = a * b
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: " + a.shape_string() + " * " + b.shape_string());
  Matrix<T> out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    T* o = out.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T aik = a(i, k);
      const T* br = b.row(k).data();
      for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

// out = a * b^T
template <typename T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt: " + a.shape_string() + " * (" + b.shape_string() + ")^T");
  Matrix<T> out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const T* ar = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const T* br = b.row(j).data();
      T acc = T(0);
      for (std::size_t k = 0; k < a.cols(); ++k) acc += ar[k] * br[k];
      out(i, j) = acc;
    }
  }
  return out;
}

// out = a^T * b
template <typename T>
Matrix<T> matmul_tn(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows()) throw ShapeError("matmul_tn: (" + a.shape_string() + ")^T * " + b.shape_string());
  Matrix<T> out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const T* ar = a.row(k).data();
    const T* br = b.row(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const T aki = ar[i];
      T* o = out.row(i).data();
      for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aki * br[j];
    }
  }
  return out;
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& a) {
  Matrix<T> out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  }
  return out;
}

template <typename T>
void add_inplace(Matrix<T>& dst, const Matrix<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace linalg

// Indices of the k = max(1, ceil(fraction * n)) largest entries, ordered by
// value descending then index ascending.
template <typename T>
std::vector<std::size_t> top_fraction_indices(std::span<const T> values, double fraction) {
  if (values.empty()) throw ShapeError("mean_top_fraction: empty input");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ShapeError("mean_top_fraction: fraction must be in (0, 1]");
  const double raw = std::ceil(fraction * static_cast<double>(values.size()) - 1e-9);
  const std::size_t k = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(raw, 1.0)), 1, values.size());
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (values[a] != values[b]) return values[a] > values[b];
                      return a < b;
                    });
  idx.resize(k);
  return idx;
}

template <typename T>
T mean_top_fraction_value(std::span<const T> values, double fraction) {
  const auto idx = top_fraction_indices(values, fraction);
  T acc = T(0);
  for (auto i : idx) acc += values[i];
  return acc / static_cast<T>(idx.size());
}

template <typename T>
class Tape;

// Handle to a node on a tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Matrix<T>& value() const { return tape_->value(id_); }
  const Matrix<T>& grad() const { return tape_->grad(id_); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  T scalar() const {
    if (value().size() != 1) throw ShapeError("Var::scalar: node is " + value().shape_string());
    return value()[0];
  }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records operations in construction order. backward() walks the list in
// reverse, so every node is visited once after all of its consumers.
template <typename T>
class Tape {
 public:
  // Gradient buffers of a node's parents during backward; nullptr for
  // parents that do not require a gradient.
  class GradSink {
   public:
    explicit GradSink(std::vector<Matrix<T>*> slots) : slots_(std::move(slots)) {}
    Matrix<T>* operator[](std::size_t parent) const { return slots_[parent]; }

   private:
    std::vector<Matrix<T>*> slots_;
  };

  using BackwardFn = std::function<void(const Matrix<T>& out_grad, const GradSink& parents)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Matrix<T> value, bool requires_grad = false) {
    check_finite(value, "leaf");
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.is_leaf = true;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  Var<T> constant(Matrix<T> value) { return leaf(std::move(value), false); }

  Var<T> record(Matrix<T> value, std::vector<std::size_t> parents, BackwardFn fn, const char* op) {
    check_finite(value, op);
    Node n;
    n.value = std::move(value);
    for (auto p : parents) n.requires_grad = n.requires_grad || nodes_.at(p).requires_grad;
    n.parents = std::move(parents);
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const Matrix<T>& value(std::size_t id) const { return nodes_.at(id).value; }

  // Accumulated gradient of a leaf (zero matrix if none has been computed).
  const Matrix<T>& grad(std::size_t id) const {
    auto& n = nodes_.at(id);
    if (n.grad.empty() && !n.value.empty()) n.grad = Matrix<T>(n.value.rows(), n.value.cols());
    return n.grad;
  }

  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  void zero_grad() {
    for (auto& n : nodes_) n.grad = Matrix<T>();
  }

  // Populates the gradients of every requires_grad leaf. Leaf gradients
  // accumulate across calls; intermediate buffers are per call.
  void backward(Var<T> loss) {
    if (&loss.tape() != this) throw ShapeError("backward: loss belongs to a different tape");
    const auto& lv = value(loss.id());
    if (lv.size() != 1) throw ShapeError("backward: loss must be scalar, got " + lv.shape_string());
    if (!nodes_[loss.id()].requires_grad) return;

    std::vector<Matrix<T>> grads(loss.id() + 1);
    grads[loss.id()] = Matrix<T>(1, 1, T(1));
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (grads[id].empty()) continue;
      if (n.backward) {
        std::vector<Matrix<T>*> slots;
        slots.reserve(n.parents.size());
        for (auto p : n.parents) {
          if (!nodes_[p].requires_grad) {
            slots.push_back(nullptr);
            continue;
          }
          if (grads[p].empty()) grads[p] = Matrix<T>(nodes_[p].value.rows(), nodes_[p].value.cols());
          slots.push_back(&grads[p]);
        }
        n.backward(grads[id], GradSink(std::move(slots)));
      }
      if (n.is_leaf && n.requires_grad) {
        if (n.grad.empty()) n.grad = Matrix<T>(n.value.rows(), n.value.cols());
        linalg::add_inplace(n.grad, grads[id]);
        check_finite(n.grad, "backward");
      }
      if (!n.is_leaf) grads[id] = Matrix<T>();
    }
  }

 private:
  struct Node {
    Matrix<T> value;
    mutable Matrix<T> grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
  };

  static void check_finite(const Matrix<T>& m, const char* op) {
    if (!m.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
  }

  std::vector<Node> nodes_;
};

namespace ad {

namespace detail {
template <typename T>
Tape<T>& same_tape(const Var<T>& a, const Var<T>& b) {
  if (&a.tape() != &b.tape()) throw ShapeError("operands live on different tapes");
  return a.tape();
}
}  // namespace detail

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  auto& tape = detail::same_tape(a, b);
  auto out = linalg::matmul(a.value(), b.value());
  return tape.record(std::move(out), {a.id(), b.id()},
                     [a, b](const Matrix<T>& g, const auto& p) {
                       if (p[0]) linalg::add_inplace(*p[0], linalg::matmul_nt(g, b.value()));
                       if (p[1]) linalg::add_inplace(*p[1], linalg::matmul_tn(a.value(), g));
                     },
                     "matmul");
}

// a * b^T
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  auto& tape = detail::same_tape(a, b);
  auto out = linalg::matmul_nt(a.value(), b.value());
  return tape.record(std::move(out), {a.id(), b.id()},
                     [a, b](const Matrix<T>& g, const auto& p) {
                       if (p[0]) linalg::add_inplace(*p[0], linalg::matmul(g, b.value()));
                       if (p[1]) linalg::add_inplace(*p[1], linalg::matmul_tn(g, a.value()));
                     },
                     "matmul_nt");
}

template <typename T>
Var<T> transpose(Var<T> a) {
  return a.tape().record(linalg::transpose(a.value()), {a.id()},
                         [](const Matrix<T>& g, const auto& p) {
                           if (p[0]) linalg::add_inplace(*p[0], linalg::transpose(g));
                         },
                         "transpose");
}

// Elementwise sum. b may match a's shape, be a 1 x cols row (broadcast over
// rows) or a 1 x 1 scalar.
template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  auto& tape = detail::same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  enum class Mode { same, row, scalar } mode;
  if (av.same_shape(bv)) {
    mode = Mode::same;
  } else if (bv.rows() == 1 && bv.cols() == av.cols()) {
    mode = Mode::row;
  } else if (bv.size() == 1) {
    mode = Mode::scalar;
  } else {
    throw ShapeError("add: " + av.shape_string() + " + " + bv.shape_string());
  }
  Matrix<T> out = av;
  for (std::size_t i = 0; i < av.rows(); ++i) {
    for (std::size_t j = 0; j < av.cols(); ++j) {
      out(i, j) += mode == Mode::same ? bv(i, j) : mode == Mode::row ? bv(0, j) : bv[0];
    }
  }
  return tape.record(std::move(out), {a.id(), b.id()},
                     [mode](const Matrix<T>& g, const auto& p) {
                       if (p[0]) linalg::add_inplace(*p[0], g);
                       if (!p[1]) return;
                       Matrix<T>& gb = *p[1];
                       for (std::size_t i = 0; i < g.rows(); ++i) {
                         for (std::size_t j = 0; j < g.cols(); ++j) {
                           if (mode == Mode::same) {
                             gb(i, j) += g(i, j);
                           } else if (mode == Mode::row) {
                             gb(0, j) += g(i, j);
                           } else {
                             gb[0] += g(i, j);
                           }
                         }
                       }
                     },
                     "add");
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  auto& tape = detail::same_tape(a, b);
  if (!a.value().same_shape(b.value())) {
    throw ShapeError("sub: " + a.value().shape_string() + " - " + b.value().shape_string());
  }
  Matrix<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return tape.record(std::move(out), {a.id(), b.id()},
                     [](const Matrix<T>& g, const auto& p) {
                       if (p[0]) linalg::add_inplace(*p[0], g);
                       if (p[1]) {
                         for (std::size_t i = 0; i < g.size(); ++i) (*p[1])[i] -= g[i];
                       }
                     },
                     "sub");
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  auto& tape = detail::same_tape(a, b);
  if (!a.value().same_shape(b.value())) {
    throw ShapeError("mul: " + a.value().shape_string() + " * " + b.value().shape_string());
  }
  Matrix<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return tape.record(std::move(out), {a.id(), b.id()},
                     [a, b](const Matrix<T>& g, const auto& p) {
                       if (p[0]) {
                         for (std::size_t i = 0; i < g.size(); ++i) (*p[0])[i] += g[i] * b.value()[i];
                       }
                       if (p[1]) {
                         for (std::size_t i = 0; i < g.size(); ++i) (*p[1])[i] += g[i] * a.value()[i];
                       }
                     },
                     "mul");
}

// Elementwise a / b; b must be nonzero.
template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  auto& tape = detail::same_tape(a, b);
  if (!a.value().same_shape(b.value())) {
    throw ShapeError("div: " + a.value().shape_string() + " / " + b.value().shape_string());
  }
  Matrix<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= b.value()[i];
  return tape.record(std::move(out), {a.id(), b.id()},
                     [a, b](const Matrix<T>& g, const auto& p) {
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const T bi = b.value()[i];
                         if (p[0]) (*p[0])[i] += g[i] / bi;
                         if (p[1]) (*p[1])[i] -= g[i] * a.value()[i] / (bi * bi);
                       }
                     },
                     "div");
}

template <typename T>
Var<T> scale(Var<T> a, T k) {
  Matrix<T> out = a.value();
  for (auto& v : out.data()) v *= k;
  return a.tape().record(std::move(out), {a.id()},
                         [k](const Matrix<T>& g, const auto& p) {
                           if (!p[0]) return;
                           for (std::size_t i = 0; i < g.size(); ++i) (*p[0])[i] += k * g[i];
                         },
                         "scale");
}

template <typename T>
Var<T> add_scalar(Var<T> a, T k) {
  Matrix<T> out = a.value();
  for (auto& v : out.data()) v += k;
  return a.tape().record(std::move(out), {a.id()},
                         [](const Matrix<T>& g, const auto& p) {
                           if (p[0]) linalg::add_inplace(*p[0], g);
                         },
                         "add_scalar");
}

// 1 - a
template <typename T>
Var<T> one_minus(Var<T> a) {
  return add_scalar(scale(a, T(-1)), T(1));
}

template <typename T>
Var<T> log(Var<T> a) {
  Matrix<T> out = a.value();
  for (auto& v : out.data()) v = std::log(v);
  return a.tape().record(std::move(out), {a.id()},
                         [a](const Matrix<T>& g, const auto& p) {
                           if (!p[0]) return;
                           for (std::size_t i = 0; i < g.size(); ++i) (*p[0])[i] += g[i] / a.value()[i];
                         },
                         "log");
}

// a^e for a > 0.
template <typename T>
Var<T> pow(Var<T> a, T e) {
  Matrix<T> out = a.value();
  for (auto& v : out.data()) v = std::pow(v, e);
  return a.tape().record(std::move(out), {a.id()},
                         [a, e](const Matrix<T>& g, const auto& p) {
                           if (!p[0] || e == T(0)) return;
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             (*p[0])[i] += g[i] * e * std::pow(a.value()[i], e - T(1));
                           }
                         },
                         "pow");
}

// Gradient passes only where lo <= a <= hi.
template <typename T>
Var<T> clamp(Var<T> a, T lo, T hi) {
  Matrix<T> out = a.value();
  for (auto& v : out.data()) v = std::clamp(v, lo, hi);
  return a.tape().record(std::move(out), {a.id()},
                         [a, lo, hi](const Matrix<T>& g, const auto& p) {
                           if (!p[0]) return;
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             const T v = a.value()[i];
                             if (v >= lo && v <= hi) (*p[0])[i] += g[i];
                           }
                         },
                         "clamp");
}

template <typename T>
Var<T> sum(Var<T> a) {
  T acc = T(0);
  for (T v : a.value().data()) acc += v;
  return a.tape().record(Matrix<T>(1, 1, acc), {a.id()},
                         [](const Matrix<T>& g, const auto& p) {
                           if (!p[0]) return;
                           for (auto& v : p[0]->data()) v += g[0];
                         },
                         "sum");
}

template <typename T>
Var<T> mean(Var<T> a) {
  return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

// Mean over columns: rows x cols -> rows x 1.
template <typename T>
Var<T> row_mean(Var<T> a) {
  const auto& av = a.value();
  Matrix<T> out(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    T acc = T(0);
    for (T v : av.row(i)) acc += v;
    out(i, 0) = acc / static_cast<T>(av.cols());
  }
  const T inv = T(1) / static_cast<T>(av.cols());
  return a.tape().record(std::move(out), {a.id()},
                         [inv](const Matrix<T>& g, const auto& p) {
                           if (!p[0]) return;
                           Matrix<T>& ga = *p[0];
                           for (std::size_t i = 0; i < ga.rows(); ++i) {
                             for (auto& v : ga.row(i)) v += g(i, 0) * inv;
                           }
                         },
                         "row_mean");
}

// Row-wise softmax of x + mask. mask (optional, a constant) is either
// x-shaped or a single row broadcast over all rows, with entries 0 or a
// large negative value. A row whose mask entries are all nonzero yields a
// uniform distribution and passes no gradient.
template <typename T>
Var<T> softmax_rows(Var<T> x, const Matrix<T>* mask = nullptr) {
  const auto& xv = x.value();
  if (mask && !(mask->cols() == xv.cols() && (mask->rows() == xv.rows() || mask->rows() == 1))) {
    throw ShapeError("softmax_rows: mask " + mask->shape_string() + " vs logits " + xv.shape_string());
  }
  Matrix<T> out(xv.rows(), xv.cols());
  std::vector<char> degenerate(xv.rows(), 0);
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    const std::size_t mr = mask && mask->rows() != 1 ? i : 0;
    if (mask) {
      bool all_masked = true;
      for (std::size_t j = 0; j < xv.cols(); ++j) all_masked = all_masked && (*mask)(mr, j) != T(0);
      if (all_masked) {
        degenerate[i] = 1;
        for (auto& v : out.row(i)) v = T(1) / static_cast<T>(xv.cols());
        continue;
      }
    }
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < xv.cols(); ++j) {
      const T z = xv(i, j) + (mask ? (*mask)(mr, j) : T(0));
      out(i, j) = z;
      mx = std::max(mx, z);
    }
    T total = T(0);
    for (auto& v : out.row(i)) {
      v = std::exp(v - mx);
      total += v;
    }
    for (auto& v : out.row(i)) v /= total;
  }
  Matrix<T> y = out;
  return x.tape().record(std::move(out), {x.id()},
                         [y = std::move(y), degenerate = std::move(degenerate)](const Matrix<T>& g, const auto& p) {
                           if (!p[0]) return;
                           Matrix<T>& gx = *p[0];
                           for (std::size_t i = 0; i < y.rows(); ++i) {
                             if (degenerate[i]) continue;
                             T dot = T(0);
                             for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
                             for (std::size_t j = 0; j < y.cols(); ++j) gx(i, j) += y(i, j) * (g(i, j) - dot);
                           }
                         },
                         "softmax_rows");
}

// Row-wise L2 normalization; zero rows stay zero and pass no gradient.
template <typename T>
Var<T> normalize_rows(Var<T> a) {
  const auto& av = a.value();
  Matrix<T> out(av.rows(), av.cols());
  std::vector<T> norms(av.rows(), T(0));
  for (std::size_t i = 0; i < av.rows(); ++i) {
    T sq = T(0);
    for (T v : av.row(i)) sq += v * v;
    norms[i] = std::sqrt(sq);
    if (norms[i] == T(0)) continue;
    for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) = av(i, j) / norms[i];
  }
  Matrix<T> y = out;
  return a.tape().record(std::move(out), {a.id()},
                         [y = std::move(y), norms = std::move(norms)](const Matrix<T>& g, const auto& p) {
                           if (!p[0]) return;
                           for (std::size_t i = 0; i < y.rows(); ++i) {
                             if (norms[i] == T(0)) continue;
                             T dot = T(0);
                             for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
                             for (std::size_t j = 0; j < y.cols(); ++j) {
                               (*p[0])(i, j) += (g(i, j) - y(i, j) * dot) / norms[i];
                             }
                           }
                         },
                         "normalize_rows");
}

// Mean of the k = max(1, ceil(fraction * n)) largest entries of a (viewed as
// a flat vector). Ties are broken by lowest index.
template <typename T>
Var<T> mean_top_fraction(Var<T> a, double fraction) {
  const auto& data = a.value().data();
  auto idx = top_fraction_indices(std::span<const T>(data), fraction);
  T acc = T(0);
  for (auto i : idx) acc += data[i];
  const T inv = T(1) / static_cast<T>(idx.size());
  Matrix<T> value(1, 1, acc / static_cast<T>(idx.size()));
  return a.tape().record(std::move(value), {a.id()},
                         [idx = std::move(idx), inv](const Matrix<T>& g, const auto& p) {
                           if (!p[0]) return;
                           for (auto i : idx) (*p[0])[i] += g[0] * inv;
                         },
                         "mean_top_fraction");
}

}  // namespace ad

}  // namespace nagl
