#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "btn/rng.hpp"

namespace btn {

#if defined(BTN_REAL_FLOAT)
using real = float;
#else
using real = double;
#endif

class GradTape;

namespace detail {

inline long long numel_of(const std::vector<int>& shape) {
  long long n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

inline void check_shape(const std::vector<int>& shape) {
  for (int d : shape) {
    if (d < 1) throw std::invalid_argument("tensor dimension must be >= 1, got " + shape_string(shape));
  }
}

inline void check_finite(const std::vector<real>& v, const char* op) {
  for (real x : v) {
    if (!std::isfinite(x)) {
      throw std::runtime_error(std::string(op) + ": non-finite value produced");
    }
  }
}

}  // namespace detail

// Dense row-major tensor of reals. Immutable after construction; copies
// share storage. A tensor is either a constant or attached to exactly one
// GradTape node (requires_grad() == true).
class Tensor {
 public:
  Tensor() : shape_{}, data_(std::make_shared<std::vector<real>>()) {}

  Tensor(std::vector<int> shape, real fill = real(0))
      : shape_(std::move(shape)) {
    detail::check_shape(shape_);
    data_ = std::make_shared<std::vector<real>>(
        static_cast<std::size_t>(detail::numel_of(shape_)), fill);
    detail::check_finite(*data_, "Tensor");
  }

  Tensor(std::vector<int> shape, std::vector<real> values)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<real>>(std::move(values))) {
    detail::check_shape(shape_);
    if (detail::numel_of(shape_) != static_cast<long long>(data_->size())) {
      throw std::invalid_argument("tensor shape " + detail::shape_string(shape_) +
                                  " does not match value count " + std::to_string(data_->size()));
    }
    detail::check_finite(*data_, "Tensor");
  }

  static Tensor scalar(real v) { return Tensor({1}, std::vector<real>{v}); }
  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape), real(0)); }
  static Tensor ones(std::vector<int> shape) { return Tensor(std::move(shape), real(1)); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  long long size() const { return static_cast<long long>(data_->size()); }

  const std::vector<real>& values() const { return *data_; }
  std::shared_ptr<const std::vector<real>> storage() const { return data_; }

  real value() const {
    if (size() != 1) throw std::invalid_argument("value(): tensor is not scalar, shape " + detail::shape_string(shape_));
    return (*data_)[0];
  }

  real at(const std::vector<int>& idx) const {
    if (idx.size() != shape_.size()) throw std::invalid_argument("at(): index rank mismatch");
    long long flat = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0 || idx[i] >= shape_[i]) throw std::out_of_range("at(): index out of range");
      flat = flat * shape_[i] + idx[i];
    }
    return (*data_)[static_cast<std::size_t>(flat)];
  }

  bool requires_grad() const { return node_ >= 0; }
  GradTape* tape() const { return tape_; }
  int node() const { return node_; }

 private:
  friend class GradTape;
  std::vector<int> shape_;
  std::shared_ptr<const std::vector<real>> data_;
  GradTape* tape_ = nullptr;
  int node_ = -1;
};

// Reverse-mode tape. Records differentiable ops in execution order; the
// backward pass replays them strictly in reverse. Single-threaded: run
// concurrent forward passes on separate tapes.
class GradTape {
 public:
  using BackwardFn = std::function<void(GradTape&, const std::vector<real>& out_grad)>;

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  // Leaf node: gradients accumulate into it but nothing propagates further.
  Tensor watch(const Tensor& t) {
    Tensor out(t.shape(), t.values());
    return adopt(std::move(out), nullptr);
  }

  // Leaf node recorded in the parameter registry.
  Tensor parameter(const Tensor& t) {
    Tensor out = watch(t);
    params_.push_back(out.node());
    return out;
  }

  const std::vector<int>& parameter_nodes() const { return params_; }
  std::size_t node_count() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and visits nodes in exact reverse execution
  // order. Parameters never reached keep a zero gradient.
  void backward(const Tensor& loss) {
    if (loss.size() != 1) throw std::invalid_argument("backward(): loss must be scalar");
    if (loss.tape() != this || loss.node() < 0) throw std::invalid_argument("backward(): loss is not on this tape");
    grads_.assign(nodes_.size(), {});
    grad_ref(loss.node(), 1)[0] = real(1);
    for (int i = loss.node(); i >= 0; --i) {
      if (grads_[static_cast<std::size_t>(i)].empty()) continue;
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.back) n.back(*this, grads_[static_cast<std::size_t>(i)]);
    }
    ran_backward_ = true;
  }

  // Gradient of the last backward() wrt a tensor on this tape; zero tensor
  // if the node was never reached.
  Tensor grad(const Tensor& t) const {
    if (t.tape() != this || t.node() < 0) throw std::invalid_argument("grad(): tensor is not on this tape");
    if (!ran_backward_) throw std::logic_error("grad(): backward() has not run");
    const auto& g = grads_[static_cast<std::size_t>(t.node())];
    if (g.empty()) return Tensor::zeros(t.shape());
    return Tensor(t.shape(), g);
  }

  // --- plumbing for op implementations ---

  // Records a node for a freshly computed value and returns it attached.
  Tensor adopt(Tensor value, BackwardFn back) {
    value.tape_ = this;
    value.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{value.shape_, std::move(back)});
    return value;
  }

  // Zero-initialised gradient buffer for a node, allocated on first touch.
  std::vector<real>& grad_ref(int node, long long size) {
    auto& g = grads_[static_cast<std::size_t>(node)];
    if (g.empty()) g.assign(static_cast<std::size_t>(size), real(0));
    return g;
  }

 private:
  struct Node {
    std::vector<int> shape;
    BackwardFn back;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<real>> grads_;
  std::vector<int> params_;
  bool ran_backward_ = false;
};

namespace detail {

// All tape-attached operands of one op must share a tape.
inline GradTape* common_tape(std::initializer_list<const Tensor*> ts) {
  GradTape* g = nullptr;
  for (const Tensor* t : ts) {
    if (!t->requires_grad()) continue;
    if (g && g != t->tape()) throw std::invalid_argument("operands belong to different tapes");
    g = t->tape();
  }
  return g;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw std::invalid_argument("matmul: expects 2-D operands, got " +
                                detail::shape_string(a.shape()) + " and " + detail::shape_string(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) {
    throw std::invalid_argument("matmul: inner dimensions differ, " +
                                detail::shape_string(a.shape()) + " vs " + detail::shape_string(b.shape()));
  }
  std::vector<real> out(static_cast<std::size_t>(m) * n, real(0));
  const real* pa = a.values().data();
  const real* pb = b.values().data();
  for (int i = 0; i < m; ++i) {
    for (int kk = 0; kk < k; ++kk) {
      const real av = pa[i * k + kk];
      const real* brow = pb + kk * n;
      real* orow = out.data() + i * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  detail::check_finite(out, "matmul");
  Tensor result({m, n}, std::move(out));
  GradTape* g = detail::common_tape({&a, &b});
  if (!g) return result;
  auto sa = a.storage();
  auto sb = b.storage();
  const int an = a.node(), bn = b.node();
  return g->adopt(std::move(result), [sa, sb, an, bn, m, k, n](GradTape& t, const std::vector<real>& go) {
    if (an >= 0) {
      auto& ga = t.grad_ref(an, static_cast<long long>(m) * k);
      const real* pb = sb->data();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          const real gv = go[static_cast<std::size_t>(i) * n + j];
          for (int kk = 0; kk < k; ++kk) ga[static_cast<std::size_t>(i) * k + kk] += gv * pb[kk * n + j];
        }
    }
    if (bn >= 0) {
      auto& gb = t.grad_ref(bn, static_cast<long long>(k) * n);
      const real* pa = sa->data();
      for (int i = 0; i < m; ++i)
        for (int kk = 0; kk < k; ++kk) {
          const real av = pa[i * k + kk];
          for (int j = 0; j < n; ++j) gb[static_cast<std::size_t>(kk) * n + j] += av * go[static_cast<std::size_t>(i) * n + j];
        }
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose: expects 2-D operand");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<real> out(a.values().size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j) * m + i] = a.values()[static_cast<std::size_t>(i) * n + j];
  Tensor result({n, m}, std::move(out));
  GradTape* g = detail::common_tape({&a});
  if (!g) return result;
  const int an = a.node();
  return g->adopt(std::move(result), [an, m, n](GradTape& t, const std::vector<real>& go) {
    auto& ga = t.grad_ref(an, static_cast<long long>(m) * n);
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < m; ++i) ga[static_cast<std::size_t>(i) * n + j] += go[static_cast<std::size_t>(j) * m + i];
  });
}

// [B,m,n] -> [B,n,m], transposing each batch slice.
inline Tensor transpose_batch(const Tensor& a) {
  if (a.rank() != 3) throw std::invalid_argument("transpose_batch: expects 3-D operand");
  const int b = a.dim(0), m = a.dim(1), n = a.dim(2);
  std::vector<real> out(a.values().size());
  const real* px = a.values().data();
  for (int bb = 0; bb < b; ++bb) {
    const long long off = static_cast<long long>(bb) * m * n;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(off + static_cast<long long>(j) * m + i)] = px[off + static_cast<long long>(i) * n + j];
  }
  Tensor result({b, n, m}, std::move(out));
  GradTape* g = detail::common_tape({&a});
  if (!g) return result;
  const int an = a.node();
  return g->adopt(std::move(result), [an, b, m, n](GradTape& t, const std::vector<real>& go) {
    auto& ga = t.grad_ref(an, static_cast<long long>(b) * m * n);
    for (int bb = 0; bb < b; ++bb) {
      const long long off = static_cast<long long>(bb) * m * n;
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < m; ++i) ga[static_cast<std::size_t>(off + static_cast<long long>(i) * n + j)] += go[static_cast<std::size_t>(off + static_cast<long long>(j) * m + i)];
    }
  });
}

inline Tensor reshape(const Tensor& a, std::vector<int> new_shape) {
  detail::check_shape(new_shape);
  if (detail::numel_of(new_shape) != a.size()) {
    throw std::invalid_argument("reshape: element count mismatch, " + detail::shape_string(a.shape()) +
                                " -> " + detail::shape_string(new_shape));
  }
  Tensor result(new_shape, a.values());
  GradTape* g = detail::common_tape({&a});
  if (!g) return result;
  const int an = a.node();
  const long long sz = a.size();
  return g->adopt(std::move(result), [an, sz](GradTape& t, const std::vector<real>& go) {
    auto& ga = t.grad_ref(an, sz);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
  });
}

inline Tensor flatten(const Tensor& a) {
  return reshape(a, {static_cast<int>(a.size())});
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

// Shared scaffolding for y_i = f(x_i) with dy_i/dx_i = df(x_i, y_i).
template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& a, const char* name, Fwd fwd, Bwd dfdx) {
  std::vector<real> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.values()[i]);
  check_finite(out, name);
  Tensor result(a.shape(), std::move(out));
  GradTape* g = common_tape({&a});
  if (!g) return result;
  auto sa = a.storage();
  const int an = a.node();
  const long long sz = a.size();
  return g->adopt(std::move(result), [sa, an, sz, dfdx](GradTape& t, const std::vector<real>& go) {
    auto& ga = t.grad_ref(an, sz);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * dfdx((*sa)[i]);
  });
}

}  // namespace detail

inline Tensor relu(const Tensor& a) {
  return detail::unary_op(a, "relu",
                          [](real x) { return x > real(0) ? x : real(0); },
                          [](real x) { return x > real(0) ? real(1) : real(0); });
}

// sign(x) * sqrt(|x|); derivative at 0 is taken as 0.
inline Tensor signed_sqrt(const Tensor& a) {
  return detail::unary_op(a, "signed_sqrt",
                          [](real x) { return x >= real(0) ? std::sqrt(x) : -std::sqrt(-x); },
                          [](real x) { return x == real(0) ? real(0) : real(0.5) / std::sqrt(std::abs(x)); });
}

inline Tensor square(const Tensor& a) {
  return detail::unary_op(a, "square",
                          [](real x) { return x * x; },
                          [](real x) { return real(2) * x; });
}

// log(max(x, floor)); gradient is 0 in the clamped region.
inline Tensor log_clamped(const Tensor& a, real floor = real(1e-12)) {
  if (floor <= real(0)) throw std::invalid_argument("log_clamped: floor must be > 0");
  return detail::unary_op(a, "log_clamped",
                          [floor](real x) { return std::log(x > floor ? x : floor); },
                          [floor](real x) { return x > floor ? real(1) / x : real(0); });
}

inline Tensor scale(const Tensor& a, real c) {
  if (!std::isfinite(c)) throw std::invalid_argument("scale: non-finite factor");
  return detail::unary_op(a, "scale",
                          [c](real x) { return c * x; },
                          [c](real) { return c; });
}

inline Tensor add_scalar(const Tensor& a, real c) {
  if (!std::isfinite(c)) throw std::invalid_argument("add_scalar: non-finite addend");
  return detail::unary_op(a, "add_scalar",
                          [c](real x) { return x + c; },
                          [](real) { return real(1); });
}

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch, " +
                                shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<real> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  detail::check_finite(out, "add");
  Tensor result(a.shape(), std::move(out));
  GradTape* g = detail::common_tape({&a, &b});
  if (!g) return result;
  const int an = a.node(), bn = b.node();
  const long long sz = a.size();
  return g->adopt(std::move(result), [an, bn, sz](GradTape& t, const std::vector<real>& go) {
    if (an >= 0) {
      auto& ga = t.grad_ref(an, sz);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    }
    if (bn >= 0) {
      auto& gb = t.grad_ref(bn, sz);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<real> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  detail::check_finite(out, "sub");
  Tensor result(a.shape(), std::move(out));
  GradTape* g = detail::common_tape({&a, &b});
  if (!g) return result;
  const int an = a.node(), bn = b.node();
  const long long sz = a.size();
  return g->adopt(std::move(result), [an, bn, sz](GradTape& t, const std::vector<real>& go) {
    if (an >= 0) {
      auto& ga = t.grad_ref(an, sz);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    }
    if (bn >= 0) {
      auto& gb = t.grad_ref(bn, sz);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<real> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  detail::check_finite(out, "mul");
  Tensor result(a.shape(), std::move(out));
  GradTape* g = detail::common_tape({&a, &b});
  if (!g) return result;
  auto sa = a.storage();
  auto sb = b.storage();
  const int an = a.node(), bn = b.node();
  const long long sz = a.size();
  return g->adopt(std::move(result), [sa, sb, an, bn, sz](GradTape& t, const std::vector<real>& go) {
    if (an >= 0) {
      auto& ga = t.grad_ref(an, sz);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * (*sb)[i];
    }
    if (bn >= 0) {
      auto& gb = t.grad_ref(bn, sz);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * (*sa)[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
  real s = 0;
  for (real x : a.values()) s += x;
  if (!std::isfinite(s)) throw std::runtime_error("sum: non-finite value produced");
  Tensor result = Tensor::scalar(s);
  GradTape* g = detail::common_tape({&a});
  if (!g) return result;
  const int an = a.node();
  const long long sz = a.size();
  return g->adopt(std::move(result), [an, sz](GradTape& t, const std::vector<real>& go) {
    auto& ga = t.grad_ref(an, sz);
    for (auto& v : ga) v += go[0];
  });
}

inline Tensor mean(const Tensor& a) {
  return scale(sum(a), real(1) / static_cast<real>(a.size()));
}

// Sum a 2-D tensor along one axis: axis 0 -> [cols], axis 1 -> [rows].
inline Tensor sum_axis(const Tensor& a, int axis) {
  if (a.rank() != 2) throw std::invalid_argument("sum_axis: expects 2-D operand");
  if (axis != 0 && axis != 1) throw std::invalid_argument("sum_axis: axis must be 0 or 1");
  const int m = a.dim(0), n = a.dim(1);
  const int out_len = axis == 0 ? n : m;
  std::vector<real> out(static_cast<std::size_t>(out_len), real(0));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(axis == 0 ? j : i)] += a.values()[static_cast<std::size_t>(i) * n + j];
  detail::check_finite(out, "sum_axis");
  Tensor result({out_len}, std::move(out));
  GradTape* g = detail::common_tape({&a});
  if (!g) return result;
  const int an = a.node();
  return g->adopt(std::move(result), [an, m, n, axis](GradTape& t, const std::vector<real>& go) {
    auto& ga = t.grad_ref(an, static_cast<long long>(m) * n);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) ga[static_cast<std::size_t>(i) * n + j] += go[static_cast<std::size_t>(axis == 0 ? j : i)];
  });
}

// ---------------------------------------------------------------------------
// Softmax / normalization
// ---------------------------------------------------------------------------

// Row softmax for 1-D (single row) and 2-D (axis must be 1) tensors.
inline Tensor softmax(const Tensor& a, int axis = -1) {
  int rows, cols;
  if (a.rank() == 1) {
    if (axis != -1 && axis != 0) throw std::invalid_argument("softmax: axis out of range for 1-D tensor");
    rows = 1;
    cols = a.dim(0);
  } else if (a.rank() == 2) {
    if (axis != -1 && axis != 1) throw std::invalid_argument("softmax: only row softmax (axis 1) is supported for 2-D");
    rows = a.dim(0);
    cols = a.dim(1);
  } else {
    throw std::invalid_argument("softmax: expects 1-D or 2-D operand");
  }
  std::vector<real> out(a.values().size());
  const real* px = a.values().data();
  for (int r = 0; r < rows; ++r) {
    const real* xr = px + static_cast<std::size_t>(r) * cols;
    real* yr = out.data() + static_cast<std::size_t>(r) * cols;
    real mx = xr[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
    real denom = 0;
    for (int c = 0; c < cols; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      denom += yr[c];
    }
    for (int c = 0; c < cols; ++c) yr[c] /= denom;
  }
  detail::check_finite(out, "softmax");
  auto sy = std::make_shared<std::vector<real>>(out);
  Tensor result(a.shape(), std::move(out));
  GradTape* g = detail::common_tape({&a});
  if (!g) return result;
  const int an = a.node();
  return g->adopt(std::move(result), [sy, an, rows, cols](GradTape& t, const std::vector<real>& go) {
    auto& ga = t.grad_ref(an, static_cast<long long>(rows) * cols);
    for (int r = 0; r < rows; ++r) {
      const real* yr = sy->data() + static_cast<std::size_t>(r) * cols;
      const real* gr = go.data() + static_cast<std::size_t>(r) * cols;
      real dot = 0;
      for (int c = 0; c < cols; ++c) dot += gr[c] * yr[c];
      for (int c = 0; c < cols; ++c) ga[static_cast<std::size_t>(r) * cols + c] += yr[c] * (gr[c] - dot);
    }
  });
}

// Row L2 normalization: y = x / max(||x||_2, eps), for 1-D tensors and the
// rows of 2-D tensors.
inline Tensor l2_normalize(const Tensor& a, int axis = -1, real eps = real(1e-12)) {
  if (eps <= real(0)) throw std::invalid_argument("l2_normalize: eps must be > 0");
  int rows, cols;
  if (a.rank() == 1) {
    if (axis != -1 && axis != 0) throw std::invalid_argument("l2_normalize: axis out of range for 1-D tensor");
    rows = 1;
    cols = a.dim(0);
  } else if (a.rank() == 2) {
    if (axis != -1 && axis != 1) throw std::invalid_argument("l2_normalize: only row normalization (axis 1) is supported for 2-D");
    rows = a.dim(0);
    cols = a.dim(1);
  } else {
    throw std::invalid_argument("l2_normalize: expects 1-D or 2-D operand");
  }
  std::vector<real> out(a.values().size());
  std::vector<real> norms(static_cast<std::size_t>(rows));
  const real* px = a.values().data();
  for (int r = 0; r < rows; ++r) {
    const real* xr = px + static_cast<std::size_t>(r) * cols;
    real ss = 0;
    for (int c = 0; c < cols; ++c) ss += xr[c] * xr[c];
    const real n = std::max(std::sqrt(ss), eps);
    norms[static_cast<std::size_t>(r)] = n;
    for (int c = 0; c < cols; ++c) out[static_cast<std::size_t>(r) * cols + c] = xr[c] / n;
  }
  detail::check_finite(out, "l2_normalize");
  auto sy = std::make_shared<std::vector<real>>(out);
  auto sn = std::make_shared<std::vector<real>>(std::move(norms));
  Tensor result(a.shape(), std::move(out));
  GradTape* g = detail::common_tape({&a});
  if (!g) return result;
  auto sa = a.storage();
  const int an = a.node();
  return g->adopt(std::move(result), [sy, sn, sa, an, rows, cols, eps](GradTape& t, const std::vector<real>& go) {
    auto& ga = t.grad_ref(an, static_cast<long long>(rows) * cols);
    for (int r = 0; r < rows; ++r) {
      const real n = (*sn)[static_cast<std::size_t>(r)];
      const real* yr = sy->data() + static_cast<std::size_t>(r) * cols;
      const real* xr = sa->data() + static_cast<std::size_t>(r) * cols;
      const real* gr = go.data() + static_cast<std::size_t>(r) * cols;
      real xx = 0;
      for (int c = 0; c < cols; ++c) xx += xr[c] * xr[c];
      if (std::sqrt(xx) > eps) {
        // d(x/||x||) = (I - y y^T) / ||x||
        real dot = 0;
        for (int c = 0; c < cols; ++c) dot += gr[c] * yr[c];
        for (int c = 0; c < cols; ++c) ga[static_cast<std::size_t>(r) * cols + c] += (gr[c] - yr[c] * dot) / n;
      } else {
        // below eps the map is x/eps, plain linear
        for (int c = 0; c < cols; ++c) ga[static_cast<std::size_t>(r) * cols + c] += gr[c] / eps;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

// Inverted dropout: kept activations are divided by the keep probability
// during training; inference mode is the identity.
inline Tensor dropout(const Tensor& a, real rate, bool training, Rng& rng) {
  if (rate < real(0) || rate >= real(1)) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (!training || rate == real(0)) {
    // still consumes no randomness, identity pass-through on the tape
    GradTape* g = detail::common_tape({&a});
    Tensor result(a.shape(), a.values());
    if (!g) return result;
    const int an = a.node();
    const long long sz = a.size();
    return g->adopt(std::move(result), [an, sz](GradTape& t, const std::vector<real>& go) {
      auto& ga = t.grad_ref(an, sz);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    });
  }
  const real keep = real(1) - rate;
  auto mask = std::make_shared<std::vector<real>>(a.values().size());
  std::vector<real> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const real m = rng.bernoulli(keep) ? real(1) / keep : real(0);
    (*mask)[i] = m;
    out[i] = a.values()[i] * m;
  }
  detail::check_finite(out, "dropout");
  Tensor result(a.shape(), std::move(out));
  GradTape* g = detail::common_tape({&a});
  if (!g) return result;
  const int an = a.node();
  const long long sz = a.size();
  return g->adopt(std::move(result), [mask, an, sz](GradTape& t, const std::vector<real>& go) {
    auto& ga = t.grad_ref(an, sz);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * (*mask)[i];
  });
}

// ---------------------------------------------------------------------------
// Convolution and pooling (3-D [c,h,w] single image or 4-D [B,c,h,w] batch)
// ---------------------------------------------------------------------------

namespace detail {

struct ConvDims {
  int batch, cin, h, w, cout, kh, kw, oh, ow;
  bool batched;
};

inline ConvDims conv_dims(const Tensor& x, const Tensor& k, int stride, int padding) {
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
  if (k.rank() != 4) throw std::invalid_argument("conv2d: kernels must be [c_out, c_in, kh, kw]");
  ConvDims d{};
  if (x.rank() == 3) {
    d.batched = false;
    d.batch = 1;
    d.cin = x.dim(0); d.h = x.dim(1); d.w = x.dim(2);
  } else if (x.rank() == 4) {
    d.batched = true;
    d.batch = x.dim(0);
    d.cin = x.dim(1); d.h = x.dim(2); d.w = x.dim(3);
  } else {
    throw std::invalid_argument("conv2d: input must be [c,h,w] or [B,c,h,w]");
  }
  d.cout = k.dim(0); d.kh = k.dim(2); d.kw = k.dim(3);
  if (k.dim(1) != d.cin) {
    throw std::invalid_argument("conv2d: kernel input channels " + std::to_string(k.dim(1)) +
                                " do not match input channels " + std::to_string(d.cin));
  }
  if (d.kh > d.h + 2 * padding || d.kw > d.w + 2 * padding) {
    throw std::invalid_argument("conv2d: kernel larger than padded input");
  }
  d.oh = (d.h + 2 * padding - d.kh) / stride + 1;
  d.ow = (d.w + 2 * padding - d.kw) / stride + 1;
  return d;
}

}  // namespace detail

inline Tensor conv2d(const Tensor& x, const Tensor& kernels, int stride = 1, int padding = 0) {
  const detail::ConvDims d = detail::conv_dims(x, kernels, stride, padding);
  std::vector<real> out(static_cast<std::size_t>(d.batch) * d.cout * d.oh * d.ow, real(0));
  const real* px = x.values().data();
  const real* pk = kernels.values().data();
  const long long x_img = static_cast<long long>(d.cin) * d.h * d.w;
  const long long o_img = static_cast<long long>(d.cout) * d.oh * d.ow;
  for (int b = 0; b < d.batch; ++b) {
    for (int co = 0; co < d.cout; ++co) {
      for (int oy = 0; oy < d.oh; ++oy) {
        for (int ox = 0; ox < d.ow; ++ox) {
          real acc = 0;
          const int iy0 = oy * stride - padding;
          const int ix0 = ox * stride - padding;
          for (int ci = 0; ci < d.cin; ++ci) {
            const real* xp = px + b * x_img + static_cast<long long>(ci) * d.h * d.w;
            const real* kp = pk + (static_cast<long long>(co) * d.cin + ci) * d.kh * d.kw;
            for (int ky = 0; ky < d.kh; ++ky) {
              const int iy = iy0 + ky;
              if (iy < 0 || iy >= d.h) continue;
              for (int kx = 0; kx < d.kw; ++kx) {
                const int ix = ix0 + kx;
                if (ix < 0 || ix >= d.w) continue;
                acc += xp[iy * d.w + ix] * kp[ky * d.kw + kx];
              }
            }
          }
          out[static_cast<std::size_t>(b * o_img + static_cast<long long>(co) * d.oh * d.ow + oy * d.ow + ox)] = acc;
        }
      }
    }
  }
  detail::check_finite(out, "conv2d");
  std::vector<int> oshape = d.batched ? std::vector<int>{d.batch, d.cout, d.oh, d.ow}
                                      : std::vector<int>{d.cout, d.oh, d.ow};
  Tensor result(std::move(oshape), std::move(out));
  GradTape* g = detail::common_tape({&x, &kernels});
  if (!g) return result;
  auto sx = x.storage();
  auto sk = kernels.storage();
  const int xn = x.node(), kn = kernels.node();
  return g->adopt(std::move(result), [sx, sk, xn, kn, d, stride, padding, x_img, o_img](GradTape& t, const std::vector<real>& go) {
    const real* pk = sk->data();
    const real* px = sx->data();
    real* gx = nullptr;
    real* gk = nullptr;
    if (xn >= 0) gx = t.grad_ref(xn, static_cast<long long>(d.batch) * x_img).data();
    if (kn >= 0) gk = t.grad_ref(kn, static_cast<long long>(d.cout) * d.cin * d.kh * d.kw).data();
    for (int b = 0; b < d.batch; ++b) {
      for (int co = 0; co < d.cout; ++co) {
        for (int oy = 0; oy < d.oh; ++oy) {
          for (int ox = 0; ox < d.ow; ++ox) {
            const real gv = go[static_cast<std::size_t>(b * o_img + static_cast<long long>(co) * d.oh * d.ow + oy * d.ow + ox)];
            if (gv == real(0)) continue;
            const int iy0 = oy * stride - padding;
            const int ix0 = ox * stride - padding;
            for (int ci = 0; ci < d.cin; ++ci) {
              const long long xoff = b * x_img + static_cast<long long>(ci) * d.h * d.w;
              const long long koff = (static_cast<long long>(co) * d.cin + ci) * d.kh * d.kw;
              for (int ky = 0; ky < d.kh; ++ky) {
                const int iy = iy0 + ky;
                if (iy < 0 || iy >= d.h) continue;
                for (int kx = 0; kx < d.kw; ++kx) {
                  const int ix = ix0 + kx;
                  if (ix < 0 || ix >= d.w) continue;
                  if (gx) gx[xoff + iy * d.w + ix] += gv * pk[koff + ky * d.kw + kx];
                  if (gk) gk[koff + ky * d.kw + kx] += gv * px[xoff + iy * d.w + ix];
                }
              }
            }
          }
        }
      }
    }
  });
}

// Max pooling with stride == kernel by default; remainder rows/cols are
// dropped. Ties route the gradient to the first (lowest-index) maximum.
inline Tensor max_pool2d(const Tensor& x, int kernel, int stride = 0) {
  if (kernel < 1) throw std::invalid_argument("max_pool2d: kernel must be >= 1");
  if (stride == 0) stride = kernel;
  if (stride < 1) throw std::invalid_argument("max_pool2d: stride must be >= 1");
  int batch = 1, c, h, w;
  bool batched = false;
  if (x.rank() == 3) {
    c = x.dim(0); h = x.dim(1); w = x.dim(2);
  } else if (x.rank() == 4) {
    batched = true;
    batch = x.dim(0); c = x.dim(1); h = x.dim(2); w = x.dim(3);
  } else {
    throw std::invalid_argument("max_pool2d: input must be [c,h,w] or [B,c,h,w]");
  }
  if (kernel > h || kernel > w) throw std::invalid_argument("max_pool2d: kernel larger than input");
  const int oh = (h - kernel) / stride + 1;
  const int ow = (w - kernel) / stride + 1;
  std::vector<real> out(static_cast<std::size_t>(batch) * c * oh * ow);
  auto argmax = std::make_shared<std::vector<long long>>(out.size());
  const real* px = x.values().data();
  std::size_t oi = 0;
  for (int b = 0; b < batch; ++b) {
    for (int ci = 0; ci < c; ++ci) {
      const real* plane = px + (static_cast<long long>(b) * c + ci) * h * w;
      const long long plane_off = (static_cast<long long>(b) * c + ci) * h * w;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox, ++oi) {
          real best = plane[(oy * stride) * w + ox * stride];
          long long best_idx = plane_off + (oy * stride) * w + ox * stride;
          for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
              const int iy = oy * stride + ky;
              const int ix = ox * stride + kx;
              const real v = plane[iy * w + ix];
              if (v > best) {
                best = v;
                best_idx = plane_off + iy * w + ix;
              }
            }
          }
          out[oi] = best;
          (*argmax)[oi] = best_idx;
        }
      }
    }
  }
  detail::check_finite(out, "max_pool2d");
  std::vector<int> oshape = batched ? std::vector<int>{batch, c, oh, ow} : std::vector<int>{c, oh, ow};
  Tensor result(std::move(oshape), std::move(out));
  GradTape* g = detail::common_tape({&x});
  if (!g) return result;
  const int xn = x.node();
  const long long sz = x.size();
  return g->adopt(std::move(result), [argmax, xn, sz](GradTape& t, const std::vector<real>& go) {
    auto& ga = t.grad_ref(xn, sz);
    for (std::size_t i = 0; i < go.size(); ++i) ga[static_cast<std::size_t>((*argmax)[i])] += go[i];
  });
}

// [c,h,w] -> [c] or [B,c,h,w] -> [B,c], averaging over spatial locations.
inline Tensor global_avg_pool(const Tensor& x) {
  int batch = 1, c, h, w;
  bool batched = false;
  if (x.rank() == 3) {
    c = x.dim(0); h = x.dim(1); w = x.dim(2);
  } else if (x.rank() == 4) {
    batched = true;
    batch = x.dim(0); c = x.dim(1); h = x.dim(2); w = x.dim(3);
  } else {
    throw std::invalid_argument("global_avg_pool: input must be [c,h,w] or [B,c,h,w]");
  }
  const real inv = real(1) / static_cast<real>(h * w);
  std::vector<real> out(static_cast<std::size_t>(batch) * c, real(0));
  const real* px = x.values().data();
  for (int b = 0; b < batch; ++b)
    for (int ci = 0; ci < c; ++ci) {
      const real* plane = px + (static_cast<long long>(b) * c + ci) * h * w;
      real s = 0;
      for (int i = 0; i < h * w; ++i) s += plane[i];
      out[static_cast<std::size_t>(b) * c + ci] = s * inv;
    }
  detail::check_finite(out, "global_avg_pool");
  std::vector<int> oshape = batched ? std::vector<int>{batch, c} : std::vector<int>{c};
  Tensor result(std::move(oshape), std::move(out));
  GradTape* g = detail::common_tape({&x});
  if (!g) return result;
  const int xn = x.node();
  const long long sz = x.size();
  const int hw = h * w;
  return g->adopt(std::move(result), [xn, sz, hw, inv](GradTape& t, const std::vector<real>& go) {
    auto& ga = t.grad_ref(xn, sz);
    for (std::size_t i = 0; i < go.size(); ++i) {
      const real gv = go[i] * inv;
      real* dst = ga.data() + i * static_cast<std::size_t>(hw);
      for (int j = 0; j < hw; ++j) dst[j] += gv;
    }
  });
}

// ---------------------------------------------------------------------------
// Bias and gather helpers
// ---------------------------------------------------------------------------

// x[B,n] + b[n] added to every row.
inline Tensor bias_add_rows(const Tensor& x, const Tensor& b) {
  if (x.rank() != 2 || b.rank() != 1 || b.dim(0) != x.dim(1)) {
    throw std::invalid_argument("bias_add_rows: expects x[B,n] and b[n]");
  }
  const int m = x.dim(0), n = x.dim(1);
  std::vector<real> out(x.values().size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] = x.values()[static_cast<std::size_t>(i) * n + j] + b.values()[static_cast<std::size_t>(j)];
  detail::check_finite(out, "bias_add_rows");
  Tensor result(x.shape(), std::move(out));
  GradTape* g = detail::common_tape({&x, &b});
  if (!g) return result;
  const int xn = x.node(), bn = b.node();
  return g->adopt(std::move(result), [xn, bn, m, n](GradTape& t, const std::vector<real>& go) {
    if (xn >= 0) {
      auto& gx = t.grad_ref(xn, static_cast<long long>(m) * n);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    }
    if (bn >= 0) {
      auto& gb = t.grad_ref(bn, n);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gb[static_cast<std::size_t>(j)] += go[static_cast<std::size_t>(i) * n + j];
    }
  });
}

// x[(B,)c,h,w] + b[c] broadcast over batch and spatial dims.
inline Tensor bias_add_channels(const Tensor& x, const Tensor& b) {
  int batch = 1, c, h, w;
  if (x.rank() == 3) {
    c = x.dim(0); h = x.dim(1); w = x.dim(2);
  } else if (x.rank() == 4) {
    batch = x.dim(0); c = x.dim(1); h = x.dim(2); w = x.dim(3);
  } else {
    throw std::invalid_argument("bias_add_channels: input must be [c,h,w] or [B,c,h,w]");
  }
  if (b.rank() != 1 || b.dim(0) != c) throw std::invalid_argument("bias_add_channels: bias must be [c]");
  std::vector<real> out(x.values().size());
  const int hw = h * w;
  for (int bb = 0; bb < batch; ++bb)
    for (int ci = 0; ci < c; ++ci) {
      const real bias = b.values()[static_cast<std::size_t>(ci)];
      const long long off = (static_cast<long long>(bb) * c + ci) * hw;
      for (int i = 0; i < hw; ++i) out[static_cast<std::size_t>(off + i)] = x.values()[static_cast<std::size_t>(off + i)] + bias;
    }
  detail::check_finite(out, "bias_add_channels");
  Tensor result(x.shape(), std::move(out));
  GradTape* g = detail::common_tape({&x, &b});
  if (!g) return result;
  const int xn = x.node(), bn = b.node();
  const long long sz = x.size();
  return g->adopt(std::move(result), [xn, bn, batch, c, hw, sz](GradTape& t, const std::vector<real>& go) {
    if (xn >= 0) {
      auto& gx = t.grad_ref(xn, sz);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    }
    if (bn >= 0) {
      auto& gb = t.grad_ref(bn, c);
      for (int bb = 0; bb < batch; ++bb)
        for (int ci = 0; ci < c; ++ci) {
          const long long off = (static_cast<long long>(bb) * c + ci) * hw;
          for (int i = 0; i < hw; ++i) gb[static_cast<std::size_t>(ci)] += go[static_cast<std::size_t>(off + i)];
        }
    }
  });
}

// Select rows of x[B,d] by index; gradient scatter-adds back.
inline Tensor gather_rows(const Tensor& x, const std::vector<int>& indices) {
  if (x.rank() != 2) throw std::invalid_argument("gather_rows: expects 2-D operand");
  const int b = x.dim(0), d = x.dim(1);
  for (int idx : indices) {
    if (idx < 0 || idx >= b) throw std::out_of_range("gather_rows: row index out of range");
  }
  if (indices.empty()) throw std::invalid_argument("gather_rows: empty index list");
  std::vector<real> out(indices.size() * static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < indices.size(); ++i)
    for (int j = 0; j < d; ++j) out[i * d + j] = x.values()[static_cast<std::size_t>(indices[i]) * d + j];
  Tensor result({static_cast<int>(indices.size()), d}, std::move(out));
  GradTape* g = detail::common_tape({&x});
  if (!g) return result;
  const int xn = x.node();
  auto idx = std::make_shared<std::vector<int>>(indices);
  return g->adopt(std::move(result), [xn, idx, b, d](GradTape& t, const std::vector<real>& go) {
    auto& gx = t.grad_ref(xn, static_cast<long long>(b) * d);
    for (std::size_t i = 0; i < idx->size(); ++i)
      for (int j = 0; j < d; ++j) gx[static_cast<std::size_t>((*idx)[i]) * d + j] += go[i * d + j];
  });
}

// Per-row element pick: out[i] = x[i, labels[i]].
inline Tensor gather_labels(const Tensor& x, const std::vector<int>& labels) {
  if (x.rank() != 2) throw std::invalid_argument("gather_labels: expects 2-D operand");
  const int b = x.dim(0), k = x.dim(1);
  if (static_cast<int>(labels.size()) != b) throw std::invalid_argument("gather_labels: label count must equal row count");
  for (int l : labels) {
    if (l < 0 || l >= k) throw std::out_of_range("gather_labels: label out of range");
  }
  std::vector<real> out(static_cast<std::size_t>(b));
  for (int i = 0; i < b; ++i) out[static_cast<std::size_t>(i)] = x.values()[static_cast<std::size_t>(i) * k + labels[static_cast<std::size_t>(i)]];
  Tensor result({b}, std::move(out));
  GradTape* g = detail::common_tape({&x});
  if (!g) return result;
  const int xn = x.node();
  auto lab = std::make_shared<std::vector<int>>(labels);
  return g->adopt(std::move(result), [xn, lab, b, k](GradTape& t, const std::vector<real>& go) {
    auto& gx = t.grad_ref(xn, static_cast<long long>(b) * k);
    for (int i = 0; i < b; ++i) gx[static_cast<std::size_t>(i) * k + (*lab)[static_cast<std::size_t>(i)]] += go[static_cast<std::size_t>(i)];
  });
}

}  // namespace btn
