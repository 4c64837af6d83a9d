#pragma once

// Tape-based reverse-mode automatic differentiation over dense row-major
// arrays of doubles. A Tape records every primitive in creation order, so
// walking it backwards is a valid reverse topological order.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tsnvae::ad {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until a backward pass touches it

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d, bool trainable = false)
      : shape(std::move(s)), data(std::move(d)), requires_grad(trainable) {
    if (shape_size(shape) != data.size())
      throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
  }

  static Tensor zeros(Shape s, bool trainable = false) {
    const auto n = shape_size(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0), trainable);
  }
  static Tensor filled(Shape s, double v) {
    const auto n = shape_size(s);
    return Tensor(std::move(s), std::vector<double>(n, v));
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor row(std::vector<double> v) {
    const auto n = v.size();
    return Tensor({1, n}, std::move(v));
  }

  std::size_t size() const { return data.size(); }
  std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
  double item() const {
    if (data.size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape));
    return data[0];
  }
  void zero_grad() { grad.assign(data.size(), 0.0); }
};

class Tape;

// Lightweight handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor t) { return push(std::move(t), false, {}); }

  // Leaf bound to external storage. Gradients are accumulated into
  // `p.grad` by backward(); the tensor must outlive the tape.
  Var parameter(Tensor& p) {
    Node n;
    n.ref = &p;
    n.needs_grad = p.requires_grad;
    n.param = p.requires_grad ? &p : nullptr;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  Var push(Tensor value, bool needs_grad, Backward bw) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ref ? *n.ref : n.value;
  }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient buffer of a node, allocated (zeroed) on first access.
  // Parameter nodes write straight into the bound tensor's grad.
  std::vector<double>& grad(std::size_t id) {
    Node& n = nodes_[id];
    auto& g = n.param ? n.param->grad : n.grad;
    if (g.size() != value(id).size()) g.assign(value(id).size(), 0.0);
    return g;
  }
  const std::vector<double>& grad_or_empty(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.param ? n.param->grad : n.grad;
  }

  void backward(Var loss) {
    if (loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
    if (value(loss.id()).size() != 1)
      throw ShapeError("backward: loss must be scalar, got shape " + shape_str(value(loss.id()).shape));
    grad(loss.id())[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
  }

 private:
  struct Node {
    Tensor value;
    const Tensor* ref = nullptr;
    Tensor* param = nullptr;
    std::vector<double> grad;
    bool needs_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

inline Tape& same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape() || a.tape() == nullptr) throw std::invalid_argument("operands live on different tapes");
  return *a.tape();
}

inline void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline void require_2d(const char* op, const Var& a) {
  if (a.shape().size() != 2)
    throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(a.shape()));
}

// Elementwise unary op with derivative expressed through input x and output y.
template <class F, class DF>
Var unary(const Var& a, F f, DF df) {
  Tape& t = *a.tape();
  const Tensor& x = a.value();
  Tensor y = Tensor::zeros(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = f(x.data[i]);
  const auto ia = a.id();
  return t.push(std::move(y), t.needs_grad(ia), [ia, df](Tape& tp, std::size_t self) {
    const auto& gy = tp.grad_or_empty(self);
    const auto& xv = tp.value(ia).data;
    const auto& yv = tp.value(self).data;
    auto& gx = tp.grad(ia);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * df(xv[i], yv[i]);
  });
}

}  // namespace detail

// y = x W^T + b, with x [N, in], W [out, in], b [out].
inline Var affine(const Var& x, const Var& w, const Var& b) {
  Tape& t = detail::same_tape(x, w);
  detail::same_tape(x, b);
  detail::require_2d("affine", x);
  detail::require_2d("affine", w);
  const auto n = x.shape()[0], in = x.shape()[1], out = w.shape()[0];
  if (w.shape()[1] != in || b.size() != out)
    throw ShapeError("affine: x " + shape_str(x.shape()) + ", W " + shape_str(w.shape()) + ", b " +
                     shape_str(b.shape()) + " are incompatible");
  Tensor y = Tensor::zeros({n, out});
  {
    detail::MapC xm(x.value().data.data(), n, in);
    detail::MapC wm(w.value().data.data(), out, in);
    detail::Map ym(y.data.data(), n, out);
    ym.noalias() = xm * wm.transpose();
    Eigen::Map<const Eigen::RowVectorXd> bv(b.value().data.data(), out);
    ym.rowwise() += bv;
  }
  const auto ix = x.id(), iw = w.id(), ib = b.id();
  const bool ng = t.needs_grad(ix) || t.needs_grad(iw) || t.needs_grad(ib);
  return t.push(std::move(y), ng, [ix, iw, ib, n, in, out](Tape& tp, std::size_t self) {
    detail::MapC gy(tp.grad_or_empty(self).data(), n, out);
    if (tp.needs_grad(ix)) {
      detail::Map gx(tp.grad(ix).data(), n, in);
      gx.noalias() += gy * detail::MapC(tp.value(iw).data.data(), out, in);
    }
    if (tp.needs_grad(iw)) {
      detail::Map gw(tp.grad(iw).data(), out, in);
      gw.noalias() += gy.transpose() * detail::MapC(tp.value(ix).data.data(), n, in);
    }
    if (tp.needs_grad(ib)) {
      // Row-by-row accumulation: Eigen's column reduction peels by address,
      // which makes the summation order depend on allocation alignment.
      Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(out));
      for (std::size_t r = 0; r < n; ++r) acc += gy.row(static_cast<Eigen::Index>(r));
      Eigen::Map<Eigen::RowVectorXd>(tp.grad(ib).data(), static_cast<Eigen::Index>(out)) += acc;
    }
  });
}

inline Var leaky_relu(const Var& a, double slope = 0.2) {
  return detail::unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

namespace detail {

// Elementwise op whose forward is an Eigen array expression and whose
// derivative is a function of the output only.
template <class F, class DF>
Var unary_array(const Var& a, F f, DF dy) {
  Tape& t = *a.tape();
  const Tensor& x = a.value();
  Tensor y = Tensor::zeros(x.shape);
  const auto n = static_cast<Eigen::Index>(x.size());
  // Evaluate into an aligned temporary: with an unaligned destination Eigen
  // peels a scalar head whose length depends on the buffer address, and the
  // scalar and packet exp differ in the last bit.
  const Eigen::ArrayXd fy = f(Eigen::Map<const Eigen::ArrayXd>(x.data.data(), n));
  std::copy(fy.data(), fy.data() + n, y.data.begin());
  const auto ia = a.id();
  return t.push(std::move(y), t.needs_grad(ia), [ia, n, dy](Tape& tp, std::size_t self) {
    Eigen::Map<const Eigen::ArrayXd> gy(tp.grad_or_empty(self).data(), n), yv(tp.value(self).data.data(), n);
    const Eigen::ArrayXd g = gy * dy(yv);
    double* ga = tp.grad(ia).data();
    for (Eigen::Index i = 0; i < n; ++i) ga[i] += g[i];
  });
}

}  // namespace detail

// 1 / (1 + e^-x); saturates to exactly 0 for very negative x.
inline Var sigmoid(const Var& a) {
  return detail::unary_array(
      a, [](const auto& x) { return (1.0 + (-x).exp()).inverse(); }, [](const auto& y) { return y * (1.0 - y); });
}

inline Var exp(const Var& a) {
  return detail::unary_array(a, [](const auto& x) { return x.exp(); }, [](const auto& y) { return y; });
}

inline Var square(const Var& a) {
  return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var scale(const Var& a, double c) {
  return detail::unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Var add_scalar(const Var& a, double c) {
  return detail::unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

// Gradient passes only where the input lies strictly inside [lo, hi].
inline Var clamp(const Var& a, double lo, double hi) {
  return detail::unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

namespace detail {

template <class F, class DA, class DB>
Var binary(const char* op, const Var& a, const Var& b, F f, DA da, DB db) {
  Tape& t = same_tape(a, b);
  require_same_shape(op, a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor y = Tensor::zeros(av.shape);
  for (std::size_t i = 0; i < av.size(); ++i) y.data[i] = f(av.data[i], bv.data[i]);
  const auto ia = a.id(), ib = b.id();
  const bool ng = t.needs_grad(ia) || t.needs_grad(ib);
  return t.push(std::move(y), ng, [ia, ib, da, db](Tape& tp, std::size_t self) {
    const auto& gy = tp.grad_or_empty(self);
    const auto& x = tp.value(ia).data;
    const auto& z = tp.value(ib).data;
    if (tp.needs_grad(ia)) {
      auto& g = tp.grad(ia);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * da(x[i], z[i]);
    }
    if (tp.needs_grad(ib)) {
      auto& g = tp.grad(ib);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * db(x[i], z[i]);
    }
  });
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  return detail::binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Var sub(const Var& a, const Var& b) {
  return detail::binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Var mul(const Var& a, const Var& b) {
  return detail::binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

inline Var sum(const Var& a) {
  Tape& t = *a.tape();
  const auto& v = a.value().data;
  double s = 0.0;
  for (double x : v) s += x;
  const auto ia = a.id();
  return t.push(Tensor::scalar(s), t.needs_grad(ia), [ia](Tape& tp, std::size_t self) {
    const double g = tp.grad_or_empty(self)[0];
    for (auto& gx : tp.grad(ia)) gx += g;
  });
}

// sum((a - b)^2) as one node; avoids three full-size intermediates.
inline Var squared_distance(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  detail::require_same_shape("squared_distance", a, b);
  const auto& x = a.value().data;
  const auto& z = b.value().data;
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - z[i]) * (x[i] - z[i]);
  const auto ia = a.id(), ib = b.id();
  const bool ng = t.needs_grad(ia) || t.needs_grad(ib);
  return t.push(Tensor::scalar(s), ng, [ia, ib](Tape& tp, std::size_t self) {
    const double g = 2.0 * tp.grad_or_empty(self)[0];
    const auto& x = tp.value(ia).data;
    const auto& z = tp.value(ib).data;
    if (tp.needs_grad(ia)) {
      auto& gx = tp.grad(ia);
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g * (x[i] - z[i]);
    }
    if (tp.needs_grad(ib)) {
      auto& gz = tp.grad(ib);
      for (std::size_t i = 0; i < x.size(); ++i) gz[i] -= g * (x[i] - z[i]);
    }
  });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

inline Var reshape(const Var& a, Shape s) {
  Tape& t = *a.tape();
  if (shape_size(s) != a.size())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(s));
  Tensor y(std::move(s), a.value().data);
  const auto ia = a.id();
  return t.push(std::move(y), t.needs_grad(ia), [ia](Tape& tp, std::size_t self) {
    const auto& gy = tp.grad_or_empty(self);
    auto& gx = tp.grad(ia);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
}

// Non-overlapping k x k average pooling over [N, H, W, C] (channels last).
inline Var avg_pool2d(const Var& a, std::size_t k) {
  Tape& t = *a.tape();
  const auto& s = a.shape();
  if (s.size() != 4) throw ShapeError("avg_pool2d: expected [N,H,W,C], got " + shape_str(s));
  if (k == 0 || s[1] % k || s[2] % k)
    throw ShapeError("avg_pool2d: window " + std::to_string(k) + " does not tile " + shape_str(s));
  const std::size_t n = s[0], h = s[1], w = s[2], c = s[3], ho = h / k, wo = w / k;
  const double inv = 1.0 / static_cast<double>(k * k);
  Tensor y = Tensor::zeros({n, ho, wo, c});
  const auto& x = a.value().data;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        for (std::size_t ch = 0; ch < c; ++ch)
          y.data[((b * ho + i / k) * wo + j / k) * c + ch] += inv * x[((b * h + i) * w + j) * c + ch];
  const auto ia = a.id();
  return t.push(std::move(y), t.needs_grad(ia), [ia, n, h, w, c, k, ho, wo, inv](Tape& tp, std::size_t self) {
    const auto& gy = tp.grad_or_empty(self);
    auto& gx = tp.grad(ia);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
          for (std::size_t ch = 0; ch < c; ++ch)
            gx[((b * h + i) * w + j) * c + ch] += inv * gy[((b * ho + i / k) * wo + j / k) * c + ch];
  });
}

// Concatenates 2-D tensors along `axis` (0 = rows, 1 = columns).
inline Var concat(const std::vector<Var>& parts, int axis = 1) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  Tape& t = *parts.front().tape();
  for (const auto& p : parts) {
    detail::same_tape(parts.front(), p);
    detail::require_2d("concat", p);
  }
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  const std::size_t fixed = parts.front().shape()[axis == 0 ? 1 : 0];
  std::size_t total = 0;
  std::vector<std::size_t> ids, widths;
  bool ng = false;
  for (const auto& p : parts) {
    if (p.shape()[axis == 0 ? 1 : 0] != fixed)
      throw ShapeError("concat: operand " + shape_str(p.shape()) + " incompatible along axis " +
                       std::to_string(axis));
    widths.push_back(p.shape()[axis]);
    total += widths.back();
    ids.push_back(p.id());
    ng = ng || t.needs_grad(p.id());
  }
  Tensor y = axis == 0 ? Tensor::zeros({total, fixed}) : Tensor::zeros({fixed, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value().data;
    if (axis == 0) {
      std::copy(v.begin(), v.end(), y.data.begin() + static_cast<std::ptrdiff_t>(off * fixed));
    } else {
      for (std::size_t r = 0; r < fixed; ++r)
        for (std::size_t c = 0; c < widths[k]; ++c) y.data[r * total + off + c] = v[r * widths[k] + c];
    }
    off += widths[k];
  }
  return t.push(std::move(y), ng, [ids, widths, fixed, total, axis](Tape& tp, std::size_t self) {
    const auto& gy = tp.grad_or_empty(self);
    std::size_t o = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.needs_grad(ids[k])) {
        auto& g = tp.grad(ids[k]);
        if (axis == 0) {
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[o * fixed + i];
        } else {
          for (std::size_t r = 0; r < fixed; ++r)
            for (std::size_t c = 0; c < widths[k]; ++c) g[r * widths[k] + c] += gy[r * total + o + c];
        }
      }
      o += widths[k];
    }
  });
}

// Columns [start, start + len) of a 2-D tensor.
inline Var slice_cols(const Var& a, std::size_t start, std::size_t len) {
  Tape& t = *a.tape();
  detail::require_2d("slice_cols", a);
  const auto n = a.shape()[0], w = a.shape()[1];
  if (start + len > w) throw ShapeError("slice_cols: range exceeds " + shape_str(a.shape()));
  Tensor y = Tensor::zeros({n, len});
  const auto& x = a.value().data;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < len; ++c) y.data[r * len + c] = x[r * w + start + c];
  const auto ia = a.id();
  return t.push(std::move(y), t.needs_grad(ia), [ia, n, w, start, len](Tape& tp, std::size_t self) {
    const auto& gy = tp.grad_or_empty(self);
    auto& gx = tp.grad(ia);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < len; ++c) gx[r * w + start + c] += gy[r * len + c];
  });
}

// Selects rows of a 2-D tensor; repeated indices accumulate gradient.
inline Var gather_rows(const Var& a, std::vector<std::size_t> idx) {
  Tape& t = *a.tape();
  detail::require_2d("gather_rows", a);
  const auto n = a.shape()[0], w = a.shape()[1];
  for (auto i : idx)
    if (i >= n) throw ShapeError("gather_rows: index " + std::to_string(i) + " out of " + shape_str(a.shape()));
  Tensor y = Tensor::zeros({idx.size(), w});
  const auto& x = a.value().data;
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(idx[r] * w), w,
                y.data.begin() + static_cast<std::ptrdiff_t>(r * w));
  const auto ia = a.id();
  return t.push(std::move(y), t.needs_grad(ia), [ia, w, idx = std::move(idx)](Tape& tp, std::size_t self) {
    const auto& gy = tp.grad_or_empty(self);
    auto& gx = tp.grad(ia);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < w; ++c) gx[idx[r] * w + c] += gy[r * w + c];
  });
}

}  // namespace tsnvae::ad
