#pragma once

// Minimal define-by-run reverse-mode automatic differentiation over dense
// double-precision arrays. A graph is built by calling the op functions in
// this header; backward() walks it in reverse topological order.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ship/tensor.hpp"

namespace ship::ad {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // empty until materialized by backward()
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;
  const char* op = "leaf";

  bool has_grad() const { return !grad.data.empty(); }
  // Zero-filled gradient buffer of the value's shape, allocated on first use.
  Tensor& grad_buffer() {
    if (grad.data.empty()) grad = Tensor(value.shape, 0.0);
    return grad;
  }
  void zero_grad() { grad = Tensor(); }
};

inline Var leaf(Tensor value, bool requires_grad = true) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

inline Var constant(Tensor value) { return leaf(std::move(value), false); }

// A named trainable parameter. The shape is fixed at construction.
class ParamBlock {
 public:
  ParamBlock() = default;
  ParamBlock(std::string name, Tensor init) : name_(std::move(name)), node_(leaf(std::move(init), true)) {
    shape_ = node_->value.shape;
  }

  const std::string& name() const { return name_; }
  const Shape& shape() const { return shape_; }
  const Var& node() const { return node_; }
  Tensor& value() { return node_->value; }
  const Tensor& value() const { return node_->value; }
  std::size_t numel() const { return node_->value.size(); }
  void zero_grad() { node_->zero_grad(); }
  bool grad_is_zero() const {
    if (!node_->has_grad()) return true;
    return std::all_of(node_->grad.data.begin(), node_->grad.data.end(), [](double g) { return g == 0.0; });
  }

  // Deep copy with an independent node (gradient is not copied).
  ParamBlock clone() const { return ParamBlock(name_, node_->value); }

 private:
  std::string name_;
  Var node_;
  Shape shape_;
};

// Maps parameters to graph leaves for one forward pass. A trainable binder
// hands out the parameters' own nodes so gradients accumulate there; a frozen
// binder hands out constant copies so the graph never touches the parameters.
class Binder {
 public:
  explicit Binder(bool trainable) : trainable_(trainable) {}

  Var operator()(const ParamBlock& p) {
    if (trainable_) return p.node();
    auto it = cache_.find(&p);
    if (it != cache_.end()) return it->second;
    Var c = constant(p.value());
    cache_.emplace(&p, c);
    return c;
  }
  bool trainable() const { return trainable_; }

 private:
  bool trainable_;
  std::unordered_map<const ParamBlock*, Var> cache_;
};

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

inline MapMat as_mat(Tensor& t) {
  return MapMat(t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
inline CMapMat as_mat(const Tensor& t) {
  return CMapMat(t.data.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

inline Var make(const char* op, Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  bool any = false;
  for (const auto& p : parents) any = any || p->requires_grad;
  if (any) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(fn);
  }
  return n;
}

[[noreturn]] inline void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

enum class Broadcast { same, row, scalar };

// Right operand broadcasting: identical element count with equal column
// count, a single row matching the column count, or a single element.
inline Broadcast broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
  if (a.size() == b.size() && a.cols() == b.cols()) return Broadcast::same;
  if (b.size() == 1) return Broadcast::scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::row;
  shape_fail(op, a.shape, b.shape);
}

inline void reduce_into(Broadcast kind, const Tensor& g, Tensor& target) {
  switch (kind) {
    case Broadcast::same:
      for (std::size_t i = 0; i < g.size(); ++i) target[i] += g[i];
      break;
    case Broadcast::scalar: {
      double s = 0.0;
      for (double v : g.data) s += v;
      target[0] += s;
      break;
    }
    case Broadcast::row: {
      const std::size_t c = g.cols();
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t j = 0; j < c; ++j) target[j] += g[r * c + j];
      break;
    }
  }
}

inline std::size_t bindex(Broadcast kind, std::size_t i, std::size_t cols) {
  switch (kind) {
    case Broadcast::same: return i;
    case Broadcast::scalar: return 0;
    case Broadcast::row: return i % cols;
  }
  return 0;
}

template <class F, class D>
Var unary(const char* op, const Var& a, F f, D dfdx) {
  Tensor out(a->value.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a->value[i]);
  return make(op, std::move(out), {a}, [dfdx](Node& self) {
    Node& x = *self.parents[0];
    if (!x.requires_grad) return;
    Tensor& gx = x.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * dfdx(x.value[i], self.value[i]);
  });
}

}  // namespace detail

// matmul: [n,k] x [k,m] -> [n,m]
inline Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.cols() != bv.rows()) detail::shape_fail("matmul", av.shape, bv.shape);
  Tensor out = Tensor::matrix(av.rows(), bv.cols());
  detail::as_mat(out).noalias() = detail::as_mat(av) * detail::as_mat(bv);
  return detail::make("matmul", std::move(out), {a, b}, [](Node& self) {
    Node& x = *self.parents[0];
    Node& w = *self.parents[1];
    auto g = detail::as_mat(std::as_const(self.grad));
    if (x.requires_grad) detail::as_mat(x.grad_buffer()).noalias() += g * detail::as_mat(std::as_const(w.value)).transpose();
    if (w.requires_grad) detail::as_mat(w.grad_buffer()).noalias() += detail::as_mat(std::as_const(x.value)).transpose() * g;
  });
}

inline Var add(const Var& a, const Var& b) {
  auto kind = detail::broadcast_kind("add", a->value, b->value);
  Tensor out = a->value;
  const std::size_t c = out.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[detail::bindex(kind, i, c)];
  return detail::make("add", std::move(out), {a, b}, [kind](Node& self) {
    Node& x = *self.parents[0];
    Node& y = *self.parents[1];
    if (x.requires_grad) detail::reduce_into(detail::Broadcast::same, self.grad, x.grad_buffer());
    if (y.requires_grad) detail::reduce_into(kind, self.grad, y.grad_buffer());
  });
}

inline Var sub(const Var& a, const Var& b) {
  auto kind = detail::broadcast_kind("sub", a->value, b->value);
  Tensor out = a->value;
  const std::size_t c = out.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->value[detail::bindex(kind, i, c)];
  return detail::make("sub", std::move(out), {a, b}, [kind](Node& self) {
    Node& x = *self.parents[0];
    Node& y = *self.parents[1];
    if (x.requires_grad) detail::reduce_into(detail::Broadcast::same, self.grad, x.grad_buffer());
    if (y.requires_grad) {
      Tensor neg = self.grad;
      for (double& v : neg.data) v = -v;
      detail::reduce_into(kind, neg, y.grad_buffer());
    }
  });
}

// Elementwise product with the same broadcasting rules as add.
inline Var mul(const Var& a, const Var& b) {
  auto kind = detail::broadcast_kind("mul", a->value, b->value);
  Tensor out = a->value;
  const std::size_t c = out.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->value[detail::bindex(kind, i, c)];
  return detail::make("mul", std::move(out), {a, b}, [kind](Node& self) {
    Node& x = *self.parents[0];
    Node& y = *self.parents[1];
    const std::size_t c = self.value.cols();
    if (x.requires_grad) {
      Tensor& gx = x.grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * y.value[detail::bindex(kind, i, c)];
    }
    if (y.requires_grad) {
      Tensor prod = self.grad;
      for (std::size_t i = 0; i < prod.size(); ++i) prod[i] *= x.value[i];
      detail::reduce_into(kind, prod, y.grad_buffer());
    }
  });
}

inline Var scale(const Var& a, double s) {
  return detail::unary("scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Var tanh(const Var& a) {
  return detail::unary("tanh", a, [](double x) { return std::tanh(x); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Var relu(const Var& a) {
  return detail::unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var exp(const Var& a) {
  return detail::unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(const Var& a) {
  return detail::unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

// Clamp to [lo, hi]; the gradient is zero where the clamp is active.
inline Var clamp(const Var& a, double lo, double hi) {
  return detail::unary("clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
                       [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// Row-wise softmax.
inline Var softmax(const Var& a) {
  const Tensor& x = a->value;
  Tensor out(x.shape);
  const std::size_t c = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* in = x.data.data() + r * c;
    double* o = out.data.data() + r * c;
    double mx = *std::max_element(in, in + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < c; ++j) o[j] /= s;
  }
  return detail::make("softmax", std::move(out), {a}, [](Node& self) {
    Node& x = *self.parents[0];
    if (!x.requires_grad) return;
    Tensor& gx = x.grad_buffer();
    const std::size_t c = self.value.cols();
    for (std::size_t r = 0; r < self.value.rows(); ++r) {
      const double* y = self.value.data.data() + r * c;
      const double* g = self.grad.data.data() + r * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += y[j] * g[j];
      for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += y[j] * (g[j] - dot);
    }
  });
}

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a->value.data) s += v;
  return detail::make("sum", Tensor::scalar(s), {a}, [](Node& self) {
    Node& x = *self.parents[0];
    if (!x.requires_grad) return;
    Tensor& gx = x.grad_buffer();
    for (double& v : gx.data) v += self.grad[0];
  });
}

inline Var mean(const Var& a) {
  if (a->value.size() == 0) throw ShapeError("mean: empty input");
  return scale(sum(a), 1.0 / static_cast<double>(a->value.size()));
}

// out[i] = table[indices[i]] (rows). Backward scatter-adds into the table.
inline Var gather_rows(const Var& table, std::vector<std::size_t> indices) {
  const Tensor& t = table->value;
  const std::size_t c = t.cols();
  for (std::size_t i : indices)
    if (i >= t.rows())
      throw ShapeError("gather: row index " + std::to_string(i) + " out of range for shape " + shape_str(t.shape));
  Tensor out = Tensor::matrix(indices.size(), c);
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(t.data.data() + indices[r] * c, c, out.data.data() + r * c);
  return detail::make("gather", std::move(out), {table}, [idx = std::move(indices)](Node& self) {
    Node& x = *self.parents[0];
    if (!x.requires_grad) return;
    Tensor& gx = x.grad_buffer();
    const std::size_t c = self.value.cols();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < c; ++j) gx[idx[r] * c + j] += self.grad[r * c + j];
  });
}

// Stack inputs along rows; all inputs must share the column count.
inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t c = parts[0]->value.cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p->value.cols() != c) detail::shape_fail("concat", parts[0]->value.shape, p->value.shape);
    rows += p->value.rows();
  }
  Tensor out = Tensor::matrix(rows, c);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p->value.data.begin(), p->value.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += p->value.size();
  }
  return detail::make("concat", std::move(out), parts, [](Node& self) {
    std::size_t off = 0;
    for (auto& p : self.parents) {
      const std::size_t n = p->value.size();
      if (p->requires_grad) {
        Tensor& g = p->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
      }
      off += n;
    }
  });
}

// Rows [begin, end).
inline Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
  const Tensor& x = a->value;
  if (begin > end || end > x.rows())
    throw ShapeError("slice: rows [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for shape " +
                     shape_str(x.shape));
  const std::size_t c = x.cols();
  Tensor out = Tensor::matrix(end - begin, c);
  std::copy_n(x.data.data() + begin * c, (end - begin) * c, out.data.data());
  return detail::make("slice", std::move(out), {a}, [begin](Node& self) {
    Node& x = *self.parents[0];
    if (!x.requires_grad) return;
    Tensor& gx = x.grad_buffer();
    const std::size_t off = begin * self.value.cols();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[off + i] += self.grad[i];
  });
}

inline Var reshape(const Var& a, Shape shape) {
  if (shape_numel(shape) != a->value.size()) detail::shape_fail("reshape", a->value.shape, shape);
  Tensor out(std::move(shape), a->value.data);
  return detail::make("reshape", std::move(out), {a}, [](Node& self) {
    Node& x = *self.parents[0];
    if (!x.requires_grad) return;
    Tensor& gx = x.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

// Row-wise layer normalization with learned gain and bias rows.
inline Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5) {
  const Tensor& xv = x->value;
  const std::size_t c = xv.cols();
  if (gain->value.size() != c || bias->value.size() != c)
    detail::shape_fail("layer_norm", xv.shape, gain->value.shape);
  const std::size_t rows = xv.rows();
  Tensor out(xv.shape);
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data.data() + r * c;
    double m = 0.0;
    for (std::size_t j = 0; j < c; ++j) m += in[j];
    m /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (in[j] - m) * (in[j] - m);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (in[j] - m) * is;
      (*xhat)[r * c + j] = h;
      out[r * c + j] = h * gain->value[j] + bias->value[j];
    }
  }
  return detail::make("layer_norm", std::move(out), {x, gain, bias}, [xhat, inv_std](Node& self) {
    Node& xn = *self.parents[0];
    Node& gn = *self.parents[1];
    Node& bn = *self.parents[2];
    const std::size_t c = self.value.cols();
    const std::size_t rows = self.value.rows();
    const double* g = self.grad.data.data();
    if (gn.requires_grad) {
      Tensor& gg = gn.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) gg[j] += g[r * c + j] * (*xhat)[r * c + j];
    }
    if (bn.requires_grad) {
      Tensor& gb = bn.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
    }
    if (xn.requires_grad) {
      Tensor& gx = xn.grad_buffer();
      const double n = static_cast<double>(c);
      for (std::size_t r = 0; r < rows; ++r) {
        double mean_d = 0.0, mean_dh = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          const double d = g[r * c + j] * gn.value[j];
          mean_d += d;
          mean_dh += d * (*xhat)[r * c + j];
        }
        mean_d /= n;
        mean_dh /= n;
        for (std::size_t j = 0; j < c; ++j) {
          const double d = g[r * c + j] * gn.value[j];
          gx[r * c + j] += (*inv_std)[r] * (d - mean_d - (*xhat)[r * c + j] * mean_dh);
        }
      }
    }
  });
}

// A contiguous run of rows forming one independent sequence.
struct Segment {
  std::size_t start = 0;
  std::size_t length = 0;
};

// Multi-head scaled dot-product attention over packed sequences. q, k, v are
// [N, d]; attention never crosses segment boundaries, and with causal=true a
// row only attends to rows at or before it within its segment.
inline Var attention(const Var& q, const Var& k, const Var& v, std::vector<Segment> segments, std::size_t heads,
                     bool causal) {
  const Tensor& qv = q->value;
  if (qv.shape != k->value.shape || qv.shape != v->value.shape)
    detail::shape_fail("attention", qv.shape, k->value.shape);
  const std::size_t d = qv.cols();
  if (heads == 0 || d % heads != 0) throw ShapeError("attention: width " + std::to_string(d) + " not divisible by heads");
  std::size_t covered = 0;
  for (const auto& s : segments) {
    if (s.start != covered) throw ShapeError("attention: segments must tile the rows in order");
    covered += s.length;
  }
  if (covered != qv.rows()) throw ShapeError("attention: segments cover " + std::to_string(covered) + " of " +
                                             std::to_string(qv.rows()) + " rows");
  const std::size_t dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  std::size_t pcount = 0;
  for (const auto& s : segments) pcount += heads * s.length * s.length;
  auto probs = std::make_shared<std::vector<double>>(pcount, 0.0);
  Tensor out(qv.shape);
  const Tensor& kv = k->value;
  const Tensor& vv = v->value;
  std::size_t poff = 0;
  for (const auto& s : segments) {
    const std::size_t T = s.length;
    for (std::size_t h = 0; h < heads; ++h) {
      double* P = probs->data() + poff;
      for (std::size_t i = 0; i < T; ++i) {
        const std::size_t jmax = causal ? i + 1 : T;
        const double* qi = qv.data.data() + (s.start + i) * d + h * dh;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < jmax; ++j) {
          const double* kj = kv.data.data() + (s.start + j) * d + h * dh;
          double dot = 0.0;
          for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
          P[i * T + j] = dot * sc;
          mx = std::max(mx, P[i * T + j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < jmax; ++j) z += (P[i * T + j] = std::exp(P[i * T + j] - mx));
        double* oi = out.data.data() + (s.start + i) * d + h * dh;
        for (std::size_t j = 0; j < jmax; ++j) {
          P[i * T + j] /= z;
          const double* vj = vv.data.data() + (s.start + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += P[i * T + j] * vj[c];
        }
      }
      poff += T * T;
    }
  }
  return detail::make(
      "attention", std::move(out), {q, k, v},
      [probs, segs = std::move(segments), heads, causal, dh, sc](Node& self) {
        Node& qn = *self.parents[0];
        Node& kn = *self.parents[1];
        Node& vn = *self.parents[2];
        const std::size_t d = self.value.cols();
        double* gq = qn.requires_grad ? qn.grad_buffer().data.data() : nullptr;
        double* gk = kn.requires_grad ? kn.grad_buffer().data.data() : nullptr;
        double* gv = vn.requires_grad ? vn.grad_buffer().data.data() : nullptr;
        const double* G = self.grad.data.data();
        std::vector<double> dP;
        std::size_t poff = 0;
        for (const auto& s : segs) {
          const std::size_t T = s.length;
          dP.assign(T, 0.0);
          for (std::size_t h = 0; h < heads; ++h) {
            const double* P = probs->data() + poff;
            for (std::size_t i = 0; i < T; ++i) {
              const std::size_t jmax = causal ? i + 1 : T;
              const double* gi = G + (s.start + i) * d + h * dh;
              double dot = 0.0;
              for (std::size_t j = 0; j < jmax; ++j) {
                const double* vj = vn.value.data.data() + (s.start + j) * d + h * dh;
                double acc = 0.0;
                for (std::size_t c = 0; c < dh; ++c) acc += gi[c] * vj[c];
                dP[j] = acc;
                dot += acc * P[i * T + j];
                if (gv) {
                  double* gvj = gv + (s.start + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gvj[c] += P[i * T + j] * gi[c];
                }
              }
              const double* qi = qn.value.data.data() + (s.start + i) * d + h * dh;
              for (std::size_t j = 0; j < jmax; ++j) {
                const double ds = P[i * T + j] * (dP[j] - dot) * sc;
                if (ds == 0.0) continue;
                const double* kj = kn.value.data.data() + (s.start + j) * d + h * dh;
                if (gq) {
                  double* gqi = gq + (s.start + i) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
                }
                if (gk) {
                  double* gkj = gk + (s.start + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
                }
              }
            }
            poff += T * T;
          }
        }
      });
}

// Weighted negative log-likelihood of row-wise softmax(logits):
//   sum_r weights[r] * -log softmax(logits[r])[targets[r]]
// Fused so that the backward pass is a single (p - onehot) sweep.
inline Var nll_loss(const Var& logits, std::vector<std::size_t> targets, std::vector<double> weights) {
  const Tensor& x = logits->value;
  const std::size_t c = x.cols();
  if (targets.size() != x.rows() || weights.size() != x.rows())
    throw ShapeError("nll: " + std::to_string(targets.size()) + " targets for logits of shape " + shape_str(x.shape));
  auto probs = std::make_shared<std::vector<double>>(x.size());
  double loss = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    if (targets[r] >= c) throw ShapeError("nll: target " + std::to_string(targets[r]) + " out of range");
    const double* in = x.data.data() + r * c;
    double* p = probs->data() + r * c;
    const double mx = *std::max_element(in, in + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (p[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < c; ++j) p[j] /= z;
    loss -= weights[r] * (in[targets[r]] - mx - std::log(z));
  }
  return detail::make("nll", Tensor::scalar(loss), {logits},
                      [probs, t = std::move(targets), w = std::move(weights)](Node& self) {
                        Node& x = *self.parents[0];
                        if (!x.requires_grad) return;
                        Tensor& gx = x.grad_buffer();
                        const std::size_t c = x.value.cols();
                        const double g = self.grad[0];
                        for (std::size_t r = 0; r < t.size(); ++r) {
                          const double f = g * w[r];
                          for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += f * (*probs)[r * c + j];
                          gx[r * c + t[r]] -= f;
                        }
                      });
}

// Reverse pass from a scalar root. Gradients accumulate into every reachable
// node that requires them; call zero_grad on leaves between passes.
inline void backward(const Var& root) {
  if (root->value.size() != 1)
    throw ShapeError("backward: root must be scalar, got shape " + shape_str(root->value.shape));
  if (!root->requires_grad) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  // Interior gradients are per-pass scratch; leaves keep accumulating.
  for (Node* n : order)
    if (n->backward_fn) n->zero_grad();
  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
}

}  // namespace ship::ad
