#pragma once

// Minimal reverse-mode differentiation over a fixed set of vector primitives:
// elementwise add/sub/mul, exp, log, pointwise nonlinearities, log_sum_exp,
// matrix-vector products and gathers. Nodes hold flat double vectors; matrices
// are row-major.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "berag/errors.hpp"
#include "berag/numerics.hpp"

namespace berag::ad {

struct Shape {
  std::size_t rows = 1;
  std::size_t cols = 1;

  std::size_t size() const noexcept { return rows * cols; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

/// A named trainable tensor. `gradient`, when non-empty, has the same size as `value`.
struct Parameter {
  std::string id;
  Shape shape;
  std::vector<double> value;
  std::vector<double> gradient;

  Parameter() = default;
  Parameter(std::string id_, Shape shape_, std::vector<double> value_)
      : id(std::move(id_)), shape(shape_), value(std::move(value_)) {
    if (value.size() != shape.size())
      throw UsageError("Parameter " + id + ": value size does not match shape");
  }
  Parameter(std::string id_, Shape shape_) : Parameter(std::move(id_), shape_, std::vector<double>(shape_.size(), 0.0)) {}

  std::size_t size() const noexcept { return value.size(); }
  double& at(std::size_t r, std::size_t c) { return value[r * shape.cols + c]; }
  double at(std::size_t r, std::size_t c) const { return value[r * shape.cols + c]; }
};

/// Ordered collection of parameters with stable ids.
class ParameterSet {
 public:
  Parameter& add(Parameter p) {
    if (find(p.id) != nullptr) throw UsageError("duplicate parameter id " + p.id);
    items_.push_back(std::move(p));
    return items_.back();
  }

  Parameter* find(std::string_view id) {
    for (auto& p : items_)
      if (p.id == id) return &p;
    return nullptr;
  }
  const Parameter* find(std::string_view id) const {
    for (const auto& p : items_)
      if (p.id == id) return &p;
    return nullptr;
  }
  Parameter& get(std::string_view id) {
    if (auto* p = find(id)) return *p;
    throw UsageError("unknown parameter " + std::string(id));
  }
  const Parameter& get(std::string_view id) const {
    if (const auto* p = find(id)) return *p;
    throw UsageError("unknown parameter " + std::string(id));
  }

  std::vector<Parameter>& items() noexcept { return items_; }
  const std::vector<Parameter>& items() const noexcept { return items_; }

  std::size_t total_size() const noexcept {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.size();
    return n;
  }

  void zero_gradients() {
    for (auto& p : items_) p.gradient.assign(p.size(), 0.0);
  }

 private:
  std::vector<Parameter> items_;
};

class Tape;

/// Handle to a tape node.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape* tape() const noexcept { return tape_; }
  std::size_t index() const noexcept { return index_; }
  std::span<const double> value() const;
  std::size_t size() const;
  Shape shape() const;
  double scalar() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  struct Node {
    const char* op;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    Backward backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf bound to a parameter; repeated calls return the same node.
  Var param(const Parameter& p) {
    if (auto it = bound_.find(&p); it != bound_.end()) return Var(this, it->second);
    Var v = push("param", p.shape, p.value, nullptr);
    bound_.emplace(&p, v.index());
    return v;
  }

  Var constant(std::vector<double> value, Shape shape) {
    if (value.size() != shape.size()) throw UsageError("constant: size does not match shape");
    return push("constant", shape, std::move(value), nullptr);
  }
  Var constant(std::vector<double> value) {
    const Shape s{value.size(), 1};
    return constant(std::move(value), s);
  }
  Var scalar(double v) { return constant({v}, Shape{1, 1}); }

  /// Records a node; throws NumericError when any entry is non-finite.
  Var push(const char* op, Shape shape, std::vector<double> value, Backward backward) {
    for (double v : value) {
      if (!std::isfinite(v))
        throw NumericError(std::string("non-finite value produced by '") + op + "' at node " +
                               std::to_string(nodes_.size()),
                           std::string(op) + "#" + std::to_string(nodes_.size()));
    }
    nodes_.push_back(Node{op, shape, std::move(value), {}, std::move(backward)});
    return Var(this, nodes_.size() - 1);
  }

  Node& node(std::size_t i) { return nodes_[i]; }
  const Node& node(std::size_t i) const { return nodes_[i]; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient buffer of node i, allocated lazily.
  std::vector<double>& grad(std::size_t i) {
    auto& n = nodes_[i];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }

  /// Reverse sweep from a scalar output.
  void backward(Var loss) {
    if (loss.tape() != this || loss.size() != 1) throw UsageError("backward: loss must be a scalar on this tape");
    for (auto& n : nodes_) n.grad.clear();
    grad(loss.index())[0] = 1.0;
    for (std::size_t i = loss.index() + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  /// Gradient for a bound parameter after backward(); zeros when unused.
  std::vector<double> gradient_of(const Parameter& p) const {
    auto it = bound_.find(&p);
    if (it == bound_.end() || nodes_[it->second].grad.empty()) return std::vector<double>(p.size(), 0.0);
    return nodes_[it->second].grad;
  }

  /// Adds this tape's gradients into each parameter's gradient buffer.
  void accumulate_into(ParameterSet& set, double weight = 1.0) const {
    for (auto& p : set.items()) {
      if (p.gradient.size() != p.size()) p.gradient.assign(p.size(), 0.0);
      auto it = bound_.find(&p);
      if (it == bound_.end()) continue;
      const auto& g = nodes_[it->second].grad;
      if (g.empty()) continue;
      for (std::size_t i = 0; i < g.size(); ++i) p.gradient[i] += weight * g[i];
    }
  }

 private:
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> bound_;
};

inline std::span<const double> Var::value() const { return tape_->node(index_).value; }
inline std::size_t Var::size() const { return tape_->node(index_).value.size(); }
inline Shape Var::shape() const { return tape_->node(index_).shape; }
inline double Var::scalar() const {
  if (size() != 1) throw UsageError("Var::scalar on non-scalar node");
  return value()[0];
}

namespace detail {

inline Tape& same_tape(Var a, Var b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) throw UsageError("operands live on different tapes");
  return *a.tape();
}

// Elementwise binary op with scalar broadcasting on either side.
template <class F, class DA, class DB>
Var binary(const char* op, Var a, Var b, F f, DA da, DB db) {
  Tape& t = same_tape(a, b);
  const std::size_t na = a.size(), nb = b.size();
  if (na != nb && na != 1 && nb != 1) throw UsageError(std::string(op) + ": size mismatch");
  const std::size_t n = std::max(na, nb);
  const Shape shape = na >= nb ? a.shape() : b.shape();
  std::vector<double> out(n);
  {
    auto av = a.value();
    auto bv = b.value();
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[na == 1 ? 0 : i], bv[nb == 1 ? 0 : i]);
  }
  const std::size_t ia = a.index(), ib = b.index();
  return t.push(op, shape, std::move(out), [ia, ib, na, nb, n, da, db](Tape& tp, std::size_t self) {
    const auto& g = tp.node(self).grad;
    const auto& av = tp.node(ia).value;
    const auto& bv = tp.node(ib).value;
    {
      auto& ga = tp.grad(ia);
      for (std::size_t i = 0; i < n; ++i)
        ga[na == 1 ? 0 : i] += g[i] * da(av[na == 1 ? 0 : i], bv[nb == 1 ? 0 : i]);
    }
    {
      auto& gb = tp.grad(ib);
      for (std::size_t i = 0; i < n; ++i)
        gb[nb == 1 ? 0 : i] += g[i] * db(av[na == 1 ? 0 : i], bv[nb == 1 ? 0 : i]);
    }
  });
}

// Pointwise unary op; `deriv(x, y)` receives input and output values.
template <class F, class D>
Var unary(const char* op, Var a, F f, D deriv) {
  Tape& t = *a.tape();
  auto av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  const std::size_t ia = a.index();
  return t.push(op, a.shape(), std::move(out), [ia, deriv](Tape& tp, std::size_t self) {
    const auto& node = tp.node(self);
    const std::vector<double> g = node.grad;
    const std::vector<double> y = node.value;
    const auto& x = tp.node(ia).value;
    auto& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
  });
}

}  // namespace detail

inline Var add(Var a, Var b) {
  return detail::binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Var sub(Var a, Var b) {
  return detail::binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Var mul(Var a, Var b) {
  return detail::binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Var scale(Var a, double c) {
  return detail::unary(
      "scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Var exp(Var a) {
  return detail::unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(Var a) {
  return detail::unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var tanh(Var a) {
  return detail::unary(
      "tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(Var a) {
  return detail::unary(
      "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

/// log(sigmoid(x)) = -softplus(-x), evaluated without overflow.
inline Var log_sigmoid(Var a) {
  return detail::unary(
      "log_sigmoid", a,
      [](double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(x)); });
}

inline Var relu(Var a) {
  return detail::unary(
      "relu", a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

/// Sum of all entries.
inline Var sum(Var a) {
  Tape& t = *a.tape();
  double s = 0.0;
  for (double v : a.value()) s += v;
  const std::size_t ia = a.index();
  return t.push("sum", Shape{1, 1}, {s}, [ia](Tape& tp, std::size_t self) {
    const double g = tp.node(self).grad[0];
    for (double& x : tp.grad(ia)) x += g;
  });
}

inline Var dot(Var a, Var b) { return sum(mul(a, b)); }

inline Var log_sum_exp(Var a) {
  Tape& t = *a.tape();
  const double lse = berag::log_sum_exp(a.value());
  const std::size_t ia = a.index();
  return t.push("log_sum_exp", Shape{1, 1}, {lse}, [ia](Tape& tp, std::size_t self) {
    const double g = tp.node(self).grad[0];
    const double out = tp.node(self).value[0];
    const auto& x = tp.node(ia).value;
    auto& ga = tp.grad(ia);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g * std::exp(x[i] - out);
  });
}

inline Var log_softmax(Var a) { return sub(a, log_sum_exp(a)); }

/// y = W x for W of shape rows x cols and x of size cols.
inline Var matvec(Var w, Var x) {
  Tape& t = detail::same_tape(w, x);
  const Shape s = w.shape();
  if (x.size() != s.cols) throw UsageError("matvec: dimension mismatch");
  auto wv = w.value();
  auto xv = x.value();
  std::vector<double> out(s.rows, 0.0);
  for (std::size_t r = 0; r < s.rows; ++r) {
    double acc = 0.0;
    const double* row = wv.data() + r * s.cols;
    for (std::size_t c = 0; c < s.cols; ++c) acc += row[c] * xv[c];
    out[r] = acc;
  }
  const std::size_t iw = w.index(), ix = x.index();
  return t.push("matvec", Shape{s.rows, 1}, std::move(out), [iw, ix, s](Tape& tp, std::size_t self) {
    const auto& g = tp.node(self).grad;
    const auto& wv2 = tp.node(iw).value;
    const auto& xv2 = tp.node(ix).value;
    auto& gw = tp.grad(iw);
    for (std::size_t r = 0; r < s.rows; ++r)
      for (std::size_t c = 0; c < s.cols; ++c) gw[r * s.cols + c] += g[r] * xv2[c];
    auto& gx = tp.grad(ix);
    for (std::size_t r = 0; r < s.rows; ++r)
      for (std::size_t c = 0; c < s.cols; ++c) gx[c] += g[r] * wv2[r * s.cols + c];
  });
}

/// y = x^T M for x of size rows and M of shape rows x cols.
inline Var vecmat(Var x, Var m) {
  Tape& t = detail::same_tape(x, m);
  const Shape s = m.shape();
  if (x.size() != s.rows) throw UsageError("vecmat: dimension mismatch");
  auto xv = x.value();
  auto mv = m.value();
  std::vector<double> out(s.cols, 0.0);
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t c = 0; c < s.cols; ++c) out[c] += xv[r] * mv[r * s.cols + c];
  const std::size_t ix = x.index(), im = m.index();
  return t.push("vecmat", Shape{s.cols, 1}, std::move(out), [ix, im, s](Tape& tp, std::size_t self) {
    const auto& g = tp.node(self).grad;
    const auto& xv2 = tp.node(ix).value;
    const auto& mv2 = tp.node(im).value;
    auto& gx = tp.grad(ix);
    for (std::size_t r = 0; r < s.rows; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < s.cols; ++c) acc += g[c] * mv2[r * s.cols + c];
      gx[r] += acc;
    }
    auto& gm = tp.grad(im);
    for (std::size_t r = 0; r < s.rows; ++r)
      for (std::size_t c = 0; c < s.cols; ++c) gm[r * s.cols + c] += xv2[r] * g[c];
  });
}

/// Selects rows of a matrix: result has shape indices.size() x cols.
inline Var gather_rows(Var m, std::span<const std::size_t> indices) {
  Tape& t = *m.tape();
  const Shape s = m.shape();
  auto mv = m.value();
  std::vector<double> out(indices.size() * s.cols);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= s.rows) throw UsageError("gather_rows: index out of range");
    std::copy_n(mv.data() + indices[i] * s.cols, s.cols, out.data() + i * s.cols);
  }
  const std::size_t im = m.index();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return t.push("gather_rows", Shape{indices.size(), s.cols}, std::move(out),
                [im, idx = std::move(idx), s](Tape& tp, std::size_t self) {
                  const auto& g = tp.node(self).grad;
                  auto& gm = tp.grad(im);
                  for (std::size_t i = 0; i < idx.size(); ++i)
                    for (std::size_t c = 0; c < s.cols; ++c) gm[idx[i] * s.cols + c] += g[i * s.cols + c];
                });
}

/// Selects entries of a vector (repeats allowed).
inline Var gather(Var a, std::span<const std::size_t> indices) {
  Tape& t = *a.tape();
  auto av = a.value();
  std::vector<double> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= av.size()) throw UsageError("gather: index out of range");
    out[i] = av[indices[i]];
  }
  const std::size_t ia = a.index();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return t.push("gather", Shape{indices.size(), 1}, std::move(out),
                [ia, idx = std::move(idx)](Tape& tp, std::size_t self) {
                  const auto& g = tp.node(self).grad;
                  auto& ga = tp.grad(ia);
                  for (std::size_t i = 0; i < idx.size(); ++i) ga[idx[i]] += g[i];
                });
}

inline Var element(Var a, std::size_t i) {
  const std::size_t idx[1] = {i};
  return gather(a, idx);
}

/// Concatenates vectors end to end.
inline Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw UsageError("concat: no inputs");
  Tape& t = *parts.front().tape();
  std::vector<double> out;
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // (node, offset)
  for (const Var& p : parts) {
    if (p.tape() != &t) throw UsageError("concat: operands live on different tapes");
    spans.emplace_back(p.index(), out.size());
    auto v = p.value();
    out.insert(out.end(), v.begin(), v.end());
  }
  const Shape shape{out.size(), 1};
  return t.push("concat", shape, std::move(out), [spans = std::move(spans)](Tape& tp, std::size_t self) {
    const auto& g = tp.node(self).grad;
    for (const auto& [node, offset] : spans) {
      auto& gp = tp.grad(node);
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
    }
  });
}

inline Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

/// Reshapes without copying semantics (values copied, gradients pass through).
inline Var reshape(Var a, Shape shape) {
  if (shape.size() != a.size()) throw UsageError("reshape: size mismatch");
  Tape& t = *a.tape();
  std::vector<double> out(a.value().begin(), a.value().end());
  const std::size_t ia = a.index();
  return t.push("reshape", shape, std::move(out), [ia](Tape& tp, std::size_t self) {
    const auto& g = tp.node(self).grad;
    auto& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

/// Loss value plus per-parameter gradients, aligned with the requested parameters.
struct GradientResult {
  double loss = 0.0;
  std::vector<std::vector<double>> gradients;
};

/// Runs `program(tape)` to build a scalar loss and returns exact gradients.
template <class Program>
GradientResult gradient(Program&& program, std::span<const Parameter* const> params) {
  Tape tape;
  Var loss = std::forward<Program>(program)(tape);
  tape.backward(loss);
  GradientResult out;
  out.loss = loss.scalar();
  out.gradients.reserve(params.size());
  for (const Parameter* p : params) out.gradients.push_back(tape.gradient_of(*p));
  return out;
}

template <class Program>
GradientResult gradient(Program&& program, ParameterSet& params) {
  std::vector<const Parameter*> ptrs;
  for (const auto& p : params.items()) ptrs.push_back(&p);
  return gradient(std::forward<Program>(program), std::span<const Parameter* const>(ptrs));
}

}  // namespace berag::ad
