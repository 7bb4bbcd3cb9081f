// Copyright 2026 The OrientLab Authors
// SPDX-License-Identifier: Apache-2.0
#include "orient/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>

#include "orient/errors.hpp"
#include "orient/rng.hpp"

namespace orient::tg {

std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// --- Tensor -----------------------------------------------------------------

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeMismatch("tensor dimensions must be positive");
  }
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeMismatch("tensor dimensions must be positive");
  }
  if (data_.size() != shape_size(shape_)) {
    throw ShapeMismatch("data length " + std::to_string(data_.size()) + " does not match shape " +
                        shape_str(shape_));
  }
  if (!all_finite()) throw NonFiniteValue("tensor data contains NaN or Inf");
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  for (double& v : t.data_) v = stddev * rng.normal();
  return t;
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeMismatch("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ShapeMismatch("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = data_;
  return t;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Parameter::Parameter(std::string n, Tensor v)
    : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

// --- Tape -------------------------------------------------------------------

const Tensor& Var::value() const { return tape->value(id); }
bool Var::requires_grad() const { return tape->requires_grad(id); }

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
  Node n;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = p.requires_grad;
  if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) {
    n.grad = Tensor(n.value.shape());
  }
  return n.grad;
}

const Tensor& Tape::grad(Var v) {
  if (v.tape != this) throw InvalidBackward("variable belongs to another tape");
  return grad_buffer(v.id);
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (auto p : parents) {
    if (nodes_.at(p).requires_grad) n.requires_grad = true;
  }
  if (n.requires_grad) {
    n.parents = std::move(parents);
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw InvalidBackward("loss belongs to another tape");
  if (consumed_) throw InvalidBackward("tape already back-propagated; reset() before reuse");
  const Node& ln = nodes_.at(loss.id);
  if (ln.value.size() != 1) {
    throw InvalidBackward("loss must be a single element, got shape " + shape_str(ln.value.shape()));
  }
  consumed_ = true;
  grad_buffer(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param != nullptr) {
      auto dst = n.param->grad.data();
      auto src = n.grad.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

// --- element-wise -----------------------------------------------------------

namespace {

Tape* tape_of(std::initializer_list<Var> vars) {
  Tape* t = nullptr;
  for (const Var& v : vars) {
    if (v.tape == nullptr) throw InvalidInput("variable is not attached to a tape");
    if (t != nullptr && v.tape != t) throw InvalidInput("variables come from different tapes");
    t = v.tape;
  }
  return t;
}

/// Index maps for a broadcast binary op.
struct Broadcast {
  Shape out;
  enum class Mode { same, b_suffix, a_suffix, general } mode = Mode::same;
  std::vector<std::size_t> a_idx, b_idx;  // only for general mode
  std::size_t a_size = 0, b_size = 0;

  std::size_t ia(std::size_t i) const {
    switch (mode) {
      case Mode::same:
      case Mode::b_suffix:
        return i;
      case Mode::a_suffix:
        return i % a_size;
      default:
        return a_idx[i];
    }
  }
  std::size_t ib(std::size_t i) const {
    switch (mode) {
      case Mode::same:
      case Mode::a_suffix:
        return i;
      case Mode::b_suffix:
        return i % b_size;
      default:
        return b_idx[i];
    }
  }
};

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Broadcast make_broadcast(const Shape& a, const Shape& b) {
  Broadcast bc;
  bc.a_size = shape_size(a);
  bc.b_size = shape_size(b);
  if (a == b) {
    bc.out = a;
    bc.mode = Broadcast::Mode::same;
    return bc;
  }
  if (is_suffix(b, a)) {
    bc.out = a;
    bc.mode = Broadcast::Mode::b_suffix;
    return bc;
  }
  if (is_suffix(a, b)) {
    bc.out = b;
    bc.mode = Broadcast::Mode::a_suffix;
    return bc;
  }
  const std::size_t r = std::max(a.size(), b.size());
  Shape pa(r, 1), pb(r, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<long>(r - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<long>(r - b.size()));
  bc.out.resize(r);
  for (std::size_t k = 0; k < r; ++k) {
    if (pa[k] == pb[k] || pb[k] == 1) {
      bc.out[k] = pa[k];
    } else if (pa[k] == 1) {
      bc.out[k] = pb[k];
    } else {
      throw ShapeMismatch("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
  }
  std::vector<std::size_t> sa(r, 0), sb(r, 0);
  std::size_t acc_a = 1, acc_b = 1;
  for (std::size_t k = r; k-- > 0;) {
    sa[k] = pa[k] == 1 ? 0 : acc_a;
    sb[k] = pb[k] == 1 ? 0 : acc_b;
    acc_a *= pa[k];
    acc_b *= pb[k];
  }
  const std::size_t n = shape_size(bc.out);
  bc.mode = Broadcast::Mode::general;
  bc.a_idx.resize(n);
  bc.b_idx.resize(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t ia = 0, ib = 0;
    for (std::size_t k = 0; k < r; ++k) {
      ia += idx[k] * sa[k];
      ib += idx[k] * sb[k];
    }
    bc.a_idx[i] = ia;
    bc.b_idx[i] = ib;
    for (std::size_t k = r; k-- > 0;) {
      if (++idx[k] < bc.out[k]) break;
      idx[k] = 0;
    }
  }
  return bc;
}

enum class BinOp { add, sub, mul };

Var binary(BinOp op, Var a, Var b) {
  Tape* tape = tape_of({a, b});
  auto bc = std::make_shared<Broadcast>(make_broadcast(a.shape(), b.shape()));
  const auto& av = a.value().vec();
  const auto& bv = b.value().vec();
  Tensor out(bc->out);
  auto& ov = out.vec();
  const std::size_t n = ov.size();
  if (bc->mode == Broadcast::Mode::same) {
    for (std::size_t i = 0; i < n; ++i) {
      ov[i] = op == BinOp::add ? av[i] + bv[i] : op == BinOp::sub ? av[i] - bv[i] : av[i] * bv[i];
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const double x = av[bc->ia(i)], y = bv[bc->ib(i)];
      ov[i] = op == BinOp::add ? x + y : op == BinOp::sub ? x - y : x * y;
    }
  }
  const std::size_t ia = a.id, ib = b.id;
  return tape->record(std::move(out), {ia, ib}, [op, bc, ia, ib](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self).vec();
    const std::size_t n = g.size();
    if (t.requires_grad(ia)) {
      auto& ga = t.grad_buffer(ia).vec();
      const auto& bv = t.value(ib).vec();
      for (std::size_t i = 0; i < n; ++i) {
        ga[bc->ia(i)] += op == BinOp::mul ? g[i] * bv[bc->ib(i)] : g[i];
      }
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_buffer(ib).vec();
      const auto& av = t.value(ia).vec();
      for (std::size_t i = 0; i < n; ++i) {
        const double d = op == BinOp::mul ? g[i] * av[bc->ia(i)] : op == BinOp::sub ? -g[i] : g[i];
        gb[bc->ib(i)] += d;
      }
    }
  });
}

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

template <typename Fwd, typename Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  Tape* tape = tape_of({a});
  const auto& av = a.value().vec();
  Tensor out(a.shape());
  auto& ov = out.vec();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = fwd(av[i]);
  const std::size_t ia = a.id;
  return tape->record(std::move(out), {ia}, [ia, deriv](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self).vec();
    const auto& x = t.value(ia).vec();
    auto& ga = t.grad_buffer(ia).vec();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i]);
  });
}

}  // namespace

Var add(Var a, Var b) { return binary(BinOp::add, a, b); }
Var sub(Var a, Var b) { return binary(BinOp::sub, a, b); }
Var mul(Var a, Var b) { return binary(BinOp::mul, a, b); }

Var scale(Var a, double factor) {
  return unary(a, [factor](double x) { return factor * x; }, [factor](double) { return factor; });
}

Var silu(Var a) {
  return unary(
      a, [](double x) { return x * sigmoid_value(x); },
      [](double x) {
        const double s = sigmoid_value(x);
        return s + x * s * (1.0 - s);
      });
}

Var softplus(Var a) { return unary(a, softplus_value, sigmoid_value); }

Var sigmoid(Var a) {
  return unary(a, sigmoid_value, [](double x) {
    const double s = sigmoid_value(x);
    return s * (1.0 - s);
  });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var elementwise(Elementwise kind, std::span<const Var> inputs, double factor) {
  const std::size_t arity =
      (kind == Elementwise::add || kind == Elementwise::sub || kind == Elementwise::mul) ? 2 : 1;
  if (inputs.size() != arity) {
    throw InvalidInput("elementwise op expects " + std::to_string(arity) + " inputs");
  }
  switch (kind) {
    case Elementwise::add:
      return add(inputs[0], inputs[1]);
    case Elementwise::sub:
      return sub(inputs[0], inputs[1]);
    case Elementwise::mul:
      return mul(inputs[0], inputs[1]);
    case Elementwise::silu:
      return silu(inputs[0]);
    case Elementwise::softplus:
      return softplus(inputs[0]);
    case Elementwise::sigmoid:
      return sigmoid(inputs[0]);
    case Elementwise::scale:
      return scale(inputs[0], factor);
  }
  throw InvalidInput("unknown elementwise op");
}

// --- matmul -----------------------------------------------------------------

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;
}  // namespace

Var matmul(Var a, Var b) {
  Tape* tape = tape_of({a, b});
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2) throw ShapeMismatch("matmul expects 2-D operands");
  if (sa[1] != sb[0]) {
    throw ShapeMismatch("matmul inner dimensions differ: " + shape_str(sa) + " x " + shape_str(sb));
  }
  const auto m = static_cast<Eigen::Index>(sa[0]);
  const auto k = static_cast<Eigen::Index>(sa[1]);
  const auto n = static_cast<Eigen::Index>(sb[1]);
  Tensor out(Shape{sa[0], sb[1]});
  MapM(out.vec().data(), m, n).noalias() =
      MapC(a.value().vec().data(), m, k) * MapC(b.value().vec().data(), k, n);
  const std::size_t ia = a.id, ib = b.id;
  return tape->record(std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const MapC g(t.grad_buffer(self).vec().data(), m, n);
    if (t.requires_grad(ia)) {
      MapM(t.grad_buffer(ia).vec().data(), m, k).noalias() +=
          g * MapC(t.value(ib).vec().data(), k, n).transpose();
    }
    if (t.requires_grad(ib)) {
      MapM(t.grad_buffer(ib).vec().data(), k, n).noalias() +=
          MapC(t.value(ia).vec().data(), m, k).transpose() * g;
    }
  });
}

// --- reductions -------------------------------------------------------------

Var reduce(Reduce kind, Var x, std::vector<std::size_t> axes) {
  Tape* tape = tape_of({x});
  const Shape& s = x.shape();
  const std::size_t r = s.size();
  std::vector<bool> reduced(r, axes.empty());
  for (auto ax : axes) {
    if (ax >= r) throw ShapeMismatch("reduction axis " + std::to_string(ax) + " out of range");
    if (reduced[ax]) throw ShapeMismatch("duplicate reduction axis");
    reduced[ax] = true;
  }
  Shape out_shape;
  for (std::size_t k = 0; k < r; ++k) {
    if (!reduced[k]) out_shape.push_back(s[k]);
  }
  // Output stride contributed by each input axis (0 for reduced axes).
  std::vector<std::size_t> ostride(r, 0);
  std::size_t acc = 1;
  for (std::size_t k = r; k-- > 0;) {
    if (!reduced[k]) {
      ostride[k] = acc;
      acc *= s[k];
    }
  }
  const std::size_t n = x.value().size();
  auto map = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t o = 0;
    for (std::size_t k = 0; k < r; ++k) o += idx[k] * ostride[k];
    (*map)[i] = o;
    for (std::size_t k = r; k-- > 0;) {
      if (++idx[k] < s[k]) break;
      idx[k] = 0;
    }
  }
  Tensor out(out_shape);
  const double factor =
      kind == Reduce::mean ? static_cast<double>(out.size()) / static_cast<double>(n) : 1.0;
  const auto& xv = x.value().vec();
  auto& ov = out.vec();
  for (std::size_t i = 0; i < n; ++i) ov[(*map)[i]] += xv[i];
  if (kind == Reduce::mean) {
    for (double& v : ov) v *= factor;
  }
  const std::size_t ix = x.id;
  return tape->record(std::move(out), {ix}, [ix, map, factor](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self).vec();
    auto& gx = t.grad_buffer(ix).vec();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * g[(*map)[i]];
  });
}

Var sum(Var x, std::vector<std::size_t> axes) { return reduce(Reduce::sum, x, std::move(axes)); }
Var mean(Var x, std::vector<std::size_t> axes) { return reduce(Reduce::mean, x, std::move(axes)); }

// --- indexing and layout ----------------------------------------------------

Var gather_rows(Var table, std::span<const int> rows) {
  Tape* tape = tape_of({table});
  const Shape& s = table.shape();
  if (s.size() != 2) throw ShapeMismatch("gather_rows expects a 2-D table");
  const std::size_t d = s[1];
  auto idx = std::make_shared<std::vector<int>>(rows.begin(), rows.end());
  if (idx->empty()) throw ShapeMismatch("gather_rows needs at least one index");
  Tensor out(Shape{idx->size(), d});
  const auto& tv = table.value().vec();
  for (std::size_t i = 0; i < idx->size(); ++i) {
    const int row = (*idx)[i];
    if (row < 0 || static_cast<std::size_t>(row) >= s[0]) {
      throw ShapeMismatch("row index " + std::to_string(row) + " out of range");
    }
    std::copy_n(tv.begin() + static_cast<long>(row * d), d, out.vec().begin() + static_cast<long>(i * d));
  }
  const std::size_t it = table.id;
  return tape->record(std::move(out), {it}, [it, idx, d](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self).vec();
    auto& gt = t.grad_buffer(it).vec();
    for (std::size_t i = 0; i < idx->size(); ++i) {
      const std::size_t row = static_cast<std::size_t>((*idx)[i]);
      for (std::size_t j = 0; j < d; ++j) gt[row * d + j] += g[i * d + j];
    }
  });
}

Var concat_cols(Var a, Var b) {
  Tape* tape = tape_of({a, b});
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[0] != sb[0]) {
    throw ShapeMismatch("concat_cols expects 2-D operands with equal rows");
  }
  const std::size_t m = sa[0], p = sa[1], q = sb[1];
  Tensor out(Shape{m, p + q});
  const auto& av = a.value().vec();
  const auto& bv = b.value().vec();
  auto& ov = out.vec();
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(av.begin() + static_cast<long>(i * p), p, ov.begin() + static_cast<long>(i * (p + q)));
    std::copy_n(bv.begin() + static_cast<long>(i * q), q,
                ov.begin() + static_cast<long>(i * (p + q) + p));
  }
  const std::size_t ia = a.id, ib = b.id;
  return tape->record(std::move(out), {ia, ib}, [ia, ib, m, p, q](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self).vec();
    if (t.requires_grad(ia)) {
      auto& ga = t.grad_buffer(ia).vec();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < p; ++j) ga[i * p + j] += g[i * (p + q) + j];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_buffer(ib).vec();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < q; ++j) gb[i * q + j] += g[i * (p + q) + p + j];
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Tape* tape = tape_of({a});
  const Shape& s = a.shape();
  if (s.size() != 2 || begin >= end || end > s[1]) throw ShapeMismatch("invalid column slice");
  const std::size_t m = s[0], n = s[1], w = end - begin;
  Tensor out(Shape{m, w});
  const auto& av = a.value().vec();
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(av.begin() + static_cast<long>(i * n + begin), w,
                out.vec().begin() + static_cast<long>(i * w));
  }
  const std::size_t ia = a.id;
  return tape->record(std::move(out), {ia}, [ia, m, n, w, begin](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self).vec();
    auto& ga = t.grad_buffer(ia).vec();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) ga[i * n + begin + j] += g[i * w + j];
  });
}

Var reshape(Var a, Shape shape) {
  Tape* tape = tape_of({a});
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id;
  return tape->record(std::move(out), {ia}, [ia](Tape& t, std::size_t self) {
    const auto& g = t.grad_buffer(self).vec();
    auto& ga = t.grad_buffer(ia).vec();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var mse(Var a, Var b) {
  Tape* tape = tape_of({a, b});
  if (a.shape() != b.shape()) {
    throw ShapeMismatch("mse shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const auto& av = a.value().vec();
  const auto& bv = b.value().vec();
  const std::size_t n = av.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = av[i] - bv[i];
    acc += d * d;
  }
  const std::size_t ia = a.id, ib = b.id;
  return tape->record(Tensor::scalar(acc / static_cast<double>(n)), {ia, ib},
                      [ia, ib, n](Tape& t, std::size_t self) {
                        const double g = t.grad_buffer(self)[0] * 2.0 / static_cast<double>(n);
                        const auto& av = t.value(ia).vec();
                        const auto& bv = t.value(ib).vec();
                        if (t.requires_grad(ia)) {
                          auto& ga = t.grad_buffer(ia).vec();
                          for (std::size_t i = 0; i < n; ++i) ga[i] += g * (av[i] - bv[i]);
                        }
                        if (t.requires_grad(ib)) {
                          auto& gb = t.grad_buffer(ib).vec();
                          for (std::size_t i = 0; i < n; ++i) gb[i] -= g * (av[i] - bv[i]);
                        }
                      });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  Tape* tape = tape_of({logits});
  const Shape& s = logits.shape();
  if (s.size() != 2 || s[0] != labels.size()) {
    throw ShapeMismatch("softmax_cross_entropy expects [m, C] logits and m labels");
  }
  const std::size_t m = s[0], c = s[1];
  const auto& lv = logits.value().vec();
  auto probs = std::make_shared<std::vector<double>>(m * c);
  auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const int y = (*lab)[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw ShapeMismatch("label out of range");
    const double* row = &lv[i * c];
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] = std::exp(row[j] - mx) / z;
    loss += std::log(z) + mx - row[y];
  }
  const std::size_t il = logits.id;
  return tape->record(Tensor::scalar(loss / static_cast<double>(m)), {il},
                      [il, probs, lab, m, c](Tape& t, std::size_t self) {
                        const double g = t.grad_buffer(self)[0] / static_cast<double>(m);
                        auto& gl = t.grad_buffer(il).vec();
                        for (std::size_t i = 0; i < m; ++i) {
                          for (std::size_t j = 0; j < c; ++j) {
                            const double onehot = static_cast<int>(j) == (*lab)[i] ? 1.0 : 0.0;
                            gl[i * c + j] += g * ((*probs)[i * c + j] - onehot);
                          }
                        }
                      });
}

// --- Adam -------------------------------------------------------------------

void adam_update(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& cfg) {
  if (grad.shape() != param.shape()) {
    throw ShapeMismatch("gradient shape " + shape_str(grad.shape()) + " differs from parameter " +
                        shape_str(param.shape()));
  }
  if (state.m.shape() != param.shape()) state.m = Tensor(param.shape());
  if (state.v.shape() != param.shape()) state.v = Tensor(param.shape());
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  auto p = param.data();
  auto g = grad.data();
  auto m = state.m.data();
  auto v = state.v.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double mh = m[i] / bc1;
    const double vh = v[i] / bc2;
    p[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
  }
}

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg)
    : params_(std::move(params)), states_(params_.size()), cfg_(cfg) {}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i]->requires_grad) continue;
    adam_update(params_[i]->value, params_[i]->grad, states_[i], cfg_);
  }
}

void Adam::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

// --- checkpoints ------------------------------------------------------------

namespace {

constexpr char kMagic[6] = {'O', 'G', 'R', 'A', 'D', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw IoError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated checkpoint");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write(kMagic, sizeof(kMagic));
  put_u64(os, tensors.size());
  for (const auto& nt : tensors) {
    put_u32(os, static_cast<std::uint32_t>(nt.name.size()));
    os.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
    put_u32(os, static_cast<std::uint32_t>(nt.value.rank()));
    for (auto d : nt.value.shape()) put_u64(os, d);
    for (double v : nt.value.data()) put_u64(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw IoError("failed writing " + path);
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[6];
  if (!is.read(magic, 6) || std::memcmp(magic, kMagic, 6) != 0) {
    throw IoError(path + " is not an OGRAD1 checkpoint");
  }
  const std::uint64_t count = get_u64(is);
  std::vector<NamedTensor> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor nt;
    const std::uint32_t len = get_u32(is);
    if (len > (1u << 20)) throw IoError("implausible tensor name length");
    nt.name.resize(len);
    if (len > 0 && !is.read(nt.name.data(), len)) throw IoError("truncated checkpoint");
    const std::uint32_t rank = get_u32(is);
    if (rank > 16) throw IoError("implausible tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = get_u64(is);
    const std::size_t n = shape_size(shape);
    if (n > (std::size_t{1} << 32)) throw IoError("implausible tensor size");
    std::vector<double> data(n);
    for (auto& v : data) v = std::bit_cast<double>(get_u64(is));
    nt.value = Tensor(std::move(shape), std::move(data));
    out.push_back(std::move(nt));
  }
  return out;
}

const Tensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
  for (const auto& nt : tensors) {
    if (nt.name == name) return nt.value;
  }
  throw InvalidInput("checkpoint has no tensor named '" + name + "'");
}

}  // namespace orient::tg
