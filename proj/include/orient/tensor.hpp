// Copyright 2026 The OrientLab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode automatic differentiation over dense row-major arrays.
//
// A Tape records operations in execution order. Leaves are either constants or
// Parameters; after Tape::backward() each Parameter on the tape has its
// gradient accumulated into Parameter::grad. A tape can be back-propagated
// once; call reset() to reuse it.
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace orient {
class Rng;
}

namespace orient::tg {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

/// Dense row-major array of doubles. Checked constructors reject NaN/Inf.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zeros
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor full(Shape shape, double v);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Value of a single-element tensor.
  double item() const;

  /// Same data, new shape of equal size.
  Tensor reshaped(Shape shape) const;

  void fill(double v);
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Trainable leaf. Gradients from every tape it participates in accumulate
/// into grad until zero_grad().
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value);

  std::string name;
  Tensor value;
  Tensor grad;
  bool requires_grad = true;

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var param(Parameter& p);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient of the last backward() loss wrt a recorded value (zeros if the
  /// value did not influence the loss).
  const Tensor& grad(Var v);

  /// Mutable gradient buffer, allocated on first use. For op implementations.
  Tensor& grad_buffer(std::size_t id);

  /// Records an op result. backward is invoked only when some parent
  /// requires grad; it must accumulate into the parents' grad_buffer().
  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward);

  /// Back-propagates from a single-element loss. Throws InvalidBackward for a
  /// non-scalar loss, a loss from another tape, or a second call before reset().
  void backward(Var loss);

  void reset();
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Operations. Binary element-wise ops broadcast with rightmost-aligned shapes
// and size-1 expansion.

enum class Elementwise { add, sub, mul, silu, softplus, sigmoid, scale };

Var elementwise(Elementwise kind, std::span<const Var> inputs, double factor = 1.0);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var silu(Var a);
Var softplus(Var a);
Var sigmoid(Var a);
Var square(Var a);

Var matmul(Var a, Var b);

enum class Reduce { sum, mean };

/// Reduces over the listed axes (all axes when empty); reduced axes are
/// removed from the shape.
Var reduce(Reduce kind, Var x, std::vector<std::size_t> axes = {});
Var sum(Var x, std::vector<std::size_t> axes = {});
Var mean(Var x, std::vector<std::size_t> axes = {});

/// Rows of a [V, d] table selected by index -> [n, d].
Var gather_rows(Var table, std::span<const int> rows);

/// [m, p] ++ [m, q] -> [m, p + q].
Var concat_cols(Var a, Var b);

/// Columns [begin, end) of a 2-D value.
Var slice_cols(Var a, std::size_t begin, std::size_t end);

Var reshape(Var a, Shape shape);

/// Mean squared error over all elements.
Var mse(Var a, Var b);

/// Mean over rows of the softmax cross-entropy of [m, C] logits.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

// ---------------------------------------------------------------------------
// Adam.

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Tensor m;
  Tensor v;
  long step = 0;
};

/// One bias-corrected Adam step in place.
void adam_update(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& cfg);

class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Parameter*> params, AdamConfig cfg);

  void step();
  void zero_grad();

  AdamConfig& config() { return cfg_; }
  const std::vector<Parameter*>& params() const { return params_; }
  std::vector<AdamState>& states() { return states_; }
  const std::vector<AdamState>& states() const { return states_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<AdamState> states_;
  AdamConfig cfg_;
};

// ---------------------------------------------------------------------------
// Checkpoints: little-endian "OGRAD1", u64 count, then per tensor u32 name
// length, UTF-8 name, u32 rank, u64 dims, float64 payload.

struct NamedTensor {
  std::string name;
  Tensor value;
};

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

/// Finds a tensor by name; throws InvalidInput when absent.
const Tensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);

}  // namespace orient::tg
