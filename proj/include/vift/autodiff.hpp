#pragma once

// Minimal tape-based reverse-mode differentiation over dense row-major
// double tensors. Operations treat a tensor as a matrix whose column count
// is its last dimension and whose row count is the product of the others.

#include <Eigen/Core>
#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace vift::ad {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// Storage is 64-byte aligned so that Eigen's vectorized reductions take
// the same path for every buffer; results are then bitwise reproducible.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;
  using Storage = std::vector<double, Eigen::aligned_allocator<double>>;

  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }
  static Tensor from_matrix(const RowMatrix& m);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  MatrixMap matrix() { return {values_.data(), Eigen::Index(rows()), Eigen::Index(cols())}; }
  ConstMatrixMap matrix() const { return {values_.data(), Eigen::Index(rows()), Eigen::Index(cols())}; }

  bool all_finite() const;
  void fill(double v);
  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  Storage values_;
};

std::string shape_string(const Tensor::Shape& shape);

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Tensor& grad() const;
  const Tensor::Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Accumulates into the gradient buffers of a node's inputs. A null entry
/// means that input does not need a gradient.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> input_grads)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Trainable leaf that references `value`; it must outlive the tape.
  Var parameter(const Tensor& value);
  /// Owned leaf that receives a gradient.
  Var input(Tensor value);
  /// Owned leaf without gradient.
  Var constant(Tensor value);

  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const;
  const Tensor& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar node. Throws std::invalid_argument for a
  /// non-scalar loss.
  void backward(Var loss);
  /// Reverse sweep seeded with an explicit output gradient.
  void backward(Var output, const Tensor& seed);

 private:
  struct Node {
    Tensor owned;
    const Tensor* referenced = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    Tensor grad;
    bool grad_ready = false;

    const Tensor& value() const { return referenced ? *referenced : owned; }
  };

  void ensure_grad(Node& node);

  std::deque<Node> nodes_;
};

// ---- operations ---------------------------------------------------------

/// a[m x k] * b[k x n]. Throws std::invalid_argument naming both shapes.
Var matmul(Var a, Var b);
/// Same-shape add, or add of a row vector ({n} or {1, n}) to every row of a.
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double s);
Var relu(Var x);
Var transpose(Var x);
Var sum(Var x);
Var slice_cols(Var x, std::size_t begin, std::size_t count);
Var concat_cols(const std::vector<Var>& parts);
/// Row-wise softmax with per-row max subtraction. Entries equal to -inf get
/// exactly zero weight.
Var softmax_rows(Var x);
/// Normalizes each row to zero mean and unit variance (population variance
/// plus eps), then applies gain and bias of width cols(x).
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

/// Multi-head scaled dot-product attention over a batch of windows stacked
/// row-wise: q, k and v are [windows * window_length x d]. `mask` is an
/// additive window_length x window_length mask (0 or -inf). Head h uses
/// columns [h * d / heads, (h + 1) * d / heads) with logits scaled by
/// 1 / sqrt(d / heads).
Var masked_attention(Var q, Var k, Var v, std::size_t window_length, std::size_t heads, const Tensor& mask);

// ---- verification -------------------------------------------------------

using ScalarFunction = std::function<Var(Tape&, Var)>;

struct GradientCheck {
  double max_relative_error = 0.0;
  Tensor analytic;
  Tensor numeric;
};

/// Compares the tape gradient of a scalar function against central
/// differences, elementwise, with denominator max(|analytic|, |numeric|, 1e-8).
GradientCheck finite_diff_check(const ScalarFunction& f, const Tensor& x, double h = 1e-6);

}  // namespace vift::ad
