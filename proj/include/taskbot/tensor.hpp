// SPDX-License-Identifier: Apache-2.0
//
// Dense double-precision tensors and a reverse-mode gradient tape.
//
// Tensors are rank 0, 1 or 2, stored row-major. A rank-1 tensor behaves as a
// single row wherever a matrix is expected. The only broadcasting supported
// is adding a bias row to every row of a matrix.
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace taskbot {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  /// Row count when viewed as a matrix (1 for rank 0/1).
  std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return requires_grad_; }
  /// Enabling allocates a zeroed gradient buffer; disabling frees it.
  void set_requires_grad(bool on);
  bool has_grad() const { return !grad_.empty(); }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }
  void zero_grad();

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
  bool requires_grad_ = false;
};

enum class Op : std::uint8_t {
  Leaf,
  Constant,
  MatMul,
  Linear,
  Add,
  AddRow,
  Mul,
  ScaleRows,
  Sigmoid,
  Tanh,
  ConcatCols,
  ConcatRows,
  SliceCols,
  SliceRows,
  GatherRows,
  Softmax,
  SoftmaxCrossEntropy,
  Sum,
};

const char* op_name(Op op);

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Records operations in forward order and replays their gradient rules in
/// exact reverse order.
///
/// Parameters enter the tape as leaves that reference caller-owned tensors;
/// `backward` accumulates into the leaves' own gradient buffers. A tape built
/// with gradients disabled only computes values and may reference parameters
/// that are shared read-only between threads.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  /// A leaf for a parameter. Gradients flow into `param.grad()` when the tape
  /// has gradients enabled and `param.requires_grad()` is set.
  Var leaf(Tensor& param);
  Var leaf(const Tensor& param);
  Var constant(Tensor value);

  const Tensor& value(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  /// Op of every recorded node in forward order.
  std::vector<Op> ops() const;

  /// Populates gradients of every reachable leaf. `loss` must hold exactly
  /// one element.
  void backward(Var loss);

  /// Visiting order of the last backward pass (node ids).
  const std::vector<int>& last_backward_order() const { return backward_order_; }

  /// Test hook for gradient-check sensitivity: the backward rule of `op`
  /// propagates a scaled (wrong) adjoint.
  void corrupt_backward(Op op, double factor = 1.5) {
    fault_op_ = op;
    fault_factor_ = factor;
    fault_on_ = true;
  }

 private:
  friend Var matmul(Var, Var);
  friend Var linear(Var, Var, Var);
  friend Var linear(Var, Var);
  friend Var add(Var, Var);
  friend Var add_row(Var, Var);
  friend Var mul(Var, Var);
  friend Var scale_rows(Var, std::vector<double>);
  friend Var sigmoid(Var);
  friend Var tanh(Var);
  friend Var concat_cols(const std::vector<Var>&);
  friend Var concat_rows(const std::vector<Var>&);
  friend Var slice_cols(Var, std::size_t, std::size_t);
  friend Var slice_rows(Var, std::size_t, std::size_t);
  friend Var gather_rows(Var, std::vector<std::size_t>);
  friend Var softmax(Var);
  friend Var softmax_cross_entropy(Var, std::vector<long>, std::vector<double>);
  friend Var sum(Var);

  struct Node {
    Op op = Op::Constant;
    std::vector<int> inputs;
    Tensor value;
    const Tensor* ref = nullptr;  // leaves: caller-owned value
    Tensor* grad_sink = nullptr;   // leaves: where gradients accumulate
    std::vector<double> adj;
    bool needs_grad = false;
    std::vector<std::size_t> index;  // gather rows / labels
    std::vector<double> aux;         // row weights / cached probabilities
    std::size_t begin = 0;
    std::size_t end = 0;
  };

  Var push(Node node);
  std::span<double> adjoint(int id);
  void backprop_node(int id);
  bool any_needs_grad(const std::vector<int>& ids) const;

  std::vector<Node> nodes_;
  std::vector<int> backward_order_;
  bool grad_enabled_;
  bool fault_on_ = false;
  Op fault_op_ = Op::Leaf;
  double fault_factor_ = 1.0;
};

/// Matrix product a[m×k]·b[k×n].
Var matmul(Var a, Var b);
/// x[B×D]·Wᵀ + bias, with W[N×D] and bias[N].
Var linear(Var x, Var weight, Var bias);
Var linear(Var x, Var weight);
Var add(Var a, Var b);
/// Adds bias[N] to every row of a[B×N].
Var add_row(Var a, Var bias);
Var mul(Var a, Var b);
/// Multiplies row i of `a` by the constant weights[i].
Var scale_rows(Var a, std::vector<double> weights);
Var sigmoid(Var a);
Var tanh(Var a);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
/// Columns [begin, end).
Var slice_cols(Var a, std::size_t begin, std::size_t end);
/// Rows [begin, end).
Var slice_rows(Var a, std::size_t begin, std::size_t end);
/// Row-select: out[i] = table[rows[i]].
Var gather_rows(Var table, std::vector<std::size_t> rows);
/// Row-wise softmax with max subtraction.
Var softmax(Var logits);
/// Σᵢ weights[i]·(−log softmax(logits[i])[labels[i]]). Rows with a negative
/// label are skipped. Returns a scalar.
Var softmax_cross_entropy(Var logits, std::vector<long> labels, std::vector<double> weights);
Var sum(Var a);

// Tape-free helpers on plain tensors.

/// Naive row-wise softmax of a rank-1 or rank-2 tensor (inference path).
Tensor softmax(const Tensor& logits);
/// −log(dist[label]) for a probability vector.
double cross_entropy(const Tensor& dist, std::size_t label);
/// Lowest index of the maximum entry.
std::size_t argmax(std::span<const double> v);

}  // namespace taskbot
