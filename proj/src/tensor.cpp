// SPDX-License-Identifier: Apache-2.0
#include "taskbot/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "taskbot/errors.hpp"

namespace taskbot {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

ConstMapMat as_mat(const Tensor& t) {
  return ConstMapMat(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}

ConstMapMat as_mat(std::span<const double> s, std::size_t rows, std::size_t cols) {
  return ConstMapMat(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MapMat as_mat(std::span<double> s, std::size_t rows, std::size_t cols) {
  return MapMat(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

Tape* same_tape(std::initializer_list<Var> vars) {
  Tape* tape = nullptr;
  for (const Var& v : vars) {
    if (!v.valid()) throw ContractError("operation on an invalid Var");
    if (tape == nullptr) tape = v.tape;
    if (v.tape != tape) throw ContractError("operands recorded on different tapes");
  }
  return tape;
}

Shape matrix_shape(std::size_t rows, std::size_t cols) { return Shape{rows, cols}; }

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void softmax_row(const double* in, double* out, std::size_t n) {
  double mx = in[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
  double z = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = std::exp(in[j] - mx);
    z += out[j];
  }
  for (std::size_t j = 0; j < n; ++j) out[j] /= z;
}

void require_finite(const Tensor& t, const char* what) {
  for (double x : t.data()) {
    if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite input");
  }
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  if (shape_.size() > 2) throw DimensionError("tensors of rank > 2 are not supported: " + shape_str(shape_));
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.size() > 2) throw DimensionError("tensors of rank > 2 are not supported: " + shape_str(shape_));
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                         " values");
  }
}

Tensor Tensor::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor(Shape{n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor(Shape{rows, cols}, std::move(v));
}

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 1;
  return shape_.back();
}

double Tensor::item() const {
  if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

void Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (on) {
    grad_.assign(data_.size(), 0.0);
  } else {
    grad_.clear();
    grad_.shrink_to_fit();
  }
}

void Tensor::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::MatMul: return "matmul";
    case Op::Linear: return "linear";
    case Op::Add: return "add";
    case Op::AddRow: return "add_row";
    case Op::Mul: return "mul";
    case Op::ScaleRows: return "scale_rows";
    case Op::Sigmoid: return "sigmoid";
    case Op::Tanh: return "tanh";
    case Op::ConcatCols: return "concat_cols";
    case Op::ConcatRows: return "concat_rows";
    case Op::SliceCols: return "slice_cols";
    case Op::SliceRows: return "slice_rows";
    case Op::GatherRows: return "gather_rows";
    case Op::Softmax: return "softmax";
    case Op::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    case Op::Sum: return "sum";
  }
  return "?";
}

const Tensor& Var::value() const {
  if (!valid()) throw ContractError("value() of an invalid Var");
  return tape->value(*this);
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor& param) {
  Node n;
  n.op = Op::Leaf;
  n.ref = &param;
  if (grad_enabled_ && param.requires_grad()) {
    if (!param.has_grad()) param.set_requires_grad(true);
    n.grad_sink = &param;
    n.needs_grad = true;
  }
  return push(std::move(n));
}

Var Tape::leaf(const Tensor& param) {
  Node n;
  n.op = Op::Leaf;
  n.ref = &param;
  return push(std::move(n));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

const Tensor& Tape::value(Var v) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
  return n.ref != nullptr ? *n.ref : n.value;
}

std::vector<Op> Tape::ops() const {
  std::vector<Op> out;
  out.reserve(nodes_.size());
  for (const Node& n : nodes_) out.push_back(n.op);
  return out;
}

bool Tape::any_needs_grad(const std::vector<int>& ids) const {
  if (!grad_enabled_) return false;
  return std::any_of(ids.begin(), ids.end(), [&](int id) { return nodes_[static_cast<std::size_t>(id)].needs_grad; });
}

std::span<double> Tape::adjoint(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad_sink != nullptr) return n.grad_sink->grad();
  return n.adj;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("backward: loss is not on this tape");
  const Tensor& lv = value(loss);
  if (lv.size() != 1) throw ContractError("backward: loss must be scalar, got shape " + shape_str(lv.shape()));
  if (!grad_enabled_) throw ContractError("backward on a tape with gradients disabled");
  backward_order_.clear();
  const auto last = static_cast<std::size_t>(loss.id);
  for (std::size_t i = 0; i <= last; ++i) {
    Node& n = nodes_[i];
    if (n.needs_grad && n.grad_sink == nullptr) n.adj.assign(value(Var{this, static_cast<int>(i)}).size(), 0.0);
  }
  if (!nodes_[last].needs_grad) return;
  adjoint(loss.id)[0] += 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || n.op == Op::Leaf) continue;
    backward_order_.push_back(i);
    backprop_node(i);
  }
  for (std::size_t i = 0; i <= last; ++i) {
    nodes_[i].adj.clear();
    nodes_[i].adj.shrink_to_fit();
  }
}

void Tape::backprop_node(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  std::vector<double> scaled;
  std::span<const double> g = n.adj;
  if (fault_on_ && n.op == fault_op_) {
    scaled.assign(n.adj.begin(), n.adj.end());
    for (double& x : scaled) x *= fault_factor_;
    g = scaled;
  }
  const Tensor& out = n.value;
  auto needs = [&](std::size_t k) { return nodes_[static_cast<std::size_t>(n.inputs[k])].needs_grad; };
  auto in_val = [&](std::size_t k) -> const Tensor& { return value(Var{this, n.inputs[k]}); };
  auto in_adj = [&](std::size_t k) { return adjoint(n.inputs[k]); };

  switch (n.op) {
    case Op::Leaf:
    case Op::Constant:
      break;
    case Op::MatMul: {
      const Tensor& a = in_val(0);
      const Tensor& b = in_val(1);
      auto G = as_mat(g, out.rows(), out.cols());
      if (needs(0)) as_mat(in_adj(0), a.rows(), a.cols()).noalias() += G * as_mat(b).transpose();
      if (needs(1)) as_mat(in_adj(1), b.rows(), b.cols()).noalias() += as_mat(a).transpose() * G;
      break;
    }
    case Op::Linear: {
      const Tensor& x = in_val(0);
      const Tensor& w = in_val(1);
      auto G = as_mat(g, out.rows(), out.cols());
      if (needs(0)) as_mat(in_adj(0), x.rows(), x.cols()).noalias() += G * as_mat(w);
      if (needs(1)) as_mat(in_adj(1), w.rows(), w.cols()).noalias() += G.transpose() * as_mat(x);
      if (n.inputs.size() > 2 && needs(2)) {
        auto db = in_adj(2);
        for (std::size_t r = 0; r < out.rows(); ++r)
          for (std::size_t c = 0; c < out.cols(); ++c) db[c] += g[r * out.cols() + c];
      }
      break;
    }
    case Op::Add: {
      for (std::size_t k = 0; k < 2; ++k) {
        if (!needs(k)) continue;
        auto d = in_adj(k);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
      break;
    }
    case Op::AddRow: {
      if (needs(0)) {
        auto d = in_adj(0);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
      if (needs(1)) {
        auto db = in_adj(1);
        const std::size_t cols = out.cols();
        for (std::size_t i = 0; i < g.size(); ++i) db[i % cols] += g[i];
      }
      break;
    }
    case Op::Mul: {
      const Tensor& a = in_val(0);
      const Tensor& b = in_val(1);
      if (needs(0)) {
        auto d = in_adj(0);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * b[i];
      }
      if (needs(1)) {
        auto d = in_adj(1);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * a[i];
      }
      break;
    }
    case Op::ScaleRows: {
      if (needs(0)) {
        auto d = in_adj(0);
        const std::size_t cols = out.cols();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * n.aux[i / cols];
      }
      break;
    }
    case Op::Sigmoid: {
      auto d = in_adj(0);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * out[i] * (1.0 - out[i]);
      break;
    }
    case Op::Tanh: {
      auto d = in_adj(0);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (1.0 - out[i] * out[i]);
      break;
    }
    case Op::ConcatCols: {
      const std::size_t rows = out.rows();
      const std::size_t cols = out.cols();
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t w = in_val(k).cols();
        if (needs(k)) {
          auto d = in_adj(k);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < w; ++c) d[r * w + c] += g[r * cols + offset + c];
        }
        offset += w;
      }
      break;
    }
    case Op::ConcatRows: {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t len = in_val(k).size();
        if (needs(k)) {
          auto d = in_adj(k);
          for (std::size_t i = 0; i < len; ++i) d[i] += g[offset + i];
        }
        offset += len;
      }
      break;
    }
    case Op::SliceCols: {
      const std::size_t in_cols = in_val(0).cols();
      const std::size_t w = n.end - n.begin;
      auto d = in_adj(0);
      for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < w; ++c) d[r * in_cols + n.begin + c] += g[r * w + c];
      break;
    }
    case Op::SliceRows: {
      const std::size_t cols = out.cols();
      auto d = in_adj(0);
      for (std::size_t i = 0; i < g.size(); ++i) d[n.begin * cols + i] += g[i];
      break;
    }
    case Op::GatherRows: {
      const std::size_t cols = out.cols();
      auto d = in_adj(0);
      for (std::size_t r = 0; r < n.index.size(); ++r)
        for (std::size_t c = 0; c < cols; ++c) d[n.index[r] * cols + c] += g[r * cols + c];
      break;
    }
    case Op::Softmax: {
      const std::size_t cols = out.cols();
      auto d = in_adj(0);
      for (std::size_t r = 0; r < out.rows(); ++r) {
        const double* p = &out[r * cols];
        const double* gr = &g[r * cols];
        double dotp = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dotp += gr[c] * p[c];
        for (std::size_t c = 0; c < cols; ++c) d[r * cols + c] += p[c] * (gr[c] - dotp);
      }
      break;
    }
    case Op::SoftmaxCrossEntropy: {
      const Tensor& logits = in_val(0);
      const std::size_t cols = logits.cols();
      const std::size_t rows = logits.rows();
      auto d = in_adj(0);
      // n.aux holds [row weights | probabilities].
      const double* probs = n.aux.data() + rows;
      for (std::size_t r = 0; r < rows; ++r) {
        const double w = n.aux[r];
        if (w == 0.0) continue;
        const long label = static_cast<long>(n.index[r]);
        for (std::size_t c = 0; c < cols; ++c) {
          const double target = static_cast<long>(c) == label ? 1.0 : 0.0;
          d[r * cols + c] += g[0] * w * (probs[r * cols + c] - target);
        }
      }
      break;
    }
    case Op::Sum: {
      auto d = in_adj(0);
      for (double& x : d) x += g[0];
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Forward ops

Var matmul(Var a, Var b) {
  Tape* tape = same_tape({a, b});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() == 0 || bv.rank() == 0 || av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()));
  }
  Tensor out(matrix_shape(av.rows(), bv.cols()));
  as_mat(out.data(), out.rows(), out.cols()).noalias() = as_mat(av) * as_mat(bv);
  Tape::Node n;
  n.op = Op::MatMul;
  n.inputs = {a.id, b.id};
  n.value = std::move(out);
  n.needs_grad = tape->any_needs_grad(n.inputs);
  return tape->push(std::move(n));
}

Var linear(Var x, Var weight, Var bias) {
  Tape* tape = same_tape({x, weight, bias});
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  if (wv.rank() != 2 || xv.cols() != wv.cols() || bv.size() != wv.rows()) {
    throw DimensionError("linear: incompatible shapes " + shape_str(xv.shape()) + ", weight " +
                         shape_str(wv.shape()) + ", bias " + shape_str(bv.shape()));
  }
  Tensor out(matrix_shape(xv.rows(), wv.rows()));
  auto O = as_mat(out.data(), out.rows(), out.cols());
  O.noalias() = as_mat(xv) * as_mat(wv).transpose();
  O.rowwise() += as_mat(bv.data(), 1, bv.size()).row(0);
  Tape::Node n;
  n.op = Op::Linear;
  n.inputs = {x.id, weight.id, bias.id};
  n.value = std::move(out);
  n.needs_grad = tape->any_needs_grad(n.inputs);
  return tape->push(std::move(n));
}

Var linear(Var x, Var weight) {
  Tape* tape = same_tape({x, weight});
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (wv.rank() != 2 || xv.cols() != wv.cols()) {
    throw DimensionError("linear: incompatible shapes " + shape_str(xv.shape()) + ", weight " +
                         shape_str(wv.shape()));
  }
  Tensor out(matrix_shape(xv.rows(), wv.rows()));
  as_mat(out.data(), out.rows(), out.cols()).noalias() = as_mat(xv) * as_mat(wv).transpose();
  Tape::Node n;
  n.op = Op::Linear;
  n.inputs = {x.id, weight.id};
  n.value = std::move(out);
  n.needs_grad = tape->any_needs_grad(n.inputs);
  return tape->push(std::move(n));
}

Var add(Var a, Var b) {
  Tape* tape = same_tape({a, b});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw DimensionError("add: shapes differ " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  Tape::Node n;
  n.op = Op::Add;
  n.inputs = {a.id, b.id};
  n.value = std::move(out);
  n.needs_grad = tape->any_needs_grad(n.inputs);
  return tape->push(std::move(n));
}

Var add_row(Var a, Var bias) {
  Tape* tape = same_tape({a, bias});
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  if (bv.size() != av.cols() || bv.rank() > 1) {
    throw DimensionError("add_row: bias " + shape_str(bv.shape()) + " does not match " + shape_str(av.shape()));
  }
  Tensor out(av.shape());
  const std::size_t cols = av.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i % cols];
  Tape::Node n;
  n.op = Op::AddRow;
  n.inputs = {a.id, bias.id};
  n.value = std::move(out);
  n.needs_grad = tape->any_needs_grad(n.inputs);
  return tape->push(std::move(n));
}

Var mul(Var a, Var b) {
  Tape* tape = same_tape({a, b});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw DimensionError("mul: shapes differ " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  Tape::Node n;
  n.op = Op::Mul;
  n.inputs = {a.id, b.id};
  n.value = std::move(out);
  n.needs_grad = tape->any_needs_grad(n.inputs);
  return tape->push(std::move(n));
}

Var scale_rows(Var a, std::vector<double> weights) {
  Tape* tape = same_tape({a});
  const Tensor& av = a.value();
  if (weights.size() != av.rows()) {
    throw DimensionError("scale_rows: " + std::to_string(weights.size()) + " weights for " +
                         shape_str(av.shape()));
  }
  Tensor out(av.shape());
  const std::size_t cols = av.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * weights[i / cols];
  Tape::Node n;
  n.op = Op::ScaleRows;
  n.inputs = {a.id};
  n.value = std::move(out);
  n.aux = std::move(weights);
  n.needs_grad = tape->any_needs_grad(n.inputs);
  return tape->push(std::move(n));
}

Var sigmoid(Var a) {
  Tape* tape = same_tape({a});
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(av[i]);
  Tape::Node n;
  n.op = Op::Sigmoid;
  n.inputs = {a.id};
  n.value = std::move(out);
  n.needs_grad = tape->any_needs_grad(n.inputs);
  return tape->push(std::move(n));
}

Var tanh(Var a) {
  Tape* tape = same_tape({a});
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(av[i]);
  Tape::Node n;
  n.op = Op::Tanh;
  n.inputs = {a.id};
  n.value = std::move(out);
  n.needs_grad = tape->any_needs_grad(n.inputs);
  return tape->push(std::move(n));
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  Tape* tape = parts.front().tape;
  const std::size_t rows = parts.front().value().rows();
  bool all_vectors = true;
  std::size_t cols = 0;
  for (const Var& p : parts) {
    same_tape({parts.front(), p});
    const Tensor& v = p.value();
    if (v.rows() != rows) {
      throw DimensionError("concat_cols: row count " + std::to_string(v.rows()) + " != " + std::to_string(rows) +
                           " for " + shape_str(v.shape()));
    }
    all_vectors = all_vectors && v.rank() <= 1;
    cols += v.cols();
  }
  Tensor out(all_vectors ? Shape{cols} : matrix_shape(rows, cols));
  std::size_t offset = 0;
  Tape::Node n;
  n.op = Op::ConcatCols;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    const std::size_t w = v.cols();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) out[r * cols + offset + c] = v[r * w + c];
    offset += w;
    n.inputs.push_back(p.id);
  }
  n.value = std::move(out);
  n.needs_grad = tape->any_needs_grad(n.inputs);
  return tape->push(std::move(n));
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  Tape* tape = parts.front().tape;
  const std::size_t cols = parts.front().value().cols();
  std::size_t rows = 0;
  Tape::Node n;
  n.op = Op::ConcatRows;
  for (const Var& p : parts) {
    same_tape({parts.front(), p});
    const Tensor& v = p.value();
    if (v.cols() != cols) {
      throw DimensionError("concat_rows: column count mismatch " + shape_str(parts.front().value().shape()) +
                           " vs " + shape_str(v.shape()));
    }
    rows += v.rows();
    n.inputs.push_back(p.id);
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const Var& p : parts) {
    const auto d = p.value().data();
    data.insert(data.end(), d.begin(), d.end());
  }
  n.value = Tensor(matrix_shape(rows, cols), std::move(data));
  n.needs_grad = tape->any_needs_grad(n.inputs);
  return tape->push(std::move(n));
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Tape* tape = same_tape({a});
  const Tensor& av = a.value();
  if (begin > end || end > av.cols()) {
    throw IndexError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of bounds for " + shape_str(av.shape()));
  }
  const std::size_t w = end - begin;
  const std::size_t rows = av.rows();
  Tensor out(av.rank() <= 1 ? Shape{w} : matrix_shape(rows, w));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = av[r * av.cols() + begin + c];
  Tape::Node n;
  n.op = Op::SliceCols;
  n.inputs = {a.id};
  n.value = std::move(out);
  n.begin = begin;
  n.end = end;
  n.needs_grad = tape->any_needs_grad(n.inputs);
  return tape->push(std::move(n));
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  Tape* tape = same_tape({a});
  const Tensor& av = a.value();
  if (begin > end || end > av.rows()) {
    throw IndexError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of bounds for " + shape_str(av.shape()));
  }
  const std::size_t cols = av.cols();
  std::vector<double> data(av.data().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                           av.data().begin() + static_cast<std::ptrdiff_t>(end * cols));
  Tape::Node n;
  n.op = Op::SliceRows;
  n.inputs = {a.id};
  n.value = Tensor(matrix_shape(end - begin, cols), std::move(data));
  n.begin = begin;
  n.end = end;
  n.needs_grad = tape->any_needs_grad(n.inputs);
  return tape->push(std::move(n));
}

Var gather_rows(Var table, std::vector<std::size_t> rows) {
  Tape* tape = same_tape({table});
  const Tensor& tv = table.value();
  const std::size_t cols = tv.cols();
  Tensor out(matrix_shape(rows.size(), cols));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= tv.rows()) {
      throw IndexError("gather_rows: row " + std::to_string(rows[r]) + " out of range for " +
                       shape_str(tv.shape()));
    }
    std::copy_n(&tv[rows[r] * cols], cols, &out[r * cols]);
  }
  Tape::Node n;
  n.op = Op::GatherRows;
  n.inputs = {table.id};
  n.value = std::move(out);
  n.index = std::move(rows);
  n.needs_grad = tape->any_needs_grad(n.inputs);
  return tape->push(std::move(n));
}

Var softmax(Var logits) {
  Tape* tape = same_tape({logits});
  const Tensor& lv = logits.value();
  if (lv.size() == 0) throw DimensionError("softmax: empty input");
  require_finite(lv, "softmax");
  Tensor out(lv.shape());
  const std::size_t cols = lv.cols();
  for (std::size_t r = 0; r < lv.rows(); ++r) softmax_row(&lv[r * cols], &out[r * cols], cols);
  Tape::Node n;
  n.op = Op::Softmax;
  n.inputs = {logits.id};
  n.value = std::move(out);
  n.needs_grad = tape->any_needs_grad(n.inputs);
  return tape->push(std::move(n));
}

Var softmax_cross_entropy(Var logits, std::vector<long> labels, std::vector<double> weights) {
  Tape* tape = same_tape({logits});
  const Tensor& lv = logits.value();
  const std::size_t rows = lv.rows();
  const std::size_t cols = lv.cols();
  if (labels.size() != rows || weights.size() != rows) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels / " +
                         std::to_string(weights.size()) + " weights for logits " + shape_str(lv.shape()));
  }
  require_finite(lv, "softmax_cross_entropy");
  Tape::Node n;
  n.op = Op::SoftmaxCrossEntropy;
  n.inputs = {logits.id};
  n.aux.assign(rows + rows * cols, 0.0);
  n.index.assign(rows, 0);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] < 0) continue;
    if (static_cast<std::size_t>(labels[r]) >= cols) {
      throw IndexError("softmax_cross_entropy: label " + std::to_string(labels[r]) + " out of range for " +
                       std::to_string(cols) + " classes");
    }
    n.aux[r] = weights[r];
    n.index[r] = static_cast<std::size_t>(labels[r]);
    double* p = &n.aux[rows + r * cols];
    const double* z = &lv[r * cols];
    double mx = z[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, z[c]);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(z[c] - mx);
    const double log_z = mx + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) p[c] = std::exp(z[c] - log_z);
    loss += weights[r] * (log_z - z[labels[r]]);
  }
  n.value = Tensor::scalar(loss);
  n.needs_grad = tape->any_needs_grad(n.inputs);
  return tape->push(std::move(n));
}

Var sum(Var a) {
  Tape* tape = same_tape({a});
  double total = 0.0;
  for (double x : a.value().data()) total += x;
  Tape::Node n;
  n.op = Op::Sum;
  n.inputs = {a.id};
  n.value = Tensor::scalar(total);
  n.needs_grad = tape->any_needs_grad(n.inputs);
  return tape->push(std::move(n));
}

Tensor softmax(const Tensor& logits) {
  if (logits.size() == 0) throw DimensionError("softmax: empty input");
  require_finite(logits, "softmax");
  Tensor out(logits.shape());
  const std::size_t cols = logits.cols();
  for (std::size_t r = 0; r < logits.rows(); ++r) softmax_row(&logits[r * cols], &out[r * cols], cols);
  return out;
}

double cross_entropy(const Tensor& dist, std::size_t label) {
  if (label >= dist.size()) {
    throw IndexError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                     std::to_string(dist.size()) + " classes");
  }
  const double p = dist[label];
  if (p <= 0.0) return std::numeric_limits<double>::infinity();
  return -std::log(p);
}

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace taskbot
