#pragma once

// Minimal reverse-mode differentiation over dense matrices.
//
// A Tape records operations in creation order, so reverse creation order is a
// valid topological order for backward(). Parameters live outside the tape;
// backward() accumulates into Parameter::grad, which callers zero explicitly
// once per step.

#include "catflow/common.hpp"

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace catflow::diff {

struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Matrix value);

  std::string name;
  Matrix value;
  Matrix grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Gradient flows into param.grad on backward().
  Var parameter(Parameter& param);
  // Parameter value as a constant; nothing flows back.
  Var frozen(const Parameter& param) { return constant(param.value); }
  // Differentiable non-parameter input; read its gradient with grad().
  Var input(Matrix value);

  // Scalar loss: seeds d loss / d loss = 1.
  void backward(Var loss);
  // Vector-Jacobian product: seeds the output gradient with `cotangent`.
  void backward(Var output, const Matrix& cotangent);
  // Gradient of the most recent backward pass with respect to `v`
  // (zero-filled if nothing reached it).
  Matrix grad(Var v) const;
  // Clears node gradients so another backward pass can run on the same graph.
  void clear_grads();

  // --- primitives -------------------------------------------------------
  Var matmul(Var a, Var b);     // a b
  Var matmul_nt(Var a, Var b);  // a b^T
  Var add(Var a, Var b);        // same shape
  Var add_row(Var a, Var row);  // row (1 x C) broadcast over rows
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var div(Var a, Var b);  // elementwise
  Var scale(Var a, double s);
  Var scale_rows(Var a, const Vector& s);  // row i multiplied by constant s(i)
  Var broadcast(Var scalar, Eigen::Index rows, Eigen::Index cols);
  Var neg(Var a) { return scale(a, -1.0); }
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var softplus(Var a);
  Var square(Var a);
  Var sum(Var a);   // -> 1 x 1
  Var mean(Var a);  // -> 1 x 1
  Var col(Var a, Eigen::Index j);
  Var concat_cols(Var a, Var b);
  // Rows grouped into consecutive blocks of `block` rows; every row replaced
  // by its block mean.
  Var block_mean_broadcast(Var a, Eigen::Index block);
  // Column vector grouped into blocks of `block` rows -> one mean per block.
  Var block_mean(Var a, Eigen::Index block);
  Var gather_rows(Var table, std::span<const int> ids);
  Var softmax_rows(Var a);
  // Fused softmax + cross entropy: n x 1 column of -log softmax(logits)_i[target_i].
  Var softmax_cross_entropy(Var logits, std::span<const int> targets);
  Var stop_gradient(Var a);

  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Parameter* param = nullptr;
    std::function<void(Tape&, const Node&)> backprop;
  };

  Var push(Matrix value, bool needs_grad, std::function<void(Tape&, const Node&)> backprop);
  Node& node(Var v) { return *nodes_[static_cast<std::size_t>(v.id_)]; }
  const Node& node(Var v) const { return *nodes_[static_cast<std::size_t>(v.id_)]; }
  bool needs(Var v) const { return node(v).needs_grad; }
  void accumulate(Var v, const Matrix& g);
  template <class Expr>
  void accumulate_expr(Var v, const Expr& g);
  void run_backward(int from);
  void check_same_tape(Var a, Var b) const;

  std::vector<std::unique_ptr<Node>> nodes_;
};

// Central finite-difference gradient of `f` with respect to every entry of
// `param`, restoring the value afterwards.
Matrix finite_difference_gradient(Parameter& param, const std::function<double()>& f, double h = 1e-5);

}  // namespace catflow::diff
