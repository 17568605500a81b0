#include "catflow/diffkit.hpp"

#include <cmath>

namespace catflow::diff {

Parameter::Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)) { zero_grad(); }

const Matrix& Var::value() const { return tape_->node(*this).value; }

Var Tape::push(Matrix value, bool needs_grad, std::function<void(Tape&, const Node&)> backprop) {
  auto n = std::make_unique<Node>();
  n->value = std::move(value);
  n->needs_grad = needs_grad;
  if (needs_grad) n->backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::check_same_tape(Var a, Var b) const {
  if (a.tape_ != this || b.tape_ != this) throw InvalidInput("diffkit: operands recorded on different tapes");
}

void Tape::accumulate(Var v, const Matrix& g) { accumulate_expr(v, g); }

template <class Expr>
void Tape::accumulate_expr(Var v, const Expr& g) {
  Node& n = node(v);
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::parameter(Parameter& param) {
  Var v = push(param.value, true, [](Tape&, const Node&) {});
  node(v).param = &param;
  return v;
}

Var Tape::input(Matrix value) { return push(std::move(value), true, [](Tape&, const Node&) {}); }

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw InvalidInput("backward: variable from another tape");
  if (loss.rows() != 1 || loss.cols() != 1) throw InvalidInput("backward: loss must be a scalar (1 x 1)");
  backward(loss, Matrix::Ones(1, 1));
}

void Tape::backward(Var output, const Matrix& cotangent) {
  if (output.tape_ != this) throw InvalidInput("backward: variable from another tape");
  if (cotangent.rows() != output.rows() || cotangent.cols() != output.cols()) {
    throw InvalidInput("backward: cotangent shape does not match output");
  }
  clear_grads();
  Node& out = node(output);
  if (!out.needs_grad) return;
  out.grad = cotangent;
  run_backward(output.id_);
}

void Tape::run_backward(int from) {
  for (int i = from; i >= 0; --i) {
    Node& n = *nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.param != nullptr) {
      if (n.param->grad.rows() != n.grad.rows() || n.param->grad.cols() != n.grad.cols()) {
        n.param->zero_grad();
      }
      n.param->grad += n.grad;
    }
    n.backprop(*this, n);
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::clear_grads() {
  for (auto& n : nodes_) n->grad.resize(0, 0);
}

Var Tape::matmul(Var a, Var b) {
  check_same_tape(a, b);
  if (a.cols() != b.rows()) throw InvalidInput("matmul: inner dimensions differ");
  return push(a.value() * b.value(), needs(a) || needs(b), [a, b](Tape& t, const Node& self) {
    if (t.needs(a)) t.accumulate(a, self.grad * b.value().transpose());
    if (t.needs(b)) t.accumulate(b, a.value().transpose() * self.grad);
  });
}

Var Tape::matmul_nt(Var a, Var b) {
  check_same_tape(a, b);
  if (a.cols() != b.cols()) throw InvalidInput("matmul_nt: column counts differ");
  return push(a.value() * b.value().transpose(), needs(a) || needs(b), [a, b](Tape& t, const Node& self) {
    if (t.needs(a)) t.accumulate(a, self.grad * b.value());
    if (t.needs(b)) t.accumulate(b, self.grad.transpose() * a.value());
  });
}

Var Tape::add(Var a, Var b) {
  check_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvalidInput("add: shape mismatch");
  return push(a.value() + b.value(), needs(a) || needs(b), [a, b](Tape& t, const Node& self) {
    t.accumulate(a, self.grad);
    t.accumulate(b, self.grad);
  });
}

Var Tape::add_row(Var a, Var row) {
  check_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw InvalidInput("add_row: row must be 1 x cols(a)");
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return push(std::move(out), needs(a) || needs(row), [a, row](Tape& t, const Node& self) {
    t.accumulate(a, self.grad);
    if (t.needs(row)) t.accumulate(row, self.grad.colwise().sum());
  });
}

Var Tape::sub(Var a, Var b) {
  check_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvalidInput("sub: shape mismatch");
  return push(a.value() - b.value(), needs(a) || needs(b), [a, b](Tape& t, const Node& self) {
    t.accumulate(a, self.grad);
    if (t.needs(b)) t.accumulate(b, -self.grad);
  });
}

Var Tape::mul(Var a, Var b) {
  check_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvalidInput("mul: shape mismatch");
  return push(a.value().cwiseProduct(b.value()), needs(a) || needs(b), [a, b](Tape& t, const Node& self) {
    if (t.needs(a)) t.accumulate(a, self.grad.cwiseProduct(b.value()));
    if (t.needs(b)) t.accumulate(b, self.grad.cwiseProduct(a.value()));
  });
}

Var Tape::div(Var a, Var b) {
  check_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvalidInput("div: shape mismatch");
  Matrix out = a.value().cwiseQuotient(b.value());
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Node& self) {
    if (t.needs(a)) t.accumulate(a, self.grad.cwiseQuotient(b.value()));
    if (t.needs(b)) {
      const Matrix g = -self.grad.cwiseProduct(self.value).cwiseQuotient(b.value());
      t.accumulate(b, g);
    }
  });
}

Var Tape::scale(Var a, double s) {
  return push(a.value() * s, needs(a), [a, s](Tape& t, const Node& self) { t.accumulate(a, self.grad * s); });
}

Var Tape::scale_rows(Var a, const Vector& s) {
  if (s.size() != a.rows()) throw InvalidInput("scale_rows: scale vector length must equal rows");
  Matrix out = s.asDiagonal() * a.value();
  return push(std::move(out), needs(a), [a, s](Tape& t, const Node& self) {
    t.accumulate(a, Matrix(s.asDiagonal() * self.grad));
  });
}

Var Tape::broadcast(Var scalar, Eigen::Index rows, Eigen::Index cols) {
  if (scalar.rows() != 1 || scalar.cols() != 1) throw InvalidInput("broadcast: operand must be 1 x 1");
  return push(Matrix::Constant(rows, cols, scalar.value()(0, 0)), needs(scalar),
              [scalar](Tape& t, const Node& self) { t.accumulate(scalar, Matrix::Constant(1, 1, self.grad.sum())); });
}

Var Tape::tanh(Var a) {
  Matrix out = a.value().array().tanh().matrix();
  return push(std::move(out), needs(a), [a](Tape& t, const Node& self) {
    t.accumulate(a, Matrix(self.grad.array() * (1.0 - self.value.array().square())));
  });
}

Var Tape::sigmoid(Var a) {
  Matrix out = a.value().unaryExpr([](double x) { return catflow::sigmoid(x); });
  return push(std::move(out), needs(a), [a](Tape& t, const Node& self) {
    t.accumulate(a, Matrix(self.grad.array() * self.value.array() * (1.0 - self.value.array())));
  });
}

Var Tape::exp(Var a) {
  Matrix out = a.value().array().exp().matrix();
  return push(std::move(out), needs(a), [a](Tape& t, const Node& self) {
    t.accumulate(a, Matrix(self.grad.cwiseProduct(self.value)));
  });
}

Var Tape::log(Var a) {
  Matrix out = a.value().array().log().matrix();
  return push(std::move(out), needs(a), [a](Tape& t, const Node& self) {
    t.accumulate(a, Matrix(self.grad.cwiseQuotient(a.value())));
  });
}

Var Tape::softplus(Var a) {
  Matrix out = a.value().unaryExpr([](double x) { return catflow::softplus(x); });
  return push(std::move(out), needs(a), [a](Tape& t, const Node& self) {
    const Matrix s = a.value().unaryExpr([](double x) { return catflow::sigmoid(x); });
    t.accumulate(a, Matrix(self.grad.cwiseProduct(s)));
  });
}

Var Tape::square(Var a) {
  Matrix out = a.value().array().square().matrix();
  return push(std::move(out), needs(a), [a](Tape& t, const Node& self) {
    t.accumulate(a, Matrix(2.0 * self.grad.cwiseProduct(a.value())));
  });
}

Var Tape::sum(Var a) {
  return push(Matrix::Constant(1, 1, a.value().sum()), needs(a), [a](Tape& t, const Node& self) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), self.grad(0, 0)));
  });
}

Var Tape::mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw InvalidInput("mean: empty operand");
  return push(Matrix::Constant(1, 1, a.value().sum() / n), needs(a), [a, n](Tape& t, const Node& self) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), self.grad(0, 0) / n));
  });
}

Var Tape::col(Var a, Eigen::Index j) {
  if (j < 0 || j >= a.cols()) throw InvalidInput("col: index out of range");
  Matrix out = a.value().col(j);
  return push(std::move(out), needs(a), [a, j](Tape& t, const Node& self) {
    Matrix g = Matrix::Zero(a.rows(), a.cols());
    g.col(j) = self.grad.col(0);
    t.accumulate(a, g);
  });
}

Var Tape::concat_cols(Var a, Var b) {
  check_same_tape(a, b);
  if (a.rows() != b.rows()) throw InvalidInput("concat_cols: row counts differ");
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Eigen::Index ca = a.cols();
  return push(std::move(out), needs(a) || needs(b), [a, b, ca](Tape& t, const Node& self) {
    if (t.needs(a)) t.accumulate(a, Matrix(self.grad.leftCols(ca)));
    if (t.needs(b)) t.accumulate(b, Matrix(self.grad.rightCols(self.grad.cols() - ca)));
  });
}

Var Tape::block_mean_broadcast(Var a, Eigen::Index block) {
  if (block < 1 || a.rows() % block != 0) throw InvalidInput("block_mean_broadcast: rows not divisible by block");
  const Eigen::Index nb = a.rows() / block;
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index b = 0; b < nb; ++b) {
    const Eigen::RowVectorXd m = a.value().middleRows(b * block, block).colwise().mean();
    out.middleRows(b * block, block).rowwise() = m;
  }
  return push(std::move(out), needs(a), [a, block, nb](Tape& t, const Node& self) {
    Matrix g(a.rows(), a.cols());
    for (Eigen::Index b = 0; b < nb; ++b) {
      const Eigen::RowVectorXd m = self.grad.middleRows(b * block, block).colwise().mean();
      g.middleRows(b * block, block).rowwise() = m;
    }
    t.accumulate(a, g);
  });
}

Var Tape::block_mean(Var a, Eigen::Index block) {
  if (a.cols() != 1) throw InvalidInput("block_mean: operand must be a column");
  if (block < 1 || a.rows() % block != 0) throw InvalidInput("block_mean: rows not divisible by block");
  const Eigen::Index nb = a.rows() / block;
  Matrix out(nb, 1);
  for (Eigen::Index b = 0; b < nb; ++b) out(b, 0) = a.value().middleRows(b * block, block).mean();
  return push(std::move(out), needs(a), [a, block, nb](Tape& t, const Node& self) {
    Matrix g(a.rows(), 1);
    for (Eigen::Index b = 0; b < nb; ++b) g.middleRows(b * block, block).setConstant(self.grad(b, 0) / block);
    t.accumulate(a, g);
  });
}

Var Tape::gather_rows(Var table, std::span<const int> ids) {
  const Matrix& tv = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) throw InvalidInput("gather_rows: id out of range");
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return push(std::move(out), needs(table), [table, idv = std::move(idv)](Tape& t, const Node& self) {
    Matrix g = Matrix::Zero(table.rows(), table.cols());
    for (std::size_t i = 0; i < idv.size(); ++i) g.row(idv[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    t.accumulate(table, g);
  });
}

namespace {

Matrix softmax_of(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    out.row(i) = (x.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

}  // namespace

Var Tape::softmax_rows(Var a) {
  return push(softmax_of(a.value()), needs(a), [a](Tape& t, const Node& self) {
    // dx = p * (g - <g, p>) rowwise
    const Vector inner = self.grad.cwiseProduct(self.value).rowwise().sum();
    Matrix g = self.grad;
    g.colwise() -= inner;
    t.accumulate(a, Matrix(g.cwiseProduct(self.value)));
  });
}

Var Tape::softmax_cross_entropy(Var logits, std::span<const int> targets) {
  const Matrix& x = logits.value();
  if (static_cast<Eigen::Index>(targets.size()) != x.rows()) {
    throw InvalidInput("softmax_cross_entropy: one target per row required");
  }
  Matrix out(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int k = targets[static_cast<std::size_t>(i)];
    if (k < 0 || k >= x.cols()) throw InvalidInput("softmax_cross_entropy: target out of range");
    const double m = x.row(i).maxCoeff();
    const double lse = m + std::log((x.row(i).array() - m).exp().sum());
    out(i, 0) = lse - x(i, k);
  }
  std::vector<int> tv(targets.begin(), targets.end());
  return push(std::move(out), needs(logits), [logits, tv = std::move(tv)](Tape& t, const Node& self) {
    Matrix g = softmax_of(logits.value());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      g(i, tv[static_cast<std::size_t>(i)]) -= 1.0;
      g.row(i) *= self.grad(i, 0);
    }
    t.accumulate(logits, g);
  });
}

Var Tape::stop_gradient(Var a) { return constant(a.value()); }

Matrix finite_difference_gradient(Parameter& param, const std::function<double()>& f, double h) {
  Matrix g(param.value.rows(), param.value.cols());
  for (Eigen::Index i = 0; i < param.value.size(); ++i) {
    double& x = param.value.data()[i];
    const double x0 = x;
    x = x0 + h;
    const double fp = f();
    x = x0 - h;
    const double fm = f();
    x = x0;
    g.data()[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace catflow::diff
