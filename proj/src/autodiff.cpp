#include "recad/autodiff.hpp"

#include <cmath>

#include "recad/errors.hpp"

namespace recad::ad {

const Matrix& Var::value() const { return tape_->value_of(id_); }

void Tape::track_only(std::span<const Parameter* const> params) {
  restricted_ = true;
  tracked_.clear();
  tracked_.insert(params.begin(), params.end());
}

Var Tape::constant(Matrix value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(const Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Node node;
  node.value = p.value;
  if (mode_ == Mode::Train && (!restricted_ || tracked_.contains(&p))) {
    node.requires_grad = true;
    node.param = &p;
  }
  nodes_.push_back(std::move(node));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(&p, id);
  return Var(this, id);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backprop backprop) {
  Node node;
  node.value = std::move(value);
  if (mode_ == Mode::Train) {
    for (const Var& in : inputs) {
      if (nodes_[in.id()].requires_grad) {
        node.requires_grad = true;
        break;
      }
    }
    if (node.requires_grad) node.backprop = std::move(backprop);
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(const Var& v, const Matrix& grad) {
  Node& node = nodes_[v.id()];
  if (!node.requires_grad) return;
  if (!node.touched) {
    node.grad = grad;
    node.touched = true;
  } else {
    node.grad += grad;
  }
}

Gradients Tape::backward(const Var& root) {
  if (root.tape() != this) throw InvalidArgument("backward: root belongs to another tape");
  if (root.rows() != 1 || root.cols() != 1) throw InvalidArgument("backward: root must be 1x1");
  Gradients out;
  if (!nodes_[root.id()].requires_grad) return out;
  for (auto& node : nodes_) node.touched = false;
  accumulate(root, Matrix::Ones(1, 1));
  for (int id = root.id(); id >= 0; --id) {
    Node& node = nodes_[id];
    if (!node.touched) continue;
    if (node.backprop) {
      node.backprop(*this, node.grad, node.value);
    } else if (node.param != nullptr) {
      auto [it, inserted] = out.try_emplace(node.param, node.grad);
      if (!inserted) it->second += node.grad;
    }
  }
  return out;
}

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionMismatch(std::string(op) + ": shapes " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                            std::to_string(b.cols()));
  }
}

void check_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw InvalidArgument("operands live on different tapes");
}

}  // namespace

Var matmul(Var a, Var b) {
  check_tape(a, b);
  if (a.cols() != b.rows()) throw DimensionMismatch("matmul: inner dimensions differ");
  Tape& t = *a.tape();
  Matrix out = a.value() * b.value();
  return t.record(std::move(out), {a, b}, [a, b](Tape& tape, const Matrix& g, const Matrix&) {
    if (tape.requires_grad(a)) tape.accumulate(a, g * b.value().transpose());
    if (tape.requires_grad(b)) tape.accumulate(b, a.value().transpose() * g);
  });
}

Var add(Var a, Var b) {
  check_tape(a, b);
  check_same_shape(a, b, "add");
  Tape& t = *a.tape();
  return t.record(a.value() + b.value(), {a, b}, [a, b](Tape& tape, const Matrix& g, const Matrix&) {
    tape.accumulate(a, g);
    tape.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  check_tape(a, b);
  check_same_shape(a, b, "sub");
  Tape& t = *a.tape();
  return t.record(a.value() - b.value(), {a, b}, [a, b](Tape& tape, const Matrix& g, const Matrix&) {
    tape.accumulate(a, g);
    if (tape.requires_grad(b)) tape.accumulate(b, -g);
  });
}

Var add_row(Var a, Var row) {
  check_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw DimensionMismatch("add_row: bad row shape");
  Tape& t = *a.tape();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return t.record(std::move(out), {a, row}, [a, row](Tape& tape, const Matrix& g, const Matrix&) {
    tape.accumulate(a, g);
    if (tape.requires_grad(row)) tape.accumulate(row, g.colwise().sum());
  });
}

Var hadamard(Var a, Var b) {
  check_tape(a, b);
  check_same_shape(a, b, "hadamard");
  Tape& t = *a.tape();
  Matrix out = a.value().cwiseProduct(b.value());
  return t.record(std::move(out), {a, b}, [a, b](Tape& tape, const Matrix& g, const Matrix&) {
    if (tape.requires_grad(a)) tape.accumulate(a, g.cwiseProduct(b.value()));
    if (tape.requires_grad(b)) tape.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var scale(Var a, double factor) {
  Tape& t = *a.tape();
  return t.record(a.value() * factor, {a},
                  [a, factor](Tape& tape, const Matrix& g, const Matrix&) { tape.accumulate(a, g * factor); });
}

Var tanh(Var a) {
  Tape& t = *a.tape();
  Matrix out = a.value().array().tanh().matrix();
  return t.record(std::move(out), {a}, [a](Tape& tape, const Matrix& g, const Matrix& y) {
    tape.accumulate(a, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

Var sigmoid(Var a) {
  Tape& t = *a.tape();
  Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return t.record(std::move(out), {a}, [a](Tape& tape, const Matrix& g, const Matrix& y) {
    tape.accumulate(a, (g.array() * y.array() * (1.0 - y.array())).matrix());
  });
}

Var relu(Var a) {
  Tape& t = *a.tape();
  Matrix out = a.value().cwiseMax(0.0);
  return t.record(std::move(out), {a}, [a](Tape& tape, const Matrix& g, const Matrix&) {
    tape.accumulate(a, (a.value().array() > 0.0).select(g, 0.0).matrix());
  });
}

Var hinge(Var a) { return relu(a); }

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw EmptyInput("concat_cols: no parts");
  Tape& t = *parts.front().tape();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw InvalidArgument("concat_cols: mixed tapes");
    if (p.rows() != rows) throw DimensionMismatch("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  // record() inspects its input list only to decide requires_grad, so the
  // first differentiable part stands in for all of them.
  const Var* marker = nullptr;
  for (const Var& p : parts) {
    if (t.requires_grad(p)) {
      marker = &p;
      break;
    }
  }
  if (marker == nullptr) return t.constant(std::move(out));
  return t.record(std::move(out), {*marker}, [inputs](Tape& tape, const Matrix& g, const Matrix&) {
    Eigen::Index off = 0;
    for (const Var& p : inputs) {
      if (tape.requires_grad(p)) tape.accumulate(p, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw EmptyInput("concat_rows: no parts");
  Tape& t = *parts.front().tape();
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw InvalidArgument("concat_rows: mixed tapes");
    if (p.cols() != cols) throw DimensionMismatch("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  const Var* marker = nullptr;
  for (const Var& p : parts) {
    if (t.requires_grad(p)) {
      marker = &p;
      break;
    }
  }
  if (marker == nullptr) return t.constant(std::move(out));
  return t.record(std::move(out), {*marker}, [inputs](Tape& tape, const Matrix& g, const Matrix&) {
    Eigen::Index off = 0;
    for (const Var& p : inputs) {
      if (tape.requires_grad(p)) tape.accumulate(p, g.middleRows(off, p.rows()));
      off += p.rows();
    }
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw InvalidArgument("slice_cols: out of range");
  Tape& t = *a.tape();
  Matrix out = a.value().middleCols(start, count);
  return t.record(std::move(out), {a}, [a, start, count](Tape& tape, const Matrix& g, const Matrix&) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    full.middleCols(start, count) = g;
    tape.accumulate(a, full);
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw InvalidArgument("slice_rows: out of range");
  Tape& t = *a.tape();
  Matrix out = a.value().middleRows(start, count);
  return t.record(std::move(out), {a}, [a, start, count](Tape& tape, const Matrix& g, const Matrix&) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    full.middleRows(start, count) = g;
    tape.accumulate(a, full);
  });
}

Var row_norms(Var a) {
  Tape& t = *a.tape();
  Matrix out = a.value().rowwise().norm();
  return t.record(std::move(out), {a}, [a](Tape& tape, const Matrix& g, const Matrix& n) {
    const Matrix& x = a.value();
    Matrix grad(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      if (n(r, 0) > 0.0) {
        grad.row(r) = x.row(r) * (g(r, 0) / n(r, 0));
      } else {
        grad.row(r).setZero();
      }
    }
    tape.accumulate(a, grad);
  });
}

Var row_abs_sums(Var a) {
  Tape& t = *a.tape();
  Matrix out = a.value().cwiseAbs().rowwise().sum();
  return t.record(std::move(out), {a}, [a](Tape& tape, const Matrix& g, const Matrix&) {
    const Matrix& x = a.value();
    Matrix sign = x.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
    tape.accumulate(a, (sign.array().colwise() * g.col(0).array()).matrix());
  });
}

Var sum(Var a) {
  Tape& t = *a.tape();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.record(std::move(out), {a}, [a](Tape& tape, const Matrix& g, const Matrix&) {
    tape.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.rows() * a.cols());
  if (n == 0) throw EmptyInput("mean of an empty matrix");
  return scale(sum(a), 1.0 / n);
}

Var batched_matvec(Var coeffs, Var x) {
  check_tape(coeffs, x);
  const Eigen::Index b = x.rows();
  const Eigen::Index d = x.cols();
  if (coeffs.rows() != b || coeffs.cols() != d * d) throw DimensionMismatch("batched_matvec: bad shapes");
  Tape& t = *x.tape();
  const Matrix& c = coeffs.value();
  const Matrix& xv = x.value();
  Matrix out = Matrix::Zero(b, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      out.col(i).array() += c.col(i * d + j).array() * xv.col(j).array();
    }
  }
  return t.record(std::move(out), {coeffs, x}, [coeffs, x, d](Tape& tape, const Matrix& g, const Matrix&) {
    const Matrix& c = coeffs.value();
    const Matrix& xv = x.value();
    if (tape.requires_grad(coeffs)) {
      Matrix gc(c.rows(), c.cols());
      for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
          gc.col(i * d + j) = g.col(i).cwiseProduct(xv.col(j));
        }
      }
      tape.accumulate(coeffs, gc);
    }
    if (tape.requires_grad(x)) {
      Matrix gx = Matrix::Zero(xv.rows(), d);
      for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
          gx.col(j).array() += g.col(i).array() * c.col(i * d + j).array();
        }
      }
      tape.accumulate(x, gx);
    }
  });
}

}  // namespace recad::ad
