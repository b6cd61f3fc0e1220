#pragma once

// Matrix-valued reverse-mode automatic differentiation.
//
// Every value on a Tape is a dense Eigen matrix; batched computations keep
// samples along rows. Ops record a closure that maps the output gradient to
// input gradients, and Tape::backward walks the records in reverse insertion
// order, which is a valid topological order because ops can only consume
// values that already exist.

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace recad::ad {

using Matrix = Eigen::MatrixXd;

// A trainable tensor. Its address identifies it in Gradients.
struct Parameter {
  Matrix value;
};

using Gradients = std::unordered_map<const Parameter*, Matrix>;

class Tape;

// Lightweight handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  // Convenience for 1x1 results.
  double scalar() const { return value()(0, 0); }

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backprop =
      std::function<void(Tape&, const Matrix& out_grad, const Matrix& out_value)>;

  enum class Mode { Train, Inference };

  explicit Tape(Mode mode = Mode::Train) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Restricts which parameters receive gradients. Parameters outside the set
  // are recorded as constants. An empty call (the default) tracks all.
  void track_only(std::span<const Parameter* const> params);

  Var constant(Matrix value);
  Var param(const Parameter& p);

  // Used by op implementations.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backprop backprop);
  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }
  void accumulate(const Var& v, const Matrix& grad);
  const Matrix& value_of(int id) const { return nodes_[id].value; }
  std::size_t size() const { return nodes_.size(); }

  // Gradients of the 1x1 `root` with respect to every tracked parameter
  // reachable from it.
  Gradients backward(const Var& root);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool touched = false;
    Backprop backprop;
    const Parameter* param = nullptr;
  };

  Mode mode_;
  bool restricted_ = false;
  std::unordered_set<const Parameter*> tracked_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
};

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
// a (B x n) plus a 1 x n row broadcast over every row.
Var add_row(Var a, Var row);
Var hadamard(Var a, Var b);
Var scale(Var a, double factor);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
// Elementwise max(a, 0).
Var hinge(Var a);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
// Euclidean norm of every row, B x 1. The gradient of a zero row is zero.
Var row_norms(Var a);
// Sum of absolute values of every row, B x 1. sign(0) is taken as 0.
Var row_abs_sums(Var a);
// Sum of all entries, 1 x 1.
Var sum(Var a);
Var mean(Var a);
// Per-row matrix-vector products: coeffs is B x (d*d) holding row-major d x d
// matrices, x is B x d. Returns B x d with out(b, i) = sum_j C_b(i, j) x(b, j).
Var batched_matvec(Var coeffs, Var x);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double factor, Var a) { return scale(a, factor); }

}  // namespace recad::ad
