#pragma once

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "entcap/tensor_archive.hpp"

// Minimal reverse-mode differentiation over dense row-major matrices. A Tape records one
// forward pass; backward() walks it in reverse and accumulates into Parameter::grad.
namespace entcap::ag {

using Matrix = RowMatrix;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Owns parameters with stable addresses, in registration order.
class ParameterStore {
 public:
  Parameter& add(std::string name, Matrix init);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  std::deque<Parameter>& all() { return params_; }
  const std::deque<Parameter>& all() const { return params_; }
  std::size_t scalar_count() const;
  void zero_grad();
  void set_trainable_prefix(const std::string& prefix, bool trainable);

 private:
  std::deque<Parameter> params_;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  /// With `record` false no backward closures are kept (inference).
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var param(Parameter& p);

  using Backward = std::function<void(Tape&, const Matrix& grad)>;
  /// Records a node; `backward` runs only when some input needs a gradient.
  Var push(Matrix value, std::span<const Var> inputs, Backward backward);

  const Matrix& value(int id) const;
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  void accumulate(int id, const Matrix& grad);
  template <typename Expr>
  void accumulate_block(int id, Eigen::Index row, Eigen::Index col, const Expr& grad);

  /// Seeds d(loss)/d(loss) = 1 for a 1x1 node and propagates to parameters.
  void backward(Var loss);
  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };
  Matrix& grad_slot(int id);

  std::vector<Node> nodes_;
  bool record_;
};

template <typename Expr>
void Tape::accumulate_block(int id, Eigen::Index row, Eigen::Index col, const Expr& grad) {
  if (!needs_grad(id)) return;
  grad_slot(id).block(row, col, grad.rows(), grad.cols()) += grad;
}

// Ops. Shapes follow the usual row-vector convention: activations are (tokens x features).
Var matmul(Var a, Var b);                     // a * b
Var matmul_nt(Var a, Var b);                  // a * b^T
Var add(Var a, Var b);                        // same shape
Var add_row(Var a, Var row);                  // broadcast a 1 x n row over every row of a
Var scale(Var a, double s);
Var gelu(Var a);                              // tanh approximation
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var reshape(Var a, Eigen::Index rows, Eigen::Index cols);  // row-major reinterpretation
Var gather_rows(Var table, std::span<const int> ids);
/// Multi-head scaled dot-product attention over (tokens x d) projections.
Var attention(Var q, Var k, Var v, int heads, bool causal);
/// Mean over `targets.size()` rows of -log softmax(logits[row])[target]. Rows of `logits`
/// correspond one-to-one with `targets`.
Var cross_entropy(Var logits, std::span<const int> targets);
Var sum_all(Var a);

/// Row-wise log-softmax of plain values (no tape).
Matrix log_softmax_rows(const Matrix& logits);

}  // namespace entcap::ag
