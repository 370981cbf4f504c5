#pragma once

// Dense vectors/matrices and a small reverse-mode tape.
//
// Every learnable computation in the toolkit is a composition of the
// primitives declared here. Values are 64-bit floats; shapes never change
// after construction.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ialstm/errors.hpp"

namespace ialstm {

class DenseVector {
 public:
  DenseVector() = default;
  explicit DenseVector(std::size_t n, double fill = 0.0) : data_(n, fill) {}
  DenseVector(std::initializer_list<double> values) : data_(values) {}
  explicit DenseVector(std::vector<double> values) : data_(std::move(values)) {}

  std::size_t size() const { return data_.size(); }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  bool operator==(const DenseVector&) const = default;

 private:
  std::vector<double> data_;
};

// Row-major.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows);

  static DenseMatrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  bool operator==(const DenseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

std::string shape_string(const DenseVector& v);
std::string shape_string(const DenseMatrix& m);

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;

  const DenseVector& value() const;
  const DenseVector& grad() const;
  std::size_t size() const { return value().size(); }
  double scalar() const;

  Tape& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

// Learnable matrix/vector with an optional gradient accumulator. A null grad
// pointer means no gradient is requested for it.
struct MatrixParam {
  const DenseMatrix* value = nullptr;
  DenseMatrix* grad = nullptr;
};

struct VectorParam {
  const DenseVector* value = nullptr;
  DenseVector* grad = nullptr;
};

class Tape {
 public:
  // Receives the accumulated output gradient and adds into parent gradients
  // through Tape::grad_of.
  using Backward = std::function<void(Tape&, const DenseVector& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(DenseVector value);
  Var variable(DenseVector value);

  // Appends a node. `backward` is dropped when requires_grad is false.
  Var record(const char* op, DenseVector value, bool requires_grad, Backward backward);

  // Seeds d(output)/d(output) = 1 for a length-1 output and replays the tape
  // in exact reverse order of recording.
  void backward(Var output);

  // Gradient buffer of a node; only valid during or after backward().
  DenseVector& grad_of(Var v);
  bool requires_grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  const char* op_name(std::uint32_t id) const { return nodes_.at(id).op; }
  // Node ids in the order backward() visited them during the last call.
  const std::vector<std::uint32_t>& last_backward_order() const { return visit_order_; }

 private:
  friend class Var;

  struct Node {
    const char* op = "";
    DenseVector value;
    DenseVector grad;
    bool requires_grad = false;
    Backward backward;
  };

  std::deque<Node> nodes_;
  std::vector<std::uint32_t> visit_order_;
  bool grads_ready_ = false;
};

// Primitives. Shape violations throw DimensionError naming both shapes.
Var affine(MatrixParam w, Var x, VectorParam b);
Var relu(Var x);
Var sigmoid(Var x);
Var tanh(Var x);
Var exp(Var x);
Var log(Var x);  // DomainError on non-positive input, naming the index
Var elementwise_mul(Var a, Var b);
Var add(Var a, Var b);
Var concat(Var a, Var b);
Var slice(Var x, std::size_t offset, std::size_t length);
Var scale(Var x, double factor);
Var sum(Var x);  // length-1 result
// sum_k weights[k] * terms[k], accumulated left to right.
Var weighted_sum(std::span<const Var> terms, std::span<const double> weights);

// Four-gate LSTM weights. Gate blocks in `w`/`b` are stacked in the order
// input, forget, candidate, output; `w` is (4D) x (input_width + D) and acts
// on concat(x, h_prev).
struct LstmWeights {
  std::size_t input_width = 0;
  std::size_t hidden = 0;
  MatrixParam w;
  VectorParam b;
};

struct LstmOutput {
  Var h;
  Var c;
};

LstmOutput lstm_cell(Var x, Var h_prev, Var c_prev, const LstmWeights& weights);

// Maximum elementwise relative error between analytic gradients and central
// differences, |a - n| / max(|a|, |n|, floor). `params[k]` is perturbed in
// place (and restored); `analytic[k]` must have the same length.
double gradient_check(const std::function<double()>& loss_fn,
                      std::span<const std::span<double>> params,
                      std::span<const std::span<const double>> analytic,
                      double epsilon, double floor = 1e-8);

}  // namespace ialstm
