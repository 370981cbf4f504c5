#include "ialstm/ndmath.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ialstm {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != rows_ * cols_) {
    throw DimensionError("matrix " + std::to_string(rows_) + "x" + std::to_string(cols_) +
                         " given " + std::to_string(data_.size()) + " elements");
  }
}

DenseMatrix::DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& row : rows) {
    if (row.size() != cols_) throw DimensionError("ragged matrix initializer");
    data_.insert(data_.end(), row.begin(), row.end());
  }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

std::string shape_string(const DenseVector& v) { return "(" + std::to_string(v.size()) + ")"; }

std::string shape_string(const DenseMatrix& m) {
  return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

const DenseVector& Var::value() const { return tape_->nodes_.at(id_).value; }

const DenseVector& Var::grad() const {
  if (!tape_->grads_ready_) throw std::logic_error("gradient requested before backward()");
  return tape_->nodes_.at(id_).grad;
}

double Var::scalar() const {
  const auto& v = value();
  if (v.size() != 1) throw DimensionError("scalar() on value of shape " + shape_string(v));
  return v[0];
}

Var Tape::constant(DenseVector value) { return record("constant", std::move(value), false, {}); }

Var Tape::variable(DenseVector value) {
  return record("variable", std::move(value), true, [](Tape&, const DenseVector&) {});
}

Var Tape::record(const char* op, DenseVector value, bool requires_grad, Backward backward) {
  Node node;
  node.op = op;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  grads_ready_ = false;
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

DenseVector& Tape::grad_of(Var v) { return nodes_.at(v.id()).grad; }

bool Tape::requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }

void Tape::backward(Var output) {
  if (output.tape_ != this) throw std::logic_error("backward() on a foreign Var");
  if (output.value().size() != 1) {
    throw DimensionError("backward() needs a scalar output, got shape " +
                         shape_string(output.value()));
  }
  for (auto& node : nodes_) node.grad = DenseVector(node.value.size());
  nodes_[output.id()].grad[0] = 1.0;
  grads_ready_ = true;
  visit_order_.clear();
  for (std::size_t k = nodes_.size(); k-- > 0;) {
    if (k > output.id() || !nodes_[k].requires_grad) continue;
    visit_order_.push_back(static_cast<std::uint32_t>(k));
    if (nodes_[k].backward) nodes_[k].backward(*this, nodes_[k].grad);
  }
}

namespace {

void require_same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw std::logic_error("operands recorded on different tapes");
}

void require_same_size(const char* op, Var a, Var b) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.value()) + " and " +
                         shape_string(b.value()) + " differ");
  }
}

template <class Fwd, class Deriv>
Var unary(const char* op, Var x, Fwd fwd, Deriv deriv) {
  const auto& xv = x.value();
  DenseVector y(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = fwd(xv[i]);
  Tape& tape = x.tape();
  bool rg = tape.requires_grad(x);
  // deriv(x_i) -> dy_i/dx_i
  return tape.record(op, std::move(y), rg, [x, deriv](Tape& t, const DenseVector& g) {
    const auto& xv2 = x.value();
    auto& gx = t.grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv2[i]);
  });
}

}  // namespace

Var affine(MatrixParam w, Var x, VectorParam b) {
  const DenseMatrix& W = *w.value;
  const DenseVector& bias = *b.value;
  const auto& xv = x.value();
  if (W.cols() != xv.size() || bias.size() != W.rows()) {
    throw DimensionError("affine: W " + shape_string(W) + ", x " + shape_string(xv) + ", b " +
                         shape_string(bias));
  }
  const std::size_t rows = W.rows();
  const std::size_t cols = W.cols();
  DenseVector y(rows);
  const double* wd = W.flat().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = wd + r * cols;
    double acc = bias[r];
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * xv[c];
    y[r] = acc;
  }
  Tape& tape = x.tape();
  bool rg = tape.requires_grad(x) || w.grad != nullptr || b.grad != nullptr;
  return tape.record("affine", std::move(y), rg, [w, x, b, rows, cols](Tape& t, const DenseVector& g) {
    const auto& xv2 = x.value();
    if (w.grad) {
      double* dw = w.grad->flat().data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double gr = g[r];
        if (gr == 0.0) continue;
        double* row = dw + r * cols;
        for (std::size_t c = 0; c < cols; ++c) row[c] += gr * xv2[c];
      }
    }
    if (b.grad) {
      for (std::size_t r = 0; r < rows; ++r) (*b.grad)[r] += g[r];
    }
    if (t.requires_grad(x)) {
      auto& gx = t.grad_of(x);
      const double* wd2 = w.value->flat().data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double gr = g[r];
        if (gr == 0.0) continue;
        const double* row = wd2 + r * cols;
        for (std::size_t c = 0; c < cols; ++c) gx[c] += gr * row[c];
      }
    }
  });
}

Var relu(Var x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
  auto f = [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  return unary("sigmoid", x, f, [f](double v) {
    const double s = f(v);
    return s * (1.0 - s);
  });
}

Var tanh(Var x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); },
               [](double v) {
                 const double t = std::tanh(v);
                 return 1.0 - t * t;
               });
}

Var exp(Var x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Var log(Var x) {
  const auto& xv = x.value();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (!(xv[i] > 0.0)) {
      std::ostringstream msg;
      msg << "log: non-positive input " << xv[i] << " at index " << i;
      throw DomainError(msg.str());
    }
  }
  return unary("log", x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Var elementwise_mul(Var a, Var b) {
  require_same_tape(a, b);
  require_same_size("elementwise_mul", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  DenseVector y(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) y[i] = av[i] * bv[i];
  Tape& tape = a.tape();
  bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.record("mul", std::move(y), rg, [a, b](Tape& t, const DenseVector& g) {
    const auto& av2 = a.value();
    const auto& bv2 = b.value();
    if (t.requires_grad(a)) {
      auto& ga = t.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
    }
    if (t.requires_grad(b)) {
      auto& gb = t.grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
    }
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_size("add", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  DenseVector y(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) y[i] = av[i] + bv[i];
  Tape& tape = a.tape();
  bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.record("add", std::move(y), rg, [a, b](Tape& t, const DenseVector& g) {
    for (Var v : {a, b}) {
      if (!t.requires_grad(v)) continue;
      auto& gv = t.grad_of(v);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

Var concat(Var a, Var b) {
  require_same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<double> y;
  y.reserve(av.size() + bv.size());
  y.insert(y.end(), av.begin(), av.end());
  y.insert(y.end(), bv.begin(), bv.end());
  Tape& tape = a.tape();
  bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  const std::size_t na = av.size();
  return tape.record("concat", DenseVector(std::move(y)), rg, [a, b, na](Tape& t, const DenseVector& g) {
    if (t.requires_grad(a)) {
      auto& ga = t.grad_of(a);
      for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      auto& gb = t.grad_of(b);
      for (std::size_t i = na; i < g.size(); ++i) gb[i - na] += g[i];
    }
  });
}

Var slice(Var x, std::size_t offset, std::size_t length) {
  const auto& xv = x.value();
  if (offset + length > xv.size()) {
    throw DimensionError("slice [" + std::to_string(offset) + ", " + std::to_string(offset + length) +
                         ") out of shape " + shape_string(xv));
  }
  std::vector<double> y(xv.begin() + static_cast<std::ptrdiff_t>(offset),
                        xv.begin() + static_cast<std::ptrdiff_t>(offset + length));
  Tape& tape = x.tape();
  return tape.record("slice", DenseVector(std::move(y)), tape.requires_grad(x),
                     [x, offset](Tape& t, const DenseVector& g) {
                       auto& gx = t.grad_of(x);
                       for (std::size_t i = 0; i < g.size(); ++i) gx[offset + i] += g[i];
                     });
}

Var scale(Var x, double factor) {
  const auto& xv = x.value();
  DenseVector y(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = factor * xv[i];
  Tape& tape = x.tape();
  return tape.record("scale", std::move(y), tape.requires_grad(x), [x, factor](Tape& t, const DenseVector& g) {
    auto& gx = t.grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
  });
}

Var sum(Var x) {
  double acc = 0.0;
  for (double v : x.value()) acc += v;
  Tape& tape = x.tape();
  return tape.record("sum", DenseVector{acc}, tape.requires_grad(x), [x](Tape& t, const DenseVector& g) {
    auto& gx = t.grad_of(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
  });
}

Var weighted_sum(std::span<const Var> terms, std::span<const double> weights) {
  if (terms.empty() || terms.size() != weights.size()) {
    throw DimensionError("weighted_sum: " + std::to_string(terms.size()) + " terms, " +
                         std::to_string(weights.size()) + " weights");
  }
  const std::size_t n = terms[0].size();
  Tape& tape = terms[0].tape();
  bool rg = false;
  for (const Var& term : terms) {
    require_same_tape(terms[0], term);
    require_same_size("weighted_sum", terms[0], term);
    rg = rg || tape.requires_grad(term);
  }
  DenseVector y(n);
  for (std::size_t k = 0; k < terms.size(); ++k) {
    const auto& tv = terms[k].value();
    const double w = weights[k];
    for (std::size_t i = 0; i < n; ++i) y[i] += w * tv[i];
  }
  std::vector<Var> ts(terms.begin(), terms.end());
  std::vector<double> ws(weights.begin(), weights.end());
  return tape.record("weighted_sum", std::move(y), rg,
                     [ts = std::move(ts), ws = std::move(ws)](Tape& t, const DenseVector& g) {
                       for (std::size_t k = 0; k < ts.size(); ++k) {
                         if (!t.requires_grad(ts[k])) continue;
                         auto& gk = t.grad_of(ts[k]);
                         for (std::size_t i = 0; i < g.size(); ++i) gk[i] += ws[k] * g[i];
                       }
                     });
}

LstmOutput lstm_cell(Var x, Var h_prev, Var c_prev, const LstmWeights& weights) {
  const std::size_t d = weights.hidden;
  if (x.size() != weights.input_width) {
    throw DimensionError("lstm_cell: input " + shape_string(x.value()) + " but cell expects (" +
                         std::to_string(weights.input_width) + ")");
  }
  if (h_prev.size() != d || c_prev.size() != d) {
    throw DimensionError("lstm_cell: h_prev " + shape_string(h_prev.value()) + ", c_prev " +
                         shape_string(c_prev.value()) + ", hidden (" + std::to_string(d) + ")");
  }
  const Var gates = affine(weights.w, concat(x, h_prev), weights.b);
  const Var in_gate = sigmoid(slice(gates, 0, d));
  const Var forget_gate = sigmoid(slice(gates, d, d));
  const Var candidate = tanh(slice(gates, 2 * d, d));
  const Var out_gate = sigmoid(slice(gates, 3 * d, d));
  const Var c = add(elementwise_mul(forget_gate, c_prev), elementwise_mul(in_gate, candidate));
  const Var h = elementwise_mul(out_gate, tanh(c));
  return {h, c};
}

double gradient_check(const std::function<double()>& loss_fn,
                      std::span<const std::span<double>> params,
                      std::span<const std::span<const double>> analytic, double epsilon,
                      double floor) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) {
    throw DomainError("gradient_check: epsilon " + std::to_string(epsilon) +
                      " outside [1e-7, 1e-3]");
  }
  if (!(floor > 0.0)) throw DomainError("gradient_check: floor must be positive");
  if (params.size() != analytic.size()) {
    throw DimensionError("gradient_check: " + std::to_string(params.size()) + " parameters, " +
                         std::to_string(analytic.size()) + " gradients");
  }
  auto eval = [&] {
    const double v = loss_fn();
    if (!std::isfinite(v)) throw NumericError("gradient_check: non-finite loss");
    return v;
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k];
    auto a = analytic[k];
    if (p.size() != a.size()) {
      throw DimensionError("gradient_check: parameter " + std::to_string(k) + " has " +
                           std::to_string(p.size()) + " elements, gradient has " +
                           std::to_string(a.size()));
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      p[i] = saved + epsilon;
      const double up = eval();
      p[i] = saved - epsilon;
      const double down = eval();
      p[i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double denom = std::max({std::abs(a[i]), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a[i] - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace ialstm
