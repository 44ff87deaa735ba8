#pragma once

#include <cstddef>
#include <deque>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "avae/errors.hpp"

namespace avae {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

/// Dense row-major array of doubles. Rank 0 is a scalar.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  /// Leading extent for rank-2 tensors, 1 otherwise.
  std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
  /// Trailing extent (1 for scalars).
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  /// Value of a single-element tensor.
  double item() const;
  bool all_finite() const;

  /// Rows [begin, end) of a rank-2 tensor.
  Tensor slice_rows(std::size_t begin, std::size_t end) const;
  Tensor gather_rows(std::span<const std::size_t> idx) const;
  Tensor reshaped(Shape s) const;
  Tensor transposed() const;

  bool operator==(const Tensor& o) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

enum class Op {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Scale,
  AddScalar,
  MatMul,
  Transpose,
  Exp,
  Log,
  Tanh,
  Softplus,
  Square,
  Sqrt,
  Cos,
  Sum,
  SumRows,
  Mean,
  LogSumExpRows,
  Broadcast,
  Reshape,
  Concat,
  StopGradient,
};

const char* op_name(Op op);

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Graph* graph() const { return graph_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Result of Graph::backward: adjoints of every node that requires a gradient.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<std::optional<Tensor>> g) : grads_(std::move(g)) {}

  /// Gradient wrt v; an all-zero tensor if no path reaches v.
  Tensor wrt(const Var& v) const;
  bool reached(const Var& v) const;

 private:
  std::vector<std::optional<Tensor>> grads_;
};

/// Append-only reverse-mode tape. Nodes are stored in insertion order, which
/// is a topological order; backward walks it in reverse.
class Graph {
 public:
  Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that receives a gradient.
  Var parameter(Tensor value);
  /// Leaf that never receives a gradient.
  Var constant(Tensor value);

  Gradients backward(const Var& loss) const;

  std::size_t size() const { return nodes_.size(); }
  Op op(const Var& v) const { return nodes_.at(v.id()).op; }
  bool requires_grad(const Var& v) const { return nodes_.at(v.id()).requires_grad; }

  /// When enabled every recorded value is checked for NaN/Inf.
  void set_checked(bool on) { checked_ = on; }
  bool checked() const { return checked_; }

  // Internal: used by the op free functions.
  Var record(Op op, std::vector<std::size_t> inputs, Tensor value, double scalar = 0.0,
             Shape aux_shape = {});
  const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }

 private:
  struct Node {
    Op op;
    std::vector<std::size_t> inputs;
    Tensor value;
    double scalar;
    Shape aux_shape;
    bool requires_grad;
  };
  void propagate(const Node& n, const Tensor& g, std::vector<std::optional<Tensor>>& grads) const;

  std::deque<Node> nodes_;
  bool checked_;
};

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var tanh(const Var& a);
/// log(1 + e^x), evaluated as log1p(exp(-|x|)) + max(x, 0).
Var softplus(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);
Var cos(const Var& a);
/// Sum of all elements, returned as a scalar.
Var sum(const Var& a);
/// Sum over the last axis: [b, n] -> [b], [n] -> scalar.
Var sum_rows(const Var& a);
Var mean(const Var& a);
/// Row-wise log-sum-exp over the last axis.
Var logsumexp_rows(const Var& a);
/// NumPy-style broadcast of `a` to `shape` (right-aligned, size-1 or missing dims expand).
Var broadcast(const Var& a, const Shape& shape);
Var reshape(const Var& a, const Shape& shape);
/// Concatenation along the last axis.
Var concat(const std::vector<Var>& parts);
Var stop_gradient(const Var& a);

/// Generic dispatcher over the op kinds listed in Op.
Var forward_op(Op op, const std::vector<Var>& inputs, double scalar = 0.0, const Shape& shape = {});

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }
inline Var operator+(double s, const Var& a) { return add_scalar(a, s); }
inline Var operator-(const Var& a, double s) { return add_scalar(a, -s); }

}  // namespace avae
