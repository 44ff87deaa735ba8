#include "avae/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace avae {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

double stable_softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_same(const char* what, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

Graph* graph_of(std::initializer_list<const Var*> vs) {
  Graph* g = nullptr;
  for (const Var* v : vs) {
    if (!v->valid()) throw ContractError("operation on an unbound Var");
    if (g && v->graph() != g) throw ContractError("operands belong to different graphs");
    g = v->graph();
  }
  return g;
}

template <class F>
Tensor map_unary(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i]);
  return out;
}

template <class F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

// Index into the source for each element of a broadcast target.
std::vector<std::size_t> broadcast_index(const Shape& src, const Shape& dst) {
  if (src.size() > dst.size()) {
    throw DimensionError("broadcast: cannot broadcast " + shape_str(src) + " to " + shape_str(dst));
  }
  const std::size_t offset = dst.size() - src.size();
  std::vector<std::size_t> src_stride(dst.size(), 0);
  std::size_t stride = 1;
  for (std::size_t k = src.size(); k-- > 0;) {
    const std::size_t d = k + offset;
    if (src[k] == dst[d]) {
      src_stride[d] = stride;
    } else if (src[k] != 1) {
      throw DimensionError("broadcast: cannot broadcast " + shape_str(src) + " to " + shape_str(dst));
    }
    stride *= src[k];
  }
  const std::size_t n = shape_numel(dst);
  std::vector<std::size_t> idx(n, 0);
  std::vector<std::size_t> counter(dst.size(), 0);
  std::size_t cur = 0;
  for (std::size_t i = 0; i < n; ++i) {
    idx[i] = cur;
    for (std::size_t d = dst.size(); d-- > 0;) {
      ++counter[d];
      cur += src_stride[d];
      if (counter[d] < dst[d]) break;
      cur -= src_stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return idx;
}

void accumulate(std::optional<Tensor>& slot, const Tensor& g) {
  if (!slot) {
    slot = g;
    return;
  }
  auto& d = slot->storage();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor(Shape{n}, std::move(v));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> d;
  d.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("matrix: ragged rows");
    d.insert(d.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(d));
}

double Tensor::item() const {
  if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (rank() != 2 || begin > end || end > shape_[0]) throw DimensionError("slice_rows out of range");
  const std::size_t c = shape_[1];
  return Tensor(Shape{end - begin, c},
                std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * c),
                                    data_.begin() + static_cast<std::ptrdiff_t>(end * c)));
}

Tensor Tensor::gather_rows(std::span<const std::size_t> idx) const {
  if (rank() != 2) throw DimensionError("gather_rows needs a rank-2 tensor");
  const std::size_t c = shape_[1];
  Tensor out(Shape{idx.size(), c});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= shape_[0]) throw DimensionError("gather_rows index out of range");
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(idx[i] * c), c,
                out.storage().begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  return out;
}

Tensor Tensor::reshaped(Shape s) const { return Tensor(std::move(s), data_); }

Tensor Tensor::transposed() const {
  if (rank() != 2) throw DimensionError("transpose needs a rank-2 tensor, got " + shape_str(shape_));
  Tensor out(Shape{shape_[1], shape_[0]});
  MapMat(out.storage().data(), static_cast<Eigen::Index>(shape_[1]), static_cast<Eigen::Index>(shape_[0])) =
      CMapMat(data_.data(), static_cast<Eigen::Index>(shape_[0]), static_cast<Eigen::Index>(shape_[1]))
          .transpose();
  return out;
}

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Neg: return "neg";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Tanh: return "tanh";
    case Op::Softplus: return "softplus";
    case Op::Square: return "square";
    case Op::Sqrt: return "sqrt";
    case Op::Cos: return "cos";
    case Op::Sum: return "sum";
    case Op::SumRows: return "sum_rows";
    case Op::Mean: return "mean";
    case Op::LogSumExpRows: return "logsumexp_rows";
    case Op::Broadcast: return "broadcast";
    case Op::Reshape: return "reshape";
    case Op::Concat: return "concat";
    case Op::StopGradient: return "stop_gradient";
  }
  return "?";
}

const Tensor& Var::value() const {
  if (!graph_) throw ContractError("value() of an unbound Var");
  return graph_->value_of(id_);
}

Tensor Gradients::wrt(const Var& v) const {
  if (v.id() < grads_.size() && grads_[v.id()]) return *grads_[v.id()];
  return Tensor(v.shape(), 0.0);
}

bool Gradients::reached(const Var& v) const { return v.id() < grads_.size() && grads_[v.id()].has_value(); }

Graph::Graph() {
#ifdef NDEBUG
  checked_ = false;
#else
  checked_ = true;
#endif
}

Var Graph::parameter(Tensor value) {
  nodes_.push_back(Node{Op::Leaf, {}, std::move(value), 0.0, {}, true});
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{Op::Leaf, {}, std::move(value), 0.0, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(Op op, std::vector<std::size_t> inputs, Tensor value, double scalar, Shape aux_shape) {
  if (checked_ && !value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op_name(op));
  }
  bool rg = false;
  if (op != Op::StopGradient) {
    for (std::size_t i : inputs) rg = rg || nodes_[i].requires_grad;
  }
  nodes_.push_back(Node{op, std::move(inputs), std::move(value), scalar, std::move(aux_shape), rg});
  return Var(this, nodes_.size() - 1);
}

Gradients Graph::backward(const Var& loss) const {
  if (loss.graph() != this) throw ContractError("backward: loss belongs to another graph");
  if (loss.value().numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  std::vector<std::optional<Tensor>> grads(nodes_.size());
  grads[loss.id()] = Tensor(loss.shape(), 1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!grads[i] || !n.requires_grad || n.op == Op::Leaf) continue;
    propagate(n, *grads[i], grads);
  }
  // Gradients of intermediate nodes are not part of the contract; keep leaves only.
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op != Op::Leaf || !nodes_[i].requires_grad) grads[i].reset();
  }
  return Gradients(std::move(grads));
}

void Graph::propagate(const Node& n, const Tensor& g, std::vector<std::optional<Tensor>>& grads) const {
  auto push = [&](std::size_t k, const Tensor& t) {
    if (nodes_[n.inputs[k]].requires_grad) accumulate(grads[n.inputs[k]], t);
  };
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };
  switch (n.op) {
    case Op::Leaf:
    case Op::StopGradient:
      return;
    case Op::Add:
      push(0, g);
      push(1, g);
      return;
    case Op::Sub:
      push(0, g);
      push(1, map_unary(g, [](double x) { return -x; }));
      return;
    case Op::Mul:
      push(0, map_binary(g, in(1), std::multiplies<>()));
      push(1, map_binary(g, in(0), std::multiplies<>()));
      return;
    case Op::Div: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      push(0, map_binary(g, b, std::divides<>()));
      Tensor gb(b.shape());
      for (std::size_t i = 0; i < b.numel(); ++i) gb[i] = -g[i] * a[i] / (b[i] * b[i]);
      push(1, gb);
      return;
    }
    case Op::Neg:
      push(0, map_unary(g, [](double x) { return -x; }));
      return;
    case Op::Scale: {
      const double s = n.scalar;
      push(0, map_unary(g, [s](double x) { return s * x; }));
      return;
    }
    case Op::AddScalar:
      push(0, g);
      return;
    case Op::MatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const auto m = static_cast<Eigen::Index>(a.shape()[0]);
      const auto k = static_cast<Eigen::Index>(a.shape()[1]);
      const auto c = static_cast<Eigen::Index>(b.shape()[1]);
      CMapMat G(g.storage().data(), m, c);
      if (nodes_[n.inputs[0]].requires_grad) {
        Tensor ga(a.shape());
        MapMat(ga.storage().data(), m, k).noalias() = G * CMapMat(b.storage().data(), k, c).transpose();
        push(0, ga);
      }
      if (nodes_[n.inputs[1]].requires_grad) {
        Tensor gb(b.shape());
        MapMat(gb.storage().data(), k, c).noalias() = CMapMat(a.storage().data(), m, k).transpose() * G;
        push(1, gb);
      }
      return;
    }
    case Op::Transpose:
      push(0, g.transposed());
      return;
    case Op::Exp:
      push(0, map_binary(g, n.value, std::multiplies<>()));
      return;
    case Op::Log:
      push(0, map_binary(g, in(0), std::divides<>()));
      return;
    case Op::Tanh:
      push(0, map_binary(g, n.value, [](double gi, double y) { return gi * (1.0 - y * y); }));
      return;
    case Op::Softplus:
      push(0, map_binary(g, in(0), [](double gi, double x) { return gi * stable_sigmoid(x); }));
      return;
    case Op::Square:
      push(0, map_binary(g, in(0), [](double gi, double x) { return 2.0 * x * gi; }));
      return;
    case Op::Sqrt:
      push(0, map_binary(g, n.value, [](double gi, double y) { return gi / (2.0 * y); }));
      return;
    case Op::Cos:
      push(0, map_binary(g, in(0), [](double gi, double x) { return -std::sin(x) * gi; }));
      return;
    case Op::Sum:
      push(0, Tensor(in(0).shape(), g.item()));
      return;
    case Op::Mean:
      push(0, Tensor(in(0).shape(), g.item() / static_cast<double>(in(0).numel())));
      return;
    case Op::SumRows: {
      const Tensor& a = in(0);
      const std::size_t c = a.cols();
      Tensor ga(a.shape());
      for (std::size_t i = 0; i < a.numel(); ++i) ga[i] = g[i / c];
      push(0, ga);
      return;
    }
    case Op::LogSumExpRows: {
      const Tensor& a = in(0);
      const std::size_t c = a.cols();
      Tensor ga(a.shape());
      for (std::size_t i = 0; i < a.numel(); ++i) ga[i] = g[i / c] * std::exp(a[i] - n.value[i / c]);
      push(0, ga);
      return;
    }
    case Op::Broadcast: {
      const Tensor& a = in(0);
      const auto idx = broadcast_index(a.shape(), n.value.shape());
      Tensor ga(a.shape());
      for (std::size_t i = 0; i < idx.size(); ++i) ga[idx[i]] += g[i];
      push(0, ga);
      return;
    }
    case Op::Reshape:
      push(0, g.reshaped(in(0).shape()));
      return;
    case Op::Concat: {
      const std::size_t total = n.value.cols();
      const std::size_t rows = n.value.numel() / total;
      std::size_t off = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t w = n.aux_shape[k];
        Tensor gk(in(k).shape());
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < w; ++j) gk[r * w + j] = g[r * total + off + j];
        push(k, gk);
        off += w;
      }
      return;
    }
  }
}

Var add(const Var& a, const Var& b) {
  Graph* g = graph_of({&a, &b});
  require_same("add", a.value(), b.value());
  return g->record(Op::Add, {a.id(), b.id()}, map_binary(a.value(), b.value(), std::plus<>()));
}

Var sub(const Var& a, const Var& b) {
  Graph* g = graph_of({&a, &b});
  require_same("sub", a.value(), b.value());
  return g->record(Op::Sub, {a.id(), b.id()}, map_binary(a.value(), b.value(), std::minus<>()));
}

Var mul(const Var& a, const Var& b) {
  Graph* g = graph_of({&a, &b});
  require_same("mul", a.value(), b.value());
  return g->record(Op::Mul, {a.id(), b.id()}, map_binary(a.value(), b.value(), std::multiplies<>()));
}

Var div(const Var& a, const Var& b) {
  Graph* g = graph_of({&a, &b});
  require_same("div", a.value(), b.value());
  return g->record(Op::Div, {a.id(), b.id()}, map_binary(a.value(), b.value(), std::divides<>()));
}

Var neg(const Var& a) {
  Graph* g = graph_of({&a});
  return g->record(Op::Neg, {a.id()}, map_unary(a.value(), [](double x) { return -x; }));
}

Var scale(const Var& a, double s) {
  Graph* g = graph_of({&a});
  return g->record(Op::Scale, {a.id()}, map_unary(a.value(), [s](double x) { return s * x; }), s);
}

Var add_scalar(const Var& a, double s) {
  Graph* g = graph_of({&a});
  return g->record(Op::AddScalar, {a.id()}, map_unary(a.value(), [s](double x) { return x + s; }), s);
}

Var matmul(const Var& a, const Var& b) {
  Graph* g = graph_of({&a, &b});
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.shape()[1] != B.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  }
  const auto m = static_cast<Eigen::Index>(A.shape()[0]);
  const auto k = static_cast<Eigen::Index>(A.shape()[1]);
  const auto c = static_cast<Eigen::Index>(B.shape()[1]);
  Tensor out(Shape{A.shape()[0], B.shape()[1]});
  MapMat(out.storage().data(), m, c).noalias() =
      CMapMat(A.storage().data(), m, k) * CMapMat(B.storage().data(), k, c);
  return g->record(Op::MatMul, {a.id(), b.id()}, std::move(out));
}

Var transpose(const Var& a) {
  Graph* g = graph_of({&a});
  return g->record(Op::Transpose, {a.id()}, a.value().transposed());
}

Var exp(const Var& a) {
  Graph* g = graph_of({&a});
  return g->record(Op::Exp, {a.id()}, map_unary(a.value(), [](double x) { return std::exp(x); }));
}

Var log(const Var& a) {
  Graph* g = graph_of({&a});
  return g->record(Op::Log, {a.id()}, map_unary(a.value(), [](double x) { return std::log(x); }));
}

Var tanh(const Var& a) {
  Graph* g = graph_of({&a});
  return g->record(Op::Tanh, {a.id()}, map_unary(a.value(), [](double x) { return std::tanh(x); }));
}

Var softplus(const Var& a) {
  Graph* g = graph_of({&a});
  return g->record(Op::Softplus, {a.id()}, map_unary(a.value(), stable_softplus));
}

Var square(const Var& a) {
  Graph* g = graph_of({&a});
  return g->record(Op::Square, {a.id()}, map_unary(a.value(), [](double x) { return x * x; }));
}

Var sqrt(const Var& a) {
  Graph* g = graph_of({&a});
  return g->record(Op::Sqrt, {a.id()}, map_unary(a.value(), [](double x) { return std::sqrt(x); }));
}

Var cos(const Var& a) {
  Graph* g = graph_of({&a});
  return g->record(Op::Cos, {a.id()}, map_unary(a.value(), [](double x) { return std::cos(x); }));
}

Var sum(const Var& a) {
  Graph* g = graph_of({&a});
  const auto& d = a.value().storage();
  return g->record(Op::Sum, {a.id()}, Tensor::scalar(std::accumulate(d.begin(), d.end(), 0.0)));
}

Var mean(const Var& a) {
  Graph* g = graph_of({&a});
  const auto& d = a.value().storage();
  if (d.empty()) throw DimensionError("mean of an empty tensor");
  return g->record(Op::Mean, {a.id()},
                   Tensor::scalar(std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size())));
}

Var sum_rows(const Var& a) {
  Graph* g = graph_of({&a});
  const Tensor& A = a.value();
  if (A.rank() == 0) throw DimensionError("sum_rows of a scalar");
  Shape out_shape(A.shape().begin(), A.shape().end() - 1);
  const std::size_t c = A.cols();
  Tensor out(out_shape);
  for (std::size_t i = 0; i < A.numel(); ++i) out[i / c] += A[i];
  return g->record(Op::SumRows, {a.id()}, std::move(out));
}

Var logsumexp_rows(const Var& a) {
  Graph* g = graph_of({&a});
  const Tensor& A = a.value();
  if (A.rank() == 0) throw DimensionError("logsumexp_rows of a scalar");
  Shape out_shape(A.shape().begin(), A.shape().end() - 1);
  const std::size_t c = A.cols();
  Tensor out(out_shape);
  for (std::size_t r = 0; r < out.numel(); ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) m = std::max(m, A[r * c + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(A[r * c + j] - m);
    out[r] = m + std::log(s);
  }
  return g->record(Op::LogSumExpRows, {a.id()}, std::move(out));
}

Var broadcast(const Var& a, const Shape& shape) {
  Graph* g = graph_of({&a});
  const auto idx = broadcast_index(a.shape(), shape);
  Tensor out(shape);
  const Tensor& A = a.value();
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = A[idx[i]];
  return g->record(Op::Broadcast, {a.id()}, std::move(out));
}

Var reshape(const Var& a, const Shape& shape) {
  Graph* g = graph_of({&a});
  if (shape_numel(shape) != a.value().numel()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  return g->record(Op::Reshape, {a.id()}, a.value().reshaped(shape));
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  Graph* g = nullptr;
  for (const Var& p : parts) g = graph_of({&p, &parts.front()});
  const Shape& s0 = parts.front().shape();
  if (s0.empty()) throw DimensionError("concat of scalars");
  Shape lead(s0.begin(), s0.end() - 1);
  std::size_t total = 0;
  Shape widths;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size() || !std::equal(lead.begin(), lead.end(), s.begin())) {
      throw DimensionError("concat: incompatible shapes " + shape_str(s0) + " and " + shape_str(s));
    }
    widths.push_back(s.back());
    total += s.back();
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor out(out_shape);
  const std::size_t rows = shape_numel(lead);
  std::size_t off = 0;
  std::vector<std::size_t> ids;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < widths[k]; ++j) out[r * total + off + j] = v[r * widths[k] + j];
    off += widths[k];
    ids.push_back(parts[k].id());
  }
  return g->record(Op::Concat, std::move(ids), std::move(out), 0.0, std::move(widths));
}

Var stop_gradient(const Var& a) {
  Graph* g = graph_of({&a});
  return g->record(Op::StopGradient, {a.id()}, a.value());
}

Var forward_op(Op op, const std::vector<Var>& in, double scalar, const Shape& shape) {
  auto need = [&](std::size_t n) {
    if (in.size() != n) {
      throw ContractError(std::string(op_name(op)) + " expects " + std::to_string(n) + " inputs, got " +
                          std::to_string(in.size()));
    }
  };
  switch (op) {
    case Op::Add: need(2); return add(in[0], in[1]);
    case Op::Sub: need(2); return sub(in[0], in[1]);
    case Op::Mul: need(2); return mul(in[0], in[1]);
    case Op::Div: need(2); return div(in[0], in[1]);
    case Op::MatMul: need(2); return matmul(in[0], in[1]);
    case Op::Neg: need(1); return neg(in[0]);
    case Op::Scale: need(1); return scale(in[0], scalar);
    case Op::AddScalar: need(1); return add_scalar(in[0], scalar);
    case Op::Transpose: need(1); return transpose(in[0]);
    case Op::Exp: need(1); return exp(in[0]);
    case Op::Log: need(1); return log(in[0]);
    case Op::Tanh: need(1); return tanh(in[0]);
    case Op::Softplus: need(1); return softplus(in[0]);
    case Op::Square: need(1); return square(in[0]);
    case Op::Sqrt: need(1); return sqrt(in[0]);
    case Op::Cos: need(1); return cos(in[0]);
    case Op::Sum: need(1); return sum(in[0]);
    case Op::SumRows: need(1); return sum_rows(in[0]);
    case Op::Mean: need(1); return mean(in[0]);
    case Op::LogSumExpRows: need(1); return logsumexp_rows(in[0]);
    case Op::Broadcast: need(1); return broadcast(in[0], shape);
    case Op::Reshape: need(1); return reshape(in[0], shape);
    case Op::StopGradient: need(1); return stop_gradient(in[0]);
    case Op::Concat: return concat(in);
    case Op::Leaf: break;
  }
  throw ContractError("forward_op: leaves are created with Graph::parameter/constant");
}

}  // namespace avae
