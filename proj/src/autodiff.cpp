#include "deepmap/autodiff.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace deepmap::ad {

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Index view_cols(const Shape& shape) { return shape.empty() ? 1 : shape.back(); }

Index view_rows(const Shape& shape) {
  const Index cols = view_cols(shape);
  return cols == 0 ? 0 : numel(shape) / cols;
}

// ---- Tensor -------------------------------------------------------------

Tensor::Tensor(Shape shape, bool requires_grad) : storage_(std::make_shared<Storage>()) {
  storage_->values = Matrix::Zero(view_rows(shape), view_cols(shape));
  storage_->shape = std::move(shape);
  storage_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, Matrix values, bool requires_grad) : storage_(std::make_shared<Storage>()) {
  if (values.size() != ad::numel(shape)) {
    throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " + to_string(shape));
  }
  storage_->values = Eigen::Map<const Matrix>(values.data(), view_rows(shape), view_cols(shape));
  storage_->shape = std::move(shape);
  storage_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return Tensor({}, std::move(m), requires_grad);
}

Tensor Tensor::vector(std::initializer_list<double> v, bool requires_grad) {
  Matrix m(1, static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) m(0, i++) = x;
  return Tensor({static_cast<Index>(v.size())}, std::move(m), requires_grad);
}

Matrix& Tensor::grad() {
  if (!storage_->has_grad) {
    storage_->grad = Matrix::Zero(storage_->values.rows(), storage_->values.cols());
    storage_->has_grad = true;
  }
  return storage_->grad;
}

const Matrix& Tensor::grad() const {
  if (!storage_->has_grad) throw GradError("tensor '" + storage_->name + "' has no gradient");
  return storage_->grad;
}

void Tensor::zero_grad() {
  if (storage_->has_grad) storage_->grad.setZero();
}

void Tensor::clear_grad() {
  storage_->grad.resize(0, 0);
  storage_->has_grad = false;
}

Tensor Tensor::clone() const {
  Tensor t(storage_->shape, storage_->values, storage_->requires_grad);
  t.set_name(storage_->name);
  return t;
}

// ---- Graph --------------------------------------------------------------

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::MatMul: return "matmul";
    case Op::AddBias: return "add_bias";
    case Op::Dense: return "dense";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::Relu: return "relu";
    case Op::Elu: return "elu";
    case Op::Sigmoid: return "sigmoid";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Log: return "log";
    case Op::Clamp: return "clamp";
    case Op::Conv1d: return "conv1d";
    case Op::MaxPoolPoints: return "max_pool_points";
    case Op::Mean: return "mean";
    case Op::Sum: return "sum";
    case Op::Reshape: return "reshape";
    case Op::Rows: return "rows";
    case Op::Gather: return "gather_rows";
    case Op::RowNorm: return "row_norm";
    case Op::Transform2d: return "transform2d";
    case Op::Concat: return "concat_rows";
  }
  return "?";
}

const Matrix& Var::value() const { return graph->value_of(id); }
const Shape& Var::shape() const { return graph->node(id).shape; }
double Var::item() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("item: shape " + to_string(shape()) + " is not scalar");
  return v(0, 0);
}

Var Graph::leaf(const Tensor& t) {
  if (auto it = leaf_ids_.find(t.id()); it != leaf_ids_.end()) return {this, it->second};
  Node n;
  n.kind = Op::Leaf;
  n.shape = t.shape();
  n.value = t.values();
  n.needs_grad = t.requires_grad();
  n.source = t;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  leaf_ids_.emplace(t.id(), id);
  return {this, id};
}

Var Graph::constant(Matrix values, Shape shape) {
  if (values.size() != numel(shape)) {
    throw ShapeError("constant: " + std::to_string(values.size()) + " values for shape " + to_string(shape));
  }
  Node n;
  n.kind = Op::Constant;
  n.value = Eigen::Map<const Matrix>(values.data(), view_rows(shape), view_cols(shape));
  n.shape = std::move(shape);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::record(Op kind, std::vector<int> inputs, Matrix value, Shape shape, BackwardFn fn) {
  const int self = static_cast<int>(nodes_.size());
  Node n;
  n.kind = kind;
  for (int in : inputs) {
    if (in < 0 || in >= self) throw std::logic_error(std::string(op_name(kind)) + ": input refers to a later node");
    n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(in)].needs_grad;
  }
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  n.shape = std::move(shape);
  if (n.needs_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, self};
}

Matrix& Graph::grad_of(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.has_grad) {
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw std::logic_error("backward: loss belongs to another graph");
  const Node& root = node(loss.id);
  if (root.value.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + to_string(root.shape));
  }
  if (backward_done_) throw std::logic_error("backward: graph already consumed");
  backward_done_ = true;

  grad_of(loss.id).setOnes();
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad || !n.needs_grad) continue;
    if (n.kind == Op::Leaf) {
      Tensor src = n.source;
      src.grad() += n.grad;
    } else if (n.backward) {
      n.backward(*this, id);
    }
    n.grad.resize(0, 0);
    n.has_grad = false;
  }
}

// ---- operators ----------------------------------------------------------

namespace {

Graph& graph_of(Var a) {
  if (a.graph == nullptr) throw std::logic_error("operation on an unbound Var");
  return *a.graph;
}

Graph& graph_of(Var a, Var b) {
  if (a.graph != b.graph) throw std::logic_error("operands belong to different graphs");
  return graph_of(a);
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

// Elementwise unary op whose derivative is computed from (input, output).
template <class Forward, class Derivative>
Var unary(Var x, Op kind, Forward forward, Derivative derivative) {
  Graph& g = graph_of(x);
  Matrix out = forward(x.value());
  const int in = x.id;
  return g.record(kind, {in}, std::move(out), x.shape(), [in, derivative](Graph& gr, int self) {
    const auto& n = gr.node(self);
    gr.accumulate(in, (n.grad.array() * derivative(gr.value_of(in).array(), n.value.array())).matrix());
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  if (b.shape().size() != 2 || view_cols(a.shape()) != b.shape()[0]) {
    throw ShapeError("matmul: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  Shape shape = a.shape().empty() ? Shape{1} : a.shape();
  shape.back() = b.shape()[1];
  Matrix out = a.value() * b.value();
  const int ia = a.id, ib = b.id;
  return g.record(Op::MatMul, {ia, ib}, std::move(out), std::move(shape), [ia, ib](Graph& gr, int self) {
    const Matrix& dout = gr.node(self).grad;
    if (gr.needs_grad(ia)) gr.accumulate(ia, dout * gr.value_of(ib).transpose());
    if (gr.needs_grad(ib)) gr.accumulate(ib, gr.value_of(ia).transpose() * dout);
  });
}

Var add_bias(Var x, Var bias) {
  Graph& g = graph_of(x, bias);
  const Index cols = view_cols(x.shape());
  if (numel(bias.shape()) != cols) {
    throw ShapeError("add_bias: shape mismatch " + to_string(x.shape()) + " vs " + to_string(bias.shape()));
  }
  const Eigen::Map<const Eigen::RowVectorXd> b(bias.value().data(), cols);
  Matrix out = x.value().rowwise() + b;
  const int ix = x.id, ib = bias.id;
  return g.record(Op::AddBias, {ix, ib}, std::move(out), x.shape(), [ix, ib, cols](Graph& gr, int self) {
    const Matrix& dout = gr.node(self).grad;
    if (gr.needs_grad(ix)) gr.accumulate(ix, dout);
    if (gr.needs_grad(ib)) {
      Matrix& db = gr.grad_of(ib);
      Eigen::Map<Eigen::RowVectorXd>(db.data(), cols) += dout.colwise().sum();
    }
  });
}

Var dense(Var x, Var w, Var bias, DenseActivation act) {
  Graph& g = graph_of(x, w);
  graph_of(x, bias);
  if (w.shape().size() != 2 || view_cols(x.shape()) != w.shape()[0] || numel(bias.shape()) != w.shape()[1]) {
    throw ShapeError("dense: shape mismatch " + to_string(x.shape()) + " vs " + to_string(w.shape()) + " vs " +
                     to_string(bias.shape()));
  }
  const Index cols = w.shape()[1];
  Shape shape = x.shape().empty() ? Shape{1} : x.shape();
  shape.back() = cols;
  Matrix out(x.value().rows(), cols);
  out.noalias() = x.value() * w.value();
  out.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value().data(), cols);
  if (act == DenseActivation::Relu) out = out.cwiseMax(0.0);
  if (act == DenseActivation::Elu) out = (out.array() > 0.0).select(out.array(), out.array().exp() - 1.0).matrix();
  const int ix = x.id, iw = w.id, ib = bias.id;
  return g.record(Op::Dense, {ix, iw, ib}, std::move(out), std::move(shape), [ix, iw, ib, cols, act](Graph& gr, int self) {
    const auto& n = gr.node(self);
    Matrix masked;
    if (act == DenseActivation::Relu) masked = (n.value.array() > 0.0).select(n.grad.array(), 0.0).matrix();
    if (act == DenseActivation::Elu) {
      masked = (n.value.array() > 0.0).select(n.grad.array(), n.grad.array() * (n.value.array() + 1.0)).matrix();
    }
    const Matrix& dz = act == DenseActivation::Identity ? n.grad : masked;
    if (gr.needs_grad(ix)) gr.accumulate(ix, dz * gr.value_of(iw).transpose());
    if (gr.needs_grad(iw)) gr.accumulate(iw, gr.value_of(ix).transpose() * dz);
    if (gr.needs_grad(ib)) {
      const Shape& bs = gr.node(ib).shape;
      const Eigen::RowVectorXd db = dz.colwise().sum();
      gr.accumulate(ib, Eigen::Map<const Matrix>(db.data(), view_rows(bs), view_cols(bs)));
    }
  });
}

Var add(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape("add", a, b);
  const int ia = a.id, ib = b.id;
  return g.record(Op::Add, {ia, ib}, a.value() + b.value(), a.shape(), [ia, ib](Graph& gr, int self) {
    const Matrix& dout = gr.node(self).grad;
    if (gr.needs_grad(ia)) gr.accumulate(ia, dout);
    if (gr.needs_grad(ib)) gr.accumulate(ib, dout);
  });
}

Var sub(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape("sub", a, b);
  const int ia = a.id, ib = b.id;
  return g.record(Op::Sub, {ia, ib}, a.value() - b.value(), a.shape(), [ia, ib](Graph& gr, int self) {
    const Matrix& dout = gr.node(self).grad;
    if (gr.needs_grad(ia)) gr.accumulate(ia, dout);
    if (gr.needs_grad(ib)) gr.accumulate(ib, -dout);
  });
}

Var mul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape("mul", a, b);
  const int ia = a.id, ib = b.id;
  Matrix out = a.value().cwiseProduct(b.value());
  return g.record(Op::Mul, {ia, ib}, std::move(out), a.shape(), [ia, ib](Graph& gr, int self) {
    const Matrix& dout = gr.node(self).grad;
    if (gr.needs_grad(ia)) gr.accumulate(ia, dout.cwiseProduct(gr.value_of(ib)));
    if (gr.needs_grad(ib)) gr.accumulate(ib, dout.cwiseProduct(gr.value_of(ia)));
  });
}

Var scale(Var x, double c) {
  Graph& g = graph_of(x);
  const int ix = x.id;
  return g.record(Op::Scale, {ix}, x.value() * c, x.shape(), [ix, c](Graph& gr, int self) {
    gr.accumulate(ix, gr.node(self).grad * c);
  });
}

Var add_scalar(Var x, double c) {
  Graph& g = graph_of(x);
  const int ix = x.id;
  Matrix out = x.value().array() + c;
  return g.record(Op::AddScalar, {ix}, std::move(out), x.shape(), [ix](Graph& gr, int self) {
    gr.accumulate(ix, gr.node(self).grad);
  });
}

Var relu(Var x) {
  return unary(
      x, Op::Relu, [](const Matrix& v) -> Matrix { return v.cwiseMax(0.0); },
      [](const auto& in, const auto&) { return (in > 0.0).template cast<double>(); });
}

Var elu(Var x, double alpha) {
  return unary(
      x, Op::Elu,
      [alpha](const Matrix& v) -> Matrix {
        return (v.array() > 0.0).select(v.array(), alpha * (v.array().exp() - 1.0)).matrix();
      },
      [alpha](const auto& in, const auto& out) { return (in > 0.0).select(1.0, out + alpha); });
}

Var sigmoid(Var x) {
  return unary(
      x, Op::Sigmoid, [](const Matrix& v) -> Matrix { return (1.0 / (1.0 + (-v.array()).exp())).matrix(); },
      [](const auto&, const auto& out) { return out * (1.0 - out); });
}

Var sin(Var x) {
  return unary(
      x, Op::Sin, [](const Matrix& v) -> Matrix { return v.array().sin().matrix(); },
      [](const auto& in, const auto&) { return in.cos(); });
}

Var cos(Var x) {
  return unary(
      x, Op::Cos, [](const Matrix& v) -> Matrix { return v.array().cos().matrix(); },
      [](const auto& in, const auto&) { return -in.sin(); });
}

Var log(Var x) {
  return unary(
      x, Op::Log, [](const Matrix& v) -> Matrix { return v.array().log().matrix(); },
      [](const auto& in, const auto&) { return in.inverse(); });
}

Var clamp(Var x, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
  return unary(
      x, Op::Clamp, [lo, hi](const Matrix& v) -> Matrix { return v.cwiseMax(lo).cwiseMin(hi); },
      [lo, hi](const auto& in, const auto&) { return ((in >= lo) && (in <= hi)).template cast<double>(); });
}

Var conv1d(Var x, Var weight, int dilation) {
  Graph& g = graph_of(x, weight);
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 3 || ws.size() != 3 || ws[1] != xs[2] || ws[0] % 2 == 0 || dilation < 1) {
    throw ShapeError("conv1d: shape mismatch " + to_string(xs) + " vs " + to_string(ws));
  }
  const Index batch = xs[0], len = xs[1], cin = xs[2], k = ws[0], cout = ws[2];
  const Index half = (k - 1) / 2;

  // im2col: row (b, l) holds the K taps at l + (j - half) * dilation.
  auto cols = std::make_shared<Matrix>(Matrix::Zero(batch * len, k * cin));
  const Matrix& xv = x.value();
  for (Index b = 0; b < batch; ++b) {
    for (Index l = 0; l < len; ++l) {
      for (Index j = 0; j < k; ++j) {
        const Index src = l + (j - half) * dilation;
        if (src < 0 || src >= len) continue;
        cols->block(b * len + l, j * cin, 1, cin) = xv.row(b * len + src);
      }
    }
  }
  Matrix out = (*cols) * weight.value();
  const int ix = x.id, iw = weight.id;
  return g.record(Op::Conv1d, {ix, iw}, std::move(out), {batch, len, cout},
                  [=](Graph& gr, int self) {
                    const Matrix& dout = gr.node(self).grad;
                    if (gr.needs_grad(iw)) gr.accumulate(iw, cols->transpose() * dout);
                    if (gr.needs_grad(ix)) {
                      const Matrix dcols = dout * gr.value_of(iw).transpose();
                      Matrix& dx = gr.grad_of(ix);
                      for (Index b = 0; b < batch; ++b) {
                        for (Index l = 0; l < len; ++l) {
                          for (Index j = 0; j < k; ++j) {
                            const Index src = l + (j - half) * dilation;
                            if (src < 0 || src >= len) continue;
                            dx.row(b * len + src) += dcols.block(b * len + l, j * cin, 1, cin);
                          }
                        }
                      }
                    }
                  });
}

Var max_pool_points(Var x) {
  Graph& g = graph_of(x);
  const Shape& xs = x.shape();
  if (xs.size() != 3 || xs[1] < 1) throw ShapeError("max_pool_points: expected [B, L, C], got " + to_string(xs));
  const Index batch = xs[0], len = xs[1], c = xs[2];
  const Matrix& xv = x.value();
  Matrix out(batch, c);
  auto arg = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(batch * c));
  for (Index b = 0; b < batch; ++b) {
    out.row(b) = xv.row(b * len);
    for (Index ch = 0; ch < c; ++ch) (*arg)[static_cast<std::size_t>(b * c + ch)] = b * len;
    for (Index l = 1; l < len; ++l) {
      const auto row = xv.row(b * len + l);
      for (Index ch = 0; ch < c; ++ch) {
        if (row(ch) > out(b, ch)) {
          out(b, ch) = row(ch);
          (*arg)[static_cast<std::size_t>(b * c + ch)] = b * len + l;
        }
      }
    }
  }
  const int ix = x.id;
  return g.record(Op::MaxPoolPoints, {ix}, std::move(out), {batch, c}, [ix, arg, batch, c](Graph& gr, int self) {
    const Matrix& dout = gr.node(self).grad;
    Matrix& dx = gr.grad_of(ix);
    for (Index b = 0; b < batch; ++b) {
      for (Index ch = 0; ch < c; ++ch) dx((*arg)[static_cast<std::size_t>(b * c + ch)], ch) += dout(b, ch);
    }
  });
}

Var sum(Var x) {
  Graph& g = graph_of(x);
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  const int ix = x.id;
  return g.record(Op::Sum, {ix}, std::move(out), {}, [ix](Graph& gr, int self) {
    gr.grad_of(ix).array() += gr.node(self).grad(0, 0);
  });
}

Var mean(Var x) {
  Graph& g = graph_of(x);
  const Index n = x.value().size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  Matrix out(1, 1);
  out(0, 0) = x.value().sum() / static_cast<double>(n);
  const int ix = x.id;
  return g.record(Op::Mean, {ix}, std::move(out), {}, [ix, n](Graph& gr, int self) {
    gr.grad_of(ix).array() += gr.node(self).grad(0, 0) / static_cast<double>(n);
  });
}

Var reshape(Var x, Shape shape) {
  Graph& g = graph_of(x);
  if (numel(shape) != x.value().size()) {
    throw ShapeError("reshape: shape mismatch " + to_string(x.shape()) + " vs " + to_string(shape));
  }
  const Index r = view_rows(shape), c = view_cols(shape);
  Matrix out = Eigen::Map<const Matrix>(x.value().data(), r, c);
  const int ix = x.id;
  return g.record(Op::Reshape, {ix}, std::move(out), std::move(shape), [ix](Graph& gr, int self) {
    Matrix& dx = gr.grad_of(ix);
    const Matrix& dout = gr.node(self).grad;
    Eigen::Map<Matrix>(dx.data(), dout.rows(), dout.cols()) += dout;
  });
}

Var rows(Var x, Index begin, Index count) {
  Graph& g = graph_of(x);
  const Matrix& xv = x.value();
  if (begin < 0 || count < 0 || begin + count > xv.rows()) {
    throw ShapeError("rows: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside shape " + to_string(x.shape()));
  }
  Matrix out = xv.middleRows(begin, count);
  const int ix = x.id;
  return g.record(Op::Rows, {ix}, std::move(out), {count, xv.cols()}, [ix, begin, count](Graph& gr, int self) {
    gr.grad_of(ix).middleRows(begin, count) += gr.node(self).grad;
  });
}

Var gather_rows(Var x, std::vector<Index> indices) {
  Graph& g = graph_of(x);
  const Matrix& xv = x.value();
  Matrix out(static_cast<Index>(indices.size()), xv.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= xv.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(indices[i]) + " outside shape " + to_string(x.shape()));
    }
    out.row(static_cast<Index>(i)) = xv.row(indices[i]);
  }
  const int ix = x.id;
  const Shape shape{static_cast<Index>(indices.size()), xv.cols()};
  return g.record(Op::Gather, {ix}, std::move(out), shape,
                  [ix, idx = std::move(indices)](Graph& gr, int self) {
                    const Matrix& dout = gr.node(self).grad;
                    Matrix& dx = gr.grad_of(ix);
                    for (std::size_t i = 0; i < idx.size(); ++i) dx.row(idx[i]) += dout.row(static_cast<Index>(i));
                  });
}

Var row_norm(Var x) {
  Graph& g = graph_of(x);
  Matrix out = x.value().rowwise().norm();
  const int ix = x.id;
  const Index n = out.rows();
  return g.record(Op::RowNorm, {ix}, std::move(out), {n, 1}, [ix](Graph& gr, int self) {
    const auto& node = gr.node(self);
    const Matrix& xv = gr.value_of(ix);
    Matrix& dx = gr.grad_of(ix);
    for (Index r = 0; r < xv.rows(); ++r) {
      const double nr = node.value(r, 0);
      if (nr > 0.0) dx.row(r) += (node.grad(r, 0) / nr) * xv.row(r);
    }
  });
}

Var transform2d(Var points, Var poses) {
  Graph& g = graph_of(points, poses);
  const Matrix& p = points.value();
  const Matrix& q = poses.value();
  if (p.cols() != 2 || q.cols() != 3 || q.rows() < 1 || p.rows() % q.rows() != 0) {
    throw ShapeError("transform2d: shape mismatch " + to_string(points.shape()) + " vs " + to_string(poses.shape()));
  }
  const Index per = p.rows() / q.rows();
  Matrix out(p.rows(), 2);
  for (Index k = 0; k < q.rows(); ++k) {
    const double c = std::cos(q(k, 2)), s = std::sin(q(k, 2));
    for (Index r = k * per; r < (k + 1) * per; ++r) {
      out(r, 0) = c * p(r, 0) - s * p(r, 1) + q(k, 0);
      out(r, 1) = s * p(r, 0) + c * p(r, 1) + q(k, 1);
    }
  }
  const int ip = points.id, iq = poses.id;
  return g.record(Op::Transform2d, {ip, iq}, std::move(out), {p.rows(), 2}, [ip, iq, per](Graph& gr, int self) {
    const Matrix& dout = gr.node(self).grad;
    const Matrix& pv = gr.value_of(ip);
    const Matrix& qv = gr.value_of(iq);
    const bool want_p = gr.needs_grad(ip), want_q = gr.needs_grad(iq);
    for (Index k = 0; k < qv.rows(); ++k) {
      const double c = std::cos(qv(k, 2)), s = std::sin(qv(k, 2));
      double dtx = 0.0, dty = 0.0, da = 0.0;
      for (Index r = k * per; r < (k + 1) * per; ++r) {
        const double gx = dout(r, 0), gy = dout(r, 1);
        dtx += gx;
        dty += gy;
        da += gx * (-s * pv(r, 0) - c * pv(r, 1)) + gy * (c * pv(r, 0) - s * pv(r, 1));
        if (want_p) {
          Matrix& dp = gr.grad_of(ip);
          dp(r, 0) += c * gx + s * gy;
          dp(r, 1) += -s * gx + c * gy;
        }
      }
      if (want_q) {
        Matrix& dq = gr.grad_of(iq);
        dq(k, 0) += dtx;
        dq(k, 1) += dty;
        dq(k, 2) += da;
      }
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Graph& g = graph_of(parts.front());
  const Index cols = parts.front().value().cols();
  Index total = 0;
  std::vector<int> ids;
  for (const Var& v : parts) {
    graph_of(parts.front(), v);
    if (v.value().cols() != cols) {
      throw ShapeError("concat_rows: shape mismatch " + to_string(parts.front().shape()) + " vs " + to_string(v.shape()));
    }
    total += v.value().rows();
    ids.push_back(v.id);
  }
  Matrix out(total, cols);
  Index at = 0;
  for (const Var& v : parts) {
    out.middleRows(at, v.value().rows()) = v.value();
    at += v.value().rows();
  }
  std::vector<int> inputs = ids;
  return g.record(Op::Concat, std::move(inputs), std::move(out), {total, cols}, [ids](Graph& gr, int self) {
    const Matrix& dout = gr.node(self).grad;
    Index off = 0;
    for (int id : ids) {
      const Index r = gr.value_of(id).rows();
      if (gr.needs_grad(id)) gr.accumulate(id, dout.middleRows(off, r));
      off += r;
    }
  });
}

// ---- optimization -------------------------------------------------------

void adam_step(std::span<Tensor> params, AdamState& state) {
  std::string missing;
  for (const Tensor& p : params) {
    if (!p.has_grad()) missing += (missing.empty() ? "" : ", ") + (p.name().empty() ? std::string("<unnamed>") : p.name());
  }
  if (!missing.empty()) throw GradError("adam_step: missing gradient for " + missing);

  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const Tensor& p : params) {
      state.m.push_back(Matrix::Zero(p.values().rows(), p.values().cols()));
      state.v.push_back(Matrix::Zero(p.values().rows(), p.values().cols()));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    const Matrix& g = p.grad();
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    if (m.rows() != g.rows() || m.cols() != g.cols()) throw ShapeError("adam_step: state shape differs from parameter");
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseAbs2();
    p.values().array() -= state.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
    p.zero_grad();
  }
}

void sgd_step(std::span<Tensor> params, double lr) {
  for (Tensor& p : params) {
    if (!p.has_grad()) throw GradError("sgd_step: missing gradient for " + p.name());
    p.values() -= lr * p.grad();
    p.zero_grad();
  }
}

// ---- initialization and checkpoints -------------------------------------

void init_uniform(Tensor& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix& v = t.values();
  for (Index i = 0; i < v.size(); ++i) v.data()[i] = dist(rng);
}

std::string checkpoint_to_json(const NamedTensors& tensors) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, t] : tensors) {
    const Matrix& v = t.values();
    std::vector<double> flat(v.data(), v.data() + v.size());
    j[name] = {{"shape", t.shape()}, {"values", flat}};
  }
  return j.dump();
}

NamedTensors checkpoint_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  NamedTensors out;
  for (const auto& [name, entry] : j.items()) {
    const Shape shape = entry.at("shape").get<Shape>();
    const std::vector<double> flat = entry.at("values").get<std::vector<double>>();
    if (static_cast<Index>(flat.size()) != numel(shape)) {
      throw ShapeError("checkpoint: '" + name + "' has " + std::to_string(flat.size()) + " values for shape " +
                       to_string(shape));
    }
    Matrix m = Eigen::Map<const Matrix>(flat.data(), view_rows(shape), view_cols(shape));
    Tensor t(shape, std::move(m));
    t.set_name(name);
    out.emplace(name, std::move(t));
  }
  return out;
}

void save_checkpoint(const std::string& path, const NamedTensors& tensors) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path);
  f << checkpoint_to_json(tensors);
}

NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read checkpoint " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace deepmap::ad
