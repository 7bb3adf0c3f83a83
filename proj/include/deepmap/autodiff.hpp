#pragma once

// Reverse-mode automatic differentiation over dense double-precision tensors.
//
// A Tensor is a shared handle to storage that survives across graphs (network
// parameters, pose variables). A Graph is a per-forward-pass tape: every
// operation appends one node, and backward() walks the tape once in reverse
// append order. Leaves created from tensors with requires_grad() accumulate
// their gradient into the tensor when backward() finishes.
//
// Values are stored as row-major matrices: a tensor of shape [d0, ..., dn-1]
// is viewed as (d0 * ... * dn-2) rows by dn-1 columns, so a batch of point
// sets [B, N, C] is a (B*N) x C matrix and a shared per-point layer is a
// single GEMM.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepmap::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;
using Shape = std::vector<Index>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GradError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Rows/cols of the matrix view for a shape.
Index view_rows(const Shape& shape);
Index view_cols(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, Matrix values, bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor vector(std::initializer_list<double> v, bool requires_grad = false);

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const { return storage_->shape; }
  Index numel() const { return ad::numel(storage_->shape); }

  Matrix& values() { return storage_->values; }
  const Matrix& values() const { return storage_->values; }

  bool requires_grad() const { return storage_->requires_grad; }
  void set_requires_grad(bool on) { storage_->requires_grad = on; }

  bool has_grad() const { return storage_->has_grad; }
  // Allocates a zero gradient on first access.
  Matrix& grad();
  const Matrix& grad() const;
  void zero_grad();
  void clear_grad();

  const std::string& name() const { return storage_->name; }
  void set_name(std::string name) { storage_->name = std::move(name); }

  bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }
  const void* id() const { return storage_.get(); }

  // Deep copy (new storage, no gradient).
  Tensor clone() const;

 private:
  struct Storage {
    Shape shape;
    Matrix values;
    Matrix grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::string name;
  };
  std::shared_ptr<Storage> storage_;
};

enum class Op : std::uint8_t {
  Leaf,
  Constant,
  MatMul,
  AddBias,
  Dense,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  Relu,
  Elu,
  Sigmoid,
  Sin,
  Cos,
  Log,
  Clamp,
  Conv1d,
  MaxPoolPoints,
  Mean,
  Sum,
  Reshape,
  Rows,
  Gather,
  RowNorm,
  Transform2d,
  Concat,
};

const char* op_name(Op op);

class Graph;

// Handle to a node of a graph. Cheap to copy.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Matrix& value() const;
  const Shape& shape() const;
  double item() const;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  struct Node {
    Op kind = Op::Leaf;
    std::vector<int> inputs;
    Shape shape;
    Matrix value;
    Matrix grad;
    bool has_grad = false;
    bool needs_grad = false;
    BackwardFn backward;
    Tensor source;  // leaves only
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Registers a tensor as a leaf. Registering the same storage twice returns
  // the same node.
  Var leaf(const Tensor& t);
  Var constant(Matrix values, Shape shape);
  Var constant(const Tensor& t) { return constant(t.values(), t.shape()); }

  // Appends an operation node. Every input must be an earlier node.
  Var record(Op kind, std::vector<int> inputs, Matrix value, Shape shape, BackwardFn fn);

  // Populates grads of every requires_grad leaf tensor with d(loss)/d(leaf),
  // summing with any gradient already present. Intermediate grads are freed.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  bool needs_grad(int id) const { return node(id).needs_grad; }

  // Gradient buffer of a node, allocated to zeros on first use. Only valid
  // during backward().
  Matrix& grad_of(int id);
  // Adds a gradient contribution; the first one is assigned without zero fill.
  template <class Expr>
  void accumulate(int id, const Expr& contribution) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.has_grad) {
      n.grad.noalias() += contribution;
    } else {
      n.grad.noalias() = contribution;
      n.has_grad = true;
    }
  }
  const Matrix& value_of(int id) const { return node(id).value; }

 private:
  std::vector<Node> nodes_;
  std::map<const void*, int> leaf_ids_;
  bool backward_done_ = false;
};

// ---- operators ----------------------------------------------------------

// a: [..., k], b: [k, m] -> [..., m]
Var matmul(Var a, Var b);
// x: [..., m], bias: [m] (any shape with m elements) -> [..., m]
Var add_bias(Var x, Var bias);

enum class DenseActivation : std::uint8_t { Identity, Relu, Elu };
// act(x w + bias) as one node; x: [..., k], w: [k, m], bias: [m]. Elu uses alpha = 1.
Var dense(Var x, Var w, Var bias, DenseActivation act);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double c);
Var add_scalar(Var x, double c);
Var relu(Var x);
Var elu(Var x, double alpha = 1.0);
Var sigmoid(Var x);
Var sin(Var x);
Var cos(Var x);
Var log(Var x);
Var clamp(Var x, double lo, double hi);
// x: [B, L, Cin], weight: [K, Cin, Cout]; odd K, zero padding dilation*(K-1)/2,
// so the output keeps length L.
Var conv1d(Var x, Var weight, int dilation);
// x: [B, L, C] -> [B, C], maximum over the point axis (ties: lowest index).
Var max_pool_points(Var x);
Var mean(Var x);
Var sum(Var x);
Var reshape(Var x, Shape shape);
// Rows [begin, begin+count) of the matrix view.
Var rows(Var x, Index begin, Index count);
// out[i] = x[indices[i]] over rows of the matrix view.
Var gather_rows(Var x, std::vector<Index> indices);
// [N, C] -> [N, 1] Euclidean norm of each row (gradient 0 at the origin).
Var row_norm(Var x);
// points: [M, 2] grouped contiguously by pose, poses: [K, 3] as (tx, ty, alpha)
// with M divisible by K. Row r is moved by pose r / (M / K).
Var transform2d(Var points, Var poses);
// Row-wise concatenation of matrix views with equal column counts.
Var concat_rows(std::span<const Var> parts);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double c, Var x) { return scale(x, c); }
inline Var operator*(Var x, double c) { return scale(x, c); }

// ---- optimization -------------------------------------------------------

struct AdamState {
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

// One Adam update with bias correction; grads are zeroed afterwards. Throws
// GradError naming any parameter without a gradient.
void adam_step(std::span<Tensor> params, AdamState& state);

// Plain gradient descent, grads zeroed afterwards.
void sgd_step(std::span<Tensor> params, double lr);

// ---- initialization and checkpoints -------------------------------------

void init_uniform(Tensor& t, double bound, std::mt19937_64& rng);

using NamedTensors = std::map<std::string, Tensor>;

// {name: {"shape": [...], "values": [...]}} with round-trip exact doubles.
std::string checkpoint_to_json(const NamedTensors& tensors);
NamedTensors checkpoint_from_json(const std::string& text);
void save_checkpoint(const std::string& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::string& path);

}  // namespace deepmap::ad
