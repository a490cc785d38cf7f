#ifndef CSTT_AUTOGRAD_H_
#define CSTT_AUTOGRAD_H_

// A small tape-based reverse-mode differentiation engine over dense
// row-major double matrices. Every forward op appends one node to a Tape;
// Tape::Backward walks the nodes in reverse and accumulates into the
// Parameter objects that were bound as leaves.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace cstt::ag {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

// A trainable array. `grad` accumulates across tapes until ZeroGrad().
struct Parameter {
  Parameter(std::string name, Matrix value);

  void ZeroGrad() { grad.setZero(); }

  std::string name;
  Matrix value;
  Matrix grad;
};

class Tape;

// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  // Value of a 1x1 node.
  double scalar() const;

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
  // Called once during Backward with the node's own id; reads grad(self) and
  // pushes contributions into its inputs via Accumulate().
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var Constant(Matrix value);
  Var Param(Parameter& param);

  // Appends an op node. The node requires grad iff any input does; when none
  // does, `backward` is dropped.
  Var Record(Matrix value, std::initializer_list<Var> inputs,
             BackwardFn backward);
  Var Record(Matrix value, std::span<const Var> inputs, BackwardFn backward);

  const Matrix& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  // Gradient buffer of a node, zero-initialised on first access.
  Matrix& grad(int id);
  void Accumulate(Var input, const Matrix& g);

  // Seeds d(root) = seed (root must be 1x1) and propagates to parameters.
  void Backward(Var root, double seed = 1.0);

  // Distinct parameters bound on this tape, in first-use order.
  std::vector<Parameter*> Parameters() const;
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool has_grad = false;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
};

// ---- elementwise and linear algebra ----

Var Add(Var a, Var b);
Var Sub(Var a, Var b);
Var Scale(Var a, double s);
// a (n x m) + row (1 x m) broadcast over rows.
Var AddRow(Var a, Var row);
// a + c for a constant matrix c of the same shape.
Var AddConstant(Var a, const Matrix& c);
Var MatMul(Var a, Var b);
// a * b^T.
Var MatMulBT(Var a, Var b);
Var Relu(Var a);
Var Tanh(Var a);
Var Sum(Var a);
Var Mean(Var a);
// Weighted sum of 1x1 nodes.
Var WeightedSum(std::span<const Var> terms, std::span<const double> weights);

// ---- structural ----

// Rows of `table` picked by `ids` (embedding lookup).
Var GatherRows(Var table, std::span<const int> ids);
// Row i of x repeated counts[i] times, in order.
Var RepeatRows(Var x, std::span<const int> counts);
// out[i] = take_b[i] ? b[i] : a[i]; a and b share a shape.
Var MixRows(Var a, Var b, const std::vector<bool>& take_b);
// out[t * b.rows() + u] = a[t] + b[u].
Var PairwiseRowSum(Var a, Var b);

// ---- neural ----

Var LayerNorm(Var x, Var gamma, Var beta, double eps = 1e-5);
// Scaled dot-product attention over `heads` column blocks of q, k, v.
Var MultiHeadAttention(Var q, Var k, Var v, int heads, bool causal);
// Inverted dropout. Identity when p == 0 or rng is null.
Var Dropout(Var x, double p, std::mt19937_64* rng);
// Rows scaled to unit L2 norm. Rows with norm below eps map to zero and
// `degenerate` (if given) is set.
Var NormalizeRows(Var x, bool* degenerate = nullptr, double eps = 1e-12);
// Mean squared difference over all elements, 1x1.
Var MeanSquaredError(Var a, Var b);

}  // namespace cstt::ag

#endif  // CSTT_AUTOGRAD_H_
