#pragma once

// Tape-based reverse-mode automatic differentiation over dense tensors.
//
// A Graph is built eagerly: every operation computes its value immediately
// and records a closure for the reverse sweep. Graphs are single-use and are
// rebuilt for each evaluation.

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "windinr/kernels.hpp"
#include "windinr/tensor.hpp"

namespace windinr::linalg {
class Cholesky;
}

namespace windinr::ad {

class Graph;

class UnboundLeaf : public std::out_of_range {
 public:
  explicit UnboundLeaf(const std::string& name) : std::out_of_range("unbound leaf '" + name + "'") {}
};

class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }
  bool requires_grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  friend class Graph;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

using LeafMap = std::map<std::string, Tensor>;

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor& grad_out)>;

  Graph() = default;
  /// Graph whose named inputs are looked up in `bindings` (not copied).
  explicit Graph(const LeafMap& bindings) : bindings_(&bindings) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Named input taken from the bindings; throws UnboundLeaf.
  Var input(const std::string& name, bool requires_grad = true);
  Var leaf(Tensor value, bool requires_grad, std::string name = {});
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an operation node. Throws NumericalError on non-finite values.
  Var record(Tensor value, std::span<const Var> parents, BackwardFn backward, const char* op);

  /// Reverse sweep from a scalar root. Gradients from earlier sweeps are cleared.
  void backward(Var root);
  bool backward_done() const { return backward_done_; }

  /// Gradient of the last backward root w.r.t. `v`; zeros if `v` is off-path.
  Tensor grad(Var v) const;
  /// Gradients of all named leaves; same-named leaves are summed.
  LeafMap leaf_gradients() const;

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient accumulator for a parent inside a backward closure.
  Tensor& grad_ref(Var v);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::string name;
    BackwardFn backward;
  };

  const LeafMap* bindings_ = nullptr;
  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// operations; shapes are [rows, cols] unless noted

Var matmul(Var a, Var b);           // [n,k] x [k,m]
Var matmul_tn(Var a, Var b);        // a^T b, [m,p]^T x [m,q]
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);              // elementwise
Var add_rowvec(Var a, Var row);     // [n,c] + [1,c]
Var sub_rowvec(Var a, Var row);
Var mul_rowvec(Var a, Var row);
Var broadcast_rows(Var row, std::size_t n);
Var scale(Var a, double s);
Var affine(Var a, double s, double shift);  // s*a + shift
Var silu(Var a);
Var tanh(Var a);
Var exp(Var a);
Var square(Var a);
Var sqrt_eps(Var a, double eps);    // sqrt(a + eps)
Var sum(Var a);                     // -> [1]
Var mean(Var a);                    // -> [1]
Var sum_rows(Var a);                // [n,c] -> [1,c]
Var mean_rows(Var a);
Var col_max(Var a);                 // [n,c] -> [1,c]
Var softmax(Var a);                 // over all entries
Var concat_cols(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var reshape(Var a, Shape shape);
Var pick(Var a, std::size_t index);  // scalar entry
Var layer_norm(Var a, double eps);   // per row, no affine
Var group_norm(Var a, std::size_t groups, double eps);  // [pixels, channels], no affine
/// 3x3 same-size convolution on a channels-last map [h*w, cin] with weights [9*cin, cout].
Var conv3x3(Var x, Var weights, std::size_t h, std::size_t w, kernels::Padding pad);
/// Bilinear sampling of a channels-last map [h*w, c] at pixel coordinates.
Var bilinear_sample(Var map, std::size_t h, std::size_t w, std::vector<kernels::PixelCoord> at);
/// x^T A^{-1} x for a row or column vector x, with A given by its factor.
Var inverse_quadratic(Var x, const linalg::Cholesky& chol);
/// sum_ij weight_ij (pred_ij - target_ij)^2
Var weighted_squared_error(Var pred, const Tensor& target, const Tensor& weight);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// functional interface: an expression builds a scalar root from bound leaves

using Expression = std::function<Var(Graph&)>;

class Program {
 public:
  Program(Expression expression, LeafMap leaves);
  /// Evaluates the root. Throws UnboundLeaf, std::invalid_argument, NumericalError.
  double forward();
  /// Gradients of every bound leaf. Throws std::logic_error before forward().
  LeafMap backward();
  const LeafMap& leaves() const { return leaves_; }

 private:
  Expression expression_;
  LeafMap leaves_;
  std::unique_ptr<Graph> graph_;
  Var root_;
};

double forward(const Expression& expression, const LeafMap& leaves);
LeafMap gradients(const Expression& expression, const LeafMap& leaves);

/// Max over entries of |analytic - central difference| / (|analytic| + 1e-8).
double finite_diff_check(const Expression& expression, const LeafMap& leaves, const std::string& leaf,
                         double step);

}  // namespace windinr::ad
