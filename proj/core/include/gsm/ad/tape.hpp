#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "gsm/ad/tensor.hpp"

namespace gsm::ad {

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const std::vector<int>& shape() const { return value().shape; }
  int rows() const { return value().rows(); }
  int cols() const { return value().cols(); }
};

/// Branch choices of the piecewise ops (activation sides, max arguments) in the order the
/// ops ran. A tape replaying the log of another evaluates the same smooth piece, so central
/// differences taken on replaying tapes stay valid when a step crosses a kink.
struct BranchLog {
  std::vector<std::vector<int>> choices;
};

/// Records operations for one forward pass and runs reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so reverse insertion order is a valid
/// topological order. Gradients on nodes are recomputed on every backward call;
/// gradients on parameters accumulate until the caller zeroes them.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Var constant(Tensor value);
  /// Leaf whose gradient is recorded on the tape (used for input gradients).
  Var variable(Tensor value);
  /// Leaf bound to a parameter. Frozen or non-trainable parameters receive no gradient.
  Var param(Parameter& p, bool frozen = false);

  /// Appends a computed node. `backward` may be empty when no parent needs a gradient.
  Var push(Tensor value, std::vector<int> parents, BackwardFn backward);

  void backward(Var loss);

  /// Appends the branch choices of every later op to `log`.
  void record_branches(BranchLog* log);
  /// Makes later ops take their branch choices from `log`, in order. The ops must run in
  /// the same sequence and with the same shapes as on the recording tape.
  void replay_branches(const BranchLog* log);
  /// For op implementations: the next replayed choices (null unless replaying), and the
  /// recording hook (no-op unless recording).
  const std::vector<int>* next_branches(std::size_t size);
  bool recording_branches() const { return record_ != nullptr; }
  void log_branches(std::vector<int> choices);

  const Tensor& value(int id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  /// Gradient of the last backward pass (empty tensor if none reached the node).
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  /// Gradient buffer of a node, allocated as zeros on first use.
  Tensor& grad_buffer(int id);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<int> parents;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };
  std::deque<Node> nodes_;  // deque keeps value references stable while the tape grows
  BranchLog* record_ = nullptr;
  const BranchLog* replay_ = nullptr;
  std::size_t replay_pos_ = 0;
};

enum class NormMode {
  Train,        // batch statistics, running statistics updated
  TrainFrozen,  // batch statistics, running statistics left untouched
  Eval          // running statistics
};

struct BatchNormBuffers {
  Parameter* running_mean = nullptr;
  Parameter* running_var = nullptr;
  double momentum = 0.1;
};

// Linear algebra and shape manipulation. All rank-2 unless stated.
Var matmul(Var a, Var b);
Var transpose(Var a);
/// Elementwise sum; `b` may also be a 1 x n row broadcast over the rows of `a`.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var concat(const std::vector<Var>& parts, int axis);
Var slice_rows(Var a, int begin, int end);
Var slice_cols(Var a, int begin, int end);
Var reshape(Var a, std::vector<int> shape);
/// Rows of `a` picked by index (repeats allowed). Indices are not differentiable.
Var gather_rows(Var a, const std::vector<int>& indices);

// Elementwise nonlinearities.
Var relu(Var a);
Var leaky_relu(Var a, double slope = 0.2);
Var sigmoid(Var a);
Var abs(Var a);

// Row-wise and column-wise normalizations.
Var row_softmax(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
/// Normalizes each column over the rows of `x`.
Var batch_norm(Var x, Var gamma, Var beta, const BatchNormBuffers& buffers, NormMode mode, double eps = 1e-5);
Var l2_normalize_rows(Var a);

// Pooling. Gradient flows to the first maximal element only.
/// Max over consecutive groups of `group` rows: (g * n) x c -> n x c.
Var max_pool_rows(Var a, int group);
/// axis 0: column maxima (1 x c); axis 1: row maxima (r x 1).
Var max_pool(Var a, int axis);

/// Fused EdgeConv aggregation. With e_ij = center_i + neighbor_{idx[i*k + j]},
///   out_i = max_j leaky_relu(batch_norm(e_ij)),
/// where the batch statistics run over all n * k edges. Same values and gradients as
/// gather_rows + add + batch_norm + leaky_relu + max_pool_rows, without storing the edges.
Var edge_max_bn(Var center, Var neighbor, const std::vector<int>& idx, int k, Var gamma, Var beta,
                const BatchNormBuffers& buffers, NormMode mode, double slope, double eps = 1e-5);

// Reductions to a scalar (rank 0) and norms.
Var sum(Var a);
Var mean(Var a);
Var l1_norm(Var a);
Var l2_norm(Var a);
inline Var frobenius_norm(Var a) { return l2_norm(a); }
/// Euclidean norm of every row: r x c -> r x 1.
Var row_l2_norms(Var a);

// Rigid-motion helpers on batched 3 x 3 matrices stored row-major as 9-wide rows.
/// Unit quaternions (w, x, y, z) per row -> rotation matrices per row.
Var quat_to_rotmat(Var q);
/// Row-wise 3 x 3 product a_i * b_i, or a_i^T * b_i when `transpose_a`.
Var batched_mat3(Var a, Var b, bool transpose_a = false);
/// out_r = R_{r / group} p_r + t_{r / group}.
Var rigid_apply(Var points, Var rotations, Var translations, int group);

}  // namespace gsm::ad
