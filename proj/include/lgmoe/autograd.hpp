#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "lgmoe/tensor.hpp"

namespace lgmoe {

class Tape;

/// Lightweight handle to a node on a Tape.
struct Var {
  int id = -1;
  Tape* tape = nullptr;
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Reverse-mode tape: an ordered list of recorded operations over value
/// nodes. Nodes are immutable after construction; backward() walks the ops
/// exactly once in reverse. Single-threaded per training step.
class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  /// Gradient of the last backward() w.r.t. v; zeros if v never received one.
  Tensor grad(Var v) const;

  /// Backpropagate from a scalar loss. Every requires_grad leaf reachable
  /// from the loss receives dLoss/dLeaf; others keep zero gradients.
  void backward(Var loss);

  size_t num_nodes() const { return nodes_.size(); }

  // --- internal use by ops ---
  struct Node {
    Tensor value;
    Tensor grad;  // empty until touched by backward
    bool requires_grad = false;
  };
  int emit(const char* op_name, Tensor value, bool requires_grad,
           std::function<void(Tape&, int)> backward_rule);
  Tensor& grad_buf(int id);
  const Tensor& value_at(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  bool has_grad(int id) const { return !nodes_[static_cast<size_t>(id)].grad.empty(); }

 private:
  std::vector<Node> nodes_;
  struct OpRecord {
    int out;
    std::function<void(Tape&, int)> bwd;
  };
  std::vector<OpRecord> ops_;
};

enum class Act { kRelu, kSwish };

// Elementwise / linear algebra ops. All record backward rules on the tape
// when any input requires a gradient, and reject non-finite outputs.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_bias(Var x, Var b);
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // a * b^T
Var transpose(Var x);
Var relu(Var x);
Var swish(Var x);
Var activation(Var x, Act act);
Var softmax(Var x, int axis);
Var log_softmax(Var x, int axis);
/// Row softmax with a boolean visibility mask; masked entries get exact-zero
/// probability and contribute nothing to forward or backward.
Var masked_softmax_rows(Var x, const BoolMatrix& mask);
Var layer_norm(Var x, Var gamma, Var beta);
/// Depthwise causal 1-D convolution over frames: w is d x kernel, b is d.
Var dwconv_causal(Var x, Var w, Var b);
Var gather_rows(Var x, const std::vector<int>& idx);
/// Scatter parts back into a total_rows x d tensor; rows hit by several
/// parts accumulate, rows hit by none stay zero. First write is a plain
/// copy so a partition of rows reproduces inputs bit-for-bit.
Var combine_rows(const std::vector<Var>& parts, const std::vector<std::vector<int>>& idx,
                 int total_rows);
/// out[i][j] = x[i][cols[i][j]]
Var gather_cols(Var x, const std::vector<std::vector<int>>& cols);
Var scale_rows(Var x, Var s);  // s: m x 1
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var x, int lo, int hi);
Var sum(Var x);  // scalar, shape [1]

double sigmoid(double x);

}  // namespace lgmoe
