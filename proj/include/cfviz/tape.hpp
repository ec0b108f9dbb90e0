#pragma once

#include <cstddef>
#include <vector>

#include "cfviz/tensor.hpp"

namespace cfviz {

using NodeId = int;

enum class Activation { Relu, Tanh, Sigmoid };

// Gradients for every node of a tape, indexed by NodeId. Each entry has the
// same shape as the node's forward value.
struct GradientSet {
  std::vector<Tensor> grads;
  const Tensor& at(NodeId id) const { return grads.at(static_cast<std::size_t>(id)); }
};

double sigmoid(double x);  // numerically stable for large |x|

// Records a forward computation as a linear sequence of primitive
// applications over value nodes; backward() replays it in reverse
// topological order. A tape belongs to one evaluation (one image); separate
// tapes share nothing and may be used concurrently.
class Tape {
 public:
  NodeId leaf(Tensor value);

  // Cross-correlation with a 2x2 kernel, stride 1, zero padding on the
  // bottom and right edges only, so the spatial extent is preserved.
  // input [C_in,H,W], kernel [C_out,C_in,2,2], bias [C_out] -> [C_out,H,W].
  NodeId conv2d(NodeId input, NodeId kernel, NodeId bias);

  // Non-overlapping 2x2 window maxima; H and W must be even. Ties route the
  // gradient to the first window position in row-major order.
  NodeId maxpool2(NodeId input);

  NodeId pointwise(NodeId input, Activation fn);

  // weight [m,n] * input [n] + bias [m] -> [m].
  NodeId affine(NodeId input, NodeId weight, NodeId bias);

  // Row-major reshape to a vector.
  NodeId flatten(NodeId input);

  // out = scale*x + shift elementwise. scale and shift are constants and
  // receive no gradient; the backward pass multiplies the adjoint by scale.
  NodeId scale_shift(NodeId input, Tensor scale, Tensor shift);

  std::size_t node_count() const { return nodes_.size(); }
  const Tensor& value(NodeId id) const;

  // Relu sign pattern plus maxpool argmax choices of the recorded forward.
  // Two inputs with equal signatures lie on the same smooth branch, so
  // finite differences between them see no kink.
  std::vector<std::size_t> branch_signature() const;

  // Reverse accumulation seeded with 1 at a scalar output node.
  GradientSet backward(NodeId output) const;

  // Reverse accumulation with an explicit seed of the output node's shape.
  GradientSet backward(NodeId output, const Tensor& seed) const;

  // Same, but the fully accumulated adjoint at masked_node is multiplied
  // elementwise by mask before it propagates to earlier nodes.
  GradientSet backward(NodeId output, const Tensor& seed, NodeId masked_node,
                       const Tensor& mask) const;

 private:
  enum class OpKind { Conv2d, MaxPool2, Pointwise, Affine, Flatten, ScaleShift };

  struct Op {
    OpKind kind;
    Activation fn = Activation::Relu;  // Pointwise only
    NodeId in0 = -1, in1 = -1, in2 = -1;
    NodeId out = -1;
    std::vector<std::size_t> argmax;  // MaxPool2: flat input index per window
    Tensor scale, shift;              // ScaleShift constants
  };

  NodeId push_node(Tensor value);
  void check_node(NodeId id) const;

  std::vector<Tensor> nodes_;
  std::vector<Op> ops_;
};

}  // namespace cfviz
