#include "cfviz/tape.hpp"

#include <cmath>
#include <string>

#include "cfviz/errors.hpp"

namespace cfviz {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

NodeId Tape::push_node(Tensor value) {
  nodes_.push_back(std::move(value));
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Tape::check_node(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw ValidationError("tape: unknown node id " + std::to_string(id));
  }
}

const Tensor& Tape::value(NodeId id) const {
  check_node(id);
  return nodes_[static_cast<std::size_t>(id)];
}

NodeId Tape::leaf(Tensor value) { return push_node(std::move(value)); }

NodeId Tape::conv2d(NodeId input, NodeId kernel, NodeId bias) {
  check_node(input);
  check_node(kernel);
  check_node(bias);
  const Tensor& in = nodes_[input];
  const Tensor& k = nodes_[kernel];
  const Tensor& b = nodes_[bias];
  if (in.rank() != 3) throw ShapeError("conv2d: input must be [C,H,W], got " + shape_str(in.shape()));
  if (k.rank() != 4 || k.extent(2) != 2 || k.extent(3) != 2) {
    throw ShapeError("conv2d: kernel must be [C_out,C_in,2,2], got " + shape_str(k.shape()));
  }
  const std::size_t c_in = in.extent(0), h = in.extent(1), w = in.extent(2);
  const std::size_t c_out = k.extent(0);
  if (k.extent(1) != c_in) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(k.extent(1)) +
                     " input channels, input has " + std::to_string(c_in));
  }
  if (b.rank() != 1 || b.extent(0) != c_out) {
    throw ShapeError("conv2d: bias must be [" + std::to_string(c_out) + "], got " + shape_str(b.shape()));
  }

  Tensor out({c_out, h, w});
  const double* ip = in.data();
  const double* kp = k.data();
  double* op = out.data();
  for (std::size_t co = 0; co < c_out; ++co) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = b[co];
        for (std::size_t ci = 0; ci < c_in; ++ci) {
          for (std::size_t dy = 0; dy < 2; ++dy) {
            const std::size_t yy = y + dy;
            if (yy >= h) continue;  // zero padding below
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t xx = x + dx;
              if (xx >= w) continue;  // zero padding to the right
              acc += ip[(ci * h + yy) * w + xx] * kp[((co * c_in + ci) * 2 + dy) * 2 + dx];
            }
          }
        }
        op[(co * h + y) * w + x] = acc;
      }
    }
  }

  Op op_rec;
  op_rec.kind = OpKind::Conv2d;
  op_rec.in0 = input;
  op_rec.in1 = kernel;
  op_rec.in2 = bias;
  op_rec.out = push_node(std::move(out));
  ops_.push_back(std::move(op_rec));
  return ops_.back().out;
}

NodeId Tape::maxpool2(NodeId input) {
  check_node(input);
  const Tensor& in = nodes_[input];
  if (in.rank() != 3) throw ShapeError("maxpool2: input must be [C,H,W], got " + shape_str(in.shape()));
  const std::size_t c = in.extent(0), h = in.extent(1), w = in.extent(2);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("maxpool2: spatial extents must be even, got " + shape_str(in.shape()));
  }
  const std::size_t ho = h / 2, wo = w / 2;

  Tensor out({c, ho, wo});
  std::vector<std::size_t> argmax(c * ho * wo);
  const double* ip = in.data();
  double* op = out.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < ho; ++y) {
      for (std::size_t x = 0; x < wo; ++x) {
        std::size_t best_idx = (ch * h + 2 * y) * w + 2 * x;
        double best = ip[best_idx];
        // strictly-greater comparison keeps the first max in row-major order
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (ch * h + 2 * y + dy) * w + 2 * x + dx;
            if (ip[idx] > best) {
              best = ip[idx];
              best_idx = idx;
            }
          }
        }
        const std::size_t out_idx = (ch * ho + y) * wo + x;
        op[out_idx] = best;
        argmax[out_idx] = best_idx;
      }
    }
  }

  Op op_rec;
  op_rec.kind = OpKind::MaxPool2;
  op_rec.in0 = input;
  op_rec.argmax = std::move(argmax);
  op_rec.out = push_node(std::move(out));
  ops_.push_back(std::move(op_rec));
  return ops_.back().out;
}

NodeId Tape::pointwise(NodeId input, Activation fn) {
  check_node(input);
  const Tensor& in = nodes_[input];
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) {
    switch (fn) {
      case Activation::Relu: out[i] = in[i] > 0.0 ? in[i] : 0.0; break;
      case Activation::Tanh: out[i] = std::tanh(in[i]); break;
      case Activation::Sigmoid: out[i] = sigmoid(in[i]); break;
    }
  }

  Op op_rec;
  op_rec.kind = OpKind::Pointwise;
  op_rec.fn = fn;
  op_rec.in0 = input;
  op_rec.out = push_node(std::move(out));
  ops_.push_back(std::move(op_rec));
  return ops_.back().out;
}

NodeId Tape::affine(NodeId input, NodeId weight, NodeId bias) {
  check_node(input);
  check_node(weight);
  check_node(bias);
  const Tensor& in = nodes_[input];
  const Tensor& wt = nodes_[weight];
  const Tensor& b = nodes_[bias];
  if (in.rank() != 1) throw ShapeError("affine: input must be a vector, got " + shape_str(in.shape()));
  if (wt.rank() != 2 || wt.extent(1) != in.extent(0)) {
    throw ShapeError("affine: weight " + shape_str(wt.shape()) + " does not match input " +
                     shape_str(in.shape()));
  }
  const std::size_t m = wt.extent(0), n = wt.extent(1);
  if (b.rank() != 1 || b.extent(0) != m) {
    throw ShapeError("affine: bias must be [" + std::to_string(m) + "], got " + shape_str(b.shape()));
  }

  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    double acc = b[i];
    for (std::size_t j = 0; j < n; ++j) acc += wt[i * n + j] * in[j];
    out[i] = acc;
  }

  Op op_rec;
  op_rec.kind = OpKind::Affine;
  op_rec.in0 = input;
  op_rec.in1 = weight;
  op_rec.in2 = bias;
  op_rec.out = push_node(std::move(out));
  ops_.push_back(std::move(op_rec));
  return ops_.back().out;
}

NodeId Tape::flatten(NodeId input) {
  check_node(input);
  const Tensor& in = nodes_[input];
  Tensor out({in.size()}, std::vector<double>(in.data(), in.data() + in.size()));

  Op op_rec;
  op_rec.kind = OpKind::Flatten;
  op_rec.in0 = input;
  op_rec.out = push_node(std::move(out));
  ops_.push_back(std::move(op_rec));
  return ops_.back().out;
}

NodeId Tape::scale_shift(NodeId input, Tensor scale, Tensor shift) {
  check_node(input);
  const Tensor& in = nodes_[input];
  if (!scale.same_shape(in) || !shift.same_shape(in)) {
    throw ShapeError("scale_shift: scale/shift must match input shape " + shape_str(in.shape()));
  }
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = scale[i] * in[i] + shift[i];

  Op op_rec;
  op_rec.kind = OpKind::ScaleShift;
  op_rec.in0 = input;
  op_rec.scale = std::move(scale);
  op_rec.shift = std::move(shift);
  op_rec.out = push_node(std::move(out));
  ops_.push_back(std::move(op_rec));
  return ops_.back().out;
}

std::vector<std::size_t> Tape::branch_signature() const {
  std::vector<std::size_t> sig;
  for (const Op& op : ops_) {
    if (op.kind == OpKind::Pointwise && op.fn == Activation::Relu) {
      const Tensor& in = nodes_[op.in0];
      for (std::size_t i = 0; i < in.size(); ++i) sig.push_back(in[i] >= 0.0 ? 1 : 0);
    } else if (op.kind == OpKind::MaxPool2) {
      sig.insert(sig.end(), op.argmax.begin(), op.argmax.end());
    }
  }
  return sig;
}

GradientSet Tape::backward(NodeId output) const {
  check_node(output);
  if (nodes_[output].size() != 1) {
    throw ValidationError("backward: seed node must be scalar, got shape " +
                          shape_str(nodes_[output].shape()));
  }
  return backward(output, Tensor(nodes_[output].shape(), {1.0}));
}

GradientSet Tape::backward(NodeId output, const Tensor& seed) const {
  return backward(output, seed, -1, Tensor{});
}

GradientSet Tape::backward(NodeId output, const Tensor& seed, NodeId masked_node,
                           const Tensor& mask) const {
  check_node(output);
  if (!seed.same_shape(nodes_[output])) {
    throw ShapeError("backward: seed shape " + shape_str(seed.shape()) +
                     " does not match node shape " + shape_str(nodes_[output].shape()));
  }
  if (masked_node >= 0) {
    check_node(masked_node);
    if (!mask.same_shape(nodes_[masked_node])) {
      throw ShapeError("backward: mask shape " + shape_str(mask.shape()) +
                       " does not match node shape " + shape_str(nodes_[masked_node].shape()));
    }
  }

  GradientSet gs;
  gs.grads.reserve(nodes_.size());
  for (const Tensor& v : nodes_) gs.grads.emplace_back(v.shape());
  gs.grads[output] = seed;

  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    const Op& op = *it;
    Tensor& gout = gs.grads[op.out];
    // The adjoint of op.out is complete here: every consumer of op.out was
    // recorded later on the tape, so it has already been processed.
    if (op.out == masked_node) {
      for (std::size_t i = 0; i < gout.size(); ++i) gout[i] *= mask[i];
    }
    switch (op.kind) {
      case OpKind::Conv2d: {
        const Tensor& in = nodes_[op.in0];
        const Tensor& k = nodes_[op.in1];
        Tensor& gin = gs.grads[op.in0];
        Tensor& gk = gs.grads[op.in1];
        Tensor& gb = gs.grads[op.in2];
        const std::size_t c_in = in.extent(0), h = in.extent(1), w = in.extent(2);
        const std::size_t c_out = k.extent(0);
        for (std::size_t co = 0; co < c_out; ++co) {
          for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
              const double g = gout[(co * h + y) * w + x];
              if (g == 0.0) continue;
              gb[co] += g;
              for (std::size_t ci = 0; ci < c_in; ++ci) {
                for (std::size_t dy = 0; dy < 2; ++dy) {
                  const std::size_t yy = y + dy;
                  if (yy >= h) continue;
                  for (std::size_t dx = 0; dx < 2; ++dx) {
                    const std::size_t xx = x + dx;
                    if (xx >= w) continue;
                    const std::size_t in_idx = (ci * h + yy) * w + xx;
                    const std::size_t k_idx = ((co * c_in + ci) * 2 + dy) * 2 + dx;
                    gin[in_idx] += g * k[k_idx];
                    gk[k_idx] += g * in[in_idx];
                  }
                }
              }
            }
          }
        }
        break;
      }
      case OpKind::MaxPool2: {
        Tensor& gin = gs.grads[op.in0];
        for (std::size_t i = 0; i < gout.size(); ++i) gin[op.argmax[i]] += gout[i];
        break;
      }
      case OpKind::Pointwise: {
        const Tensor& in = nodes_[op.in0];
        const Tensor& out = nodes_[op.out];
        Tensor& gin = gs.grads[op.in0];
        for (std::size_t i = 0; i < gout.size(); ++i) {
          double d = 0.0;
          switch (op.fn) {
            case Activation::Relu: d = in[i] >= 0.0 ? 1.0 : 0.0; break;  // kink takes the x>0 branch
            case Activation::Tanh: d = 1.0 - out[i] * out[i]; break;
            case Activation::Sigmoid: d = out[i] * (1.0 - out[i]); break;
          }
          gin[i] += gout[i] * d;
        }
        break;
      }
      case OpKind::Affine: {
        const Tensor& in = nodes_[op.in0];
        const Tensor& wt = nodes_[op.in1];
        Tensor& gin = gs.grads[op.in0];
        Tensor& gw = gs.grads[op.in1];
        Tensor& gb = gs.grads[op.in2];
        const std::size_t m = wt.extent(0), n = wt.extent(1);
        for (std::size_t i = 0; i < m; ++i) {
          const double g = gout[i];
          if (g == 0.0) continue;
          gb[i] += g;
          for (std::size_t j = 0; j < n; ++j) {
            gin[j] += g * wt[i * n + j];
            gw[i * n + j] += g * in[j];
          }
        }
        break;
      }
      case OpKind::Flatten: {
        Tensor& gin = gs.grads[op.in0];
        for (std::size_t i = 0; i < gout.size(); ++i) gin[i] += gout[i];
        break;
      }
      case OpKind::ScaleShift: {
        Tensor& gin = gs.grads[op.in0];
        for (std::size_t i = 0; i < gout.size(); ++i) gin[i] += gout[i] * op.scale[i];
        break;
      }
    }
  }

  // A masked leaf has no producing op; mask its stored gradient directly so
  // the returned set is consistent either way.
  if (masked_node >= 0) {
    bool produced = false;
    for (const Op& op : ops_) {
      if (op.out == masked_node) {
        produced = true;
        break;
      }
    }
    if (!produced) {
      Tensor& g = gs.grads[masked_node];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mask[i];
    }
  }

  return gs;
}

}  // namespace cfviz
