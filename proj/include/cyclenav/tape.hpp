#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cyclenav/tensor.hpp"

namespace cyclenav {

enum class OpKind : std::uint8_t {
  kLeaf,
  kMatmul,
  kAdd,
  kMul,        // elementwise
  kConcat,
  kSigmoid,
  kTanh,
  kSoftmax,    // rank-1, optional mask; masked entries get probability exactly 0
  kLog,
  kNeg,
  kSum,        // all elements -> scalar
  kMaxPoolSet, // elementwise max over same-shape vectors
  kEmbedLookup,
  kScalarMul,  // scalar Var times tensor Var
  kSqrt,
  kStopGrad,
};

const char* op_name(OpKind k);

struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const { return id != UINT32_MAX; }
};

using GradMap = std::map<std::string, Tensor>;

// Append-only record of primitive ops. Nodes are created in topological order;
// backward walks them once in reverse. Single-writer.
class Tape {
 public:
  Var constant(Tensor v);
  // Named parameter leaf; backward() accumulates its gradient under `name`.
  Var param(const std::string& name, Tensor v);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var concat(const std::vector<Var>& parts);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var softmax(Var logits);
  Var softmax_masked(Var logits, std::vector<std::uint8_t> mask);
  Var log(Var a);
  Var neg(Var a);
  Var sum(Var a);
  Var max_pool_set(const std::vector<Var>& vs);
  Var embed_lookup(Var table, std::size_t row);
  Var scalar_mul(Var scalar, Var t);
  Var sqrt(Var a);
  Var stop_gradient(Var a);

  // Composites over the primitives above.
  Var constant_scalar(double v) { return constant(Tensor::scalar(v)); }
  Var sub(Var a, Var b) { return add(a, neg(b)); }
  Var pick(Var v, std::size_t idx);     // sum(v * onehot(idx)) -> scalar
  Var dot(Var a, Var b) { return sum(mul(a, b)); }
  Var scale(Var t, double c) { return scalar_mul(constant_scalar(c), t); }
  Var mean_of(const std::vector<Var>& scalars);
  Var add_all(const std::vector<Var>& vs);

  const Tensor& value(Var v) const;
  double scalar_value(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // Reverse pass from a scalar loss. Gradients of named parameters reachable
  // from `loss` are accumulated by name; unreachable names are absent.
  GradMap backward(Var loss);

  // Gradient of the last backward() w.r.t. an arbitrary node (empty if unreached).
  const Tensor& grad_of(Var v) const;

 private:
  struct Node {
    OpKind kind;
    std::vector<std::uint32_t> ins;
    Tensor value;
    std::string param_name;          // kLeaf params only
    std::vector<std::uint8_t> mask;  // kSoftmax only; empty = no mask
    std::size_t row = 0;             // kEmbedLookup
  };

  Var push(Node n);
  const Node& node(Var v) const;
  static void check_valid(Var v, const char* who);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;  // scratch for backward
  Tensor empty_;
};

}  // namespace cyclenav
