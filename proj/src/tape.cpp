#include "cyclenav/tape.hpp"

#include <algorithm>
#include <cmath>

namespace cyclenav {

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "elementwise-mul";
    case OpKind::kConcat: return "concat";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLog: return "log";
    case OpKind::kNeg: return "negate";
    case OpKind::kSum: return "sum";
    case OpKind::kMaxPoolSet: return "max-pool-over-set";
    case OpKind::kEmbedLookup: return "embedding-lookup";
    case OpKind::kScalarMul: return "scalar-mul";
    case OpKind::kSqrt: return "sqrt";
    case OpKind::kStopGrad: return "stop-gradient";
  }
  return "?";
}

void Tape::check_valid(Var v, const char* who) {
  if (!v.valid()) throw ShapeError(std::string(who) + ": invalid Var handle");
}

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tape::Node& Tape::node(Var v) const {
  check_valid(v, "Tape::node");
  return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

double Tape::scalar_value(Var v) const {
  const Tensor& t = value(v);
  if (!t.is_scalar()) throw ShapeError("scalar_value: node is not scalar, shape " + t.shape_str());
  return t.data[0];
}

Var Tape::constant(Tensor v) {
  Node n;
  n.kind = OpKind::kLeaf;
  n.value = std::move(v);
  return push(std::move(n));
}

Var Tape::param(const std::string& name, Tensor v) {
  Node n;
  n.kind = OpKind::kLeaf;
  n.value = std::move(v);
  n.param_name = name;
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  const std::size_t m = A.rows(), k = A.cols();
  if (A.rank() > 2 || B.rank() > 2 || A.rank() == 0 || B.rank() == 0)
    throw ShapeError("matmul: rank must be 1 or 2, got " + A.shape_str() + " and " + B.shape_str());
  // (m,k)x(k,p) -> (m,p); (m,k)x(k) -> (m); (k)x(k,p) -> (p)
  Tensor out;
  if (A.rank() == 2 && B.rank() == 2) {
    if (k != B.rows()) throw ShapeError(std::string("matmul: inner dims differ, ") + A.shape_str() + " vs " + B.shape_str());
    out = Tensor({m, B.cols()});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < B.cols(); ++j) {
        double s = 0;
        for (std::size_t t = 0; t < k; ++t) s += A.at(i, t) * B.at(t, j);
        out.at(i, j) = s;
      }
  } else if (A.rank() == 2 && B.rank() == 1) {
    if (k != B.numel()) throw ShapeError(std::string("matmul: inner dims differ, ") + A.shape_str() + " vs " + B.shape_str());
    out = Tensor({m});
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0;
      const double* arow = &A.data[i * k];
      for (std::size_t t = 0; t < k; ++t) s += arow[t] * B.data[t];
      out.data[i] = s;
    }
  } else if (A.rank() == 1 && B.rank() == 2) {
    if (A.numel() != B.rows()) throw ShapeError(std::string("matmul: inner dims differ, ") + A.shape_str() + " vs " + B.shape_str());
    out = Tensor({B.cols()});
    for (std::size_t j = 0; j < B.cols(); ++j) {
      double s = 0;
      for (std::size_t t = 0; t < B.rows(); ++t) s += A.data[t] * B.at(t, j);
      out.data[j] = s;
    }
  } else {
    throw ShapeError("matmul: vector-vector not supported, use dot()");
  }
  Node n;
  n.kind = OpKind::kMatmul;
  n.ins = {a.id, b.id};
  n.value = std::move(out);
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (!A.same_shape(B)) throw ShapeError(std::string("add: shape mismatch ") + A.shape_str() + " vs " + B.shape_str());
  Node n;
  n.kind = OpKind::kAdd;
  n.ins = {a.id, b.id};
  n.value = A;
  for (std::size_t i = 0; i < B.numel(); ++i) n.value.data[i] += B.data[i];
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (!A.same_shape(B)) throw ShapeError(std::string("elementwise-mul: shape mismatch ") + A.shape_str() + " vs " + B.shape_str());
  Node n;
  n.kind = OpKind::kMul;
  n.ins = {a.id, b.id};
  n.value = A;
  for (std::size_t i = 0; i < B.numel(); ++i) n.value.data[i] *= B.data[i];
  return push(std::move(n));
}

Var Tape::concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat: empty input list");
  std::size_t total = 0;
  for (Var p : parts) {
    const Tensor& t = value(p);
    if (t.rank() != 1) throw ShapeError("concat: rank-1 inputs only, got " + t.shape_str());
    total += t.numel();
  }
  Node n;
  n.kind = OpKind::kConcat;
  n.value = Tensor({total});
  std::size_t off = 0;
  for (Var p : parts) {
    n.ins.push_back(p.id);
    const Tensor& t = value(p);
    std::copy(t.data.begin(), t.data.end(), n.value.data.begin() + off);
    off += t.numel();
  }
  return push(std::move(n));
}

Var Tape::sigmoid(Var a) {
  Node n;
  n.kind = OpKind::kSigmoid;
  n.ins = {a.id};
  n.value = value(a);
  for (double& v : n.value.data) v = 1.0 / (1.0 + std::exp(-v));
  return push(std::move(n));
}

Var Tape::tanh(Var a) {
  Node n;
  n.kind = OpKind::kTanh;
  n.ins = {a.id};
  n.value = value(a);
  for (double& v : n.value.data) v = std::tanh(v);
  return push(std::move(n));
}

Var Tape::softmax(Var logits) { return softmax_masked(logits, {}); }

Var Tape::softmax_masked(Var logits, std::vector<std::uint8_t> mask) {
  const Tensor& L = value(logits);
  if (L.rank() != 1) throw ShapeError("softmax: rank-1 input required, got " + L.shape_str());
  if (!mask.empty() && mask.size() != L.numel())
    throw ShapeError("softmax: mask length differs from logits " + L.shape_str());
  double mx = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t i = 0; i < L.numel(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    any = true;
    mx = std::max(mx, L.data[i]);
  }
  if (!any) throw NumericError("softmax: all entries masked");
  Node n;
  n.kind = OpKind::kSoftmax;
  n.ins = {logits.id};
  n.mask = std::move(mask);
  n.value = Tensor({L.numel()});
  double z = 0;
  for (std::size_t i = 0; i < L.numel(); ++i) {
    if (!n.mask.empty() && !n.mask[i]) continue;
    n.value.data[i] = std::exp(L.data[i] - mx);
    z += n.value.data[i];
  }
  for (std::size_t i = 0; i < L.numel(); ++i) n.value.data[i] /= z;
  return push(std::move(n));
}

Var Tape::log(Var a) {
  Node n;
  n.kind = OpKind::kLog;
  n.ins = {a.id};
  n.value = value(a);
  for (double& v : n.value.data) {
    if (!(v > 0)) throw NumericError("log: non-positive input " + std::to_string(v));
    v = std::log(v);
  }
  return push(std::move(n));
}

Var Tape::neg(Var a) {
  Node n;
  n.kind = OpKind::kNeg;
  n.ins = {a.id};
  n.value = value(a);
  for (double& v : n.value.data) v = -v;
  return push(std::move(n));
}

Var Tape::sum(Var a) {
  Node n;
  n.kind = OpKind::kSum;
  n.ins = {a.id};
  double s = 0;
  for (double v : value(a).data) s += v;
  n.value = Tensor::scalar(s);
  return push(std::move(n));
}

Var Tape::max_pool_set(const std::vector<Var>& vs) {
  if (vs.empty()) throw ShapeError("max-pool-over-set: empty input list");
  const Tensor& first = value(vs[0]);
  Node n;
  n.kind = OpKind::kMaxPoolSet;
  n.value = first;
  n.ins.push_back(vs[0].id);
  for (std::size_t j = 1; j < vs.size(); ++j) {
    const Tensor& t = value(vs[j]);
    if (!t.same_shape(first))
      throw ShapeError(std::string("max-pool-over-set: shape mismatch ") + first.shape_str() + " vs " + t.shape_str());
    n.ins.push_back(vs[j].id);
    for (std::size_t i = 0; i < t.numel(); ++i) n.value.data[i] = std::max(n.value.data[i], t.data[i]);
  }
  return push(std::move(n));
}

Var Tape::embed_lookup(Var table, std::size_t row) {
  const Tensor& T = value(table);
  if (T.rank() != 2) throw ShapeError("embedding-lookup: table must be rank-2, got " + T.shape_str());
  if (row >= T.rows()) throw ShapeError("embedding-lookup: row out of range");
  Node n;
  n.kind = OpKind::kEmbedLookup;
  n.ins = {table.id};
  n.row = row;
  n.value = Tensor({T.cols()});
  for (std::size_t j = 0; j < T.cols(); ++j) n.value.data[j] = T.at(row, j);
  return push(std::move(n));
}

Var Tape::scalar_mul(Var scalar, Var t) {
  const Tensor& S = value(scalar);
  if (!S.is_scalar()) throw ShapeError("scalar-mul: first operand must be scalar, got " + S.shape_str());
  Node n;
  n.kind = OpKind::kScalarMul;
  n.ins = {scalar.id, t.id};
  n.value = value(t);
  for (double& v : n.value.data) v *= S.data[0];
  return push(std::move(n));
}

Var Tape::sqrt(Var a) {
  Node n;
  n.kind = OpKind::kSqrt;
  n.ins = {a.id};
  n.value = value(a);
  for (double& v : n.value.data) {
    if (v < 0) throw NumericError("sqrt: negative input " + std::to_string(v));
    v = std::sqrt(v);
  }
  return push(std::move(n));
}

Var Tape::stop_gradient(Var a) {
  Node n;
  n.kind = OpKind::kStopGrad;
  n.ins = {a.id};
  n.value = value(a);
  return push(std::move(n));
}

Var Tape::pick(Var v, std::size_t idx) {
  const Tensor& t = value(v);
  if (t.rank() != 1 || idx >= t.numel()) throw ShapeError("pick: index out of range for " + t.shape_str());
  return sum(mul(v, constant(onehot(t.numel(), idx))));
}

Var Tape::mean_of(const std::vector<Var>& scalars) {
  if (scalars.empty()) throw ShapeError("mean_of: empty list");
  return scale(add_all(scalars), 1.0 / static_cast<double>(scalars.size()));
}

Var Tape::add_all(const std::vector<Var>& vs) {
  if (vs.empty()) throw ShapeError("add_all: empty list");
  Var acc = vs[0];
  for (std::size_t i = 1; i < vs.size(); ++i) acc = add(acc, vs[i]);
  return acc;
}

const Tensor& Tape::grad_of(Var v) const {
  check_valid(v, "grad_of");
  if (v.id >= grads_.size() || grads_[v.id].numel() == 0) return empty_;
  return grads_[v.id];
}

GradMap Tape::backward(Var loss) {
  const Tensor& L = value(loss);
  if (!L.is_scalar()) throw ShapeError("backward: loss must be scalar, got " + L.shape_str());

  grads_.assign(nodes_.size(), Tensor{});
  grads_[loss.id] = Tensor::scalar(1.0);

  auto acc = [&](std::uint32_t id, std::size_t i, double g) {
    Tensor& t = grads_[id];
    if (t.numel() == 0) t = Tensor(nodes_[id].value.shape);
    t.data[i] += g;
  };
  auto has_grad = [&](std::uint32_t id) { return grads_[id].numel() != 0; };

  for (std::uint32_t idx = loss.id + 1; idx-- > 0;) {
    if (!has_grad(idx)) continue;
    const Node& n = nodes_[idx];
    const Tensor& g = grads_[idx];
    switch (n.kind) {
      case OpKind::kLeaf:
      case OpKind::kStopGrad:
        break;  // stop-gradient handled below (no propagation)
      case OpKind::kMatmul: {
        const Tensor& A = nodes_[n.ins[0]].value;
        const Tensor& B = nodes_[n.ins[1]].value;
        if (A.rank() == 2 && B.rank() == 2) {
          const std::size_t m = A.rows(), k = A.cols(), p = B.cols();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t t = 0; t < k; ++t) {
              double s = 0;
              for (std::size_t j = 0; j < p; ++j) s += g.at(i, j) * B.at(t, j);
              acc(n.ins[0], i * k + t, s);
            }
          for (std::size_t t = 0; t < k; ++t)
            for (std::size_t j = 0; j < p; ++j) {
              double s = 0;
              for (std::size_t i = 0; i < m; ++i) s += A.at(i, t) * g.at(i, j);
              acc(n.ins[1], t * p + j, s);
            }
        } else if (A.rank() == 2 && B.rank() == 1) {
          const std::size_t m = A.rows(), k = A.cols();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t t = 0; t < k; ++t) acc(n.ins[0], i * k + t, g.data[i] * B.data[t]);
          for (std::size_t t = 0; t < k; ++t) {
            double s = 0;
            for (std::size_t i = 0; i < m; ++i) s += A.at(i, t) * g.data[i];
            acc(n.ins[1], t, s);
          }
        } else {  // (k) x (k,p)
          const std::size_t k = A.numel(), p = B.cols();
          for (std::size_t t = 0; t < k; ++t) {
            double s = 0;
            for (std::size_t j = 0; j < p; ++j) s += B.at(t, j) * g.data[j];
            acc(n.ins[0], t, s);
          }
          for (std::size_t t = 0; t < k; ++t)
            for (std::size_t j = 0; j < p; ++j) acc(n.ins[1], t * p + j, A.data[t] * g.data[j]);
        }
        break;
      }
      case OpKind::kAdd:
        for (std::size_t i = 0; i < g.numel(); ++i) {
          acc(n.ins[0], i, g.data[i]);
          acc(n.ins[1], i, g.data[i]);
        }
        break;
      case OpKind::kMul: {
        const Tensor& A = nodes_[n.ins[0]].value;
        const Tensor& B = nodes_[n.ins[1]].value;
        for (std::size_t i = 0; i < g.numel(); ++i) {
          acc(n.ins[0], i, g.data[i] * B.data[i]);
          acc(n.ins[1], i, g.data[i] * A.data[i]);
        }
        break;
      }
      case OpKind::kConcat: {
        std::size_t off = 0;
        for (std::uint32_t in : n.ins) {
          const std::size_t len = nodes_[in].value.numel();
          for (std::size_t i = 0; i < len; ++i) acc(in, i, g.data[off + i]);
          off += len;
        }
        break;
      }
      case OpKind::kSigmoid:
        for (std::size_t i = 0; i < g.numel(); ++i) {
          const double y = n.value.data[i];
          acc(n.ins[0], i, g.data[i] * y * (1.0 - y));
        }
        break;
      case OpKind::kTanh:
        for (std::size_t i = 0; i < g.numel(); ++i) {
          const double y = n.value.data[i];
          acc(n.ins[0], i, g.data[i] * (1.0 - y * y));
        }
        break;
      case OpKind::kSoftmax: {
        // dL/dx_i = y_i * (g_i - sum_j g_j y_j); masked entries carry y=0 so get 0.
        double dotgy = 0;
        for (std::size_t i = 0; i < g.numel(); ++i) dotgy += g.data[i] * n.value.data[i];
        for (std::size_t i = 0; i < g.numel(); ++i)
          acc(n.ins[0], i, n.value.data[i] * (g.data[i] - dotgy));
        break;
      }
      case OpKind::kLog: {
        const Tensor& A = nodes_[n.ins[0]].value;
        for (std::size_t i = 0; i < g.numel(); ++i) acc(n.ins[0], i, g.data[i] / A.data[i]);
        break;
      }
      case OpKind::kNeg:
        for (std::size_t i = 0; i < g.numel(); ++i) acc(n.ins[0], i, -g.data[i]);
        break;
      case OpKind::kSum:
        for (std::size_t i = 0; i < nodes_[n.ins[0]].value.numel(); ++i) acc(n.ins[0], i, g.data[0]);
        break;
      case OpKind::kMaxPoolSet: {
        // Route to the first input attaining the max (ties -> lowest index).
        for (std::size_t i = 0; i < g.numel(); ++i) {
          const double m = n.value.data[i];
          for (std::uint32_t in : n.ins) {
            if (nodes_[in].value.data[i] == m) {
              acc(in, i, g.data[i]);
              break;
            }
          }
        }
        break;
      }
      case OpKind::kEmbedLookup: {
        const std::size_t c = nodes_[n.ins[0]].value.cols();
        for (std::size_t j = 0; j < g.numel(); ++j) acc(n.ins[0], n.row * c + j, g.data[j]);
        break;
      }
      case OpKind::kScalarMul: {
        const double s = nodes_[n.ins[0]].value.data[0];
        const Tensor& T = nodes_[n.ins[1]].value;
        double gs = 0;
        for (std::size_t i = 0; i < g.numel(); ++i) {
          gs += g.data[i] * T.data[i];
          acc(n.ins[1], i, g.data[i] * s);
        }
        acc(n.ins[0], 0, gs);
        break;
      }
      case OpKind::kSqrt:
        for (std::size_t i = 0; i < g.numel(); ++i) acc(n.ins[0], i, g.data[i] * 0.5 / n.value.data[i]);
        break;
    }
  }

  GradMap out;
  for (std::uint32_t idx = 0; idx < nodes_.size(); ++idx) {
    if (nodes_[idx].kind != OpKind::kLeaf || nodes_[idx].param_name.empty()) continue;
    if (!has_grad(idx)) continue;
    auto it = out.find(nodes_[idx].param_name);
    if (it == out.end()) {
      out.emplace(nodes_[idx].param_name, grads_[idx]);
    } else {
      for (std::size_t i = 0; i < it->second.numel(); ++i) it->second.data[i] += grads_[idx].data[i];
    }
  }
  return out;
}

}  // namespace cyclenav
