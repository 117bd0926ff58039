#pragma once

#include <map>
#include <string>
#include <vector>

#include "cyclenav/rng.hpp"
#include "cyclenav/tape.hpp"
#include "cyclenav/tensor.hpp"

namespace cyclenav {

// Named parameter collection with deterministic (lexicographic) iteration.
// Shapes are fixed after creation; values update in place via sgd_step.
class ParamStore {
 public:
  // Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
  Tensor& add(const std::string& name, std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng);
  Tensor& add_zeros(const std::string& name, std::vector<std::size_t> shape);

  bool has(const std::string& name) const { return tensors_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& mutable_get(const std::string& name);

  std::size_t size() const { return tensors_.size(); }
  std::size_t total_elems() const;
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }
  std::map<std::string, Tensor>& tensors() { return tensors_; }

  // theta <- theta - lr * grad, with optional global-norm rescale of the grads
  // (over the entries present in `grads`) before the update.
  void sgd_step(const GradMap& grads, double lr, double clip_norm = 0.0);

  void fill(double v);

  bool operator==(const ParamStore& o) const {
    if (tensors_.size() != o.tensors_.size()) return false;
    auto it = o.tensors_.begin();
    for (const auto& [k, t] : tensors_) {
      if (it->first != k || it->second.shape != t.shape || it->second.data != t.data) return false;
      ++it;
    }
    return true;
  }

 private:
  std::map<std::string, Tensor> tensors_;
};

// Binds one store's tensors onto a tape. Trainable params become named leaves
// under "<prefix>/<name>"; frozen stores bind as plain constants.
class Binder {
 public:
  Binder(Tape& tape, const ParamStore& store, std::string prefix, bool trainable)
      : tape_(&tape), store_(&store), prefix_(std::move(prefix)), trainable_(trainable) {}

  Var operator[](const std::string& name);
  const std::string& prefix() const { return prefix_; }

 private:
  Tape* tape_;
  const ParamStore* store_;
  std::string prefix_;
  bool trainable_;
  std::map<std::string, Var> cache_;
};

// Strips "<prefix>/" off matching grad entries; drops the rest.
GradMap extract_prefixed(const GradMap& grads, const std::string& prefix);

double global_grad_norm(const GradMap& grads);

// Checkpoint container: text header (format version, global seed, optional
// extension lines), manifest of (name, shape) in lexicographic order, then
// concatenated little-endian f64 payloads. Bit-exact round trip.
struct Checkpoint {
  std::uint64_t seed = 0;
  std::vector<std::string> extra;                 // extension header lines
  std::map<std::string, ParamStore> stores;       // store name -> params

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace cyclenav
