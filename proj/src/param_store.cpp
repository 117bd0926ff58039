#include "cyclenav/param_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cyclenav {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

Tensor& ParamStore::add(const std::string& name, std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
  if (tensors_.count(name)) throw DataError("ParamStore: duplicate parameter " + name);
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in ? fan_in : 1));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return tensors_.emplace(name, std::move(t)).first->second;
}

Tensor& ParamStore::add_zeros(const std::string& name, std::vector<std::size_t> shape) {
  if (tensors_.count(name)) throw DataError("ParamStore: duplicate parameter " + name);
  return tensors_.emplace(name, Tensor(std::move(shape))).first->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw DataError("ParamStore: unknown parameter " + name);
  return it->second;
}

Tensor& ParamStore::mutable_get(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw DataError("ParamStore: unknown parameter " + name);
  return it->second;
}

std::size_t ParamStore::total_elems() const {
  std::size_t n = 0;
  for (const auto& [k, t] : tensors_) n += t.numel();
  return n;
}

void ParamStore::fill(double v) {
  for (auto& [k, t] : tensors_)
    for (double& x : t.data) x = v;
}

double global_grad_norm(const GradMap& grads) {
  double sq = 0;
  for (const auto& [k, g] : grads)
    for (double v : g.data) sq += v * v;
  return std::sqrt(sq);
}

void ParamStore::sgd_step(const GradMap& grads, double lr, double clip_norm) {
  for (const auto& [name, g] : grads) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw DataError("sgd_step: gradient for unknown parameter " + name);
    if (!g.same_shape(it->second))
      throw ShapeError("sgd_step: gradient shape " + g.shape_str() + " vs parameter " + it->second.shape_str() + " for " + name);
    if (!g.all_finite()) throw NumericError("sgd_step: non-finite gradient for parameter " + name);
  }
  double scale = 1.0;
  if (clip_norm > 0) {
    const double norm = global_grad_norm(grads);
    if (norm > clip_norm) scale = clip_norm / norm;
  }
  for (const auto& [name, g] : grads) {
    Tensor& t = tensors_.find(name)->second;
    for (std::size_t i = 0; i < t.numel(); ++i) t.data[i] -= lr * scale * g.data[i];
  }
}

Var Binder::operator[](const std::string& name) {
  auto it = cache_.find(name);
  if (it != cache_.end()) return it->second;
  const Tensor& t = store_->get(name);
  Var v = trainable_ ? tape_->param(prefix_ + "/" + name, t) : tape_->constant(t);
  cache_.emplace(name, v);
  return v;
}

GradMap extract_prefixed(const GradMap& grads, const std::string& prefix) {
  GradMap out;
  const std::string p = prefix + "/";
  for (const auto& [name, g] : grads)
    if (name.rfind(p, 0) == 0) out.emplace(name.substr(p.size()), g);
  return out;
}

static constexpr const char* kMagic = "cyclenav-ckpt v1";

void Checkpoint::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("checkpoint save: cannot open " + path);
  os << kMagic << "\n";
  os << "seed " << seed << "\n";
  for (const auto& line : extra) os << "x " << line << "\n";
  std::size_t count = 0;
  for (const auto& [sname, store] : stores) count += store.size();
  os << "tensors " << count << "\n";
  // std::map keeps both levels lexicographic; qualified names inherit that order.
  for (const auto& [sname, store] : stores) {
    for (const auto& [tname, t] : store.tensors()) {
      os << sname << "/" << tname << " " << t.shape.size();
      for (auto d : t.shape) os << " " << d;
      os << "\n";
    }
  }
  os << "payload\n";
  for (const auto& [sname, store] : stores)
    for (const auto& [tname, t] : store.tensors())
      os.write(reinterpret_cast<const char*>(t.data.data()),
               static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (!os) throw DataError("checkpoint save: write failed for " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint load: cannot open " + path);
  std::string line;
  if (!std::getline(is, line) || line != kMagic)
    throw DataError("checkpoint load: bad header in " + path + " (expected '" + kMagic + "')");
  Checkpoint ck;
  if (!std::getline(is, line) || line.rfind("seed ", 0) != 0)
    throw DataError("checkpoint load: missing seed line in " + path);
  ck.seed = std::stoull(line.substr(5));
  while (std::getline(is, line) && line.rfind("x ", 0) == 0) ck.extra.push_back(line.substr(2));
  if (line.rfind("tensors ", 0) != 0) throw DataError("checkpoint load: missing tensor count in " + path);
  const std::size_t count = std::stoull(line.substr(8));
  struct Entry {
    std::string store, name;
    std::vector<std::size_t> shape;
  };
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(is, line)) throw DataError("checkpoint load: truncated manifest in " + path);
    std::istringstream ls(line);
    std::string qual;
    std::size_t ndims;
    if (!(ls >> qual >> ndims)) throw DataError("checkpoint load: malformed manifest line: " + line);
    Entry e;
    const auto slash = qual.find('/');
    if (slash == std::string::npos) throw DataError("checkpoint load: unqualified tensor name: " + qual);
    e.store = qual.substr(0, slash);
    e.name = qual.substr(slash + 1);
    e.shape.resize(ndims);
    for (auto& d : e.shape)
      if (!(ls >> d)) throw DataError("checkpoint load: malformed shape in line: " + line);
    entries.push_back(std::move(e));
  }
  if (!std::getline(is, line) || line != "payload")
    throw DataError("checkpoint load: missing payload marker in " + path);
  for (const auto& e : entries) {
    Tensor t(e.shape);
    is.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!is) throw DataError("checkpoint load: truncated payload in " + path);
    ck.stores[e.store].tensors().emplace(e.name, std::move(t));
  }
  return ck;
}

}  // namespace cyclenav
