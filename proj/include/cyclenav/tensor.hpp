#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cyclenav/common.hpp"

namespace cyclenav {

// Dense row-major 64-bit float tensor, rank 1 or 2. Scalars are shape {1}.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), 0.0);
  }

  static Tensor scalar(double v) {
    Tensor t({1});
    t.data[0] = v;
    return t;
  }
  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
  static Tensor vec(std::initializer_list<double> vals) {
    Tensor t({vals.size()});
    std::size_t i = 0;
    for (double v : vals) t.data[i++] = v;
    return t;
  }
  static Tensor from(std::vector<double> vals) {
    Tensor t;
    t.shape = {vals.size()};
    t.data = std::move(vals);
    return t;
  }
  static Tensor matrix(std::size_t r, std::size_t c, std::initializer_list<double> vals) {
    Tensor t({r, c});
    if (vals.size() != r * c) throw ShapeError("Tensor::matrix: value count does not match shape");
    std::size_t i = 0;
    for (double v : vals) t.data[i++] = v;
    return t;
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  bool is_scalar() const { return numel() == 1; }

  double& at(std::size_t i) { return data[i]; }
  double at(std::size_t i) const { return data[i]; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ')';
    return os.str();
  }
};

inline Tensor onehot(std::size_t n, std::size_t idx) {
  Tensor t({n});
  t.data[idx] = 1.0;
  return t;
}

}  // namespace cyclenav
