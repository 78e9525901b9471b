#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace kmpc {

// Dense row-major array of doubles, rank 1 or 2. Scalars are size-1 vectors.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<double> data) : shape(std::move(s)), v(std::move(data)) {
    if (count(shape) != v.size()) throw std::runtime_error("Tensor: shape/value count mismatch");
  }

  static std::size_t count(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::runtime_error("Tensor: negative dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) {
    std::size_t n = count(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }
  static Tensor full(std::vector<int> s, double x) {
    std::size_t n = count(s);
    return Tensor(std::move(s), std::vector<double>(n, x));
  }
  static Tensor scalar(double x) { return Tensor({1}, {x}); }
  static Tensor vec(std::vector<double> data) {
    int n = static_cast<int>(data.size());
    return Tensor({n}, std::move(data));
  }
  static Tensor matrix(int r, int c, std::vector<double> data) { return Tensor({r, c}, std::move(data)); }

  bool is_scalar() const { return v.size() == 1; }
  bool is_matrix() const { return shape.size() == 2; }
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return shape.size() == 2 ? shape[1] : 1; }
  std::size_t size() const { return v.size(); }

  double item() const {
    if (v.size() != 1) throw std::runtime_error("Tensor::item on non-scalar of size " + std::to_string(v.size()));
    return v[0];
  }
  double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;

  static std::string shape_str(const std::vector<int>& s);
  std::string shape_str() const { return shape_str(shape); }
};

}  // namespace kmpc
