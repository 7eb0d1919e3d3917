// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ript::diffcore {

using Shape = std::vector<std::size_t>;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Dense row-major float64 tensor. An empty `grad` means no gradient buffer.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    if (element_count(shape) != values.size())
      throw ShapeError("tensor: shape " + shape_str(shape) + " holds " +
                       std::to_string(element_count(shape)) + " values, got " +
                       std::to_string(values.size()));
  }

  static Tensor zeros(Shape s) {
    auto n = element_count(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }
  static Tensor scalar(double v) { return Tensor({}, {v}); }
  static Tensor row(std::vector<double> v) {
    auto n = v.size();
    return Tensor({1, n}, std::move(v));
  }

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }

  bool has_grad() const { return !grad.empty(); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
  void zero_grad() {
    if (has_grad()) std::fill(grad.begin(), grad.end(), 0.0);
  }

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

  double item() const {
    if (values.size() != 1) throw ShapeError("item(): tensor has shape " + shape_str(shape));
    return values[0];
  }
};

}  // namespace ript::diffcore
