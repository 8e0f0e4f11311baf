#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace qfl {

// Dense row-major tensor of binary64 values.
struct Tensor {
  std::vector<std::size_t> dims;
  std::vector<double> values;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> d);
  Tensor(std::vector<std::size_t> d, std::vector<double> v);

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return dims.size(); }

  double& at(std::size_t flat) { return values[flat]; }
  double at(std::size_t flat) const { return values[flat]; }

  bool same_shape(const Tensor& other) const { return dims == other.dims; }
  bool all_finite() const;
};

std::size_t shape_product(const std::vector<std::size_t>& dims);
std::string shape_to_string(const std::vector<std::size_t>& dims);

// Throws ShapeError unless both tensors have identical dims.
void require_same_shape(const Tensor& a, const Tensor& b, const char* where);

}  // namespace qfl
