#include "qfl/tensor.hpp"

#include <cmath>
#include <sstream>

#include "qfl/errors.hpp"

namespace qfl {

std::size_t shape_product(const std::vector<std::size_t>& dims) {
  std::size_t n = 1;
  for (std::size_t d : dims) n *= d;
  return n;
}

std::string shape_to_string(const std::vector<std::size_t>& dims) {
  std::ostringstream out;
  out << "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) out << ", ";
    out << dims[i];
  }
  out << "]";
  return out.str();
}

Tensor::Tensor(std::vector<std::size_t> d) : dims(std::move(d)) {
  for (std::size_t x : dims) {
    if (x == 0) throw ShapeError("tensor dims must be positive, got " + shape_to_string(dims));
  }
  values.assign(shape_product(dims), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> d, std::vector<double> v)
    : dims(std::move(d)), values(std::move(v)) {
  for (std::size_t x : dims) {
    if (x == 0) throw ShapeError("tensor dims must be positive, got " + shape_to_string(dims));
  }
  if (values.size() != shape_product(dims)) {
    throw ShapeError("tensor value count " + std::to_string(values.size()) +
                     " does not match dims " + shape_to_string(dims));
  }
}

bool Tensor::all_finite() const {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(where) + ": expected dims " + shape_to_string(a.dims) +
                     ", got " + shape_to_string(b.dims));
  }
}

}  // namespace qfl
