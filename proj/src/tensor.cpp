#include "cfviz/tensor.hpp"

#include <utility>

#include "cfviz/errors.hpp"

namespace cfviz {

std::size_t shape_size(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {
void check_extents(const std::vector<std::size_t>& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be >= 1, got " + shape_str(shape));
  }
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_size(shape_), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = value;
  return t;
}

}  // namespace cfviz
