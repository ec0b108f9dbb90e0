#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace cfviz {

// Dense row-major tensor of doubles. All extents are >= 1 and the flat data
// length always equals the product of the extents.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);  // zero-filled
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor full(std::vector<std::size_t> shape, double value);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool operator==(const Tensor& other) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t shape_size(const std::vector<std::size_t>& shape);
std::string shape_str(const std::vector<std::size_t>& shape);

}  // namespace cfviz
