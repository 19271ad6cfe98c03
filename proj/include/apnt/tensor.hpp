#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace apnt {

using Shape = std::vector<int>;

std::string shape_string(const Shape& shape);

/// Dense row-major double tensor. Images and activations are rank 3
/// (channels, height, width); convolution kernels are rank 4.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(int channels, int height, int width, double fill = 0.0);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-3 accessors.
  int channels() const { return shape_[0]; }
  int height() const { return shape_[1]; }
  int width() const { return shape_[2]; }
  std::size_t plane() const { return static_cast<std::size_t>(shape_[1]) * shape_[2]; }

  double& operator()(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  double operator()(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double* channel_data(int c) { return data_.data() + c * plane(); }
  const double* channel_data(int c) const { return data_.data() + c * plane(); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  void fill(double v);

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Channels [first, first+count) of a rank-3 tensor.
Tensor slice_channels(const Tensor& t, int first, int count);
/// Spatial window of a rank-3 tensor; the window must lie inside.
Tensor crop(const Tensor& t, int y0, int x0, int height, int width);
Tensor concat_channels(std::span<const Tensor> parts);

double max_abs_diff(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);

// Throws StructuralError naming `what` when shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const std::string& what);

}  // namespace apnt
