#pragma once

#include <functional>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "neurofuse/error.hpp"
#include "neurofuse/volume.hpp"

namespace neurofuse::cnn {

/// Dense row-major array. Volumes enter as shape {channels, z, y, x}, so the
/// last axis is the x-fastest voxel axis of Volume3D.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;

  explicit Tensor(std::vector<int> shape, Scalar fill = Scalar(0)) : shape_(std::move(shape)) {
    data_ = Array::Constant(element_count(shape_), fill);
  }

  Tensor(std::vector<int> shape, Array data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != element_count(shape_)) {
      throw Error(ErrorCode::ShapeMismatch, "tensor data length does not match shape");
    }
  }

  const std::vector<int>& shape() const { return shape_; }
  Eigen::Index size() const { return data_.size(); }
  Array& data() { return data_; }
  const Array& data() const { return data_; }
  Scalar& operator[](Eigen::Index i) { return data_[i]; }
  Scalar operator[](Eigen::Index i) const { return data_[i]; }

  template <typename T>
  Tensor<T> cast() const {
    return Tensor<T>(shape_, data_.template cast<T>().eval());
  }

  static Eigen::Index element_count(const std::vector<int>& shape) {
    Eigen::Index n = 1;
    for (int s : shape) {
      if (s <= 0) throw Error(ErrorCode::ShapeMismatch, "tensor dimensions must be positive");
      n *= s;
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  Array data_;
};

inline std::vector<int> volume_shape(const Dims& d, int channels = 1) { return {channels, d[2], d[1], d[0]}; }

template <typename Scalar>
Tensor<Scalar> tensor_from_volume(const Volume3D& v) {
  return Tensor<Scalar>(volume_shape(v.dims()), v.data().template cast<Scalar>().eval());
}

}  // namespace neurofuse::cnn
