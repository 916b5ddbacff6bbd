#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <filesystem>

#include <Eigen/Dense>

#include "neurofuse/error.hpp"

namespace neurofuse {

using Dims = std::array<int, 3>;

/// Sampling lattice of a volume: voxel counts, voxel size in mm and the
/// homogeneous voxel-index to world (mm) matrix.
struct Grid {
  Dims dims{1, 1, 1};
  Eigen::Vector3d spacing = Eigen::Vector3d::Ones();
  Eigen::Matrix4d vox2world = Eigen::Matrix4d::Identity();

  /// Axis-aligned grid whose world origin sits at voxel (0,0,0).
  static Grid axis_aligned(const Dims& dims, const Eigen::Vector3d& spacing);

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }

  /// Throws NonPositiveDim / InvalidArgument / SingularTransform.
  void validate() const;

  Eigen::Matrix4d world2vox() const;
  Eigen::Vector3d to_world(const Eigen::Vector3d& voxel) const;
  Eigen::Vector3d to_voxel(const Eigen::Vector3d& world) const;
  Eigen::Vector3d world_center() const;

  bool matches(const Grid& other, double tol = 1e-6) const;
};

template <typename Scalar>
class Volume {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Volume() = default;

  explicit Volume(Grid grid, Scalar fill = Scalar(0)) : grid_(std::move(grid)) {
    grid_.validate();
    data_ = Array::Constant(static_cast<Eigen::Index>(grid_.voxel_count()), fill);
  }

  Volume(Grid grid, Array data) : grid_(std::move(grid)), data_(std::move(data)) {
    grid_.validate();
    if (static_cast<std::size_t>(data_.size()) != grid_.voxel_count()) {
      throw Error(ErrorCode::ShapeMismatch, "data length does not match dims");
    }
  }

  const Grid& grid() const { return grid_; }
  const Dims& dims() const { return grid_.dims; }
  const Eigen::Vector3d& spacing() const { return grid_.spacing; }
  const Eigen::Matrix4d& vox2world() const { return grid_.vox2world; }

  Eigen::Index size() const { return data_.size(); }

  // x-fastest linear index
  Eigen::Index index(int i, int j, int k) const {
    return static_cast<Eigen::Index>(i) +
           static_cast<Eigen::Index>(grid_.dims[0]) *
               (static_cast<Eigen::Index>(j) + static_cast<Eigen::Index>(grid_.dims[1]) * k);
  }

  bool contains(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < grid_.dims[0] && j < grid_.dims[1] &&
           k < grid_.dims[2];
  }

  Scalar& operator()(int i, int j, int k) { return data_[index(i, j, k)]; }
  Scalar operator()(int i, int j, int k) const { return data_[index(i, j, k)]; }

  Array& data() { return data_; }
  const Array& data() const { return data_; }

 private:
  Grid grid_;
  Array data_;
};

using Volume3D = Volume<float>;

enum class Dof { Rigid6, Affine12 };

const char* dof_name(Dof dof) noexcept;
Dof parse_dof(std::string_view name);

/// Homogeneous spatial transform. By convention every transform in this
/// library maps MOVING world coordinates to FIXED world coordinates;
/// resampling applies the inverse to pull samples from the moving image.
struct AffineTransform {
  Eigen::Matrix4d matrix = Eigen::Matrix4d::Identity();
  Dof dof = Dof::Rigid6;

  static AffineTransform identity() { return {}; }
  static AffineTransform translation(const Eigen::Vector3d& offset);

  Eigen::Vector3d apply(const Eigen::Vector3d& point) const {
    return matrix.topLeftCorner<3, 3>() * point + matrix.topRightCorner<3, 1>();
  }

  /// Throws SingularTransform when the linear part is not invertible.
  AffineTransform inverse() const;

  /// Checks the homogeneous row and, for Rigid6, orthonormality within 1e-6.
  bool is_valid(double tol = 1e-6) const;
};

/// outer ∘ inner: first apply inner, then outer.
AffineTransform compose(const AffineTransform& outer, const AffineTransform& inner);

std::string format_transform(const AffineTransform& t);
AffineTransform parse_transform(std::string_view text);
void save_transform(const AffineTransform& t, const std::filesystem::path& path);
AffineTransform load_transform(const std::filesystem::path& path);

}  // namespace neurofuse
