#pragma once

#include "neurofuse/volume.hpp"

namespace neurofuse {

enum class Interpolation { Trilinear, NearestNeighbor };

/// Resamples `moving` onto `target`.
///
/// `moving_to_fixed` maps moving-world to target-world coordinates; each
/// output voxel is pulled from moving at inverse(moving_to_fixed) applied to
/// its world position. Voxels outside the moving grid read as zero (no
/// clamping), so partially outside trilinear samples blend toward zero.
///
/// Throws SingularTransform.
Volume3D resample(const Volume3D& moving, const AffineTransform& moving_to_fixed, const Grid& target,
                  Interpolation interp = Interpolation::Trilinear);

/// Trilinear sample at a continuous voxel coordinate with zero padding.
double sample_trilinear(const Volume3D& vol, const Eigen::Vector3d& voxel);

/// Halves resolution by 2x2x2 averaging; odd trailing slabs are dropped,
/// axes of length 1 stay at 1. The world extent of each voxel is preserved.
Volume3D downsample_by_two(const Volume3D& vol);

/// Separable Gaussian blur with standard deviation given in voxels.
Volume3D gaussian_blur(const Volume3D& vol, double sigma_voxels);

}  // namespace neurofuse
