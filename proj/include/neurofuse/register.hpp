#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "neurofuse/volume.hpp"

namespace neurofuse {

enum class Metric { NormalizedCrossCorrelation, CorrelationRatio };

const char* metric_name(Metric m) noexcept;
Metric parse_metric(std::string_view name);

struct RegistrationOptions {
  Dof dof = Dof::Rigid6;
  Metric metric = Metric::NormalizedCrossCorrelation;
  int pyramid_levels = 3;           // each level halves resolution
  int max_evals_per_level = 3000;
  double convergence_tol = 1e-5;    // minimum similarity gain per sweep
  std::uint64_t seed = 0;           // drives the per-sweep parameter order
  int histogram_bins = 64;          // correlation-ratio binning of the fixed image
  bool init_center_of_mass = true;  // start translation from the intensity centroids
};

/// Transform parameters: translation (mm), rotation (rad, applied z*y*x),
/// log scale and shear. Rigid6 uses only the first six.
struct AffineParameters {
  std::array<double, 12> values{};

  Eigen::Vector3d translation() const { return {values[0], values[1], values[2]}; }
  Eigen::Vector3d rotation() const { return {values[3], values[4], values[5]}; }

  /// Homogeneous matrix rotating/scaling about `center` (world mm).
  AffineTransform to_transform(const Eigen::Vector3d& center, Dof dof) const;
};

struct RegistrationResult {
  AffineTransform transform;        // moving world -> fixed world
  AffineParameters parameters;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double similarity = 0.0;          // at the finest level
  int evaluations = 0;
  /// Set when a level exhausted its evaluation budget before converging;
  /// the best transform seen is still returned.
  bool diverged = false;
};

/// Similarity of `moving` resampled through `moving_to_fixed` against
/// `fixed`, over voxels where fixed > 0. Higher is better (1 is perfect).
double similarity(const Volume3D& moving, const Volume3D& fixed, const AffineTransform& moving_to_fixed,
                  Metric metric, int histogram_bins = 64);

/// Multi-resolution coordinate search with golden-section line searches.
/// Throws ConstantImage.
RegistrationResult register_affine(const Volume3D& moving, const Volume3D& fixed,
                                   const RegistrationOptions& opts = {});

/// Voxelwise mean of scans[i] resampled through transforms[i] onto
/// scans[0]'s grid; an identity transform reuses the scan unchanged.
Volume3D mean_of_aligned(std::span<const Volume3D> scans, std::span<const AffineTransform> transforms);

struct AverageTemplate {
  Volume3D image;                            // on scans[0]'s grid
  std::vector<AffineTransform> transforms;   // scans[i] -> template, [0] = identity
  std::vector<RegistrationResult> registrations;
};

AverageTemplate build_average_template(std::span<const Volume3D> scans, const RegistrationOptions& opts = {});

struct MotionCorrected {
  Volume3D mean;
  std::vector<AffineTransform> transforms;  // frame i -> frame 0
};

/// Rigidly aligns frames[1..] to frames[0] and averages. Throws
/// GridMismatch when frames differ in grid.
MotionCorrected motion_correct_frames(std::span<const Volume3D> frames, RegistrationOptions opts = {});

/// Mean distance, in voxels of `grid`, between where `a` and `b` send each
/// voxel center (restricted to mask > 0 when a mask is given).
double mean_displacement(const AffineTransform& a, const AffineTransform& b, const Grid& grid,
                         const Volume3D* mask = nullptr);

/// Intensity-weighted centroid of positive voxels, world coordinates.
Eigen::Vector3d center_of_mass(const Volume3D& vol);

}  // namespace neurofuse
