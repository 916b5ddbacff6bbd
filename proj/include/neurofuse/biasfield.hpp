#pragma once

#include <optional>

#include "neurofuse/volume.hpp"

namespace neurofuse {

struct BiasFieldParams {
  double control_spacing_mm = 50.0;  // knot spacing of the coarsest level
  int fitting_levels = 4;            // knot spacing halves at each level
  int iterations = 50;               // per level
  double convergence_tol = 1e-3;     // RMS change of the log field
  int histogram_bins = 200;
  double fwhm = 0.15;                // Gaussian model of the bias-induced blur, log units
  double wiener_noise = 0.01;
};

/// Cubic B-spline log-field on a uniform control lattice spanning the grid it
/// was fitted on. Spline parameters run along the domain's voxel axes in mm,
/// so the field follows oblique grids.
class BiasFieldModel {
 public:
  BiasFieldModel() = default;

  /// Zero log-field with knot spacing close to `control_spacing_mm` that
  /// divides each axis extent into whole spans.
  static BiasFieldModel zero(const Grid& domain, double control_spacing_mm);

  /// zero(domain, control_spacing_mm) refined levels-1 times, carrying
  /// `coefficients`. Throws ShapeMismatch.
  static BiasFieldModel from_lattice(const Grid& domain, double control_spacing_mm, int levels,
                                     Eigen::ArrayXd coefficients);

  const Grid& domain() const { return domain_; }
  const Dims& spans() const { return spans_; }
  Dims lattice_dims() const { return {spans_[0] + 3, spans_[1] + 3, spans_[2] + 3}; }
  /// Actual knot spacing in mm per axis.
  const Eigen::Vector3d& control_spacing() const { return knot_mm_; }

  Eigen::ArrayXd& coefficients() { return coeffs_; }
  const Eigen::ArrayXd& coefficients() const { return coeffs_; }
  double& coefficient(int a, int b, int c);

  /// Same field on a lattice with half the knot spacing (exact subdivision).
  BiasFieldModel refined() const;

  /// Log-field at a continuous domain voxel coordinate.
  double log_field_at(const Eigen::Vector3d& domain_voxel) const;

  int levels_run = 0;
  int iterations_run = 0;
  bool converged = false;

 private:
  Grid domain_;
  Dims spans_{1, 1, 1};
  Eigen::Vector3d knot_mm_ = Eigen::Vector3d::Ones();
  Eigen::ArrayXd coeffs_;
};

/// Uniform cubic B-spline basis B_{idx}(t) for t in [0,1], idx in 0..3.
double cubic_bspline_basis(int idx, double t);

/// Otsu threshold mask (1 above threshold) over all voxels.
Volume3D otsu_mask(const Volume3D& vol);

/// Iterative histogram-sharpening bias estimation. Without a mask the Otsu
/// foreground is used. The returned field leaves the masked mean intensity
/// unchanged after correction.
///
/// Throws NonPositiveIntensity, EmptyMask, DegenerateHistogram, GridMismatch.
BiasFieldModel estimate_bias(const Volume3D& vol, const std::optional<Volume3D>& mask,
                             const BiasFieldParams& params = {});

/// exp(spline) sampled on `grid`; throws GridOutsideDomain when any voxel
/// falls outside the fitted domain.
Volume3D evaluate_field(const BiasFieldModel& model, const Grid& grid);

/// vol / field, voxelwise, on the model's domain grid.
Volume3D correct(const Volume3D& vol, const BiasFieldModel& model);

}  // namespace neurofuse
