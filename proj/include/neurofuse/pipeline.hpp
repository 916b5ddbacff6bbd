#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "neurofuse/biasfield.hpp"
#include "neurofuse/dataset.hpp"
#include "neurofuse/register.hpp"
#include "neurofuse/resample.hpp"
#include "neurofuse/subject.hpp"
#include "neurofuse/volume.hpp"

namespace neurofuse {

enum class GridPreset { Full, Test };

/// 182x218x182 at 1 mm in the usual radiological MNI152 orientation.
inline constexpr Dims kFullStandardDims{182, 218, 182};
/// Desk-scale grid covering the same field of view.
inline constexpr Dims kTestStandardDims{32, 38, 32};

Grid standard_grid(GridPreset preset);
/// Grid with `dims` voxels spanning the standard field of view.
Grid standard_grid(const Dims& dims);
GridPreset parse_grid_preset(std::string_view name);

struct PipelineAssets {
  Volume3D mni_template;
  Volume3D brain_mask;       // {0,1}
  Volume3D cerebellum_mask;  // {0,1}

  /// Throws GridMismatch / InvalidArgument.
  void validate() const;
  const Grid& grid() const { return mni_template.grid(); }

  /// Resampled copy on another grid (template trilinear, masks nearest).
  PipelineAssets on_grid(const Grid& grid) const;

  static PipelineAssets load(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir) const;
};

/// Per-step registration settings derived from one base option set.
struct PipelineOptions {
  RegistrationOptions mri_to_template;   // Affine12, NCC
  RegistrationOptions template_to_std;   // Affine12, correlation ratio
  RegistrationOptions pet_to_template;   // Rigid6, correlation ratio
  RegistrationOptions pet_motion;        // Rigid6, NCC
  BiasFieldParams bias;

  static PipelineOptions from(const RegistrationOptions& base);
};

/// Native-space volumes of one subject, sessions in manifest order.
struct SubjectVolumes {
  std::string id;
  std::vector<std::pair<Date, Volume3D>> mri;
  std::vector<std::pair<Date, std::vector<Volume3D>>> pet;
};

SubjectVolumes load_subject_volumes(const SubjectRecord& subject, const Manifest& manifest);

/// Everything needed to regenerate one output from its native image.
struct OutputProvenance {
  Modality modality = Modality::MRI;
  Date date;
  AffineTransform native_to_standard;
  double scale = 1.0;  // PET cerebellar reference mean; 1 for MRI
  Interpolation interp = Interpolation::Trilinear;
  // components of native_to_standard, for auditing
  AffineTransform native_to_template;
  std::vector<AffineTransform> frame_transforms;  // PET only
  double similarity = 0.0;
  int bias_iterations = 0;                        // MRI only
  // MRI bias field as fitted on the raw native grid
  double bias_control_spacing = 0.0;
  int bias_levels = 0;
  Eigen::ArrayXd bias_coefficients;
};

struct SubjectReport {
  std::string subject_id;
  AffineTransform template_to_standard;
  std::vector<AffineTransform> template_build_transforms;
  std::vector<OutputProvenance> outputs;  // MRI outputs first, then PET, each by date
  std::vector<std::string> warnings;
};

std::string report_to_json(const std::vector<SubjectReport>& reports);
std::vector<SubjectReport> reports_from_json(std::string_view text);

struct SubjectResult {
  std::vector<Volume3D> mri_out;
  std::vector<Volume3D> pet_out;
  /// Inputs to the final resampling: bias-corrected MRI and motion-corrected
  /// (not yet referenced) PET means, aligned with the outputs.
  std::vector<Volume3D> mri_native;
  std::vector<Volume3D> pet_native;
  AverageTemplate average_template;
  SubjectReport report;
};

/// vol * mask. Throws GridMismatch.
Volume3D apply_mask(const Volume3D& vol, const Volume3D& mask);

/// pet / mean(pet over mask). Throws EmptyCerebellumReference.
std::pair<Volume3D, double> normalize_pet_reference(const Volume3D& pet, const Volume3D& reference_mask);

/// Divides by `scale`, resamples once through `p.native_to_standard` and
/// skull strips. The pipeline produces every output through this call, so
/// recorded provenance regenerates outputs bit for bit.
Volume3D rederive_output(const Volume3D& native, const OutputProvenance& p, const PipelineAssets& assets);

/// Same output from the raw session data: MRI re-applies the recorded bias
/// field, PET re-averages its frames through the recorded frame transforms.
Volume3D rederive_from_raw(std::span<const Volume3D> raw, const OutputProvenance& p, const PipelineAssets& assets);

/// Runs bias correction, average-template construction, standard-space
/// registration and skull stripping for MRI, and motion correction,
/// cerebellar referencing and concatenated registration for PET.
/// Errors are re-thrown annotated with the subject id and session date.
SubjectResult preprocess_subject(const SubjectVolumes& subject, const PipelineAssets& assets,
                                 const PipelineOptions& opts);

}  // namespace neurofuse
