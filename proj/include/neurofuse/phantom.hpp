#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "neurofuse/dataset.hpp"
#include "neurofuse/pipeline.hpp"
#include "neurofuse/suvr.hpp"

namespace neurofuse {

struct PhantomConfig {
  int n_subjects = 20;
  int mri_sessions = 2;
  int pet_sessions = 1;
  Dims dims = kTestStandardDims;   // rendered on standard_grid(dims)
  double mri_signal = 0.3;         // AD structural shrinkage amplitude
  double pet_signal = 0.3;         // AD cortical uptake elevation (SUVR units)
  double amyloid_lag = 0.0;        // fraction of Healthy subjects with AD-level uptake
  double amyloid_negative_ad = 0.0;  // fraction of AD subjects with Healthy-level uptake
  double ad_fraction = 0.5;
  // share of the structural atrophy visible in PET, standing in for its
  // coarse resolution and partial-volume blurring
  double pet_atrophy_coupling = 0.2;
  double bias_amplitude = 0.0;     // log-domain amplitude of the MRI bias field
  double jitter_rotation_deg = 0.0;
  double jitter_translation_vox = 0.0;
  double subject_scale_jitter = 0.04;  // per-subject head size variation (fraction)
  double noise_sigma = 0.02;       // relative to white-matter MRI intensity
  std::uint64_t seed = 1;

  /// Throws InvalidArgument.
  void validate() const;

  static PhantomConfig from_json(std::string_view text);
  std::string to_json() const;
};

/// Class-relevant shape of one subject's canonical anatomy.
struct AnatomyParams {
  double atrophy = 0.0;  // 0 = template anatomy
};

/// MRI contrast of the canonical anatomy as seen through `native_to_canonical`.
Volume3D render_mri(const Grid& grid, const AffineTransform& native_to_canonical, const AnatomyParams& anatomy);

/// PET uptake: cerebellum = uptake_scale, cortex = uptake_scale * cortical_suvr.
Volume3D render_pet(const Grid& grid, const AffineTransform& native_to_canonical, const AnatomyParams& anatomy,
                    double cortical_suvr, double uptake_scale);

/// Log of the injected bias field: amplitude * sin(pi * dir.(x - center) / extent + phase).
struct BiasTruth {
  double amplitude = 0.0;
  Eigen::Vector3d direction = Eigen::Vector3d::UnitX();
  double phase = 0.0;
  double extent = 1.0;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();

  double log_field(const Eigen::Vector3d& world) const;
  Volume3D field(const Grid& grid) const;
};

struct MriTruth {
  Date date;
  AffineTransform pose;  // native world -> subject world (rigid head pose)
  BiasTruth bias;
};

struct PetTruth {
  Date date;
  std::vector<AffineTransform> frame_poses;  // one per frame
  double uptake_scale = 1.0;
};

struct SubjectTruth {
  std::string id;
  Label label = Label::Healthy;
  AffineTransform subject_to_canonical;  // removes the subject's head-size difference
  AnatomyParams anatomy;
  double cortical_suvr = 1.0;
  std::vector<MriTruth> mri;
  std::vector<PetTruth> pet;

  /// Native world of a session -> canonical (template) world.
  AffineTransform native_to_canonical(const AffineTransform& pose) const {
    return compose(subject_to_canonical, pose);
  }
};

struct Cohort {
  PhantomConfig config;
  Manifest manifest;                   // paths relative to the output directory
  std::vector<SubjectTruth> truth;
  std::vector<SubjectVolumes> volumes;
  PipelineAssets assets;
  std::vector<SuvrRegion> regions;     // cortical regions on the standard grid
};

/// Deterministic per seed; subjects draw from independent derived streams.
Cohort generate_cohort(const PhantomConfig& cfg, int jobs = 1);

/// Template, brain mask and cerebellum mask rendered on `grid`.
PipelineAssets make_phantom_assets(const Grid& grid);

/// Four cortical quadrant masks weighted by their volume in mm^3.
std::vector<SuvrRegion> make_phantom_regions(const Grid& grid);

/// Landmarks in canonical world coordinates.
std::vector<Eigen::Vector3d> phantom_fiducials();

/// Writes volumes, manifest.json, ground_truth.json, assets/ and regions/.
void write_cohort(const Cohort& cohort, const std::filesystem::path& out_dir);

std::string ground_truth_json(const Cohort& cohort);

}  // namespace neurofuse
