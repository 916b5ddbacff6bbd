#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "neurofuse/subject.hpp"

namespace neurofuse {

/// Cohort index. Relative volume paths resolve against `base_dir`.
struct Manifest {
  std::vector<SubjectRecord> subjects;
  std::string provenance;
  std::filesystem::path base_dir;

  /// Throws InvalidArgument on duplicate subject ids or session dates.
  void validate() const;
  const SubjectRecord* find(std::string_view id) const;
  std::filesystem::path resolve(const std::filesystem::path& p) const;
};

Manifest manifest_from_json(std::string_view text, const std::filesystem::path& base_dir = {});
std::string manifest_to_json(const Manifest& m);
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& m, const std::filesystem::path& path);

/// Manifest restricted to the given subjects (order preserved).
Manifest subset(const Manifest& m, const std::set<std::string>& ids);

struct LabeledSample {
  std::string subject_id;
  Modality modality = Modality::MRI;
  /// MRI: one volume. PET: its frames. Fused: {mri, pet...}, MRI first.
  std::vector<std::filesystem::path> volumes;
  Label label = Label::Healthy;
  Date date;                   // the scan date (PET date for fused samples)
  std::optional<Date> mri_date;  // fused samples only
};

struct SessionLabeling {
  std::vector<LabeledSample> samples;  // MRI sessions first, then PET, each by date
  std::vector<std::string> dropped;    // one human-readable line per dropped session
};

/// Labels each scan with the nearest diagnosis within +-window_days; ties in
/// |gap| go to the later diagnosis. Sessions without one are dropped.
SessionLabeling pair_sessions_with_diagnosis(const SubjectRecord& subject, int window_days = 60);

struct PatientSplit {
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> test;
  std::set<std::string> train_subjects;
  std::set<std::string> test_subjects;
};

/// Whole-subject split: subjects are shuffled with `seed` and moved to the
/// test side until it holds at least `test_fraction` of the samples.
/// Throws InvalidArgument, UnsatisfiableSplit.
PatientSplit split_by_patient(const std::vector<LabeledSample>& samples, double test_fraction, std::uint64_t seed);

struct FusionPairing {
  std::vector<LabeledSample> samples;
  std::vector<std::string> unpaired;
};

/// Pairs each PET sample with the nearest unused MRI sample of the same
/// subject within max_gap_days, globally smallest gaps first.
FusionPairing pair_modalities(const SubjectRecord& subject, const std::vector<LabeledSample>& labeled,
                              int max_gap_days = 90);

}  // namespace neurofuse
