#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "neurofuse/subject.hpp"
#include "neurofuse/volume.hpp"

namespace neurofuse {

/// Amyloid positivity threshold on the whole-cerebellum referenced SUVR.
inline constexpr double kAmyloidCutoff = 1.11;

struct SuvrRegion {
  std::string name;
  Volume3D mask;
  double weight = 0.0;  // region volume, mm^3
};

/// Volume-weighted mean of the per-region mean uptake. `pet` must already be
/// cerebellum referenced. Throws EmptyRegion, GridMismatch, InvalidArgument.
double compute_suvr(const Volume3D& pet, std::span<const SuvrRegion> regions);

inline bool classify_amyloid(double suvr, double cutoff = kAmyloidCutoff) { return suvr >= cutoff; }

/// Accuracy after removing `excluded` scans, `excluded_misclassified` of
/// which were among the errors. Throws DegenerateDenominator, InvalidArgument.
double effective_accuracy(int total, int misclassified, int excluded, int excluded_misclassified);

/// Half-up rounding to a whole percent.
int round_percent(double fraction);

struct SuvrEntry {
  std::string subject_id;
  Date date;
  double suvr = 0.0;
  bool positive = false;
};

struct SuvrReport {
  std::vector<SuvrEntry> scans;
  double cutoff = kAmyloidCutoff;

  void add(std::string subject_id, Date date, double suvr);
  std::string to_csv() const;
};

/// Region spec: JSON list of {name, mask_path, volume_mm3}; relative mask
/// paths resolve against the region file's directory.
std::vector<SuvrRegion> load_regions(const std::filesystem::path& spec_path);

}  // namespace neurofuse
