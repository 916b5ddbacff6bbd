#include "neurofuse/suvr.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "neurofuse/nifti.hpp"

namespace neurofuse {

double compute_suvr(const Volume3D& pet, std::span<const SuvrRegion> regions) {
  if (regions.empty()) throw Error(ErrorCode::InvalidArgument, "no SUVR regions given");
  double weighted = 0.0, weights = 0.0;
  for (const auto& r : regions) {
    if (!r.mask.grid().matches(pet.grid())) {
      throw Error(ErrorCode::GridMismatch, fmt::format("region '{}' is not on the PET grid", r.name));
    }
    if (!(r.weight > 0.0)) throw Error(ErrorCode::InvalidArgument, fmt::format("region '{}' weight", r.name));
    double sum = 0.0;
    std::size_t n = 0;
    for (Eigen::Index i = 0; i < pet.size(); ++i) {
      if (r.mask.data()[i] > 0.5f) {
        sum += pet.data()[i];
        ++n;
      }
    }
    if (n == 0) throw Error(ErrorCode::EmptyRegion, fmt::format("region '{}' selects no voxels", r.name));
    weighted += r.weight * (sum / static_cast<double>(n));
    weights += r.weight;
  }
  return weighted / weights;
}

double effective_accuracy(int total, int misclassified, int excluded, int excluded_misclassified) {
  if (total < 0 || misclassified < 0 || excluded < 0 || excluded_misclassified < 0 || excluded > total ||
      misclassified > total || excluded_misclassified > std::min(excluded, misclassified)) {
    throw Error(ErrorCode::InvalidArgument, "inconsistent accuracy counts");
  }
  const int kept = total - excluded;
  if (kept == 0) throw Error(ErrorCode::DegenerateDenominator, "every scan was excluded");
  return static_cast<double>(kept - (misclassified - excluded_misclassified)) / kept;
}

int round_percent(double fraction) { return static_cast<int>(std::floor(100.0 * fraction + 0.5)); }

void SuvrReport::add(std::string subject_id, Date date, double suvr) {
  scans.push_back({std::move(subject_id), date, suvr, classify_amyloid(suvr, cutoff)});
}

std::string SuvrReport::to_csv() const {
  std::string out = "subject,date,suvr,positive\n";
  for (const auto& s : scans) {
    out += fmt::format("{},{},{:.6f},{}\n", s.subject_id, s.date.iso(), s.suvr, s.positive ? 1 : 0);
  }
  return out;
}

std::vector<SuvrRegion> load_regions(const std::filesystem::path& spec_path) {
  std::ifstream in(spec_path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read region spec " + spec_path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  std::vector<SuvrRegion> regions;
  try {
    const auto doc = nlohmann::json::parse(ss.str());
    for (const auto& r : doc) {
      std::filesystem::path mask_path = r.at("mask_path").get<std::string>();
      if (mask_path.is_relative()) mask_path = spec_path.parent_path() / mask_path;
      regions.push_back({r.at("name").get<std::string>(), load_nifti(mask_path), r.at("volume_mm3").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, fmt::format("region spec: {}", e.what()));
  }
  return regions;
}

}  // namespace neurofuse
