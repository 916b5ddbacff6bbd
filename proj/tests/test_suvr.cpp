#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "neurofuse/nifti.hpp"
#include "neurofuse/suvr.hpp"

using namespace neurofuse;

namespace {

const Grid g = Grid::axis_aligned({8, 4, 4}, Eigen::Vector3d::Ones());

Volume3D half_mask(bool left) {
  Volume3D m(g);
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i < 8; ++i) m(i, j, k) = (i < 4) == left ? 1.0f : 0.0f;
  return m;
}

}  // namespace

TEST_CASE("uniform uptake at and below the cutoff") {
  const std::vector<SuvrRegion> regions{{"r", half_mask(true), 10.0}};
  const double at = compute_suvr(Volume3D(g, 1.11f), regions);
  CHECK(at == doctest::Approx(1.11).epsilon(1e-6));
  CHECK(classify_amyloid(1.11));
  CHECK_FALSE(classify_amyloid(compute_suvr(Volume3D(g, 1.10f), regions)));
}

TEST_CASE("volume-weighted regional mean") {
  Volume3D pet(g, 1.0f);
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < 4; ++j)
      for (int i = 4; i < 8; ++i) pet(i, j, k) = 2.0f;
  std::vector<SuvrRegion> regions{{"a", half_mask(true), 1.0}, {"b", half_mask(false), 3.0}};
  CHECK(compute_suvr(pet, regions) == doctest::Approx(1.75));
  std::swap(regions[0], regions[1]);
  CHECK(compute_suvr(pet, regions) == doctest::Approx(1.75));
  Volume3D scaled = pet;
  scaled.data() *= 1.3f;
  CHECK(compute_suvr(scaled, regions) == doctest::Approx(1.3 * 1.75));
}

TEST_CASE("region errors") {
  try {
    compute_suvr(Volume3D(g, 1.0f), std::vector<SuvrRegion>{{"empty", Volume3D(g), 1.0}});
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyRegion);
  }
  const Volume3D other(Grid::axis_aligned({2, 2, 2}, Eigen::Vector3d::Ones()), 1.0f);
  CHECK_THROWS_AS(compute_suvr(Volume3D(g, 1.0f), std::vector<SuvrRegion>{{"x", other, 1.0}}), Error);
}

TEST_CASE("amyloid classification") {
  CHECK(classify_amyloid(1.42));
  CHECK_FALSE(classify_amyloid(0.95));
  CHECK(classify_amyloid(1.11));
  CHECK_FALSE(classify_amyloid(std::nextafter(1.11, 0.0)));
}

TEST_CASE("effective accuracy") {
  CHECK(effective_accuracy(73, 11, 9, 9) == doctest::Approx(62.0 / 64.0));
  CHECK(std::abs(effective_accuracy(73, 11, 9, 9) - 0.969) < 5e-4);
  CHECK(round_percent(effective_accuracy(73, 11, 9, 9)) == 97);
  CHECK(effective_accuracy(40, 7, 0, 0) == doctest::Approx(33.0 / 40.0));
  CHECK(effective_accuracy(20, 5, 5, 5) == 1.0);
  try {
    effective_accuracy(5, 1, 5, 1);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateDenominator);
  }
  CHECK_THROWS_AS(effective_accuracy(10, 2, 3, 4), Error);
  for (int em = 0; em < 9; ++em) CHECK(effective_accuracy(73, 11, 9, em) <= effective_accuracy(73, 11, 9, em + 1));
}

TEST_CASE("test-set size consistent with 85% and 11 errors") {
  // every n whose raw accuracy with 11 errors rounds to 85%
  std::vector<int> consistent;
  for (int n = 12; n < 200; ++n)
    if (round_percent(static_cast<double>(n - 11) / n) == 85) consistent.push_back(n);
  REQUIRE_FALSE(consistent.empty());
  CHECK(consistent.front() == 71);
  CHECK(std::find(consistent.begin(), consistent.end(), 73) != consistent.end());
  for (int n : consistent) CHECK(round_percent(effective_accuracy(n, 11, 9, 9)) == 97);
}

TEST_CASE("half-up percent rounding") {
  CHECK(round_percent(0.845) == 85);
  CHECK(round_percent(0.8449) == 84);
  CHECK(round_percent(1.0) == 100);
}

TEST_CASE("CSV report and region spec loading") {
  SuvrReport rep;
  rep.add("sub-1", Date::from_ymd(2012, 5, 6), 1.2);
  rep.add("sub-2", Date::from_ymd(2012, 5, 7), 1.0);
  CHECK(rep.to_csv() == "subject,date,suvr,positive\nsub-1,2012-05-06,1.200000,1\nsub-2,2012-05-07,1.000000,0\n");

  const auto dir = std::filesystem::temp_directory_path() / "nf_suvr_regions";
  std::filesystem::create_directories(dir);
  save_nifti(half_mask(true), dir / "left.nii.gz");
  write_file(dir / "regions.json", std::string(R"([{"name": "left", "mask_path": "left.nii.gz", "volume_mm3": 64}])"));
  const auto regions = load_regions(dir / "regions.json");
  REQUIRE(regions.size() == 1);
  CHECK(regions[0].weight == 64.0);
  CHECK(regions[0].mask.data().sum() == 64.0f);
  write_file(dir / "bad.json", std::string("[{\"name\": 1}]"));
  CHECK_THROWS_AS(load_regions(dir / "bad.json"), Error);
  std::filesystem::remove_all(dir);
}
