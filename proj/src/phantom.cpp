#include "neurofuse/phantom.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>
#include <json.hpp>

#include "json_util.hpp"
#include "neurofuse/nifti.hpp"
#include "neurofuse/parallel.hpp"
#include "neurofuse/random.hpp"

namespace neurofuse {

using nlohmann::json;

namespace {

struct Ellipsoid {
  Eigen::Vector3d center;
  Eigen::Vector3d radii;

  // soft indicator, ~distance-based sigmoid with edge width w (mm)
  double membership(const Eigen::Vector3d& y, double w) const {
    const double q = ((y - center).array() / radii.array()).matrix().norm();
    const double arg = (q - 1.0) * radii.mean() / w;
    if (arg > 40.0) return 0.0;
    if (arg < -40.0) return 1.0;
    return 1.0 / (1.0 + std::exp(arg));
  }
};

Eigen::Vector3d canonical_center() { return standard_grid(GridPreset::Full).world_center(); }

struct Anatomy {
  Ellipsoid head, skull_outer, skull_inner, brain, wm, vent_l, vent_r, cisterns, cerebellum;

  explicit Anatomy(const AnatomyParams& p) {
    const Eigen::Vector3d c = canonical_center();
    const Eigen::Vector3d hc = c + Eigen::Vector3d(0, -4, -4);
    head = {hc, {80, 100, 78}};
    skull_outer = {hc, {75, 95, 73}};
    skull_inner = {hc, {71, 91, 69}};
    const Eigen::Vector3d bc = c + Eigen::Vector3d(0, 4, 8);
    brain = {bc, Eigen::Vector3d(64, 82, 56) * (1.0 - 0.25 * p.atrophy)};
    wm = {bc, {48, 64, 40}};
    const Eigen::Vector3d vr = Eigen::Vector3d(6, 22, 9) * (1.0 + 2.0 * p.atrophy);
    vent_l = {c + Eigen::Vector3d(10, 6, 14), vr};
    vent_r = {c + Eigen::Vector3d(-10, 6, 14), vr};
    cerebellum = {c + Eigen::Vector3d(0, -52, -30), {36, 20, 16}};
    // CSF around the cerebellum keeps cortex out of its partial-volume rim
    cisterns = {cerebellum.center, cerebellum.radii + Eigen::Vector3d::Constant(12)};
  }
};

struct Contrast {
  double scalp, bone, csf, gm, wm, cerebellum;
};

constexpr Contrast kMriContrast{0.45, 0.05, 0.15, 0.6, 1.0, 0.75};

double lerp(double a, double b, double t) { return a + (b - a) * t; }

// Returns (intensity, head membership) at canonical point y.
std::pair<double, double> tissue(const Anatomy& a, const Contrast& c, const Eigen::Vector3d& y, double w) {
  const double head = a.head.membership(y, w);
  if (head < 1e-6) return {0.0, head};
  double v = c.scalp * head;
  v = lerp(v, c.bone, a.skull_outer.membership(y, w));
  v = lerp(v, c.csf, a.skull_inner.membership(y, w));
  v = lerp(v, c.gm, a.brain.membership(y, w));
  v = lerp(v, c.wm, a.wm.membership(y, w));
  v = lerp(v, c.csf, a.vent_l.membership(y, w));
  v = lerp(v, c.csf, a.vent_r.membership(y, w));
  v = lerp(v, c.csf, a.cisterns.membership(y, w));
  v = lerp(v, c.cerebellum, a.cerebellum.membership(y, w));
  return {v, head};
}

double edge_width(const Grid& g) { return std::max(1.0, 0.5 * g.spacing.maxCoeff()); }

template <typename F>
Volume3D render(const Grid& grid, const AffineTransform& native_to_canonical, F&& value) {
  Volume3D out(grid, 0.0f);
  const Eigen::Matrix4d m = native_to_canonical.matrix * grid.vox2world;
  const Eigen::Matrix3d lin = m.topLeftCorner<3, 3>();
  const Eigen::Vector3d off = m.topRightCorner<3, 1>();
  const auto& d = grid.dims;
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i) {
        out(i, j, k) = static_cast<float>(value(Eigen::Vector3d(lin * Eigen::Vector3d(i, j, k) + off)));
      }
  return out;
}

Volume3D render_tissue(const Grid& grid, const AffineTransform& map, const AnatomyParams& anatomy, const Contrast& c,
                       double width_scale) {
  const Anatomy a(anatomy);
  const double w = edge_width(grid) * width_scale;
  return render(grid, map, [&](const Eigen::Vector3d& y) {
    const auto [v, head] = tissue(a, c, y, w);
    return head < 0.01 ? 0.0 : v;
  });
}

AffineTransform rigid_about(const Eigen::Vector3d& center, const Eigen::Vector3d& angles_rad,
                            const Eigen::Vector3d& shift) {
  const Eigen::Matrix3d r = (Eigen::AngleAxisd(angles_rad[2], Eigen::Vector3d::UnitZ()) *
                             Eigen::AngleAxisd(angles_rad[1], Eigen::Vector3d::UnitY()) *
                             Eigen::AngleAxisd(angles_rad[0], Eigen::Vector3d::UnitX()))
                                .toRotationMatrix();
  AffineTransform t;
  t.dof = Dof::Rigid6;
  t.matrix.topLeftCorner<3, 3>() = r;
  t.matrix.topRightCorner<3, 1>() = center + shift - r * center;
  return t;
}

AffineTransform random_pose(Rng& rng, const Grid& grid, double rot_deg, double trans_vox) {
  Eigen::Vector3d angles, shift;
  for (int a = 0; a < 3; ++a) angles[a] = rng.uniform(-rot_deg, rot_deg) * std::numbers::pi / 180.0;
  for (int a = 0; a < 3; ++a) shift[a] = rng.uniform(-trans_vox, trans_vox) * grid.spacing[a];
  return rigid_about(grid.world_center(), angles, shift);
}

// In-head noise, positivity floor; background stays exactly zero.
void add_noise(Volume3D& vol, Rng& rng, double sigma) {
  for (Eigen::Index i = 0; i < vol.size(); ++i) {
    const double n = rng.normal();
    if (vol.data()[i] == 0.0f) continue;
    vol.data()[i] = static_cast<float>(std::max(1e-3, vol.data()[i] + sigma * n));
  }
}

std::string subject_id(int i) { return fmt::format("sub-{:03d}", i); }

struct GeneratedSubject {
  SubjectTruth truth;
  SubjectRecord record;
  SubjectVolumes volumes;
};

GeneratedSubject generate_subject(const PhantomConfig& cfg, int index, Label label, const Grid& grid) {
  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(index)));
  GeneratedSubject g;
  auto& t = g.truth;
  t.id = subject_id(index);
  t.label = label;
  g.record.id = t.id;
  g.volumes.id = t.id;

  const bool ad = label == Label::AD;
  const double atrophy_draw = rng.uniform();
  t.anatomy.atrophy = cfg.mri_signal * (ad ? 0.7 + 0.6 * atrophy_draw : 0.15 * atrophy_draw);
  const double lag_draw = rng.uniform();
  const double suvr_draw = rng.uniform();
  const bool positive = ad ? lag_draw >= cfg.amyloid_negative_ad : lag_draw < cfg.amyloid_lag;
  t.cortical_suvr = 1.0 + cfg.pet_signal * (positive ? 0.7 + 0.6 * suvr_draw : 0.15 * suvr_draw);

  Eigen::Vector3d scale;
  for (int a = 0; a < 3; ++a) scale[a] = 1.0 + rng.uniform(-cfg.subject_scale_jitter, cfg.subject_scale_jitter);
  const Eigen::Vector3d c = canonical_center();
  t.subject_to_canonical.dof = Dof::Affine12;
  t.subject_to_canonical.matrix.setIdentity();
  t.subject_to_canonical.matrix.topLeftCorner<3, 3>() = scale.cwiseInverse().asDiagonal();
  t.subject_to_canonical.matrix.topRightCorner<3, 1>() = c - scale.cwiseInverse().cwiseProduct(c);

  const Date base = Date::from_ymd(2010, 1, 1).plus_days(11 * index);
  std::vector<Date> dx_dates;
  for (int s = 0; s < cfg.mri_sessions; ++s) {
    MriTruth m;
    m.date = base.plus_days(400 * s + static_cast<int>(rng.below(21)));
    m.pose = random_pose(rng, grid, cfg.jitter_rotation_deg, cfg.jitter_translation_vox);
    m.bias.amplitude = cfg.bias_amplitude;
    Eigen::Vector3d dir(rng.normal(), rng.normal(), rng.normal());
    m.bias.direction = dir.norm() > 1e-12 ? Eigen::Vector3d(dir.normalized()) : Eigen::Vector3d::UnitX();
    m.bias.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    m.bias.extent = (grid.spacing.array() * Eigen::Array3d(grid.dims[0], grid.dims[1], grid.dims[2])).maxCoeff();
    m.bias.center = grid.world_center();

    Volume3D vol = render_mri(grid, t.native_to_canonical(m.pose), t.anatomy);
    if (m.bias.amplitude > 0.0) {
      const Volume3D field = m.bias.field(grid);
      vol.data() *= field.data();
    }
    add_noise(vol, rng, cfg.noise_sigma);
    const std::string path = fmt::format("{}/mri_{}.nii.gz", t.id, m.date.iso());
    g.record.mri.push_back({m.date, path});
    g.volumes.mri.emplace_back(m.date, std::move(vol));
    dx_dates.push_back(m.date.plus_days(static_cast<int>(rng.below(21)) - 10));
    t.mri.push_back(std::move(m));
  }
  for (int s = 0; s < cfg.pet_sessions; ++s) {
    PetTruth p;
    p.date = base.plus_days(400 * s + 5 + static_cast<int>(rng.below(36)));
    p.uptake_scale = rng.uniform(0.8, 1.5);
    const AffineTransform pose = random_pose(rng, grid, cfg.jitter_rotation_deg, cfg.jitter_translation_vox);
    const AffineTransform motion = random_pose(rng, grid, 1.0, 1.0);
    p.frame_poses = {pose, compose(pose, motion)};
    PetSession session{p.date, {}};
    std::vector<Volume3D> frames;
    const AnatomyParams pet_anatomy{t.anatomy.atrophy * cfg.pet_atrophy_coupling};
    for (std::size_t f = 0; f < p.frame_poses.size(); ++f) {
      Volume3D vol = render_pet(grid, t.native_to_canonical(p.frame_poses[f]), pet_anatomy, t.cortical_suvr,
                                p.uptake_scale);
      add_noise(vol, rng, 2.0 * cfg.noise_sigma * p.uptake_scale);
      session.frames.push_back(fmt::format("{}/pet_{}_f{}.nii.gz", t.id, p.date.iso(), f));
      frames.push_back(std::move(vol));
    }
    g.record.pet.push_back(std::move(session));
    g.volumes.pet.emplace_back(p.date, std::move(frames));
    const Date dx = p.date.plus_days(static_cast<int>(rng.below(21)) - 10);
    bool near = false;
    for (const auto& d : dx_dates) near = near || std::abs(days_between(d, dx)) < 30;
    if (!near) dx_dates.push_back(dx);
    t.pet.push_back(std::move(p));
  }
  std::sort(dx_dates.begin(), dx_dates.end());
  dx_dates.erase(std::unique(dx_dates.begin(), dx_dates.end()), dx_dates.end());
  for (const auto& d : dx_dates) g.record.dx.push_back({d, label});
  return g;
}

json bias_json(const BiasTruth& b) {
  return {{"amplitude", b.amplitude},
          {"direction", detail::vector_json(b.direction)},
          {"phase", b.phase},
          {"extent", b.extent},
          {"center", detail::vector_json(b.center)}};
}

}  // namespace

void PhantomConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::InvalidArgument, "phantom config: " + what); };
  if (n_subjects < 1) bad("n_subjects must be >= 1");
  if (mri_sessions < 0 || pet_sessions < 0) bad("session counts must be >= 0");
  for (int d : dims)
    if (d < 16) bad("grid dims must be >= 16 per axis");
  if (mri_signal < 0 || pet_signal < 0 || bias_amplitude < 0 || jitter_rotation_deg < 0 ||
      jitter_translation_vox < 0 || noise_sigma < 0 || subject_scale_jitter < 0)
    bad("amplitudes must be >= 0");
  for (double f : {amyloid_lag, amyloid_negative_ad, ad_fraction, pet_atrophy_coupling})
    if (f < 0 || f > 1) bad("fractions must lie in [0, 1]");
  if (subject_scale_jitter >= 0.5) bad("subject_scale_jitter must be < 0.5");
}

PhantomConfig PhantomConfig::from_json(std::string_view text) {
  PhantomConfig cfg;
  try {
    const auto j = json::parse(text);
    for (const auto& [key, v] : j.items()) {
      if (key == "n_subjects") cfg.n_subjects = v.get<int>();
      else if (key == "mri_sessions") cfg.mri_sessions = v.get<int>();
      else if (key == "pet_sessions") cfg.pet_sessions = v.get<int>();
      else if (key == "dims") cfg.dims = v.get<Dims>();
      else if (key == "mri_signal") cfg.mri_signal = v.get<double>();
      else if (key == "pet_signal") cfg.pet_signal = v.get<double>();
      else if (key == "amyloid_lag") cfg.amyloid_lag = v.get<double>();
      else if (key == "amyloid_negative_ad") cfg.amyloid_negative_ad = v.get<double>();
      else if (key == "ad_fraction") cfg.ad_fraction = v.get<double>();
      else if (key == "pet_atrophy_coupling") cfg.pet_atrophy_coupling = v.get<double>();
      else if (key == "bias_amplitude") cfg.bias_amplitude = v.get<double>();
      else if (key == "jitter_rotation_deg") cfg.jitter_rotation_deg = v.get<double>();
      else if (key == "jitter_translation_vox") cfg.jitter_translation_vox = v.get<double>();
      else if (key == "subject_scale_jitter") cfg.subject_scale_jitter = v.get<double>();
      else if (key == "noise_sigma") cfg.noise_sigma = v.get<double>();
      else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
      else throw Error(ErrorCode::InvalidArgument, fmt::format("phantom config: unknown key '{}'", key));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, fmt::format("phantom config: {}", e.what()));
  }
  cfg.validate();
  return cfg;
}

std::string PhantomConfig::to_json() const {
  json j = {{"n_subjects", n_subjects},
            {"mri_sessions", mri_sessions},
            {"pet_sessions", pet_sessions},
            {"dims", dims},
            {"mri_signal", mri_signal},
            {"pet_signal", pet_signal},
            {"amyloid_lag", amyloid_lag},
            {"amyloid_negative_ad", amyloid_negative_ad},
            {"ad_fraction", ad_fraction},
            {"pet_atrophy_coupling", pet_atrophy_coupling},
            {"bias_amplitude", bias_amplitude},
            {"jitter_rotation_deg", jitter_rotation_deg},
            {"jitter_translation_vox", jitter_translation_vox},
            {"subject_scale_jitter", subject_scale_jitter},
            {"noise_sigma", noise_sigma},
            {"seed", seed}};
  return j.dump(2);
}

Volume3D render_mri(const Grid& grid, const AffineTransform& native_to_canonical, const AnatomyParams& anatomy) {
  return render_tissue(grid, native_to_canonical, anatomy, kMriContrast, 1.0);
}

Volume3D render_pet(const Grid& grid, const AffineTransform& native_to_canonical, const AnatomyParams& anatomy,
                    double cortical_suvr, double uptake_scale) {
  const Contrast c{0.15 * uptake_scale, 0.05 * uptake_scale, 0.1 * uptake_scale,
                   cortical_suvr * uptake_scale, 1.2 * uptake_scale, uptake_scale};
  return render_tissue(grid, native_to_canonical, anatomy, c, 1.5);
}

double BiasTruth::log_field(const Eigen::Vector3d& world) const {
  return amplitude * std::sin(std::numbers::pi * direction.dot(world - center) / extent + phase);
}

Volume3D BiasTruth::field(const Grid& grid) const {
  return render(grid, AffineTransform::identity(),
                [&](const Eigen::Vector3d& x) { return std::exp(log_field(x)); });
}

PipelineAssets make_phantom_assets(const Grid& grid) {
  PipelineAssets a;
  a.mni_template = render_mri(grid, AffineTransform::identity(), {});
  const Anatomy anat(AnatomyParams{});
  const double w = edge_width(grid);
  a.brain_mask = render(grid, AffineTransform::identity(), [&](const Eigen::Vector3d& y) {
    return std::max(anat.brain.membership(y, w), anat.cerebellum.membership(y, w)) > 0.5 ? 1.0 : 0.0;
  });
  Ellipsoid core = anat.cerebellum;
  core.radii *= 0.8;
  a.cerebellum_mask = render(grid, AffineTransform::identity(),
                             [&](const Eigen::Vector3d& y) { return core.membership(y, w) > 0.5 ? 1.0 : 0.0; });
  return a;
}

std::vector<SuvrRegion> make_phantom_regions(const Grid& grid) {
  const Anatomy anat(AnatomyParams{});
  const double w = edge_width(grid);
  Ellipsoid wm = anat.wm;
  wm.radii *= 1.1;
  const Eigen::Vector3d bc = anat.brain.center;
  const char* names[4] = {"anterior_left", "anterior_right", "posterior_left", "posterior_right"};
  std::vector<SuvrRegion> regions;
  const double voxel_mm3 = grid.spacing.prod();
  for (int q = 0; q < 4; ++q) {
    const bool anterior = q < 2;
    const bool left = q % 2 == 0;
    Volume3D mask = render(grid, AffineTransform::identity(), [&](const Eigen::Vector3d& y) {
      const bool cortex = anat.brain.membership(y, w) > 0.5 && wm.membership(y, w) < 0.5 &&
                          anat.cisterns.membership(y, w) < 0.5;
      const bool quadrant = ((y[1] >= bc[1]) == anterior) && ((y[0] >= bc[0]) == left);
      return cortex && quadrant ? 1.0 : 0.0;
    });
    const double volume = mask.data().cast<double>().sum() * voxel_mm3;
    regions.push_back({names[q], std::move(mask), volume});
  }
  return regions;
}

std::vector<Eigen::Vector3d> phantom_fiducials() {
  const Eigen::Vector3d c = canonical_center();
  const std::vector<Eigen::Vector3d> offsets = {{0, 4, 8},     {30, 20, 20},  {-30, 20, 20}, {0, -52, -30},
                                                {40, -30, 10}, {-40, -30, 10}, {0, 60, 20},  {0, 0, 50}};
  std::vector<Eigen::Vector3d> out;
  for (const auto& o : offsets) out.push_back(c + o);
  return out;
}

Cohort generate_cohort(const PhantomConfig& cfg, int jobs) {
  cfg.validate();
  const Grid grid = standard_grid(cfg.dims);
  const int n = cfg.n_subjects;
  const int n_ad = static_cast<int>(std::lround(cfg.ad_fraction * n));
  std::vector<Label> labels(static_cast<std::size_t>(n), Label::Healthy);
  std::fill(labels.begin(), labels.begin() + n_ad, Label::AD);
  Rng label_rng(derive_seed(cfg.seed, 0xffffffffULL));
  label_rng.shuffle(std::span<Label>(labels));

  std::vector<GeneratedSubject> subjects(static_cast<std::size_t>(n));
  parallel_for(subjects.size(), jobs, [&](std::size_t i) {
    subjects[i] = generate_subject(cfg, static_cast<int>(i), labels[i], grid);
  });

  Cohort c;
  c.config = cfg;
  c.manifest.provenance = fmt::format("phantom seed {}", cfg.seed);
  for (auto& s : subjects) {
    c.manifest.subjects.push_back(std::move(s.record));
    c.truth.push_back(std::move(s.truth));
    c.volumes.push_back(std::move(s.volumes));
  }
  c.assets = make_phantom_assets(grid);
  c.regions = make_phantom_regions(grid);
  return c;
}

std::string ground_truth_json(const Cohort& cohort) {
  json subjects = json::array();
  for (const auto& t : cohort.truth) {
    json mri = json::array();
    for (const auto& m : t.mri) {
      mri.push_back({{"date", m.date.iso()}, {"pose", detail::transform_json(m.pose)}, {"bias", bias_json(m.bias)}});
    }
    json pet = json::array();
    for (const auto& p : t.pet) {
      json frames = json::array();
      for (const auto& f : p.frame_poses) frames.push_back(detail::transform_json(f));
      pet.push_back({{"date", p.date.iso()}, {"frame_poses", frames}, {"uptake_scale", p.uptake_scale}});
    }
    subjects.push_back({{"id", t.id},
                        {"label", label_name(t.label)},
                        {"atrophy", t.anatomy.atrophy},
                        {"cortical_suvr", t.cortical_suvr},
                        {"subject_to_canonical", detail::transform_json(t.subject_to_canonical)},
                        {"mri", mri},
                        {"pet", pet}});
  }
  json fiducials = json::array();
  for (const auto& f : phantom_fiducials()) fiducials.push_back(detail::vector_json(f));
  json doc = {{"config", json::parse(cohort.config.to_json())},
              {"conventions",
               "native world -> subject world via pose; subject world -> template world via subject_to_canonical"},
              {"fiducials", fiducials},
              {"subjects", subjects}};
  return doc.dump(2);
}

void write_cohort(const Cohort& cohort, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  for (std::size_t s = 0; s < cohort.volumes.size(); ++s) {
    const auto& rec = cohort.manifest.subjects[s];
    const auto& vols = cohort.volumes[s];
    std::filesystem::create_directories(out_dir / rec.id);
    for (std::size_t i = 0; i < rec.mri.size(); ++i) save_nifti(vols.mri[i].second, out_dir / rec.mri[i].path);
    for (std::size_t i = 0; i < rec.pet.size(); ++i)
      for (std::size_t f = 0; f < rec.pet[i].frames.size(); ++f)
        save_nifti(vols.pet[i].second[f], out_dir / rec.pet[i].frames[f]);
  }
  save_manifest(cohort.manifest, out_dir / "manifest.json");
  write_file(out_dir / "ground_truth.json", ground_truth_json(cohort));
  cohort.assets.save(out_dir / "assets");
  const auto region_dir = out_dir / "regions";
  std::filesystem::create_directories(region_dir);
  json spec = json::array();
  for (const auto& r : cohort.regions) {
    const std::string file = r.name + ".nii.gz";
    save_nifti(r.mask, region_dir / file);
    spec.push_back({{"name", r.name}, {"mask_path", file}, {"volume_mm3", r.weight}});
  }
  write_file(region_dir / "regions.json", spec.dump(2));
}

}  // namespace neurofuse
