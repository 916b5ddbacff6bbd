#include "neurofuse/pipeline.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>
#include <json.hpp>

#include "neurofuse/nifti.hpp"
#include "json_util.hpp"

namespace neurofuse {

using nlohmann::json;
using detail::transform_from_json;
using detail::transform_json;

namespace {

Volume3D divide(const Volume3D& vol, double scale) {
  Volume3D out(vol.grid(), 0.0f);
  out.data() = (vol.data().cast<double>() / scale).cast<float>();
  return out;
}

template <typename F>
auto annotated(const std::string& subject, std::string_view what, const F& step) {
  try {
    return step();
  } catch (const Error& e) {
    throw Error(e.code(), fmt::format("subject {} {}: {}", subject, what, e.what()));
  }
}

}  // namespace

Grid standard_grid(GridPreset preset) {
  return standard_grid(preset == GridPreset::Full ? kFullStandardDims : kTestStandardDims);
}

Grid standard_grid(const Dims& dims) {
  Grid full;
  full.dims = kFullStandardDims;
  full.spacing = Eigen::Vector3d::Ones();
  full.vox2world = Eigen::Matrix4d::Identity();
  full.vox2world(0, 0) = -1.0;
  full.vox2world.topRightCorner<3, 1>() = Eigen::Vector3d(90.0, -126.0, -72.0);
  if (dims == kFullStandardDims) return full;

  Grid g;
  g.dims = dims;
  for (int a = 0; a < 3; ++a) {
    g.spacing[a] = static_cast<double>(kFullStandardDims[static_cast<std::size_t>(a)]) / dims[static_cast<std::size_t>(a)];
  }
  g.vox2world = Eigen::Matrix4d::Identity();
  g.vox2world(0, 0) = -g.spacing.x();
  g.vox2world(1, 1) = g.spacing.y();
  g.vox2world(2, 2) = g.spacing.z();
  const Eigen::Vector3d half((dims[0] - 1) * 0.5, (dims[1] - 1) * 0.5, (dims[2] - 1) * 0.5);
  g.vox2world.topRightCorner<3, 1>() = full.world_center() - g.vox2world.topLeftCorner<3, 3>() * half;
  g.validate();
  return g;
}

GridPreset parse_grid_preset(std::string_view name) {
  if (name == "full") return GridPreset::Full;
  if (name == "test") return GridPreset::Test;
  throw Error(ErrorCode::InvalidArgument, fmt::format("unknown grid preset '{}'", name));
}

void PipelineAssets::validate() const {
  if (!brain_mask.grid().matches(mni_template.grid()) || !cerebellum_mask.grid().matches(mni_template.grid())) {
    throw Error(ErrorCode::GridMismatch, "assets do not share the standard grid");
  }
  for (const Volume3D* m : {&brain_mask, &cerebellum_mask}) {
    if (((m->data() != 0.0f) && (m->data() != 1.0f)).any()) {
      throw Error(ErrorCode::InvalidArgument, "asset masks must be {0,1}-valued");
    }
  }
}

PipelineAssets PipelineAssets::on_grid(const Grid& grid) const {
  if (grid.matches(this->grid())) return *this;
  const auto id = AffineTransform::identity();
  return {resample(mni_template, id, grid, Interpolation::Trilinear),
          resample(brain_mask, id, grid, Interpolation::NearestNeighbor),
          resample(cerebellum_mask, id, grid, Interpolation::NearestNeighbor)};
}

PipelineAssets PipelineAssets::load(const std::filesystem::path& dir) {
  PipelineAssets a{load_nifti(dir / "mni_template.nii.gz"), load_nifti(dir / "brain_mask.nii.gz"),
                   load_nifti(dir / "cerebellum_mask.nii.gz")};
  a.validate();
  return a;
}

void PipelineAssets::save(const std::filesystem::path& dir) const {
  save_nifti(mni_template, dir / "mni_template.nii.gz");
  save_nifti(brain_mask, dir / "brain_mask.nii.gz");
  save_nifti(cerebellum_mask, dir / "cerebellum_mask.nii.gz");
}

PipelineOptions PipelineOptions::from(const RegistrationOptions& base) {
  PipelineOptions o;
  o.mri_to_template = base;
  o.mri_to_template.dof = Dof::Affine12;
  o.mri_to_template.metric = Metric::NormalizedCrossCorrelation;
  o.template_to_std = base;
  o.template_to_std.dof = Dof::Affine12;
  o.template_to_std.metric = Metric::CorrelationRatio;
  o.pet_to_template = base;
  o.pet_to_template.dof = Dof::Rigid6;
  o.pet_to_template.metric = Metric::CorrelationRatio;
  o.pet_motion = base;
  o.pet_motion.dof = Dof::Rigid6;
  o.pet_motion.metric = Metric::NormalizedCrossCorrelation;
  return o;
}

SubjectVolumes load_subject_volumes(const SubjectRecord& subject, const Manifest& manifest) {
  SubjectVolumes out;
  out.id = subject.id;
  for (const auto& s : subject.mri) {
    out.mri.emplace_back(s.date, annotated(subject.id, "MRI " + s.date.iso(),
                                           [&] { return load_nifti(manifest.resolve(s.path)); }));
  }
  for (const auto& s : subject.pet) {
    std::vector<Volume3D> frames;
    for (const auto& f : s.frames) {
      const auto path = manifest.resolve(f);
      annotated(subject.id, "PET " + s.date.iso(), [&] {
        const Bytes bytes = read_file(path);
        const int n = nifti_frame_count(bytes);
        for (int t = 0; t < n; ++t) frames.push_back(read_nifti(bytes, t));
        return 0;
      });
    }
    out.pet.emplace_back(s.date, std::move(frames));
  }
  return out;
}

Volume3D apply_mask(const Volume3D& vol, const Volume3D& mask) {
  if (!vol.grid().matches(mask.grid())) throw Error(ErrorCode::GridMismatch, "mask grid differs from volume grid");
  Volume3D out(vol.grid(), 0.0f);
  out.data() = vol.data() * mask.data();
  return out;
}

std::pair<Volume3D, double> normalize_pet_reference(const Volume3D& pet, const Volume3D& reference_mask) {
  if (!pet.grid().matches(reference_mask.grid())) {
    throw Error(ErrorCode::GridMismatch, "reference mask is not on the PET grid");
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (Eigen::Index i = 0; i < pet.size(); ++i) {
    if (reference_mask.data()[i] > 0.5f) {
      sum += pet.data()[i];
      ++n;
    }
  }
  if (n == 0) throw Error(ErrorCode::EmptyCerebellumReference, "reference mask selects no PET voxels");
  const double mean = sum / static_cast<double>(n);
  if (!(mean > 0.0)) {
    throw Error(ErrorCode::EmptyCerebellumReference, fmt::format("reference mean {} is not positive", mean));
  }
  return {divide(pet, mean), mean};
}

Volume3D rederive_output(const Volume3D& native, const OutputProvenance& p, const PipelineAssets& assets) {
  const Volume3D scaled = p.scale == 1.0 ? native : divide(native, p.scale);
  return apply_mask(resample(scaled, p.native_to_standard, assets.grid(), p.interp), assets.brain_mask);
}

Volume3D rederive_from_raw(std::span<const Volume3D> raw, const OutputProvenance& p, const PipelineAssets& assets) {
  if (raw.empty()) throw Error(ErrorCode::InvalidArgument, "no raw volumes given");
  if (p.modality == Modality::MRI) {
    const BiasFieldModel model =
        BiasFieldModel::from_lattice(raw[0].grid(), p.bias_control_spacing, p.bias_levels, p.bias_coefficients);
    return rederive_output(correct(raw[0], model), p, assets);
  }
  if (p.frame_transforms.size() != raw.size()) {
    throw Error(ErrorCode::InvalidArgument, "frame count differs from the recorded frame transforms");
  }
  return rederive_output(mean_of_aligned(raw, p.frame_transforms), p, assets);
}

SubjectResult preprocess_subject(const SubjectVolumes& subject, const PipelineAssets& assets,
                                 const PipelineOptions& opts) {
  assets.validate();
  if (subject.mri.empty()) {
    throw Error(ErrorCode::InvalidArgument, fmt::format("subject {} has no MRI sessions", subject.id));
  }
  SubjectResult res;
  SubjectReport& report = res.report;
  report.subject_id = subject.id;

  std::vector<std::size_t> mri_order(subject.mri.size());
  std::iota(mri_order.begin(), mri_order.end(), 0);
  std::stable_sort(mri_order.begin(), mri_order.end(),
                   [&](std::size_t a, std::size_t b) { return subject.mri[a].first < subject.mri[b].first; });

  // (1) bias correction of every raw MRI
  std::vector<Volume3D> corrected;
  std::vector<BiasFieldModel> bias_models;
  for (std::size_t idx : mri_order) {
    const auto& [date, vol] = subject.mri[idx];
    annotated(subject.id, "MRI " + date.iso() + " bias correction", [&] {
      const BiasFieldModel model = estimate_bias(vol, std::nullopt, opts.bias);
      corrected.push_back(correct(vol, model));
      bias_models.push_back(model);
      return 0;
    });
  }

  // (2) average template on the first time point
  res.average_template = annotated(subject.id, "average template",
                                   [&] { return build_average_template(corrected, opts.mri_to_template); });
  const Volume3D& avg = res.average_template.image;
  report.template_build_transforms = res.average_template.transforms;
  for (const auto& r : res.average_template.registrations) {
    if (r.diverged) report.warnings.push_back("average template: registration budget exhausted");
  }

  // (4) template -> standard space
  const RegistrationResult to_std = annotated(subject.id, "template to standard", [&] {
    return register_affine(avg, assets.mni_template, opts.template_to_std);
  });
  report.template_to_standard = to_std.transform;
  if (to_std.diverged) report.warnings.push_back("template to standard: registration budget exhausted");

  // (3) + (5) + (6) MRI to template, concatenate, one resampling, skull strip
  for (std::size_t n = 0; n < corrected.size(); ++n) {
    const Date date = subject.mri[mri_order[n]].first;
    annotated(subject.id, "MRI " + date.iso(), [&] {
      const RegistrationResult r = register_affine(corrected[n], avg, opts.mri_to_template);
      OutputProvenance p;
      p.modality = Modality::MRI;
      p.date = date;
      p.native_to_template = r.transform;
      p.native_to_standard = compose(to_std.transform, r.transform);
      p.similarity = r.similarity;
      p.bias_iterations = bias_models[n].iterations_run;
      p.bias_control_spacing = opts.bias.control_spacing_mm;
      p.bias_levels = bias_models[n].levels_run;
      p.bias_coefficients = bias_models[n].coefficients();
      if (r.diverged) report.warnings.push_back("MRI " + date.iso() + ": registration budget exhausted");
      res.mri_out.push_back(rederive_output(corrected[n], p, assets));
      report.outputs.push_back(std::move(p));
      return 0;
    });
  }
  res.mri_native = std::move(corrected);

  // PET: motion correction, 6 DOF to the template, concatenation, reference
  // normalization in native space, one resampling, skull strip
  std::vector<std::size_t> pet_order(subject.pet.size());
  std::iota(pet_order.begin(), pet_order.end(), 0);
  std::stable_sort(pet_order.begin(), pet_order.end(),
                   [&](std::size_t a, std::size_t b) { return subject.pet[a].first < subject.pet[b].first; });
  for (std::size_t idx : pet_order) {
    const auto& [date, frames] = subject.pet[idx];
    annotated(subject.id, "PET " + date.iso(), [&] {
      const MotionCorrected mc = motion_correct_frames(frames, opts.pet_motion);
      const RegistrationResult r = register_affine(mc.mean, avg, opts.pet_to_template);
      OutputProvenance p;
      p.modality = Modality::PET;
      p.date = date;
      p.native_to_template = r.transform;
      p.native_to_standard = compose(to_std.transform, r.transform);
      p.frame_transforms = mc.transforms;
      p.similarity = r.similarity;
      const Volume3D reference = resample(assets.cerebellum_mask, p.native_to_standard.inverse(), mc.mean.grid(),
                                          Interpolation::NearestNeighbor);
      p.scale = normalize_pet_reference(mc.mean, reference).second;
      if (r.diverged) report.warnings.push_back("PET " + date.iso() + ": registration budget exhausted");
      res.pet_out.push_back(rederive_output(mc.mean, p, assets));
      res.pet_native.push_back(mc.mean);
      report.outputs.push_back(std::move(p));
      return 0;
    });
  }
  return res;
}

std::string report_to_json(const std::vector<SubjectReport>& reports) {
  json doc = json::array();
  for (const auto& r : reports) {
    json js;
    js["subject"] = r.subject_id;
    js["template_to_standard"] = transform_json(r.template_to_standard);
    js["template_build"] = json::array();
    for (const auto& t : r.template_build_transforms) js["template_build"].push_back(transform_json(t));
    js["outputs"] = json::array();
    for (const auto& o : r.outputs) {
      json jo;
      jo["modality"] = modality_name(o.modality);
      jo["date"] = o.date.iso();
      jo["native_to_standard"] = transform_json(o.native_to_standard);
      jo["native_to_template"] = transform_json(o.native_to_template);
      jo["scale"] = o.scale;
      jo["interpolation"] = o.interp == Interpolation::Trilinear ? "trilinear" : "nearest";
      jo["similarity"] = o.similarity;
      if (o.modality == Modality::MRI) {
        jo["bias_iterations"] = o.bias_iterations;
        jo["bias_control_spacing"] = o.bias_control_spacing;
        jo["bias_levels"] = o.bias_levels;
        jo["bias_coefficients"] = std::vector<double>(o.bias_coefficients.begin(), o.bias_coefficients.end());
      }
      if (!o.frame_transforms.empty()) {
        jo["frame_transforms"] = json::array();
        for (const auto& t : o.frame_transforms) jo["frame_transforms"].push_back(transform_json(t));
      }
      js["outputs"].push_back(std::move(jo));
    }
    js["warnings"] = r.warnings;
    doc.push_back(std::move(js));
  }
  return doc.dump(2) + "\n";
}

std::vector<SubjectReport> reports_from_json(std::string_view text) {
  std::vector<SubjectReport> out;
  try {
    for (const auto& js : json::parse(text)) {
      SubjectReport r;
      r.subject_id = js.at("subject").get<std::string>();
      r.template_to_standard = transform_from_json(js.at("template_to_standard"));
      for (const auto& t : js.at("template_build")) r.template_build_transforms.push_back(transform_from_json(t));
      for (const auto& jo : js.at("outputs")) {
        OutputProvenance o;
        const auto mod = jo.at("modality").get<std::string>();
        o.modality = mod == "PET" ? Modality::PET : Modality::MRI;
        o.date = Date::parse(jo.at("date").get<std::string>());
        o.native_to_standard = transform_from_json(jo.at("native_to_standard"));
        o.native_to_template = transform_from_json(jo.at("native_to_template"));
        o.scale = jo.at("scale").get<double>();
        o.interp = jo.value("interpolation", "trilinear") == "nearest" ? Interpolation::NearestNeighbor
                                                                      : Interpolation::Trilinear;
        o.similarity = jo.value("similarity", 0.0);
        o.bias_iterations = jo.value("bias_iterations", 0);
        o.bias_control_spacing = jo.value("bias_control_spacing", 0.0);
        o.bias_levels = jo.value("bias_levels", 0);
        const auto coeffs = jo.value("bias_coefficients", std::vector<double>{});
        o.bias_coefficients = Eigen::Map<const Eigen::ArrayXd>(coeffs.data(), static_cast<Eigen::Index>(coeffs.size()));
        for (const auto& t : jo.value("frame_transforms", json::array())) o.frame_transforms.push_back(transform_from_json(t));
        r.outputs.push_back(std::move(o));
      }
      r.warnings = js.value("warnings", std::vector<std::string>{});
      out.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, fmt::format("report: {}", e.what()));
  }
  return out;
}

}  // namespace neurofuse
