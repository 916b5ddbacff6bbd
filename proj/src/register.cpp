#include "neurofuse/register.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "neurofuse/resample.hpp"

namespace neurofuse {

namespace {

constexpr double kGolden = 0.6180339887498949;

bool is_constant(const Volume3D& v) { return v.size() == 0 || v.data().maxCoeff() == v.data().minCoeff(); }

// Precomputed fixed-image support for repeated similarity evaluation.
class SimilarityEvaluator {
 public:
  SimilarityEvaluator(const Volume3D& moving, const Volume3D& fixed, Metric metric, int bins)
      : moving_(moving), metric_(metric), bins_(std::max(2, bins)) {
    const Grid& g = fixed.grid();
    double lo = std::numeric_limits<double>::max(), hi = std::numeric_limits<double>::lowest();
    for (int k = 0; k < g.dims[2]; ++k)
      for (int j = 0; j < g.dims[1]; ++j)
        for (int i = 0; i < g.dims[0]; ++i) {
          const float v = fixed(i, j, k);
          if (!(v > 0.0f)) continue;
          world_.push_back(g.to_world(Eigen::Vector3d(i, j, k)));
          values_.push_back(v);
          lo = std::min(lo, static_cast<double>(v));
          hi = std::max(hi, static_cast<double>(v));
        }
    bin_.resize(values_.size());
    const double width = hi > lo ? (hi - lo) / bins_ : 1.0;
    for (std::size_t n = 0; n < values_.size(); ++n) {
      bin_[n] = std::min(bins_ - 1, static_cast<int>((values_[n] - lo) / width));
    }
  }

  bool empty() const { return values_.empty(); }

  double operator()(const AffineTransform& moving_to_fixed) const {
    const Eigen::Matrix4d m = moving_.grid().world2vox() * moving_to_fixed.inverse().matrix;
    const Eigen::Matrix3d lin = m.topLeftCorner<3, 3>();
    const Eigen::Vector3d shift = m.topRightCorner<3, 1>();
    const std::size_t n = values_.size();
    if (metric_ == Metric::NormalizedCrossCorrelation) {
      double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
      for (std::size_t q = 0; q < n; ++q) {
        const double x = sample_trilinear(moving_, lin * world_[q] + shift);
        const double y = values_[q];
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
      }
      const double dn = static_cast<double>(n);
      const double vx = sxx - sx * sx / dn, vy = syy - sy * sy / dn;
      if (vx <= 1e-12 * std::max(1.0, sxx) || vy <= 0.0) return -1.0;
      return (sxy - sx * sy / dn) / std::sqrt(vx * vy);
    }
    std::vector<double> cnt(static_cast<std::size_t>(bins_), 0.0), s1(cnt), s2(cnt);
    double t1 = 0, t2 = 0;
    for (std::size_t q = 0; q < n; ++q) {
      const double x = sample_trilinear(moving_, lin * world_[q] + shift);
      const auto b = static_cast<std::size_t>(bin_[q]);
      cnt[b] += 1.0;
      s1[b] += x;
      s2[b] += x * x;
      t1 += x;
      t2 += x * x;
    }
    const double total = t2 - t1 * t1 / static_cast<double>(n);
    if (total <= 1e-12 * std::max(1.0, t2)) return 0.0;
    double within = 0.0;
    for (std::size_t b = 0; b < cnt.size(); ++b) {
      if (cnt[b] > 0.0) within += s2[b] - s1[b] * s1[b] / cnt[b];
    }
    return 1.0 - within / total;
  }

 private:
  const Volume3D& moving_;
  Metric metric_;
  int bins_;
  std::vector<Eigen::Vector3d> world_;
  std::vector<double> values_;
  std::vector<int> bin_;
};

class CoordinateSearch {
 public:
  CoordinateSearch(const SimilarityEvaluator& eval, const Eigen::Vector3d& center, Dof dof, int budget)
      : eval_(eval), center_(center), dof_(dof), budget_(budget) {}

  double evaluate(const AffineParameters& p) {
    ++evals_;
    return eval_(p.to_transform(center_, dof_));
  }

  bool exhausted() const { return evals_ >= budget_; }
  int evaluations() const { return evals_; }

  // Maximizes along one coordinate, starting from `best` at score `score`.
  void line_search(AffineParameters& best, double& score, std::size_t axis, double step) {
    auto f = [&](double x) {
      AffineParameters q = best;
      q.values[axis] = x;
      return evaluate(q);
    };
    double c = best.values[axis], fc = score;
    double a = c - step, b = c + step;
    double fa = f(a), fb = f(b);
    double best_x = c, best_f = fc;
    auto track = [&](double x, double fx) {
      if (fx > best_f) {
        best_f = fx;
        best_x = x;
      }
    };
    track(a, fa);
    track(b, fb);
    for (int expand = 0; expand < 6 && (fa > fc || fb > fc) && !exhausted(); ++expand) {
      if (fa > fb) {
        b = c;
        fb = fc;
        c = a;
        fc = fa;
        a = c - step;
        fa = f(a);
        track(a, fa);
      } else {
        a = c;
        fa = fc;
        c = b;
        fc = fb;
        b = c + step;
        fb = f(b);
        track(b, fb);
      }
    }
    double x1 = b - kGolden * (b - a), x2 = a + kGolden * (b - a);
    double f1 = f(x1), f2 = f(x2);
    track(x1, f1);
    track(x2, f2);
    while ((b - a) > 0.02 * step && !exhausted()) {
      if (f1 > f2) {
        b = x2;
        x2 = x1;
        f2 = f1;
        x1 = b - kGolden * (b - a);
        f1 = f(x1);
        track(x1, f1);
      } else {
        a = x1;
        x1 = x2;
        f1 = f2;
        x2 = a + kGolden * (b - a);
        f2 = f(x2);
        track(x2, f2);
      }
    }
    if (best_f > score) {
      best.values[axis] = best_x;
      score = best_f;
    }
  }

 private:
  const SimilarityEvaluator& eval_;
  Eigen::Vector3d center_;
  Dof dof_;
  int budget_;
  int evals_ = 0;
};

std::vector<Volume3D> pyramid(const Volume3D& vol, int levels) {
  std::vector<Volume3D> out{vol};
  for (int l = 1; l < levels; ++l) out.push_back(downsample_by_two(out.back()));
  return out;
}

int usable_levels(const Volume3D& a, const Volume3D& b, int requested) {
  int levels = std::max(1, requested);
  auto min_dim = [](const Volume3D& v) { return *std::min_element(v.dims().begin(), v.dims().end()); };
  const int smallest = std::min(min_dim(a), min_dim(b));
  while (levels > 1 && (smallest >> (levels - 1)) < 4) --levels;
  return levels;
}

}  // namespace

const char* metric_name(Metric m) noexcept {
  return m == Metric::NormalizedCrossCorrelation ? "NormalizedCrossCorrelation" : "CorrelationRatio";
}

Metric parse_metric(std::string_view name) {
  if (name == "NormalizedCrossCorrelation" || name == "ncc") return Metric::NormalizedCrossCorrelation;
  if (name == "CorrelationRatio" || name == "cr") return Metric::CorrelationRatio;
  throw Error(ErrorCode::ParseError, fmt::format("unknown metric '{}'", name));
}

AffineTransform AffineParameters::to_transform(const Eigen::Vector3d& center, Dof dof) const {
  const Eigen::Vector3d r = rotation();
  const Eigen::Matrix3d rot = (Eigen::AngleAxisd(r.z(), Eigen::Vector3d::UnitZ()) *
                               Eigen::AngleAxisd(r.y(), Eigen::Vector3d::UnitY()) *
                               Eigen::AngleAxisd(r.x(), Eigen::Vector3d::UnitX()))
                                  .toRotationMatrix();
  Eigen::Matrix3d lin = rot;
  if (dof == Dof::Affine12) {
    Eigen::Matrix3d shear = Eigen::Matrix3d::Identity();
    shear(0, 1) = values[9];
    shear(0, 2) = values[10];
    shear(1, 2) = values[11];
    const Eigen::Vector3d scale(std::exp(values[6]), std::exp(values[7]), std::exp(values[8]));
    lin = rot * shear * scale.asDiagonal();
  }
  AffineTransform t;
  t.dof = dof;
  t.matrix.topLeftCorner<3, 3>() = lin;
  t.matrix.topRightCorner<3, 1>() = center + translation() - lin * center;
  return t;
}

double similarity(const Volume3D& moving, const Volume3D& fixed, const AffineTransform& moving_to_fixed,
                  Metric metric, int histogram_bins) {
  const SimilarityEvaluator eval(moving, fixed, metric, histogram_bins);
  if (eval.empty()) throw Error(ErrorCode::ConstantImage, "fixed image has no positive support");
  return eval(moving_to_fixed);
}

Eigen::Vector3d center_of_mass(const Volume3D& vol) {
  Eigen::Vector3d acc = Eigen::Vector3d::Zero();
  double mass = 0.0;
  for (int k = 0; k < vol.dims()[2]; ++k)
    for (int j = 0; j < vol.dims()[1]; ++j)
      for (int i = 0; i < vol.dims()[0]; ++i) {
        const double v = vol(i, j, k);
        if (v <= 0.0) continue;
        acc += v * Eigen::Vector3d(i, j, k);
        mass += v;
      }
  if (mass <= 0.0) return vol.grid().world_center();
  return vol.grid().to_world(acc / mass);
}

RegistrationResult register_affine(const Volume3D& moving, const Volume3D& fixed, const RegistrationOptions& opts) {
  if (is_constant(moving)) throw Error(ErrorCode::ConstantImage, "moving image is constant");
  if (is_constant(fixed)) throw Error(ErrorCode::ConstantImage, "fixed image is constant");

  const int levels = usable_levels(moving, fixed, opts.pyramid_levels);
  const std::vector<Volume3D> mov_pyr = pyramid(moving, levels);
  const std::vector<Volume3D> fix_pyr = pyramid(fixed, levels);

  RegistrationResult result;
  result.center = moving.grid().world_center();
  if (opts.init_center_of_mass) {
    const Eigen::Vector3d shift = center_of_mass(fixed) - center_of_mass(moving);
    for (int a = 0; a < 3; ++a) result.parameters.values[static_cast<std::size_t>(a)] = shift[a];
  }

  const std::size_t nparams = opts.dof == Dof::Rigid6 ? 6 : 12;
  std::vector<std::size_t> order(nparams);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(opts.seed);

  for (int level = levels - 1; level >= 0; --level) {
    const auto lvl = static_cast<std::size_t>(level);
    const SimilarityEvaluator eval(mov_pyr[lvl], fix_pyr[lvl], opts.metric, opts.histogram_bins);
    if (eval.empty()) continue;
    CoordinateSearch search(eval, result.center, opts.dof, opts.max_evals_per_level);

    const double voxel = fix_pyr[lvl].spacing().maxCoeff();
    const double grow = std::ldexp(1.0, level);
    std::array<double, 12> steps{};
    for (std::size_t p = 0; p < 12; ++p) {
      if (p < 3) steps[p] = 2.0 * voxel;
      else if (p < 6) steps[p] = 0.05 * grow;
      else steps[p] = 0.02 * grow;
    }

    double score = search.evaluate(result.parameters);
    constexpr int kHalvings = 3;
    constexpr int kMaxSweeps = 8;
    bool converged = false;
    for (int h = 0; h <= kHalvings && !search.exhausted(); ++h) {
      for (int sweep = 0; sweep < kMaxSweeps && !search.exhausted(); ++sweep) {
        // seeded Fisher-Yates keeps the visiting order reproducible
        for (std::size_t i = nparams - 1; i > 0; --i) {
          std::swap(order[i], order[static_cast<std::size_t>(rng() % (i + 1))]);
        }
        const double before = score;
        for (std::size_t p : order) {
          if (search.exhausted()) break;
          search.line_search(result.parameters, score, p, steps[p]);
        }
        if (score - before < opts.convergence_tol) break;
      }
      for (double& s : steps) s *= 0.5;
      if (h == kHalvings) converged = true;
    }
    if (!converged) result.diverged = true;
    result.evaluations += search.evaluations();
  }

  result.transform = result.parameters.to_transform(result.center, opts.dof);
  result.similarity = similarity(moving, fixed, result.transform, opts.metric, opts.histogram_bins);
  return result;
}

Volume3D mean_of_aligned(std::span<const Volume3D> scans, std::span<const AffineTransform> transforms) {
  if (scans.empty() || scans.size() != transforms.size()) {
    throw Error(ErrorCode::InvalidArgument, "need one transform per scan");
  }
  const Grid& ref = scans[0].grid();
  Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(scans[0].size());
  for (std::size_t i = 0; i < scans.size(); ++i) {
    const bool same = transforms[i].matrix == Eigen::Matrix4d::Identity() && scans[i].grid().matches(ref, 0.0);
    acc += same ? scans[i].data().cast<double>() : resample(scans[i], transforms[i], ref).data().cast<double>();
  }
  return Volume3D(ref, (acc / static_cast<double>(scans.size())).cast<float>());
}

AverageTemplate build_average_template(std::span<const Volume3D> scans, const RegistrationOptions& opts) {
  if (scans.empty()) throw Error(ErrorCode::InvalidArgument, "average template needs at least one scan");
  AverageTemplate out;
  out.transforms.push_back(AffineTransform::identity());
  for (std::size_t i = 1; i < scans.size(); ++i) {
    RegistrationResult r = register_affine(scans[i], scans[0], opts);
    out.transforms.push_back(r.transform);
    out.registrations.push_back(std::move(r));
  }
  out.image = mean_of_aligned(scans, out.transforms);
  return out;
}

MotionCorrected motion_correct_frames(std::span<const Volume3D> frames, RegistrationOptions opts) {
  if (frames.empty()) throw Error(ErrorCode::InvalidArgument, "motion correction needs at least one frame");
  for (const Volume3D& f : frames) {
    if (!f.grid().matches(frames[0].grid())) throw Error(ErrorCode::GridMismatch, "PET frames do not share a grid");
  }
  opts.dof = Dof::Rigid6;
  MotionCorrected out;
  out.transforms.push_back(AffineTransform::identity());
  for (std::size_t i = 1; i < frames.size(); ++i) {
    out.transforms.push_back(register_affine(frames[i], frames[0], opts).transform);
  }
  out.mean = mean_of_aligned(frames, out.transforms);
  return out;
}

double mean_displacement(const AffineTransform& a, const AffineTransform& b, const Grid& grid, const Volume3D* mask) {
  if (mask && !mask->grid().matches(grid)) throw Error(ErrorCode::GridMismatch, "mask grid differs");
  const Eigen::Matrix3d to_vox = grid.vox2world.topLeftCorner<3, 3>().inverse();
  double total = 0.0;
  std::size_t count = 0;
  for (int k = 0; k < grid.dims[2]; ++k)
    for (int j = 0; j < grid.dims[1]; ++j)
      for (int i = 0; i < grid.dims[0]; ++i) {
        if (mask && !((*mask)(i, j, k) > 0.0f)) continue;
        const Eigen::Vector3d w = grid.to_world(Eigen::Vector3d(i, j, k));
        total += (to_vox * (a.apply(w) - b.apply(w))).norm();
        ++count;
      }
  return count ? total / static_cast<double>(count) : 0.0;
}

}  // namespace neurofuse
