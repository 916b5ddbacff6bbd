#include "neurofuse/biasfield.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include <fmt/format.h>
#include <unsupported/Eigen/FFT>

namespace neurofuse {

namespace {

// Span index and the four basis weights for one coordinate along one axis.
struct AxisSample {
  int span = 0;
  std::array<double, 4> w{};
};

AxisSample axis_sample(double t_mm, double knot_mm, int spans) {
  const double u = t_mm / knot_mm;
  int j = static_cast<int>(std::floor(u));
  j = std::clamp(j, 0, spans - 1);
  const double f = u - j;
  AxisSample s;
  s.span = j;
  for (int a = 0; a < 4; ++a) s.w[static_cast<std::size_t>(a)] = cubic_bspline_basis(a, f);
  return s;
}

std::vector<double> subdivide(const std::vector<double>& c) {
  const int m = static_cast<int>(c.size()) - 3;
  std::vector<double> out(static_cast<std::size_t>(2 * m + 3));
  for (int k = 0; k <= m + 1; ++k) {
    out[static_cast<std::size_t>(2 * k)] = 0.5 * (c[static_cast<std::size_t>(k)] + c[static_cast<std::size_t>(k + 1)]);
  }
  for (int k = 1; k <= m + 1; ++k) {
    out[static_cast<std::size_t>(2 * k - 1)] =
        (c[static_cast<std::size_t>(k - 1)] + 6.0 * c[static_cast<std::size_t>(k)] + c[static_cast<std::size_t>(k + 1)]) / 8.0;
  }
  return out;
}

struct MaskedSamples {
  std::vector<Eigen::Index> voxel;      // linear index into the domain
  std::vector<std::array<AxisSample, 3>> basis;
};

MaskedSamples sample_lattice(const BiasFieldModel& model, const std::vector<Eigen::Index>& voxels) {
  const Grid& g = model.domain();
  std::array<std::vector<AxisSample>, 3> per_axis;
  for (std::size_t a = 0; a < 3; ++a) {
    const auto ea = static_cast<Eigen::Index>(a);
    per_axis[a].resize(static_cast<std::size_t>(g.dims[a]));
    for (int i = 0; i < g.dims[a]; ++i) {
      per_axis[a][static_cast<std::size_t>(i)] =
          axis_sample(i * g.spacing[ea], model.control_spacing()[ea], model.spans()[a]);
    }
  }
  MaskedSamples out;
  out.voxel = voxels;
  out.basis.reserve(voxels.size());
  const Eigen::Index nx = g.dims[0], ny = g.dims[1];
  for (Eigen::Index v : voxels) {
    const auto i = static_cast<std::size_t>(v % nx);
    const auto j = static_cast<std::size_t>((v / nx) % ny);
    const auto k = static_cast<std::size_t>(v / (nx * ny));
    out.basis.push_back({per_axis[0][i], per_axis[1][j], per_axis[2][k]});
  }
  return out;
}

double eval_at(const BiasFieldModel& model, const std::array<AxisSample, 3>& s) {
  const Dims ld = model.lattice_dims();
  const Eigen::ArrayXd& c = model.coefficients();
  double acc = 0.0;
  for (int cz = 0; cz < 4; ++cz) {
    const double wz = s[2].w[static_cast<std::size_t>(cz)];
    const Eigen::Index kz = s[2].span + cz;
    for (int cy = 0; cy < 4; ++cy) {
      const double wyz = wz * s[1].w[static_cast<std::size_t>(cy)];
      const Eigen::Index base = s[0].span + ld[0] * ((s[1].span + cy) + static_cast<Eigen::Index>(ld[1]) * kz);
      for (int cx = 0; cx < 4; ++cx) acc += wyz * s[0].w[static_cast<std::size_t>(cx)] * c[base + cx];
    }
  }
  return acc;
}

std::vector<double> eval_masked(const BiasFieldModel& model, const MaskedSamples& samples) {
  std::vector<double> out(samples.voxel.size());
  for (std::size_t n = 0; n < out.size(); ++n) out[n] = eval_at(model, samples.basis[n]);
  return out;
}

// Single-level scattered-data B-spline approximation (Lee, Wolberg & Shin):
// each sample spreads its value onto the 64 controls it touches, controls
// take the weight-squared average of those proposals.
Eigen::ArrayXd fit_bspline(const BiasFieldModel& model, const MaskedSamples& samples,
                           const std::vector<double>& values) {
  const Dims ld = model.lattice_dims();
  const Eigen::Index ncoef = static_cast<Eigen::Index>(ld[0]) * ld[1] * ld[2];
  Eigen::ArrayXd delta = Eigen::ArrayXd::Zero(ncoef);
  Eigen::ArrayXd omega = Eigen::ArrayXd::Zero(ncoef);
  std::array<double, 64> w;
  for (std::size_t n = 0; n < values.size(); ++n) {
    const auto& s = samples.basis[n];
    double w2sum = 0.0;
    for (int cz = 0, q = 0; cz < 4; ++cz)
      for (int cy = 0; cy < 4; ++cy)
        for (int cx = 0; cx < 4; ++cx, ++q) {
          const double wv = s[0].w[static_cast<std::size_t>(cx)] * s[1].w[static_cast<std::size_t>(cy)] *
                            s[2].w[static_cast<std::size_t>(cz)];
          w[static_cast<std::size_t>(q)] = wv;
          w2sum += wv * wv;
        }
    const double r = values[n] / w2sum;
    for (int cz = 0, q = 0; cz < 4; ++cz) {
      for (int cy = 0; cy < 4; ++cy) {
        const Eigen::Index base =
            s[0].span + ld[0] * ((s[1].span + cy) + static_cast<Eigen::Index>(ld[1]) * (s[2].span + cz));
        for (int cx = 0; cx < 4; ++cx, ++q) {
          const double wv = w[static_cast<std::size_t>(q)];
          const double w2 = wv * wv;
          delta[base + cx] += w2 * wv * r;
          omega[base + cx] += w2;
        }
      }
    }
  }
  return (omega > 0.0).select(delta / omega.max(1e-300), 0.0);
}

// Wiener-deconvolved histogram sharpening. Returns, per input value, the
// expected underlying log intensity given the observed one.
std::vector<double> sharpen(const std::vector<double>& values, const BiasFieldParams& params, bool& degenerate) {
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  const int bins = params.histogram_bins;
  degenerate = !(hi - lo > 1e-12 * std::max(1.0, std::abs(lo)));
  if (degenerate) return values;

  const double slope = (hi - lo) / (bins - 1);
  std::vector<double> hist(static_cast<std::size_t>(bins), 0.0);
  for (double v : values) {
    const double cidx = (v - lo) / slope;
    const int idx = std::min(static_cast<int>(std::floor(cidx)), bins - 1);
    const double offset = cidx - idx;
    hist[static_cast<std::size_t>(idx)] += 1.0 - offset;
    if (offset > 0.0 && idx + 1 < bins) hist[static_cast<std::size_t>(idx + 1)] += offset;
  }
  const int occupied = static_cast<int>(std::count_if(hist.begin(), hist.end(), [](double h) { return h > 0.0; }));
  if (occupied < 2) {
    degenerate = true;
    return values;
  }

  const int exponent = static_cast<int>(std::ceil(std::log2(static_cast<double>(bins)))) + 1;
  const int padded = 1 << exponent;
  const int pad_offset = (padded - bins) / 2;
  using cd = std::complex<double>;
  std::vector<cd> v(static_cast<std::size_t>(padded), 0.0);
  for (int n = 0; n < bins; ++n) v[static_cast<std::size_t>(n + pad_offset)] = hist[static_cast<std::size_t>(n)];

  Eigen::FFT<double> fft;
  std::vector<cd> vf;
  fft.fwd(vf, v);

  // Gaussian blur model, normalized to unit area on the bin lattice.
  const double scaled_fwhm = params.fwhm / slope;
  const double exp_factor = 4.0 * std::numbers::ln2 / (scaled_fwhm * scaled_fwhm);
  const double scale_factor = 2.0 * std::sqrt(std::numbers::ln2 / std::numbers::pi) / scaled_fwhm;
  std::vector<cd> f(static_cast<std::size_t>(padded), 0.0);
  f[0] = scale_factor;
  for (int n = 1; n <= padded / 2; ++n) {
    const double g = scale_factor * std::exp(-static_cast<double>(n) * n * exp_factor);
    f[static_cast<std::size_t>(n)] = g;
    f[static_cast<std::size_t>(padded - n)] = g;
  }
  std::vector<cd> ff;
  fft.fwd(ff, f);

  std::vector<cd> uf(static_cast<std::size_t>(padded));
  for (std::size_t n = 0; n < uf.size(); ++n) {
    const cd g = std::conj(ff[n]) / (std::conj(ff[n]) * ff[n] + params.wiener_noise);
    uf[n] = vf[n] * g;
  }
  std::vector<cd> u;
  fft.inv(u, uf);
  for (cd& x : u) x = std::max(x.real(), 0.0);

  std::vector<cd> numer(static_cast<std::size_t>(padded));
  for (int n = 0; n < padded; ++n) {
    numer[static_cast<std::size_t>(n)] = (lo + (n - pad_offset) * slope) * u[static_cast<std::size_t>(n)].real();
  }
  std::vector<cd> nf, df;
  fft.fwd(nf, numer);
  fft.fwd(df, u);
  for (std::size_t n = 0; n < nf.size(); ++n) {
    nf[n] *= ff[n];
    df[n] *= ff[n];
  }
  std::vector<cd> num_s, den_s;
  fft.inv(num_s, nf);
  fft.inv(den_s, df);

  std::vector<double> expected(static_cast<std::size_t>(bins));
  for (int n = 0; n < bins; ++n) {
    const double den = den_s[static_cast<std::size_t>(n + pad_offset)].real();
    expected[static_cast<std::size_t>(n)] =
        den != 0.0 ? num_s[static_cast<std::size_t>(n + pad_offset)].real() / den : 0.0;
  }

  std::vector<double> out(values.size());
  for (std::size_t n = 0; n < values.size(); ++n) {
    const double cidx = (values[n] - lo) / slope;
    const int idx = static_cast<int>(std::floor(cidx));
    if (idx < bins - 1) {
      const auto i = static_cast<std::size_t>(idx);
      out[n] = expected[i] + (expected[i + 1] - expected[i]) * (cidx - idx);
    } else {
      out[n] = expected.back();
    }
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

double cubic_bspline_basis(int idx, double t) {
  switch (idx) {
    case 0: return (1.0 - t) * (1.0 - t) * (1.0 - t) / 6.0;
    case 1: return (3.0 * t * t * t - 6.0 * t * t + 4.0) / 6.0;
    case 2: return (-3.0 * t * t * t + 3.0 * t * t + 3.0 * t + 1.0) / 6.0;
    case 3: return t * t * t / 6.0;
    default: return 0.0;
  }
}

BiasFieldModel BiasFieldModel::zero(const Grid& domain, double control_spacing_mm) {
  if (!(control_spacing_mm > 0.0)) throw Error(ErrorCode::InvalidArgument, "control spacing must be positive");
  domain.validate();
  BiasFieldModel m;
  m.domain_ = domain;
  for (std::size_t a = 0; a < 3; ++a) {
    const auto ea = static_cast<Eigen::Index>(a);
    const double extent = (domain.dims[a] - 1) * domain.spacing[ea];
    if (extent <= 0.0) {
      m.spans_[a] = 1;
      m.knot_mm_[ea] = domain.spacing[ea];
    } else {
      m.spans_[a] = std::max(1, static_cast<int>(std::ceil(extent / control_spacing_mm - 1e-9)));
      m.knot_mm_[ea] = extent / m.spans_[a];
    }
  }
  const Dims ld = m.lattice_dims();
  m.coeffs_ = Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(ld[0]) * ld[1] * ld[2]);
  return m;
}

BiasFieldModel BiasFieldModel::from_lattice(const Grid& domain, double control_spacing_mm, int levels,
                                            Eigen::ArrayXd coefficients) {
  BiasFieldModel m = zero(domain, control_spacing_mm);
  for (int l = 1; l < levels; ++l) m = m.refined();
  if (coefficients.size() != m.coeffs_.size()) {
    throw Error(ErrorCode::ShapeMismatch, "coefficient count does not match the lattice");
  }
  m.coeffs_ = std::move(coefficients);
  m.levels_run = levels;
  return m;
}

double& BiasFieldModel::coefficient(int a, int b, int c) {
  const Dims ld = lattice_dims();
  return coeffs_[a + static_cast<Eigen::Index>(ld[0]) * (b + static_cast<Eigen::Index>(ld[1]) * c)];
}

BiasFieldModel BiasFieldModel::refined() const {
  BiasFieldModel out = *this;
  Dims ld = lattice_dims();
  std::vector<double> cur(coeffs_.begin(), coeffs_.end());
  for (std::size_t axis = 0; axis < 3; ++axis) {
    Dims nd = ld;
    nd[axis] = 2 * (ld[axis] - 3) + 3;
    std::vector<double> next(static_cast<std::size_t>(nd[0]) * nd[1] * nd[2]);
    const std::array<int, 3> other = axis == 0 ? std::array<int, 3>{0, 1, 2}
                                     : axis == 1 ? std::array<int, 3>{1, 0, 2}
                                                 : std::array<int, 3>{2, 0, 1};
    const int n1 = ld[static_cast<std::size_t>(other[1])], n2 = ld[static_cast<std::size_t>(other[2])];
    std::vector<double> line(static_cast<std::size_t>(ld[axis]));
    for (int q2 = 0; q2 < n2; ++q2) {
      for (int q1 = 0; q1 < n1; ++q1) {
        auto idx = [&](const Dims& d, int along) {
          std::array<int, 3> p{};
          p[axis] = along;
          p[static_cast<std::size_t>(other[1])] = q1;
          p[static_cast<std::size_t>(other[2])] = q2;
          return static_cast<std::size_t>(p[0] + d[0] * (p[1] + static_cast<std::size_t>(d[1]) * p[2]));
        };
        for (int t = 0; t < ld[axis]; ++t) line[static_cast<std::size_t>(t)] = cur[idx(ld, t)];
        const std::vector<double> fine = subdivide(line);
        for (int t = 0; t < nd[axis]; ++t) next[idx(nd, t)] = fine[static_cast<std::size_t>(t)];
      }
    }
    cur = std::move(next);
    ld = nd;
    out.spans_[axis] = spans_[axis] * 2;
    out.knot_mm_[static_cast<Eigen::Index>(axis)] = knot_mm_[static_cast<Eigen::Index>(axis)] * 0.5;
  }
  out.coeffs_ = Eigen::Map<Eigen::ArrayXd>(cur.data(), static_cast<Eigen::Index>(cur.size()));
  return out;
}

double BiasFieldModel::log_field_at(const Eigen::Vector3d& p) const {
  std::array<AxisSample, 3> s;
  for (std::size_t a = 0; a < 3; ++a) {
    const auto ea = static_cast<Eigen::Index>(a);
    s[a] = axis_sample(p[ea] * domain_.spacing[ea], knot_mm_[ea], spans_[a]);
  }
  return eval_at(*this, s);
}

Volume3D otsu_mask(const Volume3D& vol) {
  const double lo = vol.data().minCoeff(), hi = vol.data().maxCoeff();
  Volume3D mask(vol.grid(), 0.0f);
  if (!(hi > lo)) return mask;
  constexpr int kBins = 256;
  std::array<double, kBins> hist{};
  const double width = (hi - lo) / kBins;
  for (float v : vol.data()) {
    const int b = std::min(kBins - 1, static_cast<int>((v - lo) / width));
    hist[static_cast<std::size_t>(b)] += 1.0;
  }
  const double total = static_cast<double>(vol.size());
  double sum_all = 0.0;
  for (int b = 0; b < kBins; ++b) sum_all += b * hist[static_cast<std::size_t>(b)];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_bin = 0;
  for (int b = 0; b < kBins - 1; ++b) {
    w0 += hist[static_cast<std::size_t>(b)];
    sum0 += b * hist[static_cast<std::size_t>(b)];
    const double w1 = total - w0;
    if (w0 <= 0.0 || w1 <= 0.0) continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_bin = b;
    }
  }
  const double threshold = lo + (best_bin + 1) * width;
  mask.data() = (vol.data() >= static_cast<float>(threshold)).cast<float>();
  return mask;
}

BiasFieldModel estimate_bias(const Volume3D& vol, const std::optional<Volume3D>& mask_in,
                             const BiasFieldParams& params) {
  if (params.histogram_bins < 2 || params.fitting_levels < 1 || params.iterations < 1 || !(params.fwhm > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "invalid bias-field parameters");
  }
  const Volume3D mask = mask_in ? *mask_in : otsu_mask(vol);
  if (!mask.grid().matches(vol.grid())) throw Error(ErrorCode::GridMismatch, "mask grid differs from image grid");

  std::vector<Eigen::Index> voxels;
  std::vector<double> log_input;
  for (Eigen::Index i = 0; i < vol.size(); ++i) {
    if (mask.data()[i] <= 0.5f) continue;
    const float v = vol.data()[i];
    if (!(v > 0.0f)) {
      throw Error(ErrorCode::NonPositiveIntensity, fmt::format("voxel {} inside mask has value {}", i, v));
    }
    voxels.push_back(i);
    log_input.push_back(std::log(static_cast<double>(v)));
  }
  if (voxels.empty()) throw Error(ErrorCode::EmptyMask, "mask selects no voxels");

  BiasFieldModel model = BiasFieldModel::zero(vol.grid(), params.control_spacing_mm);
  std::vector<double> log_field(voxels.size(), 0.0);
  std::vector<double> uncorrected = log_input;
  bool converged = false;
  int total_iterations = 0;

  for (int level = 0; level < params.fitting_levels; ++level) {
    if (level > 0) model = model.refined();
    const MaskedSamples samples = sample_lattice(model, voxels);
    converged = false;
    for (int it = 0; it < params.iterations; ++it) {
      bool degenerate = false;
      const std::vector<double> sharpened = sharpen(uncorrected, params, degenerate);
      if (degenerate) {
        if (total_iterations == 0) {
          throw Error(ErrorCode::DegenerateHistogram, "log-intensity histogram occupies fewer than 2 bins");
        }
        converged = true;
        break;
      }
      std::vector<double> residual(uncorrected.size());
      for (std::size_t n = 0; n < residual.size(); ++n) residual[n] = uncorrected[n] - sharpened[n];
      model.coefficients() += fit_bspline(model, samples, residual);

      std::vector<double> next = eval_masked(model, samples);
      const double shift = mean_of(next);
      model.coefficients() -= shift;  // partition of unity: constant offset
      double change = 0.0;
      for (std::size_t n = 0; n < next.size(); ++n) {
        next[n] -= shift;
        const double d = next[n] - log_field[n];
        change += d * d;
      }
      change = std::sqrt(change / static_cast<double>(next.size()));
      log_field = std::move(next);
      for (std::size_t n = 0; n < uncorrected.size(); ++n) uncorrected[n] = log_input[n] - log_field[n];
      ++total_iterations;
      if (change < params.convergence_tol) {
        converged = true;
        break;
      }
    }
  }

  // Rescale so that correction preserves the masked arithmetic mean.
  double mean_in = 0.0, mean_out = 0.0;
  for (std::size_t n = 0; n < voxels.size(); ++n) {
    mean_in += std::exp(log_input[n]);
    mean_out += std::exp(uncorrected[n]);
  }
  model.coefficients() += std::log(mean_out / mean_in);

  model.levels_run = params.fitting_levels;
  model.iterations_run = total_iterations;
  model.converged = converged;
  return model;
}

Volume3D evaluate_field(const BiasFieldModel& model, const Grid& grid) {
  grid.validate();
  const Grid& dom = model.domain();
  const Eigen::Matrix4d to_domain = dom.world2vox() * grid.vox2world;
  constexpr double kTol = 1e-6;
  Volume3D out(grid, 0.0f);

  if (grid.matches(dom, 1e-9)) {
    std::vector<Eigen::Index> all(static_cast<std::size_t>(out.size()));
    for (Eigen::Index i = 0; i < out.size(); ++i) all[static_cast<std::size_t>(i)] = i;
    const MaskedSamples s = sample_lattice(model, all);
    for (std::size_t n = 0; n < all.size(); ++n) {
      out.data()[static_cast<Eigen::Index>(n)] = static_cast<float>(std::exp(eval_at(model, s.basis[n])));
    }
    return out;
  }

  Eigen::Index idx = 0;
  for (int k = 0; k < grid.dims[2]; ++k) {
    for (int j = 0; j < grid.dims[1]; ++j) {
      for (int i = 0; i < grid.dims[0]; ++i, ++idx) {
        const Eigen::Vector3d p = to_domain.topLeftCorner<3, 3>() * Eigen::Vector3d(i, j, k) +
                                  to_domain.topRightCorner<3, 1>();
        for (int a = 0; a < 3; ++a) {
          if (p[a] < -kTol || p[a] > dom.dims[static_cast<std::size_t>(a)] - 1 + kTol) {
            throw Error(ErrorCode::GridOutsideDomain,
                        fmt::format("voxel ({},{},{}) maps outside the fitted field domain", i, j, k));
          }
        }
        out.data()[idx] = static_cast<float>(std::exp(model.log_field_at(p)));
      }
    }
  }
  return out;
}

Volume3D correct(const Volume3D& vol, const BiasFieldModel& model) {
  const Volume3D field = evaluate_field(model, vol.grid());
  Volume3D out(vol.grid(), 0.0f);
  out.data() = (vol.data().cast<double>() / field.data().cast<double>()).cast<float>();
  return out;
}

}  // namespace neurofuse
