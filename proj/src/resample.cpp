#include "neurofuse/resample.hpp"

#include <cmath>
#include <vector>

namespace neurofuse {

namespace {

inline double fetch(const Volume3D& vol, int i, int j, int k) {
  return vol.contains(i, j, k) ? static_cast<double>(vol(i, j, k)) : 0.0;
}

}  // namespace

double sample_trilinear(const Volume3D& vol, const Eigen::Vector3d& p) {
  const int nx = vol.dims()[0], ny = vol.dims()[1], nz = vol.dims()[2];
  if (!(p.x() > -1.0 && p.y() > -1.0 && p.z() > -1.0 && p.x() < nx && p.y() < ny && p.z() < nz)) {
    return 0.0;
  }
  const double fx = std::floor(p.x()), fy = std::floor(p.y()), fz = std::floor(p.z());
  const int i = static_cast<int>(fx), j = static_cast<int>(fy), k = static_cast<int>(fz);
  const double tx = p.x() - fx, ty = p.y() - fy, tz = p.z() - fz;

  if (i >= 0 && j >= 0 && k >= 0 && i + 1 < nx && j + 1 < ny && k + 1 < nz) {
    const float* base = vol.data().data() + vol.index(i, j, k);
    const Eigen::Index sy = nx, sz = static_cast<Eigen::Index>(nx) * ny;
    const double c00 = base[0] + tx * (base[1] - static_cast<double>(base[0]));
    const double c10 = base[sy] + tx * (base[sy + 1] - static_cast<double>(base[sy]));
    const double c01 = base[sz] + tx * (base[sz + 1] - static_cast<double>(base[sz]));
    const double c11 = base[sy + sz] + tx * (base[sy + sz + 1] - static_cast<double>(base[sy + sz]));
    const double c0 = c00 + ty * (c10 - c00);
    const double c1 = c01 + ty * (c11 - c01);
    return c0 + tz * (c1 - c0);
  }

  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    const double wz = dz ? tz : 1.0 - tz;
    for (int dy = 0; dy < 2; ++dy) {
      const double wy = dy ? ty : 1.0 - ty;
      for (int dx = 0; dx < 2; ++dx) {
        const double wx = dx ? tx : 1.0 - tx;
        acc += wx * wy * wz * fetch(vol, i + dx, j + dy, k + dz);
      }
    }
  }
  return acc;
}

Volume3D resample(const Volume3D& moving, const AffineTransform& moving_to_fixed, const Grid& target,
                  Interpolation interp) {
  target.validate();
  const AffineTransform pull = moving_to_fixed.inverse();
  // target voxel -> target world -> moving world -> moving voxel
  const Eigen::Matrix4d m = moving.grid().world2vox() * pull.matrix * target.vox2world;
  const Eigen::Matrix3d lin = m.topLeftCorner<3, 3>();
  const Eigen::Vector3d shift = m.topRightCorner<3, 1>();

  Volume3D out(target, 0.0f);
  const Dims& d = target.dims;
  const int nx = moving.dims()[0], ny = moving.dims()[1], nz = moving.dims()[2];
  Eigen::Index idx = 0;
  for (int k = 0; k < d[2]; ++k) {
    for (int j = 0; j < d[1]; ++j) {
      const Eigen::Vector3d row = lin.col(1) * j + lin.col(2) * k + shift;
      for (int i = 0; i < d[0]; ++i, ++idx) {
        const Eigen::Vector3d p = row + lin.col(0) * i;
        if (interp == Interpolation::Trilinear) {
          out.data()[idx] = static_cast<float>(sample_trilinear(moving, p));
        } else {
          const int ri = static_cast<int>(std::floor(p.x() + 0.5));
          const int rj = static_cast<int>(std::floor(p.y() + 0.5));
          const int rk = static_cast<int>(std::floor(p.z() + 0.5));
          if (ri >= 0 && rj >= 0 && rk >= 0 && ri < nx && rj < ny && rk < nz) {
            out.data()[idx] = moving(ri, rj, rk);
          }
        }
      }
    }
  }
  return out;
}

Volume3D downsample_by_two(const Volume3D& vol) {
  const Dims& d = vol.dims();
  Dims nd;
  Eigen::Vector3d factor;
  for (std::size_t a = 0; a < 3; ++a) {
    const bool shrink = d[a] >= 2;
    nd[a] = shrink ? d[a] / 2 : d[a];
    factor[static_cast<Eigen::Index>(a)] = shrink ? 2.0 : 1.0;
  }
  Grid g;
  g.dims = nd;
  g.spacing = vol.spacing().cwiseProduct(factor);
  Eigen::Matrix4d step = Eigen::Matrix4d::Identity();
  step.diagonal().head<3>() = factor;
  step.topRightCorner<3, 1>() = (factor.array() - 1.0).matrix() * 0.5;
  g.vox2world = vol.vox2world() * step;

  Volume3D out(g, 0.0f);
  const int fx = static_cast<int>(factor.x()), fy = static_cast<int>(factor.y()), fz = static_cast<int>(factor.z());
  const double norm = 1.0 / (fx * fy * fz);
  for (int k = 0; k < nd[2]; ++k) {
    for (int j = 0; j < nd[1]; ++j) {
      for (int i = 0; i < nd[0]; ++i) {
        double acc = 0.0;
        for (int c = 0; c < fz; ++c)
          for (int b = 0; b < fy; ++b)
            for (int a = 0; a < fx; ++a) acc += vol(i * fx + a, j * fy + b, k * fz + c);
        out(i, j, k) = static_cast<float>(acc * norm);
      }
    }
  }
  return out;
}

Volume3D gaussian_blur(const Volume3D& vol, double sigma) {
  if (sigma <= 0.0) return vol;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int t = -radius; t <= radius; ++t) {
    const double w = std::exp(-0.5 * t * t / (sigma * sigma));
    kernel[static_cast<std::size_t>(t + radius)] = w;
    sum += w;
  }
  for (double& w : kernel) w /= sum;

  const Dims& d = vol.dims();
  std::vector<double> cur(vol.data().begin(), vol.data().end());
  std::vector<double> next(cur.size());
  const std::array<Eigen::Index, 3> stride{1, d[0], static_cast<Eigen::Index>(d[0]) * d[1]};
  for (std::size_t axis = 0; axis < 3; ++axis) {
    Eigen::Index idx = 0;
    for (int k = 0; k < d[2]; ++k) {
      for (int j = 0; j < d[1]; ++j) {
        for (int i = 0; i < d[0]; ++i, ++idx) {
          const int pos = axis == 0 ? i : (axis == 1 ? j : k);
          double acc = 0.0;
          for (int t = -radius; t <= radius; ++t) {
            const int q = pos + t;
            if (q < 0 || q >= d[axis]) continue;
            acc += kernel[static_cast<std::size_t>(t + radius)] *
                   cur[static_cast<std::size_t>(idx + t * stride[axis])];
          }
          next[static_cast<std::size_t>(idx)] = acc;
        }
      }
    }
    std::swap(cur, next);
  }
  Volume3D out(vol.grid(), 0.0f);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = static_cast<float>(cur[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace neurofuse
