#pragma once

#include <cmath>

#include "neurofuse/volume.hpp"

namespace nftest {

using neurofuse::Grid;
using neurofuse::Volume3D;

/// Ellipsoidal head (0.6) with an inner core (1.0) on a 4 mm grid; the mask
/// covers the head.
struct TwoTissue {
  Volume3D image;
  Volume3D mask;
};

inline TwoTissue two_tissue(neurofuse::Dims d = {40, 40, 36}, double spacing = 4.0) {
  const Grid g = Grid::axis_aligned(d, Eigen::Vector3d::Constant(spacing));
  TwoTissue t{Volume3D(g), Volume3D(g)};
  const Eigen::Vector3d c = g.world_center();
  const Eigen::Vector3d outer(0.42 * d[0] * spacing, 0.42 * d[1] * spacing, 0.42 * d[2] * spacing);
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i) {
        const Eigen::Vector3d p = g.to_world(Eigen::Vector3d(i, j, k)) - c;
        const double r = p.cwiseQuotient(outer).norm();
        if (r > 1.0) continue;
        t.mask(i, j, k) = 1.0f;
        t.image(i, j, k) = r < 0.55 ? 1.0f : 0.6f;
      }
  return t;
}

/// exp(amp * sin(pi * x / X)) along the first voxel axis, X = axis extent.
inline Volume3D sine_field(const Grid& g, double amp) {
  Volume3D f(g, 1.0f);
  const double extent = (g.dims[0] - 1) * g.spacing[0];
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i)
        f(i, j, k) = static_cast<float>(std::exp(amp * std::sin(M_PI * i * g.spacing[0] / extent)));
  return f;
}

/// RMS over mask of (a - mean_a) - (b - mean_b), logs of positive fields.
inline double centered_log_rms(const Volume3D& a, const Volume3D& b, const Volume3D& mask) {
  double sa = 0, sb = 0, n = 0;
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    if (mask.data()[i] <= 0.5f) continue;
    sa += std::log(a.data()[i]);
    sb += std::log(b.data()[i]);
    n += 1;
  }
  const double ma = sa / n, mb = sb / n;
  double ss = 0;
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    if (mask.data()[i] <= 0.5f) continue;
    const double d = (std::log(a.data()[i]) - ma) - (std::log(b.data()[i]) - mb);
    ss += d * d;
  }
  return std::sqrt(ss / n);
}

}  // namespace nftest
