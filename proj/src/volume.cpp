#include "neurofuse/volume.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace neurofuse {

Grid Grid::axis_aligned(const Dims& dims, const Eigen::Vector3d& spacing) {
  Grid g;
  g.dims = dims;
  g.spacing = spacing;
  g.vox2world = Eigen::Matrix4d::Identity();
  g.vox2world.diagonal().head<3>() = spacing;
  return g;
}

void Grid::validate() const {
  for (int d : dims) {
    if (d <= 0) throw Error(ErrorCode::NonPositiveDim, fmt::format("dimension {} is not positive", d));
  }
  if ((spacing.array() <= 0.0).any() || !spacing.allFinite()) {
    throw Error(ErrorCode::InvalidArgument, "voxel spacing must be positive");
  }
  if (std::abs(vox2world.topLeftCorner<3, 3>().determinant()) < 1e-12) {
    throw Error(ErrorCode::SingularTransform, "vox2world linear part is singular");
  }
}

Eigen::Matrix4d Grid::world2vox() const {
  Eigen::Matrix4d inv = Eigen::Matrix4d::Identity();
  const Eigen::Matrix3d lin_inv = vox2world.topLeftCorner<3, 3>().inverse();
  inv.topLeftCorner<3, 3>() = lin_inv;
  inv.topRightCorner<3, 1>() = -lin_inv * vox2world.topRightCorner<3, 1>();
  return inv;
}

Eigen::Vector3d Grid::to_world(const Eigen::Vector3d& voxel) const {
  return vox2world.topLeftCorner<3, 3>() * voxel + vox2world.topRightCorner<3, 1>();
}

Eigen::Vector3d Grid::to_voxel(const Eigen::Vector3d& world) const {
  return vox2world.topLeftCorner<3, 3>().inverse() * (world - vox2world.topRightCorner<3, 1>());
}

Eigen::Vector3d Grid::world_center() const {
  const Eigen::Vector3d c((dims[0] - 1) * 0.5, (dims[1] - 1) * 0.5, (dims[2] - 1) * 0.5);
  return to_world(c);
}

bool Grid::matches(const Grid& other, double tol) const {
  return dims == other.dims && (spacing - other.spacing).cwiseAbs().maxCoeff() <= tol &&
         (vox2world - other.vox2world).cwiseAbs().maxCoeff() <= tol;
}

const char* dof_name(Dof dof) noexcept { return dof == Dof::Rigid6 ? "Rigid6" : "Affine12"; }

Dof parse_dof(std::string_view name) {
  if (name == "Rigid6" || name == "6") return Dof::Rigid6;
  if (name == "Affine12" || name == "12") return Dof::Affine12;
  throw Error(ErrorCode::ParseError, fmt::format("unknown DOF tag '{}'", name));
}

AffineTransform AffineTransform::translation(const Eigen::Vector3d& offset) {
  AffineTransform t;
  t.matrix.topRightCorner<3, 1>() = offset;
  return t;
}

AffineTransform AffineTransform::inverse() const {
  const Eigen::Matrix3d lin = matrix.topLeftCorner<3, 3>();
  if (std::abs(lin.determinant()) < 1e-12) {
    throw Error(ErrorCode::SingularTransform, "transform linear part is singular");
  }
  AffineTransform inv;
  inv.dof = dof;
  const Eigen::Matrix3d lin_inv = dof == Dof::Rigid6 ? Eigen::Matrix3d(lin.transpose()) : lin.inverse();
  inv.matrix.topLeftCorner<3, 3>() = lin_inv;
  inv.matrix.topRightCorner<3, 1>() = -lin_inv * matrix.topRightCorner<3, 1>();
  return inv;
}

bool AffineTransform::is_valid(double tol) const {
  if (!matrix.allFinite()) return false;
  if (matrix.row(3) != Eigen::RowVector4d(0, 0, 0, 1)) return false;
  if (dof == Dof::Rigid6) {
    const Eigen::Matrix3d r = matrix.topLeftCorner<3, 3>();
    if ((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  }
  return true;
}

AffineTransform compose(const AffineTransform& outer, const AffineTransform& inner) {
  AffineTransform out;
  out.matrix = outer.matrix * inner.matrix;
  out.matrix.row(3) << 0, 0, 0, 1;
  out.dof = (outer.dof == Dof::Rigid6 && inner.dof == Dof::Rigid6) ? Dof::Rigid6 : Dof::Affine12;
  return out;
}

std::string format_transform(const AffineTransform& t) {
  std::string out = fmt::format("# dof: {}\n", dof_name(t.dof));
  for (int r = 0; r < 4; ++r) {
    out += fmt::format("{:.17g} {:.17g} {:.17g} {:.17g}\n", t.matrix(r, 0), t.matrix(r, 1),
                       t.matrix(r, 2), t.matrix(r, 3));
  }
  return out;
}

AffineTransform parse_transform(std::string_view text) {
  AffineTransform t;
  t.dof = Dof::Affine12;
  std::istringstream in{std::string(text)};
  std::string line;
  std::vector<double> values;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    if (line[first] == '#') {
      const auto pos = line.find("dof:");
      if (pos != std::string::npos) {
        std::istringstream tag(line.substr(pos + 4));
        std::string name;
        tag >> name;
        t.dof = parse_dof(name);
      }
      continue;
    }
    std::istringstream row(line);
    std::string tok;
    while (row >> tok) {
      try {
        values.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw Error(ErrorCode::ParseError, fmt::format("bad transform entry '{}'", tok));
      }
    }
  }
  if (values.size() != 16) {
    throw Error(ErrorCode::ParseError, fmt::format("expected 16 transform entries, got {}", values.size()));
  }
  for (int i = 0; i < 16; ++i) t.matrix(i / 4, i % 4) = values[static_cast<std::size_t>(i)];
  if (!t.is_valid(1e-6)) {
    throw Error(ErrorCode::ParseError, "transform is not a valid homogeneous matrix for its DOF tag");
  }
  return t;
}

void save_transform(const AffineTransform& t, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << format_transform(t);
}

AffineTransform load_transform(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_transform(ss.str());
}

}  // namespace neurofuse
