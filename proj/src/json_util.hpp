#pragma once

#include <json.hpp>

#include "neurofuse/volume.hpp"

namespace neurofuse::detail {

inline nlohmann::json transform_json(const AffineTransform& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < 4; ++r) rows.push_back({t.matrix(r, 0), t.matrix(r, 1), t.matrix(r, 2), t.matrix(r, 3)});
  return {{"dof", dof_name(t.dof)}, {"matrix", rows}};
}

inline AffineTransform transform_from_json(const nlohmann::json& j) {
  AffineTransform t;
  t.dof = parse_dof(j.at("dof").get<std::string>());
  const auto& rows = j.at("matrix");
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      t.matrix(r, c) = rows.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
  return t;
}

inline nlohmann::json vector_json(const Eigen::Vector3d& v) { return {v[0], v[1], v[2]}; }

}  // namespace neurofuse::detail
