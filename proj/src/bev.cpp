#include "strobe/bev.hpp"

#include <algorithm>

namespace strobe::bev {

namespace {
// Guards against 1 ulp landing a boundary point in the lower cell
// (e.g. 73/0.2 evaluating just below 365).
constexpr double kIndexEps = 1e-7;

int cell_of(double v, double origin, double res) {
  return static_cast<int>(std::floor((v - origin) / res + kIndexEps));
}
}  // namespace

std::optional<std::array<int, 3>> voxel_index(const GridSpec& spec, double ex,
                                              double ey, double ez) {
  const int ix = cell_of(ex, spec.origin_x, spec.resolution);
  const int iy = cell_of(ey, spec.origin_y, spec.resolution);
  const int iz = cell_of(ez, spec.z_min, spec.z_res);
  if (ix < 0 || ix >= spec.width || iy < 0 || iy >= spec.height) return std::nullopt;
  if (iz < 0 || iz >= spec.z_channels()) return std::nullopt;
  return std::array<int, 3>{ix, iy, iz};
}

BevGrid voxelize_packet(const Packet& packet, const GridSpec& spec) {
  BevGrid grid;
  grid.spec = spec;
  grid.frame_pose = packet.ego_pose;
  grid.data = te::Tensor<float>({spec.z_channels(), spec.height, spec.width});
  for (const auto& p : packet.points) {
    double ex, ey;
    pose_apply_inverse(packet.ego_pose, p.x, p.y, ex, ey);
    if (auto idx = voxel_index(spec, ex, ey, p.z)) {
      grid.data.at((*idx)[2], (*idx)[1], (*idx)[0]) = 1.0f;
    }
  }
  return grid;
}

bool point_in_polygon(const std::vector<std::pair<double, double>>& poly, double px,
                      double py) {
  bool inside = false;
  const size_t n = poly.size();
  for (size_t i = 0, j = n - 1; i < n; j = i++) {
    const double xi = poly[i].first, yi = poly[i].second;
    const double xj = poly[j].first, yj = poly[j].second;
    const bool crosses = (yi > py) != (yj > py);
    if (crosses && px < (xj - xi) * (py - yi) / (yj - yi) + xi) inside = !inside;
  }
  return inside;
}

BevGrid rasterize_map(const MapLayerPolygons& map, const Pose2& frame_pose,
                      const GridSpec& spec) {
  BevGrid grid;
  grid.spec = spec;
  grid.frame_pose = frame_pose;
  grid.data = te::Tensor<float>({2, spec.height, spec.width});
  const std::vector<std::vector<std::pair<double, double>>>* layers[2] = {&map.roads,
                                                                          &map.crosswalks};
  for (int layer = 0; layer < 2; ++layer) {
    if (layers[layer]->empty()) continue;
    for (int iy = 0; iy < spec.height; ++iy) {
      const double ey = spec.origin_y + (iy + 0.5) * spec.resolution;
      for (int ix = 0; ix < spec.width; ++ix) {
        const double ex = spec.origin_x + (ix + 0.5) * spec.resolution;
        double wx, wy;
        pose_apply(frame_pose, ex, ey, wx, wy);
        for (const auto& poly : *layers[layer]) {
          if (point_in_polygon(poly, wx, wy)) {
            grid.data.at(layer, iy, ix) = 1.0f;
            break;
          }
        }
      }
    }
  }
  return grid;
}

std::optional<RegionRect> compute_region(const std::vector<std::array<int, 2>>& cells,
                                         int halo, int stride, int grid_w, int grid_h) {
  if (cells.empty()) return std::nullopt;
  int min_x = grid_w, max_x = -1, min_y = grid_h, max_y = -1;
  for (const auto& c : cells) {
    min_x = std::min(min_x, c[0]);
    max_x = std::max(max_x, c[0]);
    min_y = std::min(min_y, c[1]);
    max_y = std::max(max_y, c[1]);
  }
  auto floor_to = [stride](int v) { return (v >= 0 ? v / stride : (v - stride + 1) / stride) * stride; };
  auto ceil_to = [stride](int v) { return ((v + stride - 1) / stride) * stride; };
  RegionRect r;
  r.x0 = std::max(0, floor_to(min_x - halo));
  r.y0 = std::max(0, floor_to(min_y - halo));
  r.x1 = std::min(grid_w, ceil_to(max_x + 1 + halo));
  r.y1 = std::min(grid_h, ceil_to(max_y + 1 + halo));
  return r;
}

std::vector<std::array<int, 2>> packet_cells(const Packet& packet, const Pose2& frame,
                                             const GridSpec& spec) {
  std::vector<std::array<int, 2>> cells;
  cells.reserve(packet.points.size());
  for (const auto& p : packet.points) {
    double ex, ey;
    pose_apply_inverse(frame, p.x, p.y, ex, ey);
    if (auto idx = voxel_index(spec, ex, ey, p.z)) {
      cells.push_back({(*idx)[0], (*idx)[1]});
    }
  }
  return cells;
}

BevGrid realign_grid(const BevGrid& grid, const Pose2& new_pose) {
  BevGrid out;
  out.spec = grid.spec;
  out.frame_pose = new_pose;
  if (grid.frame_pose == new_pose) {
    out.data = grid.data;
    return out;
  }
  const auto a = realign_affine<float>(grid.frame_pose, new_pose, grid.spec, 0);
  out.data = te::bilinear_warp_fwd(grid.data, a);
  return out;
}

}  // namespace strobe::bev
