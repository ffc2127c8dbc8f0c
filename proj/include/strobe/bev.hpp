#pragma once

#include <optional>
#include <vector>

#include "strobe/geometry.hpp"
#include "strobe/te.hpp"

namespace strobe::bev {

// Scale-0 grid geometry. The grid is axis-aligned to an ego pose; origin is
// the world position of the corner of cell (0,0) expressed in that frame.
struct GridSpec {
  double origin_x = -72.0;  // ego-frame meters of cell (0,0) corner
  double origin_y = -72.0;
  double resolution = 0.2;  // meters per cell
  int width = 720;          // cells (x)
  int height = 720;         // cells (y)
  double z_min = -2.0;
  double z_max = 4.0;
  double z_res = 0.2;

  int z_channels() const {
    return static_cast<int>(std::lround((z_max - z_min) / z_res));
  }
};

struct BevGrid {
  GridSpec spec;
  Pose2 frame_pose;  // the ego pose the grid is axis-aligned to
  te::Tensor<float> data;  // (C, H, W)
};

struct RegionRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // cell indices, end-exclusive

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool empty() const { return x1 <= x0 || y1 <= y0; }
  bool operator==(const RegionRect&) const = default;

  RegionRect at_scale(int s) const {
    return RegionRect{x0 >> s, y0 >> s, x1 >> s, y1 >> s};
  }
};

// Binary occupancy rasterization of a packet in the packet's ego frame.
BevGrid voxelize_packet(const Packet& packet, const GridSpec& spec);

// Cell index of an ego-frame point; nullopt when outside the grid or z range.
std::optional<std::array<int, 3>> voxel_index(const GridSpec& spec, double ex,
                                              double ey, double ez);

struct MapLayerPolygons {
  // Each polygon is a closed ring of world-frame vertices.
  std::vector<std::vector<std::pair<double, double>>> roads;
  std::vector<std::vector<std::pair<double, double>>> crosswalks;
};

// Two binary channels (road, crosswalk); a cell is set iff its center lies
// inside any polygon of the layer.
BevGrid rasterize_map(const MapLayerPolygons& map, const Pose2& frame_pose,
                      const GridSpec& spec);

bool point_in_polygon(const std::vector<std::pair<double, double>>& poly, double px,
                      double py);

// Minimal rectangle enclosing the given cells, expanded by `halo`, rounded
// outward to multiples of `stride` and clamped to the grid. Returns nullopt
// for an empty cell set (the caller skips the network pass).
std::optional<RegionRect> compute_region(const std::vector<std::array<int, 2>>& cells,
                                         int halo, int stride, int grid_w, int grid_h);

// In-grid cell indices of a packet's points in the given frame.
std::vector<std::array<int, 2>> packet_cells(const Packet& packet, const Pose2& frame,
                                             const GridSpec& spec);

// Affine (output pixel -> source pixel) realigning a grid axis-aligned to
// `old_pose` into one axis-aligned to `new_pose` at the given scale.
template <class T>
te::Affine<T> realign_affine(const Pose2& old_pose, const Pose2& new_pose,
                             const GridSpec& spec, int scale) {
  const double res = spec.resolution * static_cast<double>(1 << scale);
  // Output cell center (ox, oy) -> ego-new meters -> world -> ego-old -> cell.
  const Pose2 rel = pose_compose(pose_inverse(old_pose), new_pose);
  const double c = std::cos(rel.yaw), s = std::sin(rel.yaw);
  te::Affine<T> a;
  // meters_new = origin + (i + 0.5) * res ; meters_old = R * meters_new + t
  // pixel_old = (meters_old - origin) / res - 0.5
  a[0] = static_cast<T>(c);
  a[1] = static_cast<T>(-s);
  a[3] = static_cast<T>(s);
  a[4] = static_cast<T>(c);
  const double mx0 = spec.origin_x + 0.5 * res;
  const double my0 = spec.origin_y + 0.5 * res;
  const double tx = c * mx0 - s * my0 + rel.x;
  const double ty = s * mx0 + c * my0 + rel.y;
  a[2] = static_cast<T>((tx - spec.origin_x) / res - 0.5);
  a[5] = static_cast<T>((ty - spec.origin_y) / res - 0.5);
  return a;
}

// Bilinear resampling of grid contents into a grid axis-aligned to new_pose.
BevGrid realign_grid(const BevGrid& grid, const Pose2& new_pose);

}  // namespace strobe::bev
