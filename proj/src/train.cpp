#include "strobe/train.hpp"

namespace strobe::train {

TargetMap assign_targets(const std::vector<sim::LabelAtEmission>& labels,
                         const net::AnchorGrid& anchors, const Pose2& ego_pose) {
  TargetMap out;
  out.fh = anchors.height();
  out.fw = anchors.width();
  for (int c = 0; c < kNumClasses; ++c) {
    out.positive_mask[static_cast<size_t>(c)].assign(
        static_cast<size_t>(out.fh) * static_cast<size_t>(out.fw), 0);
  }
  for (const auto& label : labels) {
    double ex, ey;
    pose_apply_inverse(ego_pose, label.pose.x, label.pose.y, ex, ey);
    const double fx = (ex - anchors.origin_x) / anchors.resolution;
    const double fy = (ey - anchors.origin_y) / anchors.resolution;
    const int gx = static_cast<int>(std::floor(fx));
    const int gy = static_cast<int>(std::floor(fy));
    const int j = gx - anchors.fused_region.x0;
    const int i = gy - anchors.fused_region.y0;
    if (i < 0 || i >= out.fh || j < 0 || j >= out.fw) {
      ++out.skipped_outside;
      continue;
    }
    const int ci = static_cast<int>(label.cls);
    auto& mask = out.positive_mask[static_cast<size_t>(ci)];
    const int cell = i * out.fw + j;
    if (mask[static_cast<size_t>(cell)]) {
      ++out.skipped_outside;  // cell already taken for this class
      continue;
    }
    mask[static_cast<size_t>(cell)] = 1;
    PositiveTarget pos;
    pos.cell = cell;
    const double ax = anchors.center_x(j);
    const double ay = anchors.center_y(i);
    const double heading_ego = wrap_angle(label.pose.yaw - ego_pose.yaw);
    pos.target = {ex - ax, ey - ay, std::log(label.width), std::log(label.length),
                  std::sin(heading_ego), std::cos(heading_ego)};
    out.positives[static_cast<size_t>(ci)].push_back(pos);
  }
  return out;
}

}  // namespace strobe::train
