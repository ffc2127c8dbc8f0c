#include "strobe/net.hpp"

#include <algorithm>
#include <random>

namespace strobe::net {

namespace {

void push_conv(std::vector<WeightSpec>& out, const std::string& prefix, int out_ch,
               int in_ch, bool gn) {
  out.push_back({prefix + ".w", {out_ch, in_ch, 3, 3}, WeightSpec::ConvW});
  out.push_back({prefix + ".b", {out_ch}, WeightSpec::ConvB});
  if (gn) {
    out.push_back({prefix + ".gn_g", {out_ch}, WeightSpec::GnGamma});
    out.push_back({prefix + ".gn_b", {out_ch}, WeightSpec::GnBeta});
  }
}

}  // namespace

std::vector<WeightSpec> weight_schedule_of(const NetConfig& cfg) {
  std::vector<WeightSpec> out;
  int in_ch = cfg.grid.z_channels();
  for (int s = 0; s < NetConfig::kScales; ++s) {
    const int cs = cfg.lidar_channels[static_cast<size_t>(s)];
    for (int l = 0; l < cfg.lidar_layers[static_cast<size_t>(s)]; ++l) {
      push_conv(out, "lidar.b" + std::to_string(s) + ".l" + std::to_string(l), cs,
                l == 0 ? in_ch : cs, true);
    }
    // memory update: 2c -> 2c, then back to c
    push_conv(out, "mem.s" + std::to_string(s) + ".l0", 2 * cs, 2 * cs, true);
    push_conv(out, "mem.s" + std::to_string(s) + ".l1", cs, 2 * cs, true);
    in_ch = cs;
  }
  in_ch = cfg.map_in_channels();
  for (int s = 0; s < NetConfig::kScales; ++s) {
    const int cs = cfg.map_channels[static_cast<size_t>(s)];
    for (int l = 0; l < cfg.map_layers[static_cast<size_t>(s)]; ++l) {
      push_conv(out, "map.b" + std::to_string(s) + ".l" + std::to_string(l), cs,
                l == 0 ? in_ch : cs, true);
    }
    in_ch = cs;
  }
  int fused_in = 0;
  for (int c : cfg.lidar_channels) fused_in += c;
  for (int c : cfg.map_channels) fused_in += c;
  for (int l = 0; l < cfg.fusion_layers; ++l) {
    push_conv(out, "fusion.l" + std::to_string(l), cfg.fusion_channels,
              l == 0 ? fused_in : cfg.fusion_channels, true);
  }
  push_conv(out, "header.l0", cfg.fusion_channels, cfg.fusion_channels, false);
  push_conv(out, "header.l1", HeaderLayout::kChannels, cfg.fusion_channels, false);
  return out;
}

Weights<float> init_weights(const NetConfig& cfg, std::uint64_t seed) {
  Weights<float> w;
  std::mt19937_64 rng(seed);
  for (const auto& spec : weight_schedule_of(cfg)) {
    te::Tensor<float> t(spec.shape);
    switch (spec.kind) {
      case WeightSpec::ConvW: {
        const int fan_in = spec.shape[1] * spec.shape[2] * spec.shape[3];
        const float limit = std::sqrt(6.0f / static_cast<float>(fan_in));
        std::uniform_real_distribution<float> d(-limit, limit);
        for (auto& v : t.data) v = d(rng);
        break;
      }
      case WeightSpec::ConvB:
        break;  // zeros
      case WeightSpec::GnGamma:
        std::fill(t.data.begin(), t.data.end(), 1.0f);
        break;
      case WeightSpec::GnBeta:
        break;
    }
    w.tensors[spec.name] = std::move(t);
  }
  // Score logits start near logit(0.01) to keep the negative-dominated grid
  // quiet at step 0.
  auto& hb = w.tensors.at("header.l1.b");
  const float b0 = std::log(0.01f / 0.99f);
  for (ClassId c : {ClassId::Vehicle, ClassId::Pedestrian, ClassId::Cyclist}) {
    hb.data[static_cast<size_t>(HeaderLayout::score_channel(c))] = b0;
  }
  return w;
}

std::vector<DetBox> nms(std::vector<DetBox> dets, double iou_threshold,
                        double ped_dist_threshold) {
  std::vector<int> order(dets.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return dets[static_cast<size_t>(a)].score >
                                              dets[static_cast<size_t>(b)].score; });
  std::vector<char> suppressed(dets.size(), 0);
  std::vector<DetBox> kept;
  for (size_t oi = 0; oi < order.size(); ++oi) {
    const int i = order[oi];
    if (suppressed[static_cast<size_t>(i)]) continue;
    const DetBox& a = dets[static_cast<size_t>(i)];
    kept.push_back(a);
    for (size_t oj = oi + 1; oj < order.size(); ++oj) {
      const int j = order[oj];
      if (suppressed[static_cast<size_t>(j)]) continue;
      const DetBox& b = dets[static_cast<size_t>(j)];
      if (b.cls != a.cls) continue;
      bool kill = false;
      if (a.cls == ClassId::Pedestrian) {
        kill = centroid_distance(a.cx, a.cy, b.cx, b.cy) < ped_dist_threshold;
      } else {
        kill = rotated_iou({a.cx, a.cy, a.length, a.width, a.heading},
                           {b.cx, b.cy, b.length, b.width, b.heading}) > iou_threshold;
      }
      if (kill) suppressed[static_cast<size_t>(j)] = 1;
    }
  }
  return kept;
}

}  // namespace strobe::net
