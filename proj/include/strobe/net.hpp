#pragma once

// StrObe network: regional convolution blocks over packet regions, a
// multi-scale spatial memory updated per packet and realigned to ego motion,
// a map backbone, fused multi-scale header, box decoding and NMS.

#include <chrono>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "strobe/bev.hpp"
#include "strobe/geometry.hpp"
#include "strobe/sim.hpp"
#include "strobe/te.hpp"

namespace strobe::net {

struct NetConfig {
  bev::GridSpec grid;
  std::vector<int> lidar_layers{2, 2, 3, 6};
  std::vector<int> lidar_channels{24, 64, 128, 256};
  std::vector<int> map_layers{2, 2, 3, 3};
  std::vector<int> map_channels{16, 32, 64, 128};
  int fusion_layers = 4;
  int fusion_channels = 256;
  int halo = 8;    // cells at scale 0, halved per scale
  int stride = 8;  // region alignment = total downsampling before fusion
  double score_threshold = 0.1;
  double nms_iou = 0.3;
  double nms_ped_dist = 0.5;
  double gn_eps = 1e-5;

  static constexpr int kScales = 4;
  static constexpr int kFusedScale = 2;  // 0.8m when resolution is 0.2m

  int gn_groups(int channels) const { return std::max(1, channels / 8); }
  double fused_resolution() const { return grid.resolution * (1 << kFusedScale); }
  int map_in_channels() const { return 2; }

  void validate() const {
    if (grid.width % stride != 0 || grid.height % stride != 0)
      throw std::invalid_argument("grid dims must be multiples of the stride");
    if (lidar_layers.size() != kScales || lidar_channels.size() != kScales ||
        map_layers.size() != kScales || map_channels.size() != kScales)
      throw std::invalid_argument("backbone schedule must have 4 blocks");
  }

  // Reduced schedule for desk-scale training and tests.
  static NetConfig tiny() {
    NetConfig c;
    c.grid.origin_x = -16.0;
    c.grid.origin_y = -16.0;
    c.grid.width = 160;
    c.grid.height = 160;
    c.grid.z_min = -0.5;
    c.grid.z_max = 2.5;
    c.grid.z_res = 0.5;
    c.lidar_layers = {1, 1, 1, 1};
    c.lidar_channels = {8, 16, 32, 32};
    c.map_layers = {1, 1, 1, 1};
    c.map_channels = {4, 8, 8, 8};
    c.fusion_layers = 2;
    c.fusion_channels = 48;
    return c;
  }
};

// ---------------------------------------------------------------------------
// Header channel layout: per class a score logit plus regression channels
// [dx, dy, log_w, log_l, sin_h, cos_h] (pedestrians: [dx, dy] only).
// ---------------------------------------------------------------------------
struct HeaderLayout {
  static constexpr int kChannels = 17;
  static int reg_dims(ClassId c) { return c == ClassId::Pedestrian ? 2 : 6; }
  static int score_channel(ClassId c) {
    switch (c) {
      case ClassId::Vehicle: return 0;
      case ClassId::Cyclist: return 7;
      case ClassId::Pedestrian: return 14;
    }
    return 0;
  }
  static int reg_channel(ClassId c, int d) { return score_channel(c) + 1 + d; }
};

struct WeightSpec {
  std::string name;
  std::vector<int> shape;
  enum Kind { ConvW, ConvB, GnGamma, GnBeta } kind = ConvW;
};

std::vector<WeightSpec> weight_schedule_of(const NetConfig& cfg);

template <class T>
struct Weights {
  std::map<std::string, te::Tensor<T>> tensors;

  template <class U>
  Weights<U> cast() const {
    Weights<U> out;
    for (const auto& [k, v] : tensors) out.tensors[k] = v.template cast<U>();
    return out;
  }
};

Weights<float> init_weights(const NetConfig& cfg, std::uint64_t seed);

struct RunFlags {
  bool no_memory = false;
  bool no_map = false;
};

// Fused-map geometry for one packet: anchor centers are fused-cell centers
// in the packet's ego frame.
struct AnchorGrid {
  bev::RegionRect fused_region;
  double origin_x = 0.0, origin_y = 0.0;
  double resolution = 0.8;

  double center_x(int j) const { return origin_x + (fused_region.x0 + j + 0.5) * resolution; }
  double center_y(int i) const { return origin_y + (fused_region.y0 + i + 0.5) * resolution; }
  int width() const { return fused_region.width(); }
  int height() const { return fused_region.height(); }
};

template <class T>
struct ParamVars {
  std::map<std::string, int> vars;
  int at(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw std::runtime_error("missing weight tensor: " + name);
    return it->second;
  }
};

template <class T>
ParamVars<T> register_params(te::Tape<T>& tape, const Weights<T>& w, bool requires_grad) {
  ParamVars<T> out;
  for (const auto& [k, v] : w.tensors) out.vars[k] = tape.leaf(v, requires_grad);
  return out;
}

template <class T>
struct MemoryVars {
  bool has_pose = false;
  Pose2 frame_pose;
  std::vector<int> scales;  // tape vars, one per scale

  static MemoryVars zero(te::Tape<T>& tape, const NetConfig& cfg) {
    MemoryVars m;
    for (int s = 0; s < NetConfig::kScales; ++s) {
      m.scales.push_back(tape.zeros({cfg.lidar_channels[static_cast<size_t>(s)],
                                     cfg.grid.height >> s, cfg.grid.width >> s}));
    }
    return m;
  }
};

template <class T>
struct PacketForward {
  bool ran = false;
  bev::RegionRect region;  // scale-0 cells, halo-expanded + stride-aligned
  AnchorGrid anchors;
  int header = -1;  // tape var, (17, fh, fw)
  Pose2 ego_pose;
  Timestamp t_end;
};

namespace detail {

template <class T>
int conv_block_layer(te::Tape<T>& tape, const ParamVars<T>& p, int x,
                     const std::string& prefix, int gn_groups, T eps) {
  int y = tape.conv2d(x, p.at(prefix + ".w"), p.at(prefix + ".b"), 1, 1);
  y = tape.relu(y);
  return tape.group_norm(y, p.at(prefix + ".gn_g"), p.at(prefix + ".gn_b"), gn_groups, eps);
}

struct CropWindow {
  int x0, y0, x1, y1;  // cells at this scale
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
};

inline CropWindow haloed_window(const bev::RegionRect& region, const NetConfig& cfg,
                                int scale) {
  const bev::RegionRect r = region.at_scale(scale);
  const int halo = std::max(1, cfg.halo >> scale);
  CropWindow w;
  w.x0 = std::max(0, r.x0 - halo);
  w.y0 = std::max(0, r.y0 - halo);
  w.x1 = std::min(cfg.grid.width >> scale, r.x1 + halo);
  w.y1 = std::min(cfg.grid.height >> scale, r.y1 + halo);
  return w;
}

}  // namespace detail

// One packet through the network. Realigns the memory to the packet's ego
// pose, crops the haloed region, runs the regional backbone with per-scale
// memory updates, fuses with map features and applies the header. Empty
// packets realign the memory only.
template <class T>
PacketForward<T> forward_packet(te::Tape<T>& tape, const ParamVars<T>& params,
                                MemoryVars<T>& mem, const Packet& packet,
                                const bev::MapLayerPolygons* map, const NetConfig& cfg,
                                RunFlags flags) {
  using detail::conv_block_layer;
  using detail::haloed_window;

  PacketForward<T> out;
  out.ego_pose = packet.ego_pose;
  out.t_end = packet.t_end;

  if (!flags.no_memory) {
    if (mem.has_pose && !(mem.frame_pose == packet.ego_pose)) {
      for (int s = 0; s < NetConfig::kScales; ++s) {
        const auto a = bev::realign_affine<T>(mem.frame_pose, packet.ego_pose, cfg.grid, s);
        mem.scales[static_cast<size_t>(s)] =
            tape.bilinear_warp(mem.scales[static_cast<size_t>(s)], a);
      }
    }
    mem.frame_pose = packet.ego_pose;
    mem.has_pose = true;
  }

  const auto cells = bev::packet_cells(packet, packet.ego_pose, cfg.grid);
  const auto region_opt =
      bev::compute_region(cells, cfg.halo, cfg.stride, cfg.grid.width, cfg.grid.height);
  if (!region_opt) return out;
  out.region = *region_opt;

  const bev::BevGrid raster = bev::voxelize_packet(packet, cfg.grid);
  const int raster_var = tape.leaf(raster.data.template cast<T>());

  out.anchors.fused_region = out.region.at_scale(NetConfig::kFusedScale);
  out.anchors.origin_x = cfg.grid.origin_x;
  out.anchors.origin_y = cfg.grid.origin_y;
  out.anchors.resolution = cfg.fused_resolution();
  const int fh = out.anchors.height();
  const int fw = out.anchors.width();

  std::vector<int> fused_inputs;
  const T eps = static_cast<T>(cfg.gn_eps);

  // LiDAR backbone
  {
    detail::CropWindow w0 = haloed_window(out.region, cfg, 0);
    int input = tape.window(raster_var, w0.y0, w0.x0, w0.height(), w0.width());
    for (int s = 0; s < NetConfig::kScales; ++s) {
      const detail::CropWindow w = haloed_window(out.region, cfg, s);
      const bev::RegionRect rs = out.region.at_scale(s);
      const int cs = cfg.lidar_channels[static_cast<size_t>(s)];
      int y = input;
      for (int l = 0; l < cfg.lidar_layers[static_cast<size_t>(s)]; ++l) {
        y = conv_block_layer(tape, params, y,
                             "lidar.b" + std::to_string(s) + ".l" + std::to_string(l),
                             cfg.gn_groups(cs), eps);
      }
      const int y_region =
          tape.window(y, rs.y0 - w.y0, rs.x0 - w.x0, rs.height(), rs.width());

      int source = y;          // crop-sized features incl. halo
      int block_out = y_region;  // feature state handed to fusion
      if (!flags.no_memory) {
        int& m = mem.scales[static_cast<size_t>(s)];
        const int m_crop = tape.window(m, rs.y0, rs.x0, rs.height(), rs.width());
        const std::array<int, 2> cat_in{m_crop, y_region};
        int u = tape.concat_channels(std::span<const int>(cat_in));
        u = conv_block_layer(tape, params, u, "mem.s" + std::to_string(s) + ".l0",
                             cfg.gn_groups(2 * cs), eps);
        u = conv_block_layer(tape, params, u, "mem.s" + std::to_string(s) + ".l1",
                             cfg.gn_groups(cs), eps);
        m = tape.write_window(m, u, rs.y0, rs.x0);
        source = tape.window(m, w.y0, w.x0, w.height(), w.width());
        // The memory holds the block's feature state: the updated region is
        // both what later packets read back and what fusion consumes now.
        block_out = u;
      }
      fused_inputs.push_back(tape.bilinear_resize(block_out, fh, fw));
      if (s + 1 < NetConfig::kScales) input = tape.max_pool2(source);
    }
  }

  // Map backbone (zeros substituted when disabled)
  if (!flags.no_map && map != nullptr) {
    const bev::BevGrid map_raster = bev::rasterize_map(*map, packet.ego_pose, cfg.grid);
    const int map_var = tape.leaf(map_raster.data.template cast<T>());
    detail::CropWindow w0 = haloed_window(out.region, cfg, 0);
    int input = tape.window(map_var, w0.y0, w0.x0, w0.height(), w0.width());
    for (int s = 0; s < NetConfig::kScales; ++s) {
      const detail::CropWindow w = haloed_window(out.region, cfg, s);
      const bev::RegionRect rs = out.region.at_scale(s);
      const int cs = cfg.map_channels[static_cast<size_t>(s)];
      int y = input;
      for (int l = 0; l < cfg.map_layers[static_cast<size_t>(s)]; ++l) {
        y = conv_block_layer(tape, params, y,
                             "map.b" + std::to_string(s) + ".l" + std::to_string(l),
                             cfg.gn_groups(cs), eps);
      }
      const int y_region =
          tape.window(y, rs.y0 - w.y0, rs.x0 - w.x0, rs.height(), rs.width());
      fused_inputs.push_back(tape.bilinear_resize(y_region, fh, fw));
      if (s + 1 < NetConfig::kScales) input = tape.max_pool2(y);
    }
  } else {
    for (int s = 0; s < NetConfig::kScales; ++s) {
      fused_inputs.push_back(tape.zeros({cfg.map_channels[static_cast<size_t>(s)], fh, fw}));
    }
  }

  int fused = tape.concat_channels(std::span<const int>(fused_inputs));
  for (int l = 0; l < cfg.fusion_layers; ++l) {
    fused = conv_block_layer(tape, params, fused, "fusion.l" + std::to_string(l),
                             cfg.gn_groups(cfg.fusion_channels), eps);
  }
  int h = tape.conv2d(fused, params.at("header.l0.w"), params.at("header.l0.b"), 1, 1);
  h = tape.relu(h);
  out.header = tape.conv2d(h, params.at("header.l1.w"), params.at("header.l1.b"), 1, 1);
  out.ran = true;
  return out;
}

// ---------------------------------------------------------------------------
// Decoding + NMS
// ---------------------------------------------------------------------------

template <class T>
std::vector<DetBox> decode_boxes(const te::Tensor<T>& header, const AnchorGrid& anchors,
                                 double score_threshold, const Pose2& ego_pose,
                                 Timestamp emitted_at) {
  std::vector<DetBox> out;
  const int fh = header.dim(1), fw = header.dim(2);
  for (ClassId cls : {ClassId::Vehicle, ClassId::Pedestrian, ClassId::Cyclist}) {
    const int sc = HeaderLayout::score_channel(cls);
    for (int i = 0; i < fh; ++i) {
      for (int j = 0; j < fw; ++j) {
        const double logit = static_cast<double>(header.at(sc, i, j));
        const double score = 1.0 / (1.0 + std::exp(-logit));
        if (score < score_threshold) continue;
        const double ax = anchors.center_x(j);
        const double ay = anchors.center_y(i);
        const double dx = static_cast<double>(header.at(HeaderLayout::reg_channel(cls, 0), i, j));
        const double dy = static_cast<double>(header.at(HeaderLayout::reg_channel(cls, 1), i, j));
        DetBox det;
        det.cls = cls;
        det.score = score;
        det.emitted_at = emitted_at;
        double wx, wy;
        pose_apply(ego_pose, ax + dx, ay + dy, wx, wy);
        det.cx = wx;
        det.cy = wy;
        if (cls != ClassId::Pedestrian) {
          const double log_w = static_cast<double>(header.at(HeaderLayout::reg_channel(cls, 2), i, j));
          const double log_l = static_cast<double>(header.at(HeaderLayout::reg_channel(cls, 3), i, j));
          const double t1 = static_cast<double>(header.at(HeaderLayout::reg_channel(cls, 4), i, j));
          const double t2 = static_cast<double>(header.at(HeaderLayout::reg_channel(cls, 5), i, j));
          det.width = std::exp(log_w);
          det.length = std::exp(log_l);
          // two-argument arctangent: the signed pair keeps the quadrant
          det.heading = wrap_angle(ego_pose.yaw + std::atan2(t1, t2));
        }
        out.push_back(det);
      }
    }
  }
  return out;
}

std::vector<DetBox> nms(std::vector<DetBox> dets, double iou_threshold,
                        double ped_dist_threshold);

// ---------------------------------------------------------------------------
// Inference driver (owns the memory state, one stream per instance)
// ---------------------------------------------------------------------------

template <class T>
class Inference {
 public:
  Inference(NetConfig cfg, Weights<T> weights, RunFlags flags)
      : cfg_(std::move(cfg)), weights_(std::move(weights)), flags_(flags) {
    cfg_.validate();
    reset();
  }

  struct PacketOut {
    bool ran = false;
    bev::RegionRect region;
    AnchorGrid anchors;
    std::vector<DetBox> dets;
    double inference_ms = 0.0;
  };

  PacketOut process_packet(const Packet& packet, const bev::MapLayerPolygons* map) {
    const auto t0 = std::chrono::steady_clock::now();
    te::Tape<T> tape;
    tape.recording = false;
    auto params = register_params(tape, weights_, false);
    MemoryVars<T> mem;
    mem.has_pose = mem_has_pose_;
    mem.frame_pose = mem_pose_;
    for (auto& t : mem_) mem.scales.push_back(tape.leaf(t));
    auto fwd = forward_packet(tape, params, mem, packet, map, cfg_, flags_);
    for (size_t s = 0; s < mem_.size(); ++s) mem_[s] = tape.val(mem.scales[s]);
    mem_has_pose_ = mem.has_pose;
    mem_pose_ = mem.frame_pose;

    PacketOut out;
    out.ran = fwd.ran;
    out.region = fwd.region;
    out.anchors = fwd.anchors;
    if (fwd.ran) {
      out.dets = decode_boxes(tape.val(fwd.header), fwd.anchors, cfg_.score_threshold,
                              packet.ego_pose, packet.t_end);
      out.dets = nms(std::move(out.dets), cfg_.nms_iou, cfg_.nms_ped_dist);
    }
    out.inference_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();
    return out;
  }

  // Merges the packets of one sweep into a pseudo-packet and runs the same
  // network once with fresh memory.
  PacketOut process_sweep(std::span<const Packet> packets, const bev::MapLayerPolygons* map) {
    if (packets.empty()) return {};
    Packet merged;
    merged.index = 0;
    merged.sweep = packets.front().sweep;
    merged.t_start = packets.front().t_start;
    merged.t_end = packets.back().t_end;
    merged.ego_pose = packets.back().ego_pose;
    merged.azimuth_begin = 0.0;
    merged.azimuth_end = 2.0 * M_PI;
    for (const auto& p : packets) {
      merged.points.insert(merged.points.end(), p.points.begin(), p.points.end());
    }
    const auto t0 = std::chrono::steady_clock::now();
    te::Tape<T> tape;
    tape.recording = false;
    auto params = register_params(tape, weights_, false);
    auto mem = MemoryVars<T>::zero(tape, cfg_);
    auto fwd = forward_packet(tape, params, mem, merged, map, cfg_, flags_);
    PacketOut out;
    out.ran = fwd.ran;
    out.region = fwd.region;
    out.anchors = fwd.anchors;
    if (fwd.ran) {
      out.dets = decode_boxes(tape.val(fwd.header), fwd.anchors, cfg_.score_threshold,
                              merged.ego_pose, merged.t_end);
      out.dets = nms(std::move(out.dets), cfg_.nms_iou, cfg_.nms_ped_dist);
    }
    out.inference_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();
    return out;
  }

  void reset() {
    mem_.clear();
    for (int s = 0; s < NetConfig::kScales; ++s) {
      mem_.emplace_back(te::Tensor<T>({cfg_.lidar_channels[static_cast<size_t>(s)],
                                       cfg_.grid.height >> s, cfg_.grid.width >> s}));
    }
    mem_has_pose_ = false;
    mem_pose_ = Pose2{};
  }

  const std::vector<te::Tensor<T>>& memory() const { return mem_; }
  const NetConfig& config() const { return cfg_; }

 private:
  NetConfig cfg_;
  Weights<T> weights_;
  RunFlags flags_;
  std::vector<te::Tensor<T>> mem_;
  bool mem_has_pose_ = false;
  Pose2 mem_pose_;
};

}  // namespace strobe::net
