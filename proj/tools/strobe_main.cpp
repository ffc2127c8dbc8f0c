// Command-line surface: simulate | infer | train | eval | bench.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "strobe/io.hpp"
#include "strobe/train.hpp"

namespace fs = std::filesystem;
using namespace strobe;

namespace {

struct Overrides {
  std::string mode;
  bool no_memory = false;
  bool no_map = false;
  std::int64_t seed = -1;
};

io::RunConfig load_config(const std::string& path, const Overrides& ov) {
  io::RunConfig cfg = io::load_run_config(path);
  if (!ov.mode.empty()) cfg.mode = ov.mode;
  if (ov.no_memory) cfg.no_memory = true;
  if (ov.no_map) cfg.no_map = true;
  if (ov.seed >= 0) cfg.seed = static_cast<std::uint64_t>(ov.seed);
  cfg.validate();
  return cfg;
}

std::string default_path(const io::RunConfig& cfg, const std::string& given,
                         const std::string& suffix) {
  return given.empty() ? cfg.scenario + suffix : given;
}

net::Weights<float> obtain_weights(const io::RunConfig& cfg, const net::NetConfig& net_cfg) {
  if (cfg.weights.empty()) return net::init_weights(net_cfg, cfg.seed);
  return io::load_weights(cfg.weights, net::weight_schedule_of(net_cfg));
}

int cmd_simulate(const io::RunConfig& cfg) {
  sim::ScenarioConfig scn = io::resolve_scenario(cfg);
  const sim::ScenarioData data = sim::generate_scenario(scn);

  io::PacketFile pf;
  pf.sensor = scn.sensor;
  pf.seed = scn.seed;
  for (const auto& f : data.frames) pf.packets.push_back(f.packet);
  const std::string packets_path = default_path(cfg, cfg.packets, "_packets.strbp");
  const std::string labels_path = default_path(cfg, cfg.labels, "_labels.json");
  io::write_packet_file(packets_path, pf);
  io::write_labels(labels_path, data);

  std::size_t points = 0;
  for (const auto& p : pf.packets) points += p.points.size();
  std::cout << "scenario " << scn.name << " seed " << scn.seed << ": " << pf.packets.size()
            << " packets, " << scn.actors.size() << " actors, " << points << " points\n"
            << "wrote " << packets_path << " and " << labels_path << "\n";
  return 0;
}

eval::FrameRecord make_frame_record(const net::Inference<float>::PacketOut& out,
                                    const net::NetConfig& net_cfg, int packet_index,
                                    Timestamp t_start, Timestamp t_end, const Pose2& ego,
                                    bool is_sweep) {
  eval::FrameRecord f;
  f.packet_index = packet_index;
  f.t_start = t_start;
  f.t_end = t_end;
  f.ego_pose = ego;
  f.is_sweep = is_sweep;
  f.inference_ms = out.inference_ms;
  f.dets = out.dets;
  if (out.ran) {
    f.has_region = true;
    const auto& g = net_cfg.grid;
    f.rx0 = g.origin_x + out.region.x0 * g.resolution;
    f.ry0 = g.origin_y + out.region.y0 * g.resolution;
    f.rx1 = g.origin_x + out.region.x1 * g.resolution;
    f.ry1 = g.origin_y + out.region.y1 * g.resolution;
  }
  return f;
}

eval::DetectionRun run_inference(const io::RunConfig& cfg, const io::PacketFile& pf,
                                 const bev::MapLayerPolygons& map,
                                 const std::string& scenario_name) {
  const net::NetConfig net_cfg = cfg.net_config();
  net::Inference<float> inf(net_cfg, obtain_weights(cfg, net_cfg),
                            {cfg.no_memory, cfg.no_map});
  eval::DetectionRun run;
  run.scenario = scenario_name;
  run.seed = cfg.seed;
  run.mode = cfg.mode;
  run.no_memory = cfg.no_memory;
  run.no_map = cfg.no_map;

  if (cfg.mode == "packet") {
    for (std::size_t i = 0; i < pf.packets.size(); ++i) {
      const Packet& p = pf.packets[i];
      auto out = inf.process_packet(p, &map);
      run.frames.push_back(make_frame_record(out, net_cfg, static_cast<int>(i), p.t_start,
                                             p.t_end, p.ego_pose, false));
    }
  } else {
    const int pps = std::max(1, pf.sensor.packets_per_sweep);
    for (std::size_t i = 0; i + pps <= pf.packets.size(); i += pps) {
      std::span<const Packet> sweep(pf.packets.data() + i, static_cast<std::size_t>(pps));
      auto out = inf.process_sweep(sweep, &map);
      run.frames.push_back(make_frame_record(
          out, net_cfg, static_cast<int>(i) + pps - 1, sweep.front().t_start,
          sweep.back().t_end, sweep.back().ego_pose, true));
    }
  }
  return run;
}

int cmd_infer(const io::RunConfig& cfg) {
  const std::string packets_path = default_path(cfg, cfg.packets, "_packets.strbp");
  const std::string labels_path = default_path(cfg, cfg.labels, "_labels.json");
  const io::PacketFile pf = io::read_packet_file(packets_path);
  const eval::LabelData labels = io::read_labels(labels_path);

  const auto run = run_inference(cfg, pf, labels.map, labels.scenario);
  const std::string det_path = default_path(cfg, cfg.detections, "_detections.jsonl");
  io::write_detections(det_path, run);

  const auto lat = eval::latency_breakdown(run);
  std::size_t dets = 0;
  for (const auto& f : run.frames) dets += f.dets.size();
  std::cout << run.frames.size() << " frames, " << dets << " detections; inference p50 "
            << lat.inference_p50_ms << " ms, p95 " << lat.inference_p95_ms << " ms\n"
            << "wrote " << det_path << "\n";
  return 0;
}

int cmd_train(const io::RunConfig& cfg) {
  sim::ScenarioConfig scn = io::resolve_scenario(cfg);
  const sim::ScenarioData data = sim::generate_scenario(scn);

  const net::NetConfig net_cfg = cfg.net_config();
  train::TrainConfig tcfg;
  tcfg.steps = cfg.train_steps;
  tcfg.lr = cfg.lr;
  tcfg.seed = cfg.train_seed;

  const std::string ckpt_path = default_path(cfg, cfg.checkpoint, "_checkpoint.strbw");
  const std::string csv_path = default_path(cfg, cfg.loss_csv, "_loss.csv");

  net::Weights<float> weights;
  int start_step = 0;
  std::string csv_existing;
  if (cfg.resume && fs::exists(ckpt_path)) {
    weights = io::load_weights(ckpt_path, net::weight_schedule_of(net_cfg));
    std::ifstream csv(csv_path);
    std::string line;
    bool first = true;
    while (std::getline(csv, line)) {
      if (first) { first = false; continue; }  // header row
      if (!line.empty()) {
        ++start_step;
        csv_existing += line + "\n";
      }
    }
    std::cout << "resuming from " << ckpt_path << " at step " << start_step << "\n";
  } else if (!cfg.weights.empty()) {
    weights = io::load_weights(cfg.weights, net::weight_schedule_of(net_cfg));
  } else {
    weights = net::init_weights(net_cfg, cfg.seed);
  }

  train::Trainer<float> trainer(net_cfg, tcfg, std::move(weights),
                                {cfg.no_memory, cfg.no_map});
  std::ofstream csv(csv_path, std::ios::trunc);
  csv << "step,L_reg,L_cls,L\n" << csv_existing;
  csv.precision(8);
  const int checkpoint_every = 25;
  for (int step = start_step; step < tcfg.steps; ++step) {
    const auto trace = trainer.train_sequence(data, step);
    csv << step << "," << trace.reg << "," << trace.cls << "," << trace.total << "\n";
    csv.flush();
    if ((step + 1) % checkpoint_every == 0 || step + 1 == tcfg.steps) {
      io::write_weights(ckpt_path, trainer.weights());
    }
    if ((step + 1) % 10 == 0 || step == start_step) {
      std::cout << "step " << step << ": L=" << trace.total << " (reg " << trace.reg
                << ", cls " << trace.cls << ")\n";
    }
  }
  std::cout << "sequence layout: " << tcfg.warmup << " warm-up + " << tcfg.bptt
            << " backprop-through-time packets\n"
            << "wrote " << ckpt_path << " and " << csv_path << "\n";
  return 0;
}

int cmd_eval(const io::RunConfig& cfg) {
  const std::string det_path = default_path(cfg, cfg.detections, "_detections.jsonl");
  const std::string labels_path = default_path(cfg, cfg.labels, "_labels.json");
  const auto run = io::read_detections(det_path);
  const auto labels = io::read_labels(labels_path);
  const auto report = eval::evaluate(run, labels, cfg.eval);

  const std::string prefix = cfg.report.empty() ? cfg.scenario + "_report" : cfg.report;
  io::write_report(prefix + ".json", report);
  const std::string text = report.text();
  std::ofstream(prefix + ".txt", std::ios::trunc) << text;
  std::cout << text << "wrote " << prefix << ".json and " << prefix << ".txt\n";
  return 0;
}

int cmd_bench(const io::RunConfig& cfg) {
  sim::ScenarioConfig scn = io::resolve_scenario(cfg);
  const sim::ScenarioData data = sim::generate_scenario(scn);
  io::PacketFile pf;
  pf.sensor = scn.sensor;
  pf.seed = scn.seed;
  for (const auto& f : data.frames) pf.packets.push_back(f.packet);

  io::RunConfig packet_cfg = cfg;
  packet_cfg.mode = "packet";
  io::RunConfig sweep_cfg = cfg;
  sweep_cfg.mode = "sweep";
  const auto packet_run = run_inference(packet_cfg, pf, scn.map, scn.name);
  const auto sweep_run = run_inference(sweep_cfg, pf, scn.map, scn.name);
  const auto pl = eval::latency_breakdown(packet_run);
  const auto sl = eval::latency_breakdown(sweep_run);
  std::cout << "packet mode: accumulation " << pl.accumulation_ms << " ms, inference p50 "
            << pl.inference_p50_ms << " ms, p95 " << pl.inference_p95_ms << " ms\n"
            << "sweep mode:  accumulation " << sl.accumulation_ms << " ms, inference p50 "
            << sl.inference_p50_ms << " ms, p95 " << sl.inference_p95_ms << " ms\n";
  if (pl.inference_p50_ms > 0.0) {
    std::cout << "sweep/packet inference p50 ratio: "
              << sl.inference_p50_ms / pl.inference_p50_ms << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"strobe: streaming rolling-shutter LiDAR detection"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides ov;
  int which = 0;
  for (auto [name, id] : {std::pair<const char*, int>{"simulate", 1},
                          {"infer", 2},
                          {"train", 3},
                          {"eval", 4},
                          {"bench", 5}}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "run configuration JSON")->required();
    sub->add_option("--mode", ov.mode, "packet | sweep");
    sub->add_flag("--no-memory", ov.no_memory, "disable the spatial memory");
    sub->add_flag("--no-map", ov.no_map, "disable the map backbone");
    sub->add_option("--seed", ov.seed, "override the seed");
    sub->callback([&which, id = id] { which = id; });
  }

  CLI11_PARSE(app, argc, argv);

  try {
    const io::RunConfig cfg = load_config(config_path, ov);
    switch (which) {
      case 1: return cmd_simulate(cfg);
      case 2: return cmd_infer(cfg);
      case 3: return cmd_train(cfg);
      case 4: return cmd_eval(cfg);
      case 5: return cmd_bench(cfg);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
