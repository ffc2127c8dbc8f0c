#include "strobe/io.hpp"

#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace strobe::io {

namespace {

using ordered_json = nlohmann::ordered_json;

// ---- little-endian primitives (host is little-endian x86) -----------------

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(std::string data, std::string what) : data_(std::move(data)), what_(std::move(what)) {}

  template <class T>
  T get() {
    if (pos_ + sizeof(T) > data_.size())
      throw std::runtime_error(what_ + ": truncated file");
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_bytes(size_t n) {
    if (pos_ + n > data_.size()) throw std::runtime_error(what_ + ": truncated file");
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  size_t pos() const { return pos_; }
  size_t size() const { return data_.size(); }

 private:
  std::string data_;
  std::string what_;
  size_t pos_ = 0;
};

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void spew(const std::filesystem::path& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

constexpr char kPacketMagic[5] = {'S', 'T', 'R', 'B', 'P'};
constexpr char kWeightsMagic[5] = {'S', 'T', 'R', 'B', 'W'};
constexpr std::uint16_t kFormatVersion = 1;

void reject_unknown_keys(const ordered_json& obj, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key()))
      throw std::invalid_argument(where + ": unknown key \"" + it.key() + "\"");
  }
}

ordered_json track_to_json(const LabelTrack& t) {
  ordered_json states = ordered_json::array();
  for (const auto& s : t.states) {
    states.push_back({{"t_us", s.t.micros},
                      {"x", s.pose.x},
                      {"y", s.pose.y},
                      {"yaw", s.pose.yaw},
                      {"vx", s.vx},
                      {"vy", s.vy},
                      {"yaw_rate", s.yaw_rate}});
  }
  return {{"actor_id", t.actor_id},
          {"class", class_name(t.cls)},
          {"length", t.length},
          {"width", t.width},
          {"states", states}};
}

LabelTrack track_from_json(const ordered_json& j) {
  LabelTrack t;
  t.actor_id = j.at("actor_id").get<int>();
  auto cls = class_from_name(j.at("class").get<std::string>());
  if (!cls) throw std::invalid_argument("unknown class name in labels file");
  t.cls = *cls;
  t.length = j.at("length").get<double>();
  t.width = j.at("width").get<double>();
  for (const auto& sj : j.at("states")) {
    TrackState s;
    s.t.micros = sj.at("t_us").get<std::int64_t>();
    s.pose = {sj.at("x").get<double>(), sj.at("y").get<double>(), sj.at("yaw").get<double>()};
    s.vx = sj.at("vx").get<double>();
    s.vy = sj.at("vy").get<double>();
    s.yaw_rate = sj.at("yaw_rate").get<double>();
    t.states.push_back(s);
  }
  return t;
}

ordered_json polygons_to_json(const std::vector<std::vector<std::pair<double, double>>>& ps) {
  ordered_json out = ordered_json::array();
  for (const auto& poly : ps) {
    ordered_json ring = ordered_json::array();
    for (const auto& [x, y] : poly) ring.push_back({x, y});
    out.push_back(ring);
  }
  return out;
}

std::vector<std::vector<std::pair<double, double>>> polygons_from_json(const ordered_json& j) {
  std::vector<std::vector<std::pair<double, double>>> out;
  for (const auto& ring : j) {
    std::vector<std::pair<double, double>> poly;
    for (const auto& pt : ring) poly.emplace_back(pt.at(0).get<double>(), pt.at(1).get<double>());
    out.push_back(std::move(poly));
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// STRBP
// ---------------------------------------------------------------------------

void write_packet_file(const std::filesystem::path& path, const PacketFile& file) {
  std::string out;
  out.append(kPacketMagic, sizeof(kPacketMagic));
  put<std::uint16_t>(out, kFormatVersion);
  put<double>(out, file.sensor.spin_hz);
  put<std::int32_t>(out, file.sensor.packets_per_sweep);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(file.sensor.elevations.size()));
  for (double e : file.sensor.elevations) put<double>(out, e);
  put<double>(out, file.sensor.azimuth_step);
  put<double>(out, file.sensor.max_range);
  put<double>(out, file.sensor.dropout);
  put<double>(out, file.sensor.height);
  put<std::uint64_t>(out, file.seed);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(file.packets.size()));

  for (const auto& p : file.packets) {
    std::string rec;
    const int global_index = p.sweep * file.sensor.packets_per_sweep + p.index;
    put<std::int32_t>(rec, global_index);
    put<std::int64_t>(rec, p.t_start.micros);
    put<std::int64_t>(rec, p.t_end.micros);
    put<double>(rec, p.ego_pose.x);
    put<double>(rec, p.ego_pose.y);
    put<double>(rec, p.ego_pose.yaw);
    put<std::uint32_t>(rec, static_cast<std::uint32_t>(p.points.size()));
    for (const auto& pt : p.points) {
      put<float>(rec, static_cast<float>(pt.x));
      put<float>(rec, static_cast<float>(pt.y));
      put<float>(rec, static_cast<float>(pt.z));
      put<std::uint32_t>(rec, static_cast<std::uint32_t>(pt.t.micros - p.t_start.micros));
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(rec.size()));
    out += rec;
  }
  spew(path, out);
}

PacketFile read_packet_file(const std::filesystem::path& path) {
  Reader r(slurp(path), path.string());
  const std::string magic = r.get_bytes(sizeof(kPacketMagic));
  if (std::memcmp(magic.data(), kPacketMagic, sizeof(kPacketMagic)) != 0)
    throw std::runtime_error(path.string() + ": bad magic (not a packet file)");
  const auto version = r.get<std::uint16_t>();
  if (version != kFormatVersion)
    throw std::runtime_error(path.string() + ": unsupported version " + std::to_string(version));

  PacketFile file;
  file.sensor.spin_hz = r.get<double>();
  file.sensor.packets_per_sweep = r.get<std::int32_t>();
  const auto n_elev = r.get<std::uint32_t>();
  file.sensor.elevations.clear();
  for (std::uint32_t i = 0; i < n_elev; ++i) file.sensor.elevations.push_back(r.get<double>());
  file.sensor.azimuth_step = r.get<double>();
  file.sensor.max_range = r.get<double>();
  file.sensor.dropout = r.get<double>();
  file.sensor.height = r.get<double>();
  file.seed = r.get<std::uint64_t>();
  const auto n_packets = r.get<std::uint32_t>();

  const int pps = std::max(1, file.sensor.packets_per_sweep);
  const double sector = 2.0 * M_PI / pps;
  for (std::uint32_t k = 0; k < n_packets; ++k) {
    const auto rec_len = r.get<std::uint32_t>();
    const size_t rec_end = r.pos() + rec_len;
    if (rec_end > r.size()) throw std::runtime_error(path.string() + ": truncated file");

    Packet p;
    const int global_index = r.get<std::int32_t>();
    p.sweep = global_index / pps;
    p.index = global_index % pps;
    p.azimuth_begin = p.index * sector;
    p.azimuth_end = (p.index + 1) * sector;
    p.t_start.micros = r.get<std::int64_t>();
    p.t_end.micros = r.get<std::int64_t>();
    p.ego_pose.x = r.get<double>();
    p.ego_pose.y = r.get<double>();
    p.ego_pose.yaw = r.get<double>();
    const auto n_points = r.get<std::uint32_t>();
    const size_t need = static_cast<size_t>(n_points) * (3 * sizeof(float) + sizeof(std::uint32_t));
    if (r.pos() + need != rec_end)
      throw std::runtime_error(path.string() + ": point count does not match record length");
    for (std::uint32_t i = 0; i < n_points; ++i) {
      LidarPoint pt;
      pt.x = r.get<float>();
      pt.y = r.get<float>();
      pt.z = r.get<float>();
      pt.t.micros = p.t_start.micros + r.get<std::uint32_t>();
      p.points.push_back(pt);
    }
    file.packets.push_back(std::move(p));
  }
  return file;
}

// ---------------------------------------------------------------------------
// STRBW
// ---------------------------------------------------------------------------

void write_weights(const std::filesystem::path& path, const net::Weights<float>& weights) {
  std::string out;
  out.append(kWeightsMagic, sizeof(kWeightsMagic));
  put<std::uint16_t>(out, kFormatVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(weights.tensors.size()));
  for (const auto& [name, t] : weights.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) put<std::int32_t>(out, d);
    const size_t bytes = static_cast<size_t>(t.numel()) * sizeof(float);
    const size_t off = out.size();
    out.resize(off + bytes);
    std::memcpy(out.data() + off, t.data.data(), bytes);
  }
  spew(path, out);
}

net::Weights<float> read_weights(const std::filesystem::path& path) {
  Reader r(slurp(path), path.string());
  const std::string magic = r.get_bytes(sizeof(kWeightsMagic));
  if (std::memcmp(magic.data(), kWeightsMagic, sizeof(kWeightsMagic)) != 0)
    throw std::runtime_error(path.string() + ": bad magic (not a weights file)");
  const auto version = r.get<std::uint16_t>();
  if (version != kFormatVersion)
    throw std::runtime_error(path.string() + ": unsupported version " + std::to_string(version));

  net::Weights<float> out;
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto name_len = r.get<std::uint32_t>();
    const std::string name = r.get_bytes(name_len);
    if (out.tensors.count(name))
      throw std::runtime_error(path.string() + ": duplicate tensor \"" + name + "\"");
    const auto rank = r.get<std::uint32_t>();
    std::vector<int> shape;
    long numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const int dim = r.get<std::int32_t>();
      if (dim <= 0) throw std::runtime_error(path.string() + ": bad dim in \"" + name + "\"");
      shape.push_back(dim);
      numel *= dim;
    }
    te::Tensor<float> t(shape);
    const std::string data = r.get_bytes(static_cast<size_t>(numel) * sizeof(float));
    std::memcpy(t.data.data(), data.data(), data.size());
    out.tensors.emplace(name, std::move(t));
  }
  return out;
}

net::Weights<float> load_weights(const std::filesystem::path& path,
                                 const std::vector<net::WeightSpec>& schedule) {
  net::Weights<float> w = read_weights(path);
  std::set<std::string> expected;
  for (const auto& spec : schedule) {
    expected.insert(spec.name);
    auto it = w.tensors.find(spec.name);
    if (it == w.tensors.end())
      throw std::runtime_error(path.string() + ": missing tensor \"" + spec.name + "\"");
    if (it->second.shape != spec.shape) {
      std::ostringstream os;
      os << path.string() << ": shape mismatch for \"" << spec.name << "\": file has [";
      for (size_t i = 0; i < it->second.shape.size(); ++i)
        os << (i ? "," : "") << it->second.shape[i];
      os << "], schedule expects [";
      for (size_t i = 0; i < spec.shape.size(); ++i) os << (i ? "," : "") << spec.shape[i];
      os << "]";
      throw std::runtime_error(os.str());
    }
  }
  for (const auto& [name, t] : w.tensors) {
    if (!expected.count(name))
      throw std::runtime_error(path.string() + ": unexpected tensor \"" + name + "\"");
  }
  return w;
}

// ---------------------------------------------------------------------------
// Labels sidecar
// ---------------------------------------------------------------------------

void write_labels(const std::filesystem::path& path, const sim::ScenarioData& data) {
  ordered_json j;
  j["scenario"] = data.config.name;
  j["seed"] = data.config.seed;
  j["duration_s"] = data.config.duration_s;
  j["conventions"] = {{"frame", "world"},
                      {"timestamps", "microseconds since scenario start"},
                      {"pedestrian_radius_m", kPedestrianRadius}};
  ordered_json tracks = ordered_json::array();
  for (const auto& t : data.tracks) tracks.push_back(track_to_json(t));
  j["tracks"] = std::move(tracks);
  ordered_json fo = ordered_json::object();
  for (const auto& [id, pk] : data.first_observed) fo[std::to_string(id)] = pk;
  j["first_observed"] = std::move(fo);
  ordered_json rpp = ordered_json::array();
  for (const auto& frame : data.frames) {
    ordered_json m = ordered_json::object();
    for (const auto& [id, n] : frame.returns_this_packet) m[std::to_string(id)] = n;
    rpp.push_back(std::move(m));
  }
  j["returns_per_packet"] = std::move(rpp);
  j["map"] = {{"roads", polygons_to_json(data.config.map.roads)},
              {"crosswalks", polygons_to_json(data.config.map.crosswalks)}};
  spew(path, j.dump(2) + "\n");
}

eval::LabelData read_labels(const std::filesystem::path& path) {
  ordered_json j = ordered_json::parse(slurp(path));
  eval::LabelData out;
  out.scenario = j.at("scenario").get<std::string>();
  out.seed = j.at("seed").get<std::uint64_t>();
  out.duration_s = j.at("duration_s").get<double>();
  for (const auto& tj : j.at("tracks")) out.tracks.push_back(track_from_json(tj));
  for (auto it = j.at("first_observed").begin(); it != j.at("first_observed").end(); ++it) {
    out.first_observed[std::stoi(it.key())] = it.value().get<int>();
  }
  for (const auto& m : j.at("returns_per_packet")) {
    std::map<int, int> counts;
    for (auto it = m.begin(); it != m.end(); ++it)
      counts[std::stoi(it.key())] = it.value().get<int>();
    out.returns_per_packet.push_back(std::move(counts));
  }
  out.map.roads = polygons_from_json(j.at("map").at("roads"));
  out.map.crosswalks = polygons_from_json(j.at("map").at("crosswalks"));
  return out;
}

// ---------------------------------------------------------------------------
// Detections (JSON-lines)
// ---------------------------------------------------------------------------

void write_detections(const std::filesystem::path& path, const eval::DetectionRun& run) {
  std::ostringstream os;
  ordered_json header = {{"type", "run"},        {"scenario", run.scenario},
                         {"seed", run.seed},     {"mode", run.mode},
                         {"no_memory", run.no_memory}, {"no_map", run.no_map}};
  os << header.dump() << "\n";
  for (const auto& f : run.frames) {
    ordered_json fj = {{"type", "frame"},
                       {"packet_index", f.packet_index},
                       {"t_start_us", f.t_start.micros},
                       {"t_end_us", f.t_end.micros},
                       {"ego", {f.ego_pose.x, f.ego_pose.y, f.ego_pose.yaw}},
                       {"is_sweep", f.is_sweep},
                       {"inference_ms", f.inference_ms}};
    if (f.has_region) {
      fj["region"] = {f.rx0, f.ry0, f.rx1, f.ry1};
    } else {
      fj["region"] = nullptr;
    }
    os << fj.dump() << "\n";
    for (const auto& d : f.dets) {
      ordered_json dj = {{"type", "det"},
                         {"class", class_name(d.cls)},
                         {"cx", d.cx},
                         {"cy", d.cy},
                         {"l", d.length},
                         {"w", d.width},
                         {"heading", d.heading},
                         {"score", d.score},
                         {"emitted_at_us", d.emitted_at.micros}};
      os << dj.dump() << "\n";
    }
  }
  spew(path, os.str());
}

eval::DetectionRun read_detections(const std::filesystem::path& path) {
  std::istringstream in(slurp(path));
  eval::DetectionRun run;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ordered_json j = ordered_json::parse(line);
    const std::string type = j.at("type").get<std::string>();
    if (type == "run") {
      run.scenario = j.at("scenario").get<std::string>();
      run.seed = j.at("seed").get<std::uint64_t>();
      run.mode = j.at("mode").get<std::string>();
      run.no_memory = j.at("no_memory").get<bool>();
      run.no_map = j.at("no_map").get<bool>();
      have_header = true;
    } else if (type == "frame") {
      if (!have_header)
        throw std::runtime_error(path.string() + ": frame record before run header");
      eval::FrameRecord f;
      f.packet_index = j.at("packet_index").get<int>();
      f.t_start.micros = j.at("t_start_us").get<std::int64_t>();
      f.t_end.micros = j.at("t_end_us").get<std::int64_t>();
      const auto& e = j.at("ego");
      f.ego_pose = {e.at(0).get<double>(), e.at(1).get<double>(), e.at(2).get<double>()};
      f.is_sweep = j.at("is_sweep").get<bool>();
      f.inference_ms = j.at("inference_ms").get<double>();
      const auto& rg = j.at("region");
      if (!rg.is_null()) {
        f.has_region = true;
        f.rx0 = rg.at(0).get<double>();
        f.ry0 = rg.at(1).get<double>();
        f.rx1 = rg.at(2).get<double>();
        f.ry1 = rg.at(3).get<double>();
      }
      run.frames.push_back(std::move(f));
    } else if (type == "det") {
      if (run.frames.empty())
        throw std::runtime_error(path.string() + ": det record before any frame record");
      DetBox d;
      auto cls = class_from_name(j.at("class").get<std::string>());
      if (!cls) throw std::runtime_error(path.string() + ": unknown class name");
      d.cls = *cls;
      d.cx = j.at("cx").get<double>();
      d.cy = j.at("cy").get<double>();
      d.length = j.at("l").get<double>();
      d.width = j.at("w").get<double>();
      d.heading = j.at("heading").get<double>();
      d.score = j.at("score").get<double>();
      d.emitted_at.micros = j.at("emitted_at_us").get<std::int64_t>();
      run.frames.back().dets.push_back(d);
    } else {
      throw std::runtime_error(path.string() + ": unknown record type \"" + type + "\"");
    }
  }
  if (!have_header) throw std::runtime_error(path.string() + ": missing run header");
  return run;
}

void write_report(const std::filesystem::path& path, const eval::Report& report) {
  ordered_json j;
  j["scenario"] = report.scenario;
  j["mode"] = report.mode;
  j["seed"] = report.seed;
  const char* mode_keys[2] = {"latency_map", "common_map"};
  for (int mi = 0; mi < 2; ++mi) {
    ordered_json table = ordered_json::object();
    for (int ci = 0; ci < kNumClasses; ++ci) {
      ordered_json cells = ordered_json::array();
      for (int ti = 0; ti < 2; ++ti) {
        const auto& c = report.table[mi][ci][ti];
        cells.push_back({{"ap", std::isnan(c.ap) ? ordered_json(nullptr) : ordered_json(c.ap)},
                         {"num_labels", c.num_labels},
                         {"num_dets", c.num_dets}});
      }
      table[class_name(static_cast<ClassId>(ci))] = std::move(cells);
    }
    j[mode_keys[mi]] = std::move(table);
  }
  ordered_json zp = ordered_json::object();
  for (int ci = 0; ci < kNumClasses; ++ci) {
    zp[class_name(static_cast<ClassId>(ci))] = {
        {"zero_point", {{"matched", report.zero_point[ci].matched},
                        {"total", report.zero_point[ci].total}}},
        {"seen_point", {{"matched", report.seen_point[ci].matched},
                        {"total", report.seen_point[ci].total}}}};
  }
  j["recall_split"] = std::move(zp);
  // Only the simulated-clock latency goes in the file: reports must be
  // byte-identical across runs of the same seed.
  j["latency"] = {{"accumulation_ms", report.accumulation_ms}};
  spew(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Configuration documents
// ---------------------------------------------------------------------------

sim::ScenarioConfig parse_scenario_json(const std::string& text) {
  ordered_json j = ordered_json::parse(text);
  reject_unknown_keys(j, {"name", "seed", "duration_s", "ego", "actors", "map", "sensor"},
                      "scenario");
  sim::ScenarioConfig cfg;
  if (j.contains("name")) cfg.name = j["name"].get<std::string>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("duration_s")) cfg.duration_s = j["duration_s"].get<double>();
  if (j.contains("ego")) {
    const auto& e = j["ego"];
    reject_unknown_keys(e, {"waypoints", "speed", "yaw"}, "scenario.ego");
    if (e.contains("waypoints")) {
      cfg.ego.waypoints.clear();
      for (const auto& wp : e["waypoints"])
        cfg.ego.waypoints.emplace_back(wp.at(0).get<double>(), wp.at(1).get<double>());
    }
    if (e.contains("speed")) cfg.ego.speed = e["speed"].get<double>();
    if (e.contains("yaw")) cfg.ego.yaw = e["yaw"].get<double>();
  }
  if (j.contains("actors")) {
    for (const auto& aj : j["actors"]) {
      reject_unknown_keys(aj,
                          {"id", "class", "length", "width", "x", "y", "yaw", "speed",
                           "yaw_rate", "spawn_s", "despawn_s"},
                          "scenario.actors[]");
      sim::ActorSpec a;
      a.id = aj.at("id").get<int>();
      auto cls = class_from_name(aj.at("class").get<std::string>());
      if (!cls) throw std::invalid_argument("scenario.actors[]: unknown class");
      a.cls = *cls;
      if (aj.contains("length")) a.length = aj["length"].get<double>();
      if (aj.contains("width")) a.width = aj["width"].get<double>();
      a.start = {aj.at("x").get<double>(), aj.at("y").get<double>(),
                 aj.value("yaw", 0.0)};
      if (aj.contains("speed")) a.speed = aj["speed"].get<double>();
      if (aj.contains("yaw_rate")) a.yaw_rate = aj["yaw_rate"].get<double>();
      if (aj.contains("spawn_s")) a.spawn_s = aj["spawn_s"].get<double>();
      if (aj.contains("despawn_s")) a.despawn_s = aj["despawn_s"].get<double>();
      cfg.actors.push_back(a);
    }
  }
  if (j.contains("map")) {
    reject_unknown_keys(j["map"], {"roads", "crosswalks"}, "scenario.map");
    if (j["map"].contains("roads")) cfg.map.roads = polygons_from_json(j["map"]["roads"]);
    if (j["map"].contains("crosswalks"))
      cfg.map.crosswalks = polygons_from_json(j["map"]["crosswalks"]);
  }
  if (j.contains("sensor")) {
    const auto& s = j["sensor"];
    reject_unknown_keys(
        s, {"spin_hz", "packets_per_sweep", "azimuth_step", "max_range", "dropout", "height"},
        "scenario.sensor");
    if (s.contains("spin_hz")) cfg.sensor.spin_hz = s["spin_hz"].get<double>();
    if (s.contains("packets_per_sweep"))
      cfg.sensor.packets_per_sweep = s["packets_per_sweep"].get<int>();
    if (s.contains("azimuth_step")) cfg.sensor.azimuth_step = s["azimuth_step"].get<double>();
    if (s.contains("max_range")) cfg.sensor.max_range = s["max_range"].get<double>();
    if (s.contains("dropout")) cfg.sensor.dropout = s["dropout"].get<double>();
    if (s.contains("height")) cfg.sensor.height = s["height"].get<double>();
  }
  cfg.validate();
  return cfg;
}

sim::ScenarioConfig load_scenario_file(const std::filesystem::path& path) {
  return parse_scenario_json(slurp(path));
}

net::NetConfig RunConfig::net_config() const {
  if (net == "tiny") return net::NetConfig::tiny();
  if (net == "full") return net::NetConfig{};
  throw std::invalid_argument("run config: net must be \"tiny\" or \"full\"");
}

void RunConfig::validate() const {
  if (mode != "packet" && mode != "sweep")
    throw std::invalid_argument("run config: mode must be \"packet\" or \"sweep\"");
  net_config();  // throws on bad name
  if (train_steps <= 0) throw std::invalid_argument("run config: train_steps must be positive");
  if (lr <= 0.0) throw std::invalid_argument("run config: lr must be positive");
}

RunConfig parse_run_config(const std::string& text) {
  ordered_json j = ordered_json::parse(text);
  reject_unknown_keys(j,
                      {"scenario", "scenario_file", "mode", "no_memory", "no_map", "net",
                       "seed", "weights", "packets", "labels", "detections", "report",
                       "checkpoint", "loss_csv", "resume", "train_steps", "lr", "train_seed",
                       "eval"},
                      "run config");
  RunConfig cfg;
  if (j.contains("scenario")) cfg.scenario = j["scenario"].get<std::string>();
  if (j.contains("scenario_file")) cfg.scenario_file = j["scenario_file"].get<std::string>();
  if (j.contains("mode")) cfg.mode = j["mode"].get<std::string>();
  if (j.contains("no_memory")) cfg.no_memory = j["no_memory"].get<bool>();
  if (j.contains("no_map")) cfg.no_map = j["no_map"].get<bool>();
  if (j.contains("net")) cfg.net = j["net"].get<std::string>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("weights")) cfg.weights = j["weights"].get<std::string>();
  if (j.contains("packets")) cfg.packets = j["packets"].get<std::string>();
  if (j.contains("labels")) cfg.labels = j["labels"].get<std::string>();
  if (j.contains("detections")) cfg.detections = j["detections"].get<std::string>();
  if (j.contains("report")) cfg.report = j["report"].get<std::string>();
  if (j.contains("checkpoint")) cfg.checkpoint = j["checkpoint"].get<std::string>();
  if (j.contains("loss_csv")) cfg.loss_csv = j["loss_csv"].get<std::string>();
  if (j.contains("resume")) cfg.resume = j["resume"].get<bool>();
  if (j.contains("train_steps")) cfg.train_steps = j["train_steps"].get<int>();
  if (j.contains("lr")) cfg.lr = j["lr"].get<double>();
  if (j.contains("train_seed")) cfg.train_seed = j["train_seed"].get<std::uint64_t>();
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    reject_unknown_keys(e, {"range_cap", "region_filter", "thresholds"}, "run config.eval");
    if (e.contains("range_cap")) cfg.eval.range_cap = e["range_cap"].get<double>();
    if (e.contains("region_filter")) cfg.eval.region_filter = e["region_filter"].get<bool>();
    if (e.contains("thresholds")) {
      const auto& th = e["thresholds"];
      for (int ci = 0; ci < kNumClasses; ++ci)
        for (int ti = 0; ti < 2; ++ti) cfg.eval.thresholds[ci][ti] = th.at(ci).at(ti).get<double>();
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(slurp(path));
}

sim::ScenarioConfig resolve_scenario(const RunConfig& cfg) {
  sim::ScenarioConfig scn = cfg.scenario_file.empty()
                                ? sim::preset_scenario(cfg.scenario)
                                : load_scenario_file(cfg.scenario_file);
  scn.seed = cfg.seed;
  return scn;
}

}  // namespace strobe::io
