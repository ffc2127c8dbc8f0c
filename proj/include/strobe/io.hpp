#pragma once

// Binary packet/weight file formats, JSON sidecars, and run configuration.

#include <filesystem>
#include <string>
#include <vector>

#include "strobe/eval.hpp"
#include "strobe/net.hpp"
#include "strobe/sim.hpp"

namespace strobe::io {

// ---------------------------------------------------------------------------
// STRBP packet stream (little-endian, length-prefixed records)
// ---------------------------------------------------------------------------

struct PacketFile {
  sim::SensorSpec sensor;
  std::uint64_t seed = 0;
  std::vector<Packet> packets;
};

void write_packet_file(const std::filesystem::path& path, const PacketFile& file);
// Throws std::runtime_error on bad magic, unsupported version, or truncation.
PacketFile read_packet_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// STRBW weights
// ---------------------------------------------------------------------------

void write_weights(const std::filesystem::path& path, const net::Weights<float>& weights);
net::Weights<float> read_weights(const std::filesystem::path& path);
// read + shape validation against the schedule; errors name the tensor.
net::Weights<float> load_weights(const std::filesystem::path& path,
                                 const std::vector<net::WeightSpec>& schedule);

// ---------------------------------------------------------------------------
// JSON sidecars
// ---------------------------------------------------------------------------

// Labels + map + observation bookkeeping for one generated scenario.
void write_labels(const std::filesystem::path& path, const sim::ScenarioData& data);
eval::LabelData read_labels(const std::filesystem::path& path);

// Detections as JSON-lines: one run header, then frame and det records.
void write_detections(const std::filesystem::path& path, const eval::DetectionRun& run);
eval::DetectionRun read_detections(const std::filesystem::path& path);

void write_report(const std::filesystem::path& path, const eval::Report& report);

// ---------------------------------------------------------------------------
// Configuration documents (unknown keys rejected)
// ---------------------------------------------------------------------------

sim::ScenarioConfig parse_scenario_json(const std::string& text);
sim::ScenarioConfig load_scenario_file(const std::filesystem::path& path);

struct RunConfig {
  std::string scenario = "stationary_grid";  // preset name
  std::string scenario_file;                 // overrides `scenario` when set
  std::string mode = "packet";               // packet | sweep
  bool no_memory = false;
  bool no_map = false;
  std::string net = "tiny";  // tiny | full
  std::uint64_t seed = 1;

  std::string weights;     // STRBW path ("" = fresh init from seed)
  std::string packets;     // STRBP path
  std::string labels;      // labels sidecar path
  std::string detections;  // detections JSON-lines path
  std::string report;      // report output prefix (.json/.txt)
  std::string checkpoint;  // STRBW checkpoint output
  std::string loss_csv;    // loss trace output
  bool resume = false;

  int train_steps = 200;
  double lr = 0.01;
  std::uint64_t train_seed = 1;

  eval::EvalConfig eval;

  net::NetConfig net_config() const;
  void validate() const;  // throws std::invalid_argument
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

// Scenario resolution shared by the commands.
sim::ScenarioConfig resolve_scenario(const RunConfig& cfg);

}  // namespace strobe::io
