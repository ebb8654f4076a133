#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fmpestf/config.hpp"

namespace fmpestf {

struct DataConfig {
  std::string series;
  std::string adjacency;  // empty when no prompt graph is given
  std::array<double, 3> split{0.6, 0.2, 0.2};
  std::size_t window_stride = 1;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct SynthConfig {
  std::size_t nodes = 8;
  std::size_t days = 14;
  int interval_min = 5;
  double noise = 1.0;
  double coupling = 1.0;
  double weekly_amplitude = 0.15;

  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

// Effective settings of one command, written next to its outputs. Passing the
// file back through --config reruns the command with the same settings.
struct RunManifest {
  std::string command;
  std::uint64_t seed = 0;
  std::string ablation = "none";
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  SynthConfig synth;
  std::string checkpoint;
  std::string op = "model";
};

void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);
void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);
void to_json(nlohmann::json& j, const RunManifest& m);
void from_json(const nlohmann::json& j, RunManifest& m);

RunManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& dir, const RunManifest& manifest);

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumerical = 4,
};

// Entry point behind the command-line tool; args exclude the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fmpestf
