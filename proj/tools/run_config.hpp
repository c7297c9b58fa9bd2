#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "lidaradv/attack.hpp"
#include "lidaradv/evolution.hpp"
#include "lidaradv/workbench.hpp"

namespace lidaradv::cli {

struct VictimSpec {
  std::vector<Pose> poses;
  /// Used when `poses` is empty: controlled grid around `base`.
  Pose base{{8.0, 0.0, 0.0}, 0.0};
  double offset = 0.5;
  bool use_grid = false;

  std::vector<Pose> resolve() const;
};

struct EvalSpec {
  Pose base{{8.0, 0.0, 0.0}, 0.0};
  std::filesystem::path mesh;
  std::filesystem::path reference;
};

/// Everything a subcommand reads. Paths are absolute once loaded.
struct RunConfig {
  std::uint64_t seed = 0;
  GridSpec grid;
  SensorSpec sensor;
  SceneSpec scene;
  ObjectSpec object{PrimitiveKind::cube, 0.5, {1.0, 1.0, 1.0}, 152, {}, 3, kDefaultObjectIntensity};
  std::filesystem::path object_mesh;
  std::filesystem::path model;
  int synth_count = 200;
  int synth_held_out = 50;
  TrainConfig train;
  AttackGoal goal;
  VictimSpec victims;
  AttackConfig attack;
  EvolutionConfig evolution;
  EvalSpec eval;

  /// Seeds of every stage derived from `seed`.
  void apply_seed();
};

/// Reads a config file or a manifest written by an earlier run (its "config"
/// member). Relative paths resolve against the file's directory. Throws
/// ConfigError on malformed or unknown values.
RunConfig load_config(const std::filesystem::path& path, std::string* manifest_command = nullptr);
RunConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir);

nlohmann::json to_json(const RunConfig& cfg);

/// Benign object mesh: `object_mesh` when set, otherwise the primitive.
TriangleMesh load_object(const RunConfig& cfg);

}  // namespace lidaradv::cli
