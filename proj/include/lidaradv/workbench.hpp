#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "lidaradv/scene.hpp"

namespace lidaradv {

struct ObjectSpec {
  PrimitiveKind kind = PrimitiveKind::cube;
  double size = 0.5;
  /// Per-axis stretch applied before posing.
  Vec3 scale{1.0, 1.0, 1.0};
  int target_vertices = 8;
  Pose pose;
  int class_id = static_cast<int>(ObjectClass::other);
  double intensity = kDefaultObjectIntensity;
};

enum class BackgroundKind { flat_ground, captured };
enum class RayMode { spec, from_background };

struct SceneSpec {
  BackgroundKind background = BackgroundKind::flat_ground;
  std::filesystem::path background_file;
  RayMode ray_mode = RayMode::spec;
  double ground_intensity = kDefaultGroundIntensity;
  std::vector<ObjectSpec> objects;
  std::uint64_t seed = 0;

  void validate(const GridSpec& grid) const;
};

/// Object-frame mesh of a spec (not posed).
TriangleMesh object_mesh(const ObjectSpec& spec);

Environment make_environment(const SceneSpec& scene, const GridSpec& grid = {}, const SensorSpec& sensor = {});

/// Copy of a flat-ground environment with every background point set to
/// `ground_intensity`.
Environment with_ground_intensity(const Environment& env, double ground_intensity);

/// Scan of posed objects over the environment background; each object's
/// points carry its own intensity.
SceneScan render_objects(const Environment& env, const std::vector<ObjectSpec>& objects);

/// Renders posed objects over the environment background and derives cell
/// targets: object cells are those whose center lies in an object's
/// footprint hull or that receive one of its points.
LabeledScene label_scene(const Environment& env, const std::vector<ObjectSpec>& objects);

struct SceneLayout {
  std::vector<ObjectSpec> objects;
  double ground_intensity = kDefaultGroundIntensity;
};

/// Randomized layouts with varied object and ground reflectance; at least
/// 20% are background-only.
std::vector<SceneLayout> synth_layouts(int count, std::uint64_t seed, const GridSpec& grid = {});

std::vector<LabeledScene> synth_dataset(int count, std::uint64_t seed, const Environment& env);

struct UnseenBand {
  std::string name;
  double distance_min = 0.0;  ///< meters of translation offset
  double distance_max = 0.0;
  double yaw_min = 0.0;       ///< degrees of |yaw offset|
  double yaw_max = 0.0;
  int samples = 0;
};

struct EvalGrid {
  Pose base;
  std::vector<Pose> controlled;
  std::vector<UnseenBand> bands;
  std::uint64_t seed = 0;

  /// Positions {0, +-offset}^2 around `base` times yaws {0, +-2.5, +-5}.
  static std::vector<Pose> controlled_grid(const Pose& base, double offset = 0.5);
  /// Controlled grid plus distance bands 0-50 / 50-100 cm (100 samples) and
  /// orientation bands 0-5 / 0-10 degrees (10 samples).
  static EvalGrid standard(const Pose& base, std::uint64_t seed);
};

/// Seeded unseen poses of one band, disjoint from `controlled`.
std::vector<Pose> sample_band(const UnseenBand& band, const Pose& base, const std::vector<Pose>& controlled,
                              std::uint64_t seed);

struct BandResult {
  std::string name;
  std::size_t success = 0;
  std::size_t total = 0;

  double rate() const { return total == 0 ? 0.0 : static_cast<double>(success) / static_cast<double>(total); }
};

struct EvalTable {
  BandResult controlled;
  std::vector<BandResult> unseen;
};

/// Hard-pipeline success of `mesh` at every grid pose. Masks and the pose
/// pivot come from `reference` (the benign mesh), which must share `mesh`'s
/// topology.
EvalTable evaluate(const TriangleMesh& mesh, const TriangleMesh& reference, const EvalGrid& grid,
                   const AttackGoal& goal, const Environment& env, const DetectorParams& params);

nlohmann::json eval_to_json(const EvalTable& table);

}  // namespace lidaradv
