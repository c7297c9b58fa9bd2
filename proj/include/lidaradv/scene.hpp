#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "lidaradv/postprocess.hpp"

namespace lidaradv {

/// Raised for inconsistent or unsatisfiable configurations (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Sensor rays, background cloud and grid shared by every evaluation of a
/// scene.
struct Environment {
  GridSpec grid;
  SensorSpec sensor;
  RayBundle rays;
  PointCloud background;
  double object_intensity = kDefaultObjectIntensity;
};

/// Synthetic rays from the sensor pattern over a flat z = 0 ground.
Environment make_flat_environment(const GridSpec& grid = {}, const SensorSpec& sensor = {},
                                  double ground_intensity = kDefaultGroundIntensity);
/// Rays reconstructed from a captured background cloud.
Environment make_captured_environment(PointCloud background, const GridSpec& grid = {},
                                      const SensorSpec& sensor = {});

enum class GoalKind { hide, relabel };

struct AttackGoal {
  GoalKind kind = GoalKind::hide;
  int source_class = 0;
  int target_class = 0;

  void validate() const;
};

/// Cells under the posed mesh's ground-plane bounding box, grown by one cell.
/// Throws ConfigError when the footprint misses the grid.
CellMask build_mask(const TriangleMesh& mesh, const Pose& pose, const GridSpec& spec);

/// World rectangle covered by a cell region.
Rect2 region_rect(const CellRegion& region, const GridSpec& spec);

/// Hard-pipeline verdict for one pose given the detections and the victim
/// mask rectangle. Hide: no obstacle footprint touches the mask. Relabel: at
/// least one obstacle touches it and all such obstacles carry the target label.
bool goal_achieved(const AttackGoal& goal, const std::vector<Obstacle>& obstacles, const Rect2& mask_rect);

/// True when the benign object is visible to the hard pipeline as required by
/// the goal (any overlapping obstacle for hide; one labeled `source_class`
/// for relabel).
bool benign_precondition(const AttackGoal& goal, const std::vector<Obstacle>& obstacles, const Rect2& mask_rect);

/// Per-pose data reused across attack iterations.
struct Victim {
  Pose pose;
  PoseTransform transform;
  CellMask mask;
  CellRegion mask_region;
  Rect2 mask_rect;
};

std::vector<Victim> make_victims(const TriangleMesh& benign, const std::vector<Pose>& poses, const GridSpec& spec);

/// Benign mesh with object-frame displacement applied, then posed.
TriangleMesh posed_mesh(const TriangleMesh& benign, std::span<const Vec3> disp, const PoseTransform& tf);

/// Full hard-pipeline detections for one pose of a displaced object.
std::vector<Obstacle> detect_posed(const Environment& env, const DetectorParams& params, const TriangleMesh& benign,
                                   std::span<const Vec3> disp, const Victim& victim);

}  // namespace lidaradv
