#include "lidaradv/scene.hpp"

#include <algorithm>
#include <cmath>

namespace lidaradv {

Environment make_flat_environment(const GridSpec& grid, const SensorSpec& sensor, double ground_intensity) {
  grid.validate();
  Environment env;
  env.grid = grid;
  env.sensor = sensor;
  const auto elevations = sensor.elevations_deg();
  env.rays = rays_from_spec(sensor.azimuth_count, elevations, sensor.origin());
  env.background = attach_flat_ground(env.rays, ground_intensity);
  return env;
}

Environment make_captured_environment(PointCloud background, const GridSpec& grid, const SensorSpec& sensor) {
  grid.validate();
  Environment env;
  env.grid = grid;
  env.sensor = sensor;
  env.rays = rays_from_background(background, sensor.origin());
  env.background = std::move(background);
  return env;
}

void AttackGoal::validate() const {
  if (kind == GoalKind::relabel && source_class == target_class) {
    throw ConfigError("relabel goal needs distinct source and target classes");
  }
}

CellMask build_mask(const TriangleMesh& mesh, const Pose& pose, const GridSpec& spec) {
  const auto [lo, hi] = apply_pose(mesh, pose).bounds();
  // Cells whose interior meets [lo, hi].
  const int r0 = static_cast<int>(std::floor((lo.x - spec.origin_x) / spec.cell_size));
  const int r1 = static_cast<int>(std::ceil((hi.x - spec.origin_x) / spec.cell_size)) - 1;
  const int c0 = static_cast<int>(std::floor((lo.y - spec.origin_y) / spec.cell_size));
  const int c1 = static_cast<int>(std::ceil((hi.y - spec.origin_y) / spec.cell_size)) - 1;
  if (r1 < 0 || c1 < 0 || r0 >= spec.rows || c0 >= spec.cols || hi.x < spec.roi.x_min || lo.x > spec.roi.x_max ||
      hi.y < spec.roi.y_min || lo.y > spec.roi.y_max) {
    throw ConfigError("object footprint does not overlap the grid/ROI");
  }
  CellMask mask(spec.rows, spec.cols);
  for (int r = std::max(0, r0 - 1); r <= std::min(spec.rows - 1, r1 + 1); ++r) {
    for (int c = std::max(0, c0 - 1); c <= std::min(spec.cols - 1, c1 + 1); ++c) mask.set(r, c);
  }
  return mask;
}

Rect2 region_rect(const CellRegion& region, const GridSpec& spec) {
  return {spec.origin_x + region.row0 * spec.cell_size, spec.origin_x + (region.row0 + region.rows) * spec.cell_size,
          spec.origin_y + region.col0 * spec.cell_size, spec.origin_y + (region.col0 + region.cols) * spec.cell_size};
}

bool goal_achieved(const AttackGoal& goal, const std::vector<Obstacle>& obstacles, const Rect2& mask_rect) {
  bool any = false;
  for (const auto& ob : obstacles) {
    if (!footprint_intersects(ob.bbox, mask_rect)) continue;
    if (goal.kind == GoalKind::hide) return false;
    if (ob.label != goal.target_class) return false;
    any = true;
  }
  return goal.kind == GoalKind::hide || any;
}

bool benign_precondition(const AttackGoal& goal, const std::vector<Obstacle>& obstacles, const Rect2& mask_rect) {
  for (const auto& ob : obstacles) {
    if (!footprint_intersects(ob.bbox, mask_rect)) continue;
    if (goal.kind == GoalKind::hide || ob.label == goal.source_class) return true;
  }
  return false;
}

std::vector<Victim> make_victims(const TriangleMesh& benign, const std::vector<Pose>& poses, const GridSpec& spec) {
  std::vector<Victim> out;
  out.reserve(poses.size());
  const Vec3 centroid = benign.centroid();
  for (const auto& pose : poses) {
    CellMask mask = build_mask(benign, pose, spec);
    const CellRegion region = mask.bounding_region();
    out.push_back(Victim{pose, PoseTransform(pose, centroid), std::move(mask), region, region_rect(region, spec)});
  }
  return out;
}

TriangleMesh posed_mesh(const TriangleMesh& benign, std::span<const Vec3> disp, const PoseTransform& tf) {
  std::vector<Vec3> v = disp.empty() ? benign.vertices() : displaced_vertices(benign, disp);
  for (auto& p : v) p = tf.apply(p);
  return benign.with_vertices(std::move(v));
}

std::vector<Obstacle> detect_posed(const Environment& env, const DetectorParams& params, const TriangleMesh& benign,
                                   std::span<const Vec3> disp, const Victim& victim) {
  const TriangleMesh mesh = posed_mesh(benign, disp, victim.transform);
  const SceneScan scan = render_scene(mesh, env.background, env.rays, env.object_intensity);
  return detect_cloud(scan.combined(), env.grid, params);
}

}  // namespace lidaradv
