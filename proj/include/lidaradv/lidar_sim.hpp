#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "lidaradv/geometry.hpp"

namespace lidaradv {

struct LidarPoint {
  Vec3 position;
  double intensity = 0.0;  ///< in [0, 1]
};

struct PointCloud {
  std::vector<LidarPoint> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Ray directions from a common sensor origin. `background_index[i]` is the
/// index of the background point ray i was derived from, or -1.
struct RayBundle {
  Vec3 origin;
  std::vector<Vec3> directions;
  std::vector<std::int64_t> background_index;

  std::size_t size() const { return directions.size(); }
};

struct HitRecord {
  std::size_t ray_index = 0;
  std::uint32_t face_index = 0;
  double t = 0.0;
  /// Hit point = b0 v0 + b1 v1 + b2 v2 of the hit face.
  std::array<double, 3> barycentric{};
};

struct SceneScan {
  PointCloud foreground;
  std::vector<HitRecord> hits;  ///< parallel to foreground.points
  PointCloud background_kept;
  std::vector<std::size_t> kept_indices;
  std::vector<std::size_t> occluded_indices;

  /// Background points followed by foreground points.
  PointCloud combined() const;
};

/// Sensor scan pattern used to synthesize ray bundles.
struct SensorSpec {
  int azimuth_count = 512;
  int elevation_count = 32;
  double elevation_min_deg = -25.0;
  double elevation_max_deg = 5.0;
  double height = 1.8;

  std::vector<double> elevations_deg() const;
  Vec3 origin() const { return {0.0, 0.0, height}; }
};

inline constexpr double kMinHitDistance = 1e-6;
inline constexpr double kDefaultObjectIntensity = 0.5;
inline constexpr double kDefaultGroundIntensity = 0.3;

/// One ray per (azimuth, elevation) pair, azimuth-major, azimuths uniformly
/// spaced from 0.
RayBundle rays_from_spec(int azimuth_count, std::span<const double> elevations_deg, const Vec3& origin);

/// One ray per background point, pointing from `origin` to the point.
/// Throws std::invalid_argument when a point coincides with the origin.
RayBundle rays_from_background(const PointCloud& cloud, const Vec3& origin);

/// Samples the ground plane z = 0 with every downward ray of `rays` whose
/// ground hit lies within `max_range` (horizontal distance); records the
/// per-ray background index.
PointCloud attach_flat_ground(RayBundle& rays, double intensity = kDefaultGroundIntensity,
                              double max_range = 40.0);

/// Ray/triangle intersection (Moller-Trumbore). Returns {t, b1, b2}.
std::optional<std::array<double, 3>> intersect_triangle(const Vec3& origin, const Vec3& dir,
                                                        const Vec3& v0, const Vec3& v1, const Vec3& v2);

/// Bounding-volume hierarchy over mesh faces for nearest-hit queries.
class FaceBvh {
 public:
  explicit FaceBvh(const TriangleMesh& mesh);

  /// Nearest hit with t > kMinHitDistance; ties resolve to the lower face index.
  std::optional<HitRecord> nearest(const Vec3& origin, const Vec3& dir) const;

 private:
  struct Node {
    Vec3 lo, hi;
    std::uint32_t left = 0;   // child index, or first face slot when leaf
    std::uint32_t count = 0;  // faces in leaf, 0 for interior nodes
    std::uint32_t right = 0;
  };
  std::uint32_t build(std::uint32_t begin, std::uint32_t end);

  const TriangleMesh* mesh_;
  std::vector<std::uint32_t> order_;
  std::vector<Vec3> centers_;
  std::vector<std::array<Vec3, 2>> boxes_;
  std::vector<Node> nodes_;
};

/// Nearest-hit per ray, computed through the BVH. Results are indexed by ray.
std::vector<std::optional<HitRecord>> intersect(const RayBundle& rays, const TriangleMesh& mesh);
/// Same contract, checking every face for every ray.
std::vector<std::optional<HitRecord>> intersect_brute_force(const RayBundle& rays, const TriangleMesh& mesh);

/// Composites the mesh onto the background with per-ray depth testing.
SceneScan render_scene(const TriangleMesh& mesh, const PointCloud& background, const RayBundle& rays,
                       double object_intensity = kDefaultObjectIntensity);

struct HitAdjoint {
  std::array<std::uint32_t, 3> vertices{};
  std::array<Vec3, 3> adjoint{};
  bool degenerate = false;
};

/// Vertex adjoints of a hit point p = origin + t(v0, v1, v2) dir for a given
/// adjoint on p, holding the ray/face assignment fixed.
HitAdjoint hit_backward(const HitRecord& hit, const TriangleMesh& mesh, const Vec3& dir,
                        const Vec3& adjoint_on_point);

/// CSV with header `x,y,z,intensity`.
void write_cloud_csv(const PointCloud& cloud, const std::filesystem::path& path);
PointCloud read_cloud_csv(const std::filesystem::path& path);
/// uint64 record count followed by little-endian float32 (x, y, z, intensity).
void write_cloud_bin(const PointCloud& cloud, const std::filesystem::path& path);
PointCloud read_cloud_bin(const std::filesystem::path& path);
/// Dispatches on extension: `.csv` or anything else as binary.
PointCloud read_cloud(const std::filesystem::path& path);
void write_cloud(const PointCloud& cloud, const std::filesystem::path& path);

}  // namespace lidaradv
