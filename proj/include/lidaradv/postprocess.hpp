#pragma once

#include <array>
#include <span>
#include <vector>

#include "json.hpp"
#include "lidaradv/detector.hpp"

namespace lidaradv {

inline constexpr double kObjectnessGate = 0.5;
inline constexpr double kConfidenceGate = 0.1;
inline constexpr std::size_t kMinClusterPoints = 4;  // "more than 3"

struct Cluster {
  std::vector<std::size_t> cells;  ///< row-major cell indices, ascending
  double mean_positiveness = 0.0;
  std::vector<double> class_prob_sum;
  std::vector<std::size_t> point_indices;  ///< into the ROI cloud
};

struct OrientedBox {
  double cx = 0.0, cy = 0.0, cz = 0.0;
  double length = 0.0;  ///< along the yaw direction, >= width
  double width = 0.0;
  double height = 0.0;
  double yaw_deg = 0.0;  ///< in [-90, 90)

  std::array<std::array<double, 2>, 4> footprint() const;
  double area() const { return length * width; }
};

struct Obstacle {
  int label = 0;
  double confidence = 0.0;
  OrientedBox bbox;
  std::size_t cell_count = 0;
  std::size_t point_count = 0;
};

struct ObstacleCandidate {
  Cluster cluster;
  int label = 0;
  double confidence = 0.0;
};

/// Gated cells (objectness > 0.5) linked along their rounded center offsets;
/// weakly connected components in row-major discovery order.
std::vector<Cluster> cluster(const ModelOutput& output, const PointCloud& roi_cloud, const GridSpec& spec);

/// Keeps clusters with mean positiveness > 0.1 and more than 3 points.
std::vector<ObstacleCandidate> filter_and_classify(const std::vector<Cluster>& clusters, const ModelOutput& output);

using Point2 = std::array<double, 2>;

/// Counter-clockwise convex hull without collinear points.
std::vector<Point2> convex_hull(std::vector<Point2> points);

/// Minimum-area enclosing rectangle of 2D points via rotating calipers.
/// Extents below `min_extent` are clamped to it.
OrientedBox min_area_rect(std::span<const Point2> points, double min_extent);

Obstacle build_box(const ObstacleCandidate& candidate, const PointCloud& roi_cloud, const GridSpec& spec);

/// Full hard pipeline: render, ROI filter, floor-binned features, detector,
/// clustering, filtering and box building. `mesh` may be null.
std::vector<Obstacle> detect(const TriangleMesh* mesh, const PointCloud& background, const RayBundle& rays,
                             const GridSpec& spec, const DetectorParams& params);

/// Same pipeline starting from an already rendered scene cloud.
std::vector<Obstacle> detect_cloud(const PointCloud& scene_cloud, const GridSpec& spec, const DetectorParams& params);

/// Separating-axis test between a box footprint and an axis-aligned rectangle.
bool footprint_intersects(const OrientedBox& box, const Rect2& rect);

nlohmann::json detection_report(const std::vector<Obstacle>& obstacles);

}  // namespace lidaradv
