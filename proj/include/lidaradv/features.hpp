#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "lidaradv/lidar_sim.hpp"

namespace lidaradv {

/// Closed axis-aligned rectangle in the ground plane.
struct Rect2 {
  double x_min = 0.0;
  double x_max = 0.0;
  double y_min = 0.0;
  double y_max = 0.0;

  bool contains(double x, double y) const { return x >= x_min && x <= x_max && y >= y_min && y <= y_max; }
};

/// Bird's-eye grid. Rows run along +x and columns along +y from the corner
/// (`origin_x`, `origin_y`); slabs split [z_min, z_max] into `slabs` layers.
/// Slab p is represented by the height z_min + p * slab_height().
struct GridSpec {
  int rows = 128;
  int cols = 128;
  int slabs = 40;
  double cell_size = 0.125;
  double origin_x = 0.0;
  double origin_y = -8.0;
  double z_min = -0.5;
  double z_max = 3.5;
  Rect2 roi{0.0, 16.0, -8.0, 8.0};

  void validate() const;
  double slab_height() const { return (z_max - z_min) / slabs; }
  double slab_value(int p) const { return z_min + p * slab_height(); }
  std::pair<double, double> cell_center(int row, int col) const {
    return {origin_x + (row + 0.5) * cell_size, origin_y + (col + 0.5) * cell_size};
  }
  /// Cell containing (x, y), or {-1, -1} when outside the grid.
  std::pair<int, int> cell_of(double x, double y) const;
  /// Sub-grid sharing this grid's lattice, starting at (row0, col0).
  GridSpec window(int row0, int col0, int rows, int cols) const;
  std::size_t cell_count() const { return static_cast<std::size_t>(rows) * cols; }
};

inline constexpr int kFeatureChannels = 8;

enum class FeatureChannel : int {
  max_height = 0,
  max_intensity = 1,
  mean_height = 2,
  mean_intensity = 3,
  count = 4,
  direction = 5,
  distance = 6,
  non_empty = 7,
};

/// rows x cols x 8 grid stored in (row, col, channel) order.
struct FeatureMap {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c * kFeatureChannels, 0.0) {}

  double& at(int r, int c, FeatureChannel ch) { return data[index(r, c, static_cast<int>(ch))]; }
  double at(int r, int c, FeatureChannel ch) const { return data[index(r, c, static_cast<int>(ch))]; }
  double& at(int r, int c, int ch) { return data[index(r, c, ch)]; }
  double at(int r, int c, int ch) const { return data[index(r, c, ch)]; }
  std::size_t index(int r, int c, int ch) const {
    return (static_cast<std::size_t>(r) * cols + c) * kFeatureChannels + ch;
  }
};

enum class ProxyMode { trilinear, tanh, interpolated };

ProxyMode parse_proxy_mode(std::string_view name);
std::string_view to_string(ProxyMode mode);

struct ProxyConfig {
  ProxyMode mode = ProxyMode::interpolated;
  double mu = 20.0;
  double alpha = 0.9;
  /// Denominator guard in the soft means; also the occupancy threshold of the
  /// soft sign (mass above epsilon counts as occupied).
  double epsilon = 1e-7;
  /// Backward treats sign(G) as G in the max-height and non-empty channels.
  /// When false those channels get their exact (zero) derivative.
  bool straight_through = true;

  void validate() const;
};

/// Kernel distance d(u1, u2) between a point coordinate u1 and the lattice
/// index u2 of its lower neighbor. The lower neighbor receives weight 1 - d,
/// the upper neighbor d.
double kernel_distance(const ProxyConfig& cfg, double u1, double u2);
/// d(kernel_distance)/d(u1).
double kernel_distance_derivative(const ProxyConfig& cfg, double u1, double u2);

/// Soft occupancy grid: per (row, col, slab) point mass and intensity-weighted
/// mass.
struct SoftGrid {
  int rows = 0;
  int cols = 0;
  int slabs = 0;
  std::vector<double> mass;
  std::vector<double> intensity_mass;

  std::size_t index(int r, int c, int p) const {
    return (static_cast<std::size_t>(r) * cols + c) * slabs + p;
  }
};

struct SoftGridAdjoint {
  std::vector<double> mass;
  std::vector<double> intensity_mass;
};

PointCloud roi_filter(const PointCloud& cloud, const GridSpec& spec);

/// Non-differentiable floor-binned features.
FeatureMap hard_features(const PointCloud& cloud, const GridSpec& spec);

SoftGrid soft_count(const PointCloud& cloud, const GridSpec& spec, const ProxyConfig& cfg);
/// Adjoint of soft_count with respect to point positions.
std::vector<Vec3> soft_count_backward(const PointCloud& cloud, const GridSpec& spec, const ProxyConfig& cfg,
                                      const SoftGridAdjoint& adjoint);

FeatureMap soft_features(const SoftGrid& grid, const GridSpec& spec, const ProxyConfig& cfg);
/// Adjoint of soft_features. Mean channels use the exact quotient rule; max
/// and non-empty channels pass through the sign as identity.
SoftGridAdjoint soft_features_backward(const SoftGrid& grid, const GridSpec& spec, const ProxyConfig& cfg,
                                       const FeatureMap& adjoint);

/// L1 distance between proxy and hard count channels: {trilinear, tanh}.
std::pair<double, double> proxy_error(const PointCloud& cloud, const GridSpec& spec);

/// Flat little-endian float32 dump in (row, col, channel) order plus a JSON
/// sidecar `<path>.json` with the grid spec.
void write_feature_map(const FeatureMap& fm, const GridSpec& spec, const std::filesystem::path& path);
FeatureMap read_feature_map(const std::filesystem::path& path, GridSpec* spec_out = nullptr);

}  // namespace lidaradv
