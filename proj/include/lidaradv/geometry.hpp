#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace lidaradv {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Vec3() = default;
  constexpr Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  constexpr Vec3 operator-() const { return {-x, -y, -z}; }
  constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  constexpr Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  constexpr Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  constexpr Vec3& operator-=(const Vec3& o) {
    x -= o.x;
    y -= o.y;
    z -= o.z;
    return *this;
  }
  constexpr Vec3& operator*=(double s) {
    x *= s;
    y *= s;
    z *= s;
    return *this;
  }
  constexpr bool operator==(const Vec3&) const = default;

  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
  double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
};

constexpr Vec3 operator*(double s, const Vec3& v) { return v * s; }
constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
constexpr double squared_norm(const Vec3& v) { return dot(v, v); }
inline bool is_finite(const Vec3& v) {
  return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}

using Face = std::array<std::uint32_t, 3>;

/// Triangle mesh with derived edge adjacency.
///
/// Construction validates indices and face areas and builds `adjacency()`,
/// the per-vertex set of vertices sharing an edge (sorted, symmetric).
class TriangleMesh {
 public:
  TriangleMesh() = default;
  TriangleMesh(std::vector<Vec3> vertices, std::vector<Face> faces);

  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<Face>& faces() const { return faces_; }
  const std::vector<std::vector<std::uint32_t>>& adjacency() const { return adjacency_; }
  std::size_t vertex_count() const { return vertices_.size(); }
  std::size_t face_count() const { return faces_.size(); }

  /// Same topology, new vertex positions. Skips the area check so optimizers
  /// may pass through near-degenerate states.
  TriangleMesh with_vertices(std::vector<Vec3> vertices) const;

  Vec3 centroid() const;
  /// Axis-aligned bounds as {min, max}.
  std::array<Vec3, 2> bounds() const;
  /// True when every undirected edge is shared by exactly two faces.
  bool is_closed() const;

 private:
  void build_adjacency();

  std::vector<Vec3> vertices_;
  std::vector<Face> faces_;
  std::vector<std::vector<std::uint32_t>> adjacency_;
};

enum class PrimitiveKind { cube, sphere, tetrahedron, cylinder };

PrimitiveKind parse_primitive_kind(std::string_view name);
std::string_view to_string(PrimitiveKind kind);

/// Closed primitive centered on the z axis and resting on z = 0.
/// `size` is the edge length (cube, tetrahedron) or diameter (sphere,
/// cylinder; the cylinder is as tall as it is wide). The vertex count lands
/// within 10% of `target_vertex_count`; throws std::invalid_argument when the
/// family cannot get that close.
TriangleMesh make_primitive(PrimitiveKind kind, double size, int target_vertex_count);

/// Per-axis scale about the origin.
TriangleMesh scale_mesh(const TriangleMesh& mesh, const Vec3& factors);

/// Concatenates meshes. `face_owner[f]` gives the source mesh of face f.
struct MergedMesh {
  TriangleMesh mesh;
  std::vector<int> face_owner;
};
MergedMesh merge_meshes(std::span<const TriangleMesh> meshes);

struct Pose {
  Vec3 translation;
  double yaw_deg = 0.0;  ///< normalized to [-180, 180)

  Pose() = default;
  Pose(Vec3 t, double yaw);
};

double normalize_yaw_deg(double yaw_deg);

/// Rigid map v -> R(yaw) (v - pivot) + pivot + translation, pivot being a
/// reference centroid projected to z = 0.
class PoseTransform {
 public:
  PoseTransform(const Pose& pose, const Vec3& reference_centroid);

  Vec3 apply(const Vec3& v) const;
  /// Maps a world-frame adjoint back to the object frame (R^T).
  Vec3 rotate_back(const Vec3& adjoint) const;

 private:
  Vec3 pivot_;
  Vec3 translation_;
  double cos_ = 1.0;
  double sin_ = 0.0;
  bool identity_ = true;
};

TriangleMesh apply_pose(const TriangleMesh& mesh, const Pose& pose);

/// Per-vertex displacement field, same length as the mesh vertex list.
using Displacement = std::vector<Vec3>;

struct LossWithGrad {
  double value = 0.0;
  std::vector<Vec3> grad;
};

/// Sum over vertices i and neighbors q of |dv_i - dv_q|^2. Each edge is
/// counted from both endpoints.
LossWithGrad laplacian_loss(std::span<const Vec3> disp,
                            const std::vector<std::vector<std::uint32_t>>& adjacency);

/// Sum over vertices of |dv_i|^2.
LossWithGrad l2_loss(std::span<const Vec3> disp);

/// Vertices of `mesh` offset by `disp`.
std::vector<Vec3> displaced_vertices(const TriangleMesh& mesh, std::span<const Vec3> disp);

}  // namespace lidaradv
