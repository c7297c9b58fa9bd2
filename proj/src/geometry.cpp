#include "lidaradv/geometry.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_map>

namespace lidaradv {

namespace {

constexpr double kMinFaceArea = 1e-12;

double face_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * norm(cross(b - a, c - a));
}

std::uint64_t edge_key(std::uint32_t a, std::uint32_t b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(a) << 32) | b;
}

bool within_tolerance(int count, int target) {
  return std::abs(count - target) <= 0.1 * target;
}

[[noreturn]] void unreachable_count(PrimitiveKind kind, int target, int best) {
  throw std::invalid_argument("make_primitive: " + std::string(to_string(kind)) +
                              " cannot reach " + std::to_string(target) +
                              " vertices within 10% (closest " + std::to_string(best) + ")");
}

// Vertex count of a box surface lattice with a, b, c segments per axis.
int box_vertex_count(int a, int b, int c) {
  return (a + 1) * (b + 1) * (c + 1) - (a - 1) * (b - 1) * (c - 1);
}

TriangleMesh make_cube(double size, int target) {
  int best_count = 0;
  std::array<int, 3> best{1, 1, 1};
  int best_err = std::numeric_limits<int>::max();
  // nearly uniform: per-axis segment counts differ by at most one
  for (int n = 1; n <= 128; ++n) {
    for (int mask = 0; mask < 8; ++mask) {
      const std::array<int, 3> segs{n + (mask & 1), n + ((mask >> 1) & 1), n + ((mask >> 2) & 1)};
      const int count = box_vertex_count(segs[0], segs[1], segs[2]);
      const int err = std::abs(count - target);
      if (err < best_err) {
        best_err = err;
        best = segs;
        best_count = count;
      }
    }
  }
  if (!within_tolerance(best_count, target)) unreachable_count(PrimitiveKind::cube, target, best_count);

  const std::array<int, 3> dims = best;
  std::map<std::tuple<int, int, int>, std::uint32_t> index_of;
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  auto vertex = [&](std::array<int, 3> lattice) {
    const auto key = std::make_tuple(lattice[0], lattice[1], lattice[2]);
    const auto it = index_of.find(key);
    if (it != index_of.end()) return it->second;
    const auto id = static_cast<std::uint32_t>(vertices.size());
    vertices.emplace_back((static_cast<double>(lattice[0]) / dims[0] - 0.5) * size,
                          (static_cast<double>(lattice[1]) / dims[1] - 0.5) * size,
                          static_cast<double>(lattice[2]) / dims[2] * size);
    index_of.emplace(key, id);
    return id;
  };

  for (int axis = 0; axis < 3; ++axis) {
    const int a = (axis + 1) % 3;
    const int b = (axis + 2) % 3;
    for (int side = 0; side < 2; ++side) {
      // (u, v) spans the face with u x v along the outward normal.
      const int u = side == 1 ? a : b;
      const int v = side == 1 ? b : a;
      for (int s = 0; s < dims[u]; ++s) {
        for (int t = 0; t < dims[v]; ++t) {
          auto corner = [&](int ds, int dt) {
            std::array<int, 3> l{};
            l[axis] = side == 1 ? dims[axis] : 0;
            l[u] = s + ds;
            l[v] = t + dt;
            return vertex(l);
          };
          const auto p00 = corner(0, 0);
          const auto p10 = corner(1, 0);
          const auto p11 = corner(1, 1);
          const auto p01 = corner(0, 1);
          faces.push_back({p00, p10, p11});
          faces.push_back({p00, p11, p01});
        }
      }
    }
  }
  return TriangleMesh(std::move(vertices), std::move(faces));
}

// Midpoint subdivision with a shared edge cache; `project` post-processes new
// vertices (sphere projection or identity).
template <typename Project>
void subdivide(std::vector<Vec3>& vertices, std::vector<Face>& faces, Project project) {
  std::unordered_map<std::uint64_t, std::uint32_t> midpoint;
  auto mid = [&](std::uint32_t a, std::uint32_t b) {
    const auto key = edge_key(a, b);
    const auto it = midpoint.find(key);
    if (it != midpoint.end()) return it->second;
    const auto id = static_cast<std::uint32_t>(vertices.size());
    vertices.push_back(project((vertices[a] + vertices[b]) * 0.5));
    midpoint.emplace(key, id);
    return id;
  };
  std::vector<Face> next;
  next.reserve(faces.size() * 4);
  for (const auto& f : faces) {
    const auto ab = mid(f[0], f[1]);
    const auto bc = mid(f[1], f[2]);
    const auto ca = mid(f[2], f[0]);
    next.push_back({f[0], ab, ca});
    next.push_back({f[1], bc, ab});
    next.push_back({f[2], ca, bc});
    next.push_back({ab, bc, ca});
  }
  faces = std::move(next);
}

TriangleMesh make_icosphere(double diameter, int levels) {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, phi, 0}, {1, phi, 0},  {-1, -phi, 0}, {1, -phi, 0},
                         {0, -1, phi}, {0, 1, phi},  {0, -1, -phi}, {0, 1, -phi},
                         {phi, 0, -1}, {phi, 0, 1},  {-phi, 0, -1}, {-phi, 0, 1}};
  for (auto& p : v) p = p / norm(p);
  std::vector<Face> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                         {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                         {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                         {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int l = 0; l < levels; ++l) subdivide(v, f, [](const Vec3& p) { return p / norm(p); });
  const double r = diameter / 2.0;
  for (auto& p : v) p = Vec3{p.x * r, p.y * r, p.z * r + r};
  return TriangleMesh(std::move(v), std::move(f));
}

// Latitude-longitude sphere: `rings` interior circles of `segments` vertices
// plus two poles.
TriangleMesh make_uv_sphere(double diameter, int rings, int segments) {
  const double r = diameter / 2.0;
  std::vector<Vec3> v;
  std::vector<Face> f;
  v.emplace_back(0.0, 0.0, 2.0 * r);
  for (int i = 1; i <= rings; ++i) {
    const double theta = std::numbers::pi * i / (rings + 1);
    for (int j = 0; j < segments; ++j) {
      const double phi = 2.0 * std::numbers::pi * j / segments;
      v.emplace_back(r * std::sin(theta) * std::cos(phi), r * std::sin(theta) * std::sin(phi),
                     r + r * std::cos(theta));
    }
  }
  v.emplace_back(0.0, 0.0, 0.0);
  const auto south = static_cast<std::uint32_t>(v.size() - 1);
  auto ring_vertex = [&](int ring, int seg) {
    return static_cast<std::uint32_t>(1 + ring * segments + (seg % segments));
  };
  for (int j = 0; j < segments; ++j) f.push_back({0, ring_vertex(0, j), ring_vertex(0, j + 1)});
  for (int i = 0; i + 1 < rings; ++i) {
    for (int j = 0; j < segments; ++j) {
      const auto a = ring_vertex(i, j), b = ring_vertex(i, j + 1);
      const auto c = ring_vertex(i + 1, j), d = ring_vertex(i + 1, j + 1);
      f.push_back({a, c, d});
      f.push_back({a, d, b});
    }
  }
  for (int j = 0; j < segments; ++j)
    f.push_back({south, ring_vertex(rings - 1, j + 1), ring_vertex(rings - 1, j)});
  return TriangleMesh(std::move(v), std::move(f));
}

TriangleMesh make_sphere(double diameter, int target) {
  int count = 12;
  for (int level = 0; level <= 6; ++level) {
    if (within_tolerance(count, target)) return make_icosphere(diameter, level);
    count = 4 * count - 6;  // V' = V + E, E = 3V - 6
  }
  int best_rings = 1, best_segments = 3, best_count = 5;
  int best_err = std::abs(5 - target);
  for (int rings = 1; rings <= 512; ++rings) {
    for (int segments = std::max(3, 2 * rings - 1); segments <= 2 * rings + 2; ++segments) {
      const int n = rings * segments + 2;
      const int err = std::abs(n - target);
      if (err < best_err) {
        best_err = err;
        best_rings = rings;
        best_segments = segments;
        best_count = n;
      }
    }
  }
  if (!within_tolerance(best_count, target)) unreachable_count(PrimitiveKind::sphere, target, best_count);
  return make_uv_sphere(diameter, best_rings, best_segments);
}

TriangleMesh make_tetrahedron(double edge, int target) {
  if (target < 4) {
    throw std::invalid_argument("make_primitive: tetrahedron needs at least 4 vertices");
  }
  int levels = 0;
  int count = 4;
  int best_levels = 0, best_count = 4;
  for (int l = 0; l <= 8; ++l) {
    if (std::abs(count - target) < std::abs(best_count - target)) {
      best_levels = l;
      best_count = count;
    }
    count = 4 * count - 6;
  }
  if (!within_tolerance(best_count, target)) unreachable_count(PrimitiveKind::tetrahedron, target, best_count);
  levels = best_levels;

  const double circum = edge / std::sqrt(3.0);
  const double height = edge * std::sqrt(2.0 / 3.0);
  std::vector<Vec3> v;
  for (int k = 0; k < 3; ++k) {
    const double a = 2.0 * std::numbers::pi * k / 3.0;
    v.emplace_back(circum * std::cos(a), circum * std::sin(a), 0.0);
  }
  v.emplace_back(0.0, 0.0, height);
  std::vector<Face> f = {{0, 2, 1}, {0, 1, 3}, {1, 2, 3}, {2, 0, 3}};
  for (int l = 0; l < levels; ++l) subdivide(v, f, [](const Vec3& p) { return p; });
  return TriangleMesh(std::move(v), std::move(f));
}

TriangleMesh make_cylinder(double diameter, int target) {
  int best_s = 3, best_rows = 1, best_count = 3 * 2 + 2;
  int best_err = std::numeric_limits<int>::max();
  for (int s = 3; s <= 2048; ++s) {
    const int base_rows = std::max(1, static_cast<int>(std::lround(s / std::numbers::pi)));
    for (int rows = std::max(1, base_rows - 1); rows <= base_rows + 1; ++rows) {
      const int n = s * (rows + 1) + 2;
      const int err = std::abs(n - target);
      if (err < best_err) {
        best_err = err;
        best_s = s;
        best_rows = rows;
        best_count = n;
      }
    }
  }
  if (!within_tolerance(best_count, target)) unreachable_count(PrimitiveKind::cylinder, target, best_count);

  const double r = diameter / 2.0;
  const double h = diameter;
  std::vector<Vec3> v;
  std::vector<Face> f;
  for (int row = 0; row <= best_rows; ++row) {
    const double z = h * row / best_rows;
    for (int j = 0; j < best_s; ++j) {
      const double a = 2.0 * std::numbers::pi * j / best_s;
      v.emplace_back(r * std::cos(a), r * std::sin(a), z);
    }
  }
  const auto bottom = static_cast<std::uint32_t>(v.size());
  v.emplace_back(0.0, 0.0, 0.0);
  const auto top = static_cast<std::uint32_t>(v.size());
  v.emplace_back(0.0, 0.0, h);
  auto at = [&](int row, int j) { return static_cast<std::uint32_t>(row * best_s + (j % best_s)); };
  for (int row = 0; row < best_rows; ++row) {
    for (int j = 0; j < best_s; ++j) {
      f.push_back({at(row, j), at(row, j + 1), at(row + 1, j + 1)});
      f.push_back({at(row, j), at(row + 1, j + 1), at(row + 1, j)});
    }
  }
  for (int j = 0; j < best_s; ++j) {
    f.push_back({bottom, at(0, j + 1), at(0, j)});
    f.push_back({top, at(best_rows, j), at(best_rows, j + 1)});
  }
  return TriangleMesh(std::move(v), std::move(f));
}

}  // namespace

TriangleMesh::TriangleMesh(std::vector<Vec3> vertices, std::vector<Face> faces)
    : vertices_(std::move(vertices)), faces_(std::move(faces)) {
  for (const auto& v : vertices_) {
    if (!is_finite(v)) throw std::invalid_argument("TriangleMesh: non-finite vertex");
  }
  for (const auto& f : faces_) {
    for (auto idx : f) {
      if (idx >= vertices_.size()) throw std::invalid_argument("TriangleMesh: face index out of range");
    }
    if (face_area(vertices_[f[0]], vertices_[f[1]], vertices_[f[2]]) <= kMinFaceArea) {
      throw std::invalid_argument("TriangleMesh: degenerate face");
    }
  }
  build_adjacency();
}

TriangleMesh TriangleMesh::with_vertices(std::vector<Vec3> vertices) const {
  if (vertices.size() != vertices_.size()) {
    throw std::invalid_argument("with_vertices: vertex count mismatch");
  }
  TriangleMesh out;
  out.vertices_ = std::move(vertices);
  out.faces_ = faces_;
  out.adjacency_ = adjacency_;
  return out;
}

void TriangleMesh::build_adjacency() {
  adjacency_.assign(vertices_.size(), {});
  for (const auto& f : faces_) {
    for (int k = 0; k < 3; ++k) {
      const auto a = f[k];
      const auto b = f[(k + 1) % 3];
      adjacency_[a].push_back(b);
      adjacency_[b].push_back(a);
    }
  }
  for (auto& n : adjacency_) {
    std::sort(n.begin(), n.end());
    n.erase(std::unique(n.begin(), n.end()), n.end());
  }
}

Vec3 TriangleMesh::centroid() const {
  Vec3 c;
  for (const auto& v : vertices_) c += v;
  return vertices_.empty() ? c : c / static_cast<double>(vertices_.size());
}

std::array<Vec3, 2> TriangleMesh::bounds() const {
  constexpr double inf = std::numeric_limits<double>::infinity();
  Vec3 lo{inf, inf, inf}, hi{-inf, -inf, -inf};
  for (const auto& v : vertices_) {
    lo = {std::min(lo.x, v.x), std::min(lo.y, v.y), std::min(lo.z, v.z)};
    hi = {std::max(hi.x, v.x), std::max(hi.y, v.y), std::max(hi.z, v.z)};
  }
  return {lo, hi};
}

bool TriangleMesh::is_closed() const {
  std::unordered_map<std::uint64_t, int> uses;
  for (const auto& f : faces_) {
    for (int k = 0; k < 3; ++k) ++uses[edge_key(f[k], f[(k + 1) % 3])];
  }
  return std::all_of(uses.begin(), uses.end(), [](const auto& kv) { return kv.second == 2; });
}

PrimitiveKind parse_primitive_kind(std::string_view name) {
  if (name == "cube") return PrimitiveKind::cube;
  if (name == "sphere") return PrimitiveKind::sphere;
  if (name == "tetrahedron") return PrimitiveKind::tetrahedron;
  if (name == "cylinder") return PrimitiveKind::cylinder;
  throw std::invalid_argument("unknown primitive kind: " + std::string(name));
}

std::string_view to_string(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::cube: return "cube";
    case PrimitiveKind::sphere: return "sphere";
    case PrimitiveKind::tetrahedron: return "tetrahedron";
    case PrimitiveKind::cylinder: return "cylinder";
  }
  return "unknown";
}

TriangleMesh make_primitive(PrimitiveKind kind, double size, int target_vertex_count) {
  if (!(size > 0.0)) throw std::invalid_argument("make_primitive: size must be positive");
  if (target_vertex_count < 4) {
    throw std::invalid_argument("make_primitive: target vertex count must be at least 4");
  }
  switch (kind) {
    case PrimitiveKind::cube: return make_cube(size, target_vertex_count);
    case PrimitiveKind::sphere: return make_sphere(size, target_vertex_count);
    case PrimitiveKind::tetrahedron: return make_tetrahedron(size, target_vertex_count);
    case PrimitiveKind::cylinder: return make_cylinder(size, target_vertex_count);
  }
  throw std::invalid_argument("make_primitive: unknown kind");
}

TriangleMesh scale_mesh(const TriangleMesh& mesh, const Vec3& factors) {
  std::vector<Vec3> v = mesh.vertices();
  for (auto& p : v) p = {p.x * factors.x, p.y * factors.y, p.z * factors.z};
  return TriangleMesh(std::move(v), mesh.faces());
}

MergedMesh merge_meshes(std::span<const TriangleMesh> meshes) {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::vector<int> owner;
  for (std::size_t m = 0; m < meshes.size(); ++m) {
    const auto base = static_cast<std::uint32_t>(vertices.size());
    vertices.insert(vertices.end(), meshes[m].vertices().begin(), meshes[m].vertices().end());
    for (const auto& f : meshes[m].faces()) {
      faces.push_back({f[0] + base, f[1] + base, f[2] + base});
      owner.push_back(static_cast<int>(m));
    }
  }
  MergedMesh out;
  // Faces already passed validation in their source meshes.
  out.mesh = TriangleMesh(std::move(vertices), std::move(faces));
  out.face_owner = std::move(owner);
  return out;
}

double normalize_yaw_deg(double yaw_deg) {
  double y = std::fmod(yaw_deg + 180.0, 360.0);
  if (y < 0.0) y += 360.0;
  y -= 180.0;
  return y >= 180.0 ? -180.0 : y;
}

Pose::Pose(Vec3 t, double yaw) : translation(t), yaw_deg(normalize_yaw_deg(yaw)) {}

PoseTransform::PoseTransform(const Pose& pose, const Vec3& reference_centroid)
    : pivot_{reference_centroid.x, reference_centroid.y, 0.0}, translation_(pose.translation) {
  const double rad = pose.yaw_deg * std::numbers::pi / 180.0;
  cos_ = std::cos(rad);
  sin_ = std::sin(rad);
  if (pose.yaw_deg == 0.0) {
    cos_ = 1.0;
    sin_ = 0.0;
  }
  identity_ = pose.yaw_deg == 0.0 && pose.translation == Vec3{};
}

Vec3 PoseTransform::apply(const Vec3& v) const {
  if (identity_) return v;
  const double dx = v.x - pivot_.x;
  const double dy = v.y - pivot_.y;
  return {cos_ * dx - sin_ * dy + pivot_.x + translation_.x,
          sin_ * dx + cos_ * dy + pivot_.y + translation_.y, v.z + translation_.z};
}

Vec3 PoseTransform::rotate_back(const Vec3& a) const {
  return {cos_ * a.x + sin_ * a.y, -sin_ * a.x + cos_ * a.y, a.z};
}

TriangleMesh apply_pose(const TriangleMesh& mesh, const Pose& pose) {
  const PoseTransform tf(pose, mesh.centroid());
  std::vector<Vec3> v;
  v.reserve(mesh.vertex_count());
  for (const auto& p : mesh.vertices()) v.push_back(tf.apply(p));
  return mesh.with_vertices(std::move(v));
}

LossWithGrad laplacian_loss(std::span<const Vec3> disp,
                            const std::vector<std::vector<std::uint32_t>>& adjacency) {
  if (adjacency.size() != disp.size()) {
    throw std::invalid_argument("laplacian_loss: adjacency/displacement size mismatch");
  }
  LossWithGrad out;
  out.grad.assign(disp.size(), Vec3{});
  for (std::size_t i = 0; i < disp.size(); ++i) {
    for (auto q : adjacency[i]) {
      const Vec3 d = disp[i] - disp[q];
      out.value += squared_norm(d);
      out.grad[i] += d * 2.0;
      out.grad[q] -= d * 2.0;
    }
  }
  return out;
}

LossWithGrad l2_loss(std::span<const Vec3> disp) {
  LossWithGrad out;
  out.grad.reserve(disp.size());
  for (const auto& d : disp) {
    out.value += squared_norm(d);
    out.grad.push_back(d * 2.0);
  }
  return out;
}

std::vector<Vec3> displaced_vertices(const TriangleMesh& mesh, std::span<const Vec3> disp) {
  if (disp.size() != mesh.vertex_count()) {
    throw std::invalid_argument("displacement length does not match vertex count");
  }
  std::vector<Vec3> v = mesh.vertices();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += disp[i];
  return v;
}

}  // namespace lidaradv
