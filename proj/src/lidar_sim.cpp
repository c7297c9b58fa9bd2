#include "lidaradv/lidar_sim.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>

namespace lidaradv {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

bool ray_hits_box(const Vec3& origin, const Vec3& inv_dir, const Vec3& lo, const Vec3& hi, double t_max) {
  double t0 = kMinHitDistance;
  double t1 = t_max;
  for (int a = 0; a < 3; ++a) {
    double near = (lo[a] - origin[a]) * inv_dir[a];
    double far = (hi[a] - origin[a]) * inv_dir[a];
    if (near > far) std::swap(near, far);
    // NaN from 0 * inf leaves the bound untouched.
    if (near > t0) t0 = near;
    if (far < t1) t1 = far;
    if (t0 > t1) return false;
  }
  return true;
}

bool closer(double t, std::uint32_t face, const std::optional<HitRecord>& best) {
  return !best || t < best->t || (t == best->t && face < best->face_index);
}

std::optional<HitRecord> face_hit(const TriangleMesh& mesh, std::uint32_t f, const Vec3& origin,
                                  const Vec3& dir) {
  const auto& face = mesh.faces()[f];
  const auto& v = mesh.vertices();
  const auto r = intersect_triangle(origin, dir, v[face[0]], v[face[1]], v[face[2]]);
  if (!r) return std::nullopt;
  HitRecord h;
  h.face_index = f;
  h.t = (*r)[0];
  h.barycentric = {1.0 - (*r)[1] - (*r)[2], (*r)[1], (*r)[2]};
  return h;
}

}  // namespace

PointCloud SceneScan::combined() const {
  PointCloud out;
  out.points.reserve(background_kept.size() + foreground.size());
  out.points.insert(out.points.end(), background_kept.points.begin(), background_kept.points.end());
  out.points.insert(out.points.end(), foreground.points.begin(), foreground.points.end());
  return out;
}

std::vector<double> SensorSpec::elevations_deg() const {
  std::vector<double> e;
  e.reserve(static_cast<std::size_t>(elevation_count));
  for (int i = 0; i < elevation_count; ++i) {
    e.push_back(elevation_count == 1
                    ? elevation_min_deg
                    : elevation_min_deg + (elevation_max_deg - elevation_min_deg) * i / (elevation_count - 1));
  }
  return e;
}

RayBundle rays_from_spec(int azimuth_count, std::span<const double> elevations_deg, const Vec3& origin) {
  if (azimuth_count < 1) throw std::invalid_argument("rays_from_spec: azimuth_count must be >= 1");
  for (double e : elevations_deg) {
    if (!(e > -90.0 && e < 90.0)) throw std::invalid_argument("rays_from_spec: elevation outside (-90, 90)");
  }
  RayBundle rays;
  rays.origin = origin;
  rays.directions.reserve(static_cast<std::size_t>(azimuth_count) * elevations_deg.size());
  for (int a = 0; a < azimuth_count; ++a) {
    const double az = 2.0 * std::numbers::pi * a / azimuth_count;
    for (double e : elevations_deg) {
      const double el = e * kDeg;
      Vec3 d{std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
      rays.directions.push_back(d / norm(d));
    }
  }
  rays.background_index.assign(rays.directions.size(), -1);
  return rays;
}

RayBundle rays_from_background(const PointCloud& cloud, const Vec3& origin) {
  RayBundle rays;
  rays.origin = origin;
  rays.directions.reserve(cloud.size());
  rays.background_index.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3 d = cloud.points[i].position - origin;
    const double len = norm(d);
    if (!(len > 0.0)) throw std::invalid_argument("rays_from_background: point coincides with sensor origin");
    rays.directions.push_back(d / len);
    rays.background_index.push_back(static_cast<std::int64_t>(i));
  }
  return rays;
}

PointCloud attach_flat_ground(RayBundle& rays, double intensity, double max_range) {
  PointCloud ground;
  rays.background_index.assign(rays.size(), -1);
  if (rays.origin.z <= 0.0) return ground;
  for (std::size_t i = 0; i < rays.size(); ++i) {
    const Vec3& d = rays.directions[i];
    if (d.z >= 0.0) continue;
    const double t = -rays.origin.z / d.z;
    Vec3 p = rays.origin + d * t;
    p.z = 0.0;
    if (std::hypot(p.x - rays.origin.x, p.y - rays.origin.y) > max_range) continue;
    rays.background_index[i] = static_cast<std::int64_t>(ground.size());
    ground.points.push_back({p, intensity});
  }
  return ground;
}

std::optional<std::array<double, 3>> intersect_triangle(const Vec3& origin, const Vec3& dir, const Vec3& v0,
                                                        const Vec3& v1, const Vec3& v2) {
  const Vec3 e1 = v1 - v0;
  const Vec3 e2 = v2 - v0;
  const Vec3 p = cross(dir, e2);
  const double det = dot(e1, p);
  if (std::abs(det) < 1e-15) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 s = origin - v0;
  const double b1 = dot(s, p) * inv;
  if (b1 < 0.0 || b1 > 1.0) return std::nullopt;
  const Vec3 q = cross(s, e1);
  const double b2 = dot(dir, q) * inv;
  if (b2 < 0.0 || b1 + b2 > 1.0) return std::nullopt;
  const double t = dot(e2, q) * inv;
  if (!(t > kMinHitDistance)) return std::nullopt;
  return std::array<double, 3>{t, b1, b2};
}

FaceBvh::FaceBvh(const TriangleMesh& mesh) : mesh_(&mesh) {
  const auto& v = mesh.vertices();
  const auto nf = static_cast<std::uint32_t>(mesh.face_count());
  order_.resize(nf);
  centers_.resize(nf);
  boxes_.resize(nf);
  for (std::uint32_t f = 0; f < nf; ++f) {
    order_[f] = f;
    const auto& face = mesh.faces()[f];
    Vec3 lo = v[face[0]], hi = v[face[0]];
    for (int k = 1; k < 3; ++k) {
      const Vec3& p = v[face[k]];
      lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
      hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
    }
    boxes_[f] = {lo, hi};
    centers_[f] = (lo + hi) * 0.5;
  }
  nodes_.reserve(2 * static_cast<std::size_t>(nf) + 1);
  if (nf > 0) build(0, nf);
}

std::uint32_t FaceBvh::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::uint32_t>(nodes_.size());
  nodes_.emplace_back();
  constexpr double inf = std::numeric_limits<double>::infinity();
  Vec3 lo{inf, inf, inf}, hi{-inf, -inf, -inf}, clo = lo, chi = hi;
  for (std::uint32_t i = begin; i < end; ++i) {
    const auto& b = boxes_[order_[i]];
    const auto& c = centers_[order_[i]];
    lo = {std::min(lo.x, b[0].x), std::min(lo.y, b[0].y), std::min(lo.z, b[0].z)};
    hi = {std::max(hi.x, b[1].x), std::max(hi.y, b[1].y), std::max(hi.z, b[1].z)};
    clo = {std::min(clo.x, c.x), std::min(clo.y, c.y), std::min(clo.z, c.z)};
    chi = {std::max(chi.x, c.x), std::max(chi.y, c.y), std::max(chi.z, c.z)};
  }
  nodes_[id].lo = lo;
  nodes_[id].hi = hi;
  if (end - begin <= 4) {
    nodes_[id].left = begin;
    nodes_[id].count = end - begin;
    return id;
  }
  const Vec3 extent = chi - clo;
  int axis = 0;
  if (extent.y > extent[axis]) axis = 1;
  if (extent.z > extent[axis]) axis = 2;
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double ca = centers_[a][axis], cb = centers_[b][axis];
                     return ca < cb || (ca == cb && a < b);
                   });
  const auto left = build(begin, mid);
  const auto right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

std::optional<HitRecord> FaceBvh::nearest(const Vec3& origin, const Vec3& dir) const {
  std::optional<HitRecord> best;
  if (nodes_.empty()) return best;
  const Vec3 inv{1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z};
  std::uint32_t stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& node = nodes_[stack[--top]];
    const double t_max = best ? best->t : std::numeric_limits<double>::infinity();
    if (!ray_hits_box(origin, inv, node.lo, node.hi, t_max)) continue;
    if (node.count > 0) {
      for (std::uint32_t i = node.left; i < node.left + node.count; ++i) {
        const auto f = order_[i];
        auto h = face_hit(*mesh_, f, origin, dir);
        if (h && closer(h->t, f, best)) best = h;
      }
    } else {
      stack[top++] = node.left;
      stack[top++] = node.right;
    }
  }
  return best;
}

std::vector<std::optional<HitRecord>> intersect(const RayBundle& rays, const TriangleMesh& mesh) {
  const FaceBvh bvh(mesh);
  std::vector<std::optional<HitRecord>> out(rays.size());
  for (std::size_t i = 0; i < rays.size(); ++i) {
    out[i] = bvh.nearest(rays.origin, rays.directions[i]);
    if (out[i]) out[i]->ray_index = i;
  }
  return out;
}

std::vector<std::optional<HitRecord>> intersect_brute_force(const RayBundle& rays, const TriangleMesh& mesh) {
  std::vector<std::optional<HitRecord>> out(rays.size());
  for (std::size_t i = 0; i < rays.size(); ++i) {
    std::optional<HitRecord> best;
    for (std::uint32_t f = 0; f < mesh.face_count(); ++f) {
      auto h = face_hit(mesh, f, rays.origin, rays.directions[i]);
      if (h && closer(h->t, f, best)) best = h;
    }
    if (best) best->ray_index = i;
    out[i] = best;
  }
  return out;
}

SceneScan render_scene(const TriangleMesh& mesh, const PointCloud& background, const RayBundle& rays,
                       double object_intensity) {
  SceneScan scan;
  const auto hits = intersect(rays, mesh);
  std::vector<char> occluded(background.size(), 0);
  for (std::size_t i = 0; i < rays.size(); ++i) {
    if (!hits[i]) continue;
    const std::int64_t bg = i < rays.background_index.size() ? rays.background_index[i] : -1;
    if (bg >= 0) {
      const double bg_dist = norm(background.points[static_cast<std::size_t>(bg)].position - rays.origin);
      if (!(hits[i]->t < bg_dist)) continue;
      occluded[static_cast<std::size_t>(bg)] = 1;
    }
    scan.foreground.points.push_back({rays.origin + rays.directions[i] * hits[i]->t, object_intensity});
    scan.hits.push_back(*hits[i]);
  }
  for (std::size_t j = 0; j < background.size(); ++j) {
    if (occluded[j]) {
      scan.occluded_indices.push_back(j);
    } else {
      scan.kept_indices.push_back(j);
      scan.background_kept.points.push_back(background.points[j]);
    }
  }
  return scan;
}

HitAdjoint hit_backward(const HitRecord& hit, const TriangleMesh& mesh, const Vec3& dir,
                        const Vec3& adjoint_on_point) {
  HitAdjoint out;
  const auto& face = mesh.faces()[hit.face_index];
  out.vertices = face;
  const auto& v = mesh.vertices();
  const Vec3 n = cross(v[face[1]] - v[face[0]], v[face[2]] - v[face[0]]);
  const double n_len = norm(n);
  const double n_dot_r = dot(n, dir);
  if (!(n_len > 0.0) || std::abs(n_dot_r) < 1e-9 * n_len) {
    out.degenerate = true;
    return out;
  }
  // The hit slides along the ray: dp = dir dt. Moving vertex k by delta moves
  // the plane at p by b_k (delta . n_hat), so dt/dv_k = b_k n / (n . dir).
  const double a_dot_r = dot(adjoint_on_point, dir);
  for (int k = 0; k < 3; ++k) out.adjoint[k] = n * (a_dot_r * hit.barycentric[k] / n_dot_r);
  return out;
}

void write_cloud_csv(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "x,y,z,intensity\n" << std::setprecision(17);
  for (const auto& p : cloud.points) {
    out << p.position.x << ',' << p.position.y << ',' << p.position.z << ',' << p.intensity << '\n';
  }
}

PointCloud read_cloud_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("x,y,z,intensity", 0) != 0) {
    throw std::runtime_error("point cloud CSV must start with header x,y,z,intensity");
  }
  PointCloud cloud;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    LidarPoint p;
    if (!(ls >> p.position.x >> p.position.y >> p.position.z >> p.intensity)) {
      throw std::runtime_error("malformed point cloud row: " + line);
    }
    cloud.points.push_back(p);
  }
  return cloud;
}

void write_cloud_bin(const PointCloud& cloud, const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const std::uint64_t n = cloud.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  for (const auto& p : cloud.points) {
    const float rec[4] = {static_cast<float>(p.position.x), static_cast<float>(p.position.y),
                          static_cast<float>(p.position.z), static_cast<float>(p.intensity)};
    out.write(reinterpret_cast<const char*>(rec), sizeof rec);
  }
}

PointCloud read_cloud_bin(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::uint64_t n = 0;
  if (!in.read(reinterpret_cast<char*>(&n), sizeof n)) throw std::runtime_error("truncated point cloud header");
  if (std::filesystem::file_size(path) != sizeof n + n * 16) {
    throw std::runtime_error("point cloud size does not match record count: " + path.string());
  }
  PointCloud cloud;
  cloud.points.resize(n);
  for (auto& p : cloud.points) {
    float rec[4];
    in.read(reinterpret_cast<char*>(rec), sizeof rec);
    p.position = {rec[0], rec[1], rec[2]};
    p.intensity = rec[3];
  }
  return cloud;
}

PointCloud read_cloud(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? read_cloud_csv(path) : read_cloud_bin(path);
}

void write_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  if (path.extension() == ".csv") {
    write_cloud_csv(cloud, path);
  } else {
    write_cloud_bin(cloud, path);
  }
}

}  // namespace lidaradv
