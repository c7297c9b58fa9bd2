#include "lidaradv/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace lidaradv {

namespace {

struct DisjointSet {
  std::vector<std::size_t> parent;
  explicit DisjointSet(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), std::size_t{0}); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent[b] = a;
  }
};

double cross2(const Point2& o, const Point2& a, const Point2& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

constexpr double kRad = 180.0 / std::numbers::pi;

}  // namespace

std::array<Point2, 4> OrientedBox::footprint() const {
  const double a = yaw_deg / kRad;
  const double ux = std::cos(a), uy = std::sin(a);
  const double hl = length / 2.0, hw = width / 2.0;
  return {Point2{cx + ux * hl - uy * hw, cy + uy * hl + ux * hw}, Point2{cx - ux * hl - uy * hw, cy - uy * hl + ux * hw},
          Point2{cx - ux * hl + uy * hw, cy - uy * hl - ux * hw}, Point2{cx + ux * hl + uy * hw, cy + uy * hl - ux * hw}};
}

std::vector<Cluster> cluster(const ModelOutput& output, const PointCloud& roi_cloud, const GridSpec& spec) {
  const int rows = output.rows, cols = output.cols;
  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  std::vector<std::uint8_t> gated(n, 0);
  for (std::size_t i = 0; i < n; ++i) gated[i] = output.objectness[i] > kObjectnessGate ? 1 : 0;

  DisjointSet dsu(n);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const std::size_t i = output.cell(r, c);
      if (!gated[i]) continue;
      const long tr = r + std::lround(output.offset_row[i]);
      const long tc = c + std::lround(output.offset_col[i]);
      if (tr < 0 || tc < 0 || tr >= rows || tc >= cols) continue;
      const std::size_t j = static_cast<std::size_t>(tr) * cols + static_cast<std::size_t>(tc);
      if (gated[j]) dsu.unite(i, j);
    }
  }

  std::vector<Cluster> clusters;
  std::vector<long> cluster_of_root(n, -1);
  std::vector<long> cluster_of_cell(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (!gated[i]) continue;
    const std::size_t root = dsu.find(i);
    if (cluster_of_root[root] < 0) {
      cluster_of_root[root] = static_cast<long>(clusters.size());
      clusters.emplace_back();
      clusters.back().class_prob_sum.assign(static_cast<std::size_t>(output.num_classes), 0.0);
    }
    const long id = cluster_of_root[root];
    cluster_of_cell[i] = id;
    Cluster& cl = clusters[static_cast<std::size_t>(id)];
    cl.cells.push_back(i);
    cl.mean_positiveness += output.positiveness[i];
    for (int k = 0; k < output.num_classes; ++k) {
      cl.class_prob_sum[static_cast<std::size_t>(k)] += output.class_probs[i * output.num_classes + k];
    }
  }
  for (auto& cl : clusters) cl.mean_positiveness /= static_cast<double>(cl.cells.size());

  for (std::size_t p = 0; p < roi_cloud.size(); ++p) {
    const auto& pos = roi_cloud.points[p].position;
    const auto [r, c] = spec.cell_of(pos.x, pos.y);
    if (r < 0 || c < 0 || r >= rows || c >= cols) continue;
    const long id = cluster_of_cell[static_cast<std::size_t>(r) * cols + c];
    if (id >= 0) clusters[static_cast<std::size_t>(id)].point_indices.push_back(p);
  }
  return clusters;
}

std::vector<ObstacleCandidate> filter_and_classify(const std::vector<Cluster>& clusters, const ModelOutput&) {
  std::vector<ObstacleCandidate> out;
  for (const auto& cl : clusters) {
    if (!(cl.mean_positiveness > kConfidenceGate)) continue;
    if (cl.point_indices.size() < kMinClusterPoints) continue;
    ObstacleCandidate cand;
    cand.cluster = cl;
    cand.confidence = cl.mean_positiveness;
    cand.label = static_cast<int>(std::max_element(cl.class_prob_sum.begin(), cl.class_prob_sum.end()) -
                                  cl.class_prob_sum.begin());
    out.push_back(std::move(cand));
  }
  return out;
}

std::vector<Point2> convex_hull(std::vector<Point2> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Point2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross2(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

OrientedBox min_area_rect(std::span<const Point2> points, double min_extent) {
  OrientedBox box;
  if (points.empty()) return box;
  const std::vector<Point2> hull = convex_hull({points.begin(), points.end()});

  double best_area = std::numeric_limits<double>::infinity();
  double best_angle = 0.0, best_min_u = 0.0, best_max_u = 0.0, best_min_v = 0.0, best_max_v = 0.0;

  if (hull.size() < 3) {
    // Collinear or coincident points: the rectangle degenerates to a segment.
    const Point2 a = hull.front(), b = hull.back();
    const double dx = b[0] - a[0], dy = b[1] - a[1];
    const double len = std::hypot(dx, dy);
    best_angle = len > 0.0 ? std::atan2(dy, dx) : 0.0;
    const double ux = std::cos(best_angle), uy = std::sin(best_angle);
    best_min_u = a[0] * ux + a[1] * uy;
    best_max_u = best_min_u + len;
    best_min_v = best_max_v = -a[0] * uy + a[1] * ux;
  } else {
    const std::size_t h = hull.size();
    auto proj_u = [&](std::size_t i, double ux, double uy) { return hull[i][0] * ux + hull[i][1] * uy; };
    auto proj_v = [&](std::size_t i, double ux, double uy) { return -hull[i][0] * uy + hull[i][1] * ux; };
    // Caliper indices: extreme along +u (right), +v (top), -u (left). The hull
    // is counter-clockwise, so the edge's own endpoints give min v. All three
    // only ever advance counter-clockwise as the edge index grows.
    std::size_t right = 0, top = 0, left = 0;
    auto advance = [&](std::size_t& idx, auto&& better) {
      for (std::size_t step = 0; step < h && better((idx + 1) % h, idx); ++step) idx = (idx + 1) % h;
    };
    for (std::size_t i = 0; i < h; ++i) {
      const Point2& p0 = hull[i];
      const Point2& p1 = hull[(i + 1) % h];
      const double ex = p1[0] - p0[0], ey = p1[1] - p0[1];
      const double len = std::hypot(ex, ey);
      const double ux = ex / len, uy = ey / len;
      if (i == 0) {
        for (std::size_t k = 1; k < h; ++k) {
          if (proj_u(k, ux, uy) > proj_u(right, ux, uy)) right = k;
          if (proj_v(k, ux, uy) > proj_v(top, ux, uy)) top = k;
          if (proj_u(k, ux, uy) < proj_u(left, ux, uy)) left = k;
        }
      }
      advance(right, [&](std::size_t a, std::size_t b) { return proj_u(a, ux, uy) > proj_u(b, ux, uy); });
      advance(top, [&](std::size_t a, std::size_t b) { return proj_v(a, ux, uy) > proj_v(b, ux, uy); });
      advance(left, [&](std::size_t a, std::size_t b) { return proj_u(a, ux, uy) < proj_u(b, ux, uy); });
      const double min_u = proj_u(left, ux, uy), max_u = proj_u(right, ux, uy);
      const double min_v = proj_v(i, ux, uy), max_v = proj_v(top, ux, uy);
      const double area = (max_u - min_u) * (max_v - min_v);
      if (area < best_area) {
        best_area = area;
        best_angle = std::atan2(uy, ux);
        best_min_u = min_u;
        best_max_u = max_u;
        best_min_v = min_v;
        best_max_v = max_v;
      }
    }
  }

  const double ux = std::cos(best_angle), uy = std::sin(best_angle);
  const double cu = 0.5 * (best_min_u + best_max_u), cv = 0.5 * (best_min_v + best_max_v);
  box.cx = cu * ux - cv * uy;
  box.cy = cu * uy + cv * ux;
  double extent_u = best_max_u - best_min_u;
  double extent_v = best_max_v - best_min_v;
  double angle = best_angle * kRad;
  if (extent_v > extent_u) {
    std::swap(extent_u, extent_v);
    angle += 90.0;
  }
  box.length = std::max(extent_u, min_extent);
  box.width = std::max(extent_v, min_extent);
  if (box.width > box.length) std::swap(box.width, box.length);
  // Fold the direction of the long side into [-90, 90).
  angle = std::fmod(angle + 90.0, 180.0);
  if (angle < 0.0) angle += 180.0;
  box.yaw_deg = angle - 90.0;
  if (extent_u == 0.0 && extent_v == 0.0) box.yaw_deg = 0.0;
  return box;
}

Obstacle build_box(const ObstacleCandidate& candidate, const PointCloud& roi_cloud, const GridSpec& spec) {
  std::vector<Point2> xy;
  double z_lo = std::numeric_limits<double>::infinity(), z_hi = -z_lo;
  for (auto idx : candidate.cluster.point_indices) {
    const auto& p = roi_cloud.points[idx].position;
    xy.push_back({p.x, p.y});
    z_lo = std::min(z_lo, p.z);
    z_hi = std::max(z_hi, p.z);
  }
  Obstacle ob;
  ob.label = candidate.label;
  ob.confidence = candidate.confidence;
  ob.bbox = min_area_rect(xy, spec.cell_size);
  if (!xy.empty()) {
    ob.bbox.height = z_hi - z_lo;
    ob.bbox.cz = 0.5 * (z_hi + z_lo);
  }
  ob.cell_count = candidate.cluster.cells.size();
  ob.point_count = candidate.cluster.point_indices.size();
  return ob;
}

std::vector<Obstacle> detect_cloud(const PointCloud& scene_cloud, const GridSpec& spec, const DetectorParams& params) {
  const PointCloud roi = roi_filter(scene_cloud, spec);
  const FeatureMap x = hard_features(roi, spec);
  const ModelOutput out = forward(params, x);
  const auto clusters = cluster(out, roi, spec);
  std::vector<Obstacle> obstacles;
  for (const auto& cand : filter_and_classify(clusters, out)) obstacles.push_back(build_box(cand, roi, spec));
  return obstacles;
}

std::vector<Obstacle> detect(const TriangleMesh* mesh, const PointCloud& background, const RayBundle& rays,
                             const GridSpec& spec, const DetectorParams& params) {
  if (!mesh) return detect_cloud(background, spec, params);
  return detect_cloud(render_scene(*mesh, background, rays).combined(), spec, params);
}

bool footprint_intersects(const OrientedBox& box, const Rect2& rect) {
  const auto poly = box.footprint();
  const std::array<Point2, 4> r = {Point2{rect.x_min, rect.y_min}, Point2{rect.x_max, rect.y_min},
                                   Point2{rect.x_max, rect.y_max}, Point2{rect.x_min, rect.y_max}};
  const double a = box.yaw_deg / kRad;
  const std::array<Point2, 4> axes = {Point2{1.0, 0.0}, Point2{0.0, 1.0}, Point2{std::cos(a), std::sin(a)},
                                      Point2{-std::sin(a), std::cos(a)}};
  for (const auto& ax : axes) {
    double p_lo = std::numeric_limits<double>::infinity(), p_hi = -p_lo, q_lo = p_lo, q_hi = -p_lo;
    for (const auto& p : poly) {
      const double d = p[0] * ax[0] + p[1] * ax[1];
      p_lo = std::min(p_lo, d);
      p_hi = std::max(p_hi, d);
    }
    for (const auto& q : r) {
      const double d = q[0] * ax[0] + q[1] * ax[1];
      q_lo = std::min(q_lo, d);
      q_hi = std::max(q_hi, d);
    }
    if (p_hi < q_lo || q_hi < p_lo) return false;
  }
  return true;
}

nlohmann::json detection_report(const std::vector<Obstacle>& obstacles) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& ob : obstacles) {
    list.push_back({{"label", std::string(class_name(ob.label))},
                    {"label_id", ob.label},
                    {"confidence", ob.confidence},
                    {"bbox",
                     {{"cx", ob.bbox.cx},
                      {"cy", ob.bbox.cy},
                      {"cz", ob.bbox.cz},
                      {"l", ob.bbox.length},
                      {"w", ob.bbox.width},
                      {"h", ob.bbox.height},
                      {"yaw", ob.bbox.yaw_deg}}},
                    {"cell_count", ob.cell_count},
                    {"point_count", ob.point_count}});
  }
  return list;
}

}  // namespace lidaradv
