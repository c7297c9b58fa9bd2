#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "lidaradv/postprocess.hpp"

using namespace lidaradv;

namespace {

GridSpec small_grid() {
  GridSpec g;
  g.rows = 8;
  g.cols = 8;
  g.cell_size = 1.0;
  g.origin_x = 0.0;
  g.origin_y = 0.0;
  g.roi = {0.0, 8.0, 0.0, 8.0};
  return g;
}

ModelOutput blank(int rows, int cols) {
  ModelOutput o(rows, cols, 4);
  for (std::size_t i = 0; i < o.class_probs.size(); ++i) o.class_probs[i] = 0.25;
  return o;
}

/// Gated cells pointing at (tr, tc) with the given positiveness.
void block(ModelOutput& o, int r0, int c0, int size, double pos) {
  const int tr = r0, tc = c0;
  for (int r = r0; r < r0 + size; ++r) {
    for (int c = c0; c < c0 + size; ++c) {
      const std::size_t i = o.cell(r, c);
      o.objectness[i] = 0.9;
      o.positiveness[i] = pos;
      o.offset_row[i] = tr - r;
      o.offset_col[i] = tc - c;
    }
  }
}

PointCloud points_in_cell(const GridSpec& g, int r, int c, int n) {
  PointCloud cloud;
  const auto [cx, cy] = g.cell_center(r, c);
  for (int k = 0; k < n; ++k) cloud.points.push_back({{cx - 0.3 + 0.15 * k, cy - 0.2 + 0.1 * k, 0.5}, 0.3});
  return cloud;
}

void append(PointCloud& a, const PointCloud& b) { a.points.insert(a.points.end(), b.points.begin(), b.points.end()); }

/// Brute-force minimum-area rectangle by sweeping the orientation.
OrientedBox sweep_rect(const std::vector<Point2>& pts) {
  OrientedBox best;
  double best_area = INFINITY;
  for (int step = 0; step < 180000; ++step) {
    const double a = (-90.0 + step * 0.001) * std::numbers::pi / 180.0;
    const double ux = std::cos(a), uy = std::sin(a);
    double u0 = INFINITY, u1 = -INFINITY, v0 = INFINITY, v1 = -INFINITY;
    for (const auto& p : pts) {
      const double u = p[0] * ux + p[1] * uy, v = -p[0] * uy + p[1] * ux;
      u0 = std::min(u0, u), u1 = std::max(u1, u), v0 = std::min(v0, v), v1 = std::max(v1, v);
    }
    if ((u1 - u0) * (v1 - v0) < best_area) {
      best_area = (u1 - u0) * (v1 - v0);
      best.length = std::max(u1 - u0, v1 - v0);
      best.width = std::min(u1 - u0, v1 - v0);
      best.yaw_deg = a * 180.0 / std::numbers::pi + (u1 - u0 >= v1 - v0 ? 0.0 : 90.0);
      if (best.yaw_deg >= 90.0) best.yaw_deg -= 180.0;
    }
  }
  return best;
}

double yaw_gap(double a, double b) {
  double d = std::fmod(std::abs(a - b), 180.0);
  return std::min(d, 180.0 - d);
}

}  // namespace

TEST_CASE("a 2x2 block is one cluster and two blocks are two") {
  const GridSpec g = small_grid();
  ModelOutput o = blank(8, 8);
  block(o, 1, 1, 2, 0.8);
  CHECK(cluster(o, PointCloud{}, g).size() == 1);
  CHECK(cluster(o, PointCloud{}, g)[0].cells.size() == 4);
  block(o, 5, 5, 2, 0.8);
  const auto two = cluster(o, PointCloud{}, g);
  CHECK(two.size() == 2);
  CHECK(two[0].cells.front() == o.cell(1, 1));
}

TEST_CASE("objectness at the gate is excluded") {
  const GridSpec g = small_grid();
  ModelOutput o = blank(8, 8);
  block(o, 1, 1, 2, 0.8);
  for (auto& v : o.objectness) v = std::min(v, 0.5);
  CHECK(cluster(o, PointCloud{}, g).empty());
}

TEST_CASE("confidence and point count filters") {
  const GridSpec g = small_grid();
  ModelOutput o = blank(8, 8);
  block(o, 1, 1, 2, 0.05);
  PointCloud pts = points_in_cell(g, 1, 1, 5);
  CHECK(filter_and_classify(cluster(o, pts, g), o).empty());

  block(o, 1, 1, 2, 0.8);
  CHECK(filter_and_classify(cluster(o, points_in_cell(g, 1, 1, 3), g), o).empty());
  const auto kept = filter_and_classify(cluster(o, points_in_cell(g, 1, 1, 4), g), o);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].confidence == doctest::Approx(0.8));
}

TEST_CASE("label is the argmax of summed class probabilities") {
  const GridSpec g = small_grid();
  ModelOutput o = blank(8, 8);
  block(o, 2, 2, 2, 0.8);
  for (int r = 2; r < 4; ++r) {
    for (int c = 2; c < 4; ++c) {
      const std::size_t i = o.cell(r, c) * 4;
      o.class_probs[i + 0] = 0.1;
      o.class_probs[i + 1] = 0.6;
      o.class_probs[i + 2] = 0.2;
      o.class_probs[i + 3] = 0.1;
    }
  }
  const auto kept = filter_and_classify(cluster(o, points_in_cell(g, 2, 2, 6), g), o);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].label == 1);
}

TEST_CASE("cluster cells partition the gated cells") {
  const GridSpec g = small_grid();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_real_distribution<double> off(-2.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    ModelOutput o = blank(8, 8);
    std::size_t gated = 0;
    for (std::size_t i = 0; i < o.objectness.size(); ++i) {
      o.objectness[i] = u(rng);
      o.offset_row[i] = off(rng);
      o.offset_col[i] = off(rng);
      gated += o.objectness[i] > 0.5 ? 1 : 0;
    }
    std::vector<int> seen(o.objectness.size(), 0);
    std::size_t total = 0;
    for (const auto& cl : cluster(o, PointCloud{}, g)) {
      for (auto c : cl.cells) ++seen[c];
      total += cl.cells.size();
    }
    CHECK(total == gated);
    for (std::size_t i = 0; i < seen.size(); ++i) CHECK(seen[i] == (o.objectness[i] > 0.5 ? 1 : 0));
  }
}

TEST_CASE("minimum-area rectangle against an angle sweep") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> yaw(-3.1, 3.1);
  for (int trial = 0; trial < 10; ++trial) {
    const double a = yaw(rng);
    std::vector<Point2> pts;
    for (int k = 0; k < 40; ++k) {
      const double u = 2.0 * n(rng), v = 0.5 * n(rng);
      pts.push_back({3.0 + u * std::cos(a) - v * std::sin(a), -1.0 + u * std::sin(a) + v * std::cos(a)});
    }
    const OrientedBox box = min_area_rect(pts, 0.0);
    const OrientedBox ref = sweep_rect(pts);
    CHECK(box.area() <= ref.area() + 1e-9);
    CHECK(std::abs(box.length - ref.length) < 1e-3);
    CHECK(std::abs(box.width - ref.width) < 1e-3);
    CHECK(yaw_gap(box.yaw_deg, ref.yaw_deg) < 0.1);
    CHECK(box.yaw_deg >= -90.0);
    CHECK(box.yaw_deg < 90.0);

    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& p : pts) x0 = std::min(x0, p[0]), x1 = std::max(x1, p[0]), y0 = std::min(y0, p[1]), y1 = std::max(y1, p[1]);
    CHECK(box.area() <= (x1 - x0) * (y1 - y0) + 1e-9);
  }
}

TEST_CASE("degenerate point sets are clamped") {
  const std::vector<Point2> one = {{1.0, 2.0}};
  const OrientedBox a = min_area_rect(one, 0.125);
  CHECK(a.length == doctest::Approx(0.125));
  CHECK(a.width == doctest::Approx(0.125));
  CHECK(a.cx == doctest::Approx(1.0));
  const std::vector<Point2> line = {{0.0, 0.0}, {1.0, 1.0}, {2.0, 2.0}};
  const OrientedBox b = min_area_rect(line, 0.125);
  CHECK(b.length == doctest::Approx(std::sqrt(8.0)));
  CHECK(b.width == doctest::Approx(0.125));
  CHECK(b.yaw_deg == doctest::Approx(45.0));
}

TEST_CASE("convex hull of a square with interior and collinear points") {
  const auto hull = convex_hull({{0, 0}, {1, 0}, {2, 0}, {2, 2}, {0, 2}, {1, 1}, {0, 1}});
  CHECK(hull.size() == 4);
}

TEST_CASE("footprint intersection") {
  OrientedBox box;
  box.cx = 0.0;
  box.cy = 0.0;
  box.length = 2.0;
  box.width = 1.0;
  box.yaw_deg = 45.0;
  CHECK(footprint_intersects(box, Rect2{0.5, 1.5, 0.5, 1.5}));
  CHECK_FALSE(footprint_intersects(box, Rect2{0.6, 1.5, -1.5, -0.6}));
  CHECK_FALSE(footprint_intersects(box, Rect2{3.0, 4.0, 3.0, 4.0}));
}

TEST_CASE("build_box height and counts") {
  const GridSpec g = small_grid();
  ObstacleCandidate cand;
  PointCloud roi = points_in_cell(g, 1, 1, 4);
  append(roi, points_in_cell(g, 2, 1, 4));
  roi.points[0].position.z = 1.5;
  for (std::size_t i = 0; i < roi.size(); ++i) cand.cluster.point_indices.push_back(i);
  cand.cluster.cells = {9, 17};
  cand.label = 2;
  const Obstacle ob = build_box(cand, roi, g);
  CHECK(ob.label == 2);
  CHECK(ob.point_count == 8);
  CHECK(ob.cell_count == 2);
  CHECK(ob.bbox.height == doctest::Approx(1.0));
  CHECK(ob.bbox.cz == doctest::Approx(1.0));
}
