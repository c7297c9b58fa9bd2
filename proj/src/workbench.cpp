#include "lidaradv/workbench.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace lidaradv {

void SceneSpec::validate(const GridSpec& grid) const {
  if (background == BackgroundKind::captured && background_file.empty()) {
    throw ConfigError("scene: captured background needs a file");
  }
  if (background == BackgroundKind::flat_ground && ray_mode == RayMode::from_background) {
    throw ConfigError("scene: ray mode from-background needs a captured background");
  }
  for (const auto& o : objects) {
    if (!(o.size > 0.0) || !(o.scale.x > 0.0 && o.scale.y > 0.0 && o.scale.z > 0.0)) {
      throw ConfigError("scene: object sizes must be positive");
    }
    if (!grid.roi.contains(o.pose.translation.x, o.pose.translation.y)) {
      throw ConfigError("scene: object outside the ROI");
    }
  }
}

TriangleMesh object_mesh(const ObjectSpec& spec) {
  TriangleMesh mesh = make_primitive(spec.kind, spec.size, spec.target_vertices);
  if (spec.scale == Vec3{1.0, 1.0, 1.0}) return mesh;
  return scale_mesh(mesh, spec.scale);
}

Environment make_environment(const SceneSpec& scene, const GridSpec& grid, const SensorSpec& sensor) {
  scene.validate(grid);
  if (scene.background == BackgroundKind::flat_ground) return make_flat_environment(grid, sensor, scene.ground_intensity);
  PointCloud cloud = read_cloud(scene.background_file);
  if (scene.ray_mode == RayMode::from_background) return make_captured_environment(std::move(cloud), grid, sensor);
  // Spec rays over a captured cloud: the cloud is composited as-is and rays
  // carry no background links.
  Environment env;
  env.grid = grid;
  env.sensor = sensor;
  env.rays = rays_from_spec(sensor.azimuth_count, sensor.elevations_deg(), sensor.origin());
  env.rays.background_index.assign(env.rays.size(), -1);
  env.background = std::move(cloud);
  return env;
}

namespace {

bool inside_convex(const std::vector<Point2>& hull, double x, double y) {
  if (hull.size() < 3) return false;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const Point2& a = hull[i];
    const Point2& b = hull[(i + 1) % hull.size()];
    if ((b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]) < 0.0) return false;
  }
  return true;
}

}  // namespace

namespace {

SceneScan render_merged(const Environment& env, const MergedMesh& merged, const std::vector<ObjectSpec>& objects) {
  SceneScan scan = render_scene(merged.mesh, env.background, env.rays, env.object_intensity);
  for (std::size_t i = 0; i < scan.hits.size(); ++i) {
    const auto owner = static_cast<std::size_t>(merged.face_owner[scan.hits[i].face_index]);
    scan.foreground.points[i].intensity = objects[owner].intensity;
  }
  return scan;
}

}  // namespace

SceneScan render_objects(const Environment& env, const std::vector<ObjectSpec>& objects) {
  std::vector<TriangleMesh> posed;
  for (const auto& o : objects) posed.push_back(apply_pose(object_mesh(o), o.pose));
  return render_merged(env, merge_meshes(posed), objects);
}

LabeledScene label_scene(const Environment& env, const std::vector<ObjectSpec>& objects) {
  const GridSpec& grid = env.grid;
  std::vector<TriangleMesh> posed;
  posed.reserve(objects.size());
  for (const auto& o : objects) posed.push_back(apply_pose(object_mesh(o), o.pose));

  LabeledScene scene;
  CellTargets& t = scene.targets;
  t.rows = grid.rows;
  t.cols = grid.cols;
  const std::size_t cells = grid.cell_count();
  t.object.assign(cells, 0);
  t.offset_row.assign(cells, 0.0);
  t.offset_col.assign(cells, 0.0);
  t.height.assign(cells, 0.0);
  t.class_id.assign(cells, -1);

  PointCloud cloud;
  std::vector<std::vector<std::pair<int, int>>> point_cells(objects.size());
  if (posed.empty()) {
    cloud = env.background;
  } else {
    const MergedMesh merged = merge_meshes(posed);
    const SceneScan scan = render_merged(env, merged, objects);
    cloud = scan.combined();
    for (std::size_t i = 0; i < scan.hits.size(); ++i) {
      const Vec3& p = scan.foreground.points[i].position;
      if (!grid.roi.contains(p.x, p.y)) continue;
      const auto rc = grid.cell_of(p.x, p.y);
      if (rc.first < 0) continue;
      point_cells[static_cast<std::size_t>(merged.face_owner[scan.hits[i].face_index])].push_back(rc);
    }
  }
  scene.input = hard_features(roi_filter(cloud, grid), grid);

  for (std::size_t o = 0; o < posed.size(); ++o) {
    std::vector<Point2> pts;
    for (const auto& v : posed[o].vertices()) pts.push_back({v.x, v.y});
    const auto hull = convex_hull(pts);
    const auto [lo, hi] = posed[o].bounds();
    const double cx = 0.5 * (lo.x + hi.x), cy = 0.5 * (lo.y + hi.y);
    auto mark = [&](int r, int c) {
      const auto k = static_cast<std::size_t>(r) * grid.cols + c;
      const auto [x, y] = grid.cell_center(r, c);
      t.object[k] = 1;
      t.offset_row[k] = (cx - x) / grid.cell_size;
      t.offset_col[k] = (cy - y) / grid.cell_size;
      t.height[k] = hi.z;
      t.class_id[k] = objects[o].class_id;
    };
    bool any = false;
    const auto [r0, c0] = std::pair{static_cast<int>(std::floor((lo.x - grid.origin_x) / grid.cell_size)),
                                    static_cast<int>(std::floor((lo.y - grid.origin_y) / grid.cell_size))};
    const auto [r1, c1] = std::pair{static_cast<int>(std::floor((hi.x - grid.origin_x) / grid.cell_size)),
                                    static_cast<int>(std::floor((hi.y - grid.origin_y) / grid.cell_size))};
    for (int r = std::max(0, r0); r <= std::min(grid.rows - 1, r1); ++r) {
      for (int c = std::max(0, c0); c <= std::min(grid.cols - 1, c1); ++c) {
        const auto [x, y] = grid.cell_center(r, c);
        if (grid.roi.contains(x, y) && inside_convex(hull, x, y)) {
          mark(r, c);
          any = true;
        }
      }
    }
    for (const auto& [r, c] : point_cells[o]) {
      mark(r, c);
      any = true;
    }
    const auto center = grid.cell_of(cx, cy);
    if (any && center.first >= 0) scene.anchors.push_back(center);
  }
  return scene;
}

namespace {

ObjectSpec random_object(std::mt19937_64& rng, int class_id) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * u01(rng); };
  ObjectSpec o;
  o.class_id = class_id;
  switch (static_cast<ObjectClass>(class_id)) {
    case ObjectClass::vehicle:
      o.kind = PrimitiveKind::cube;
      o.size = 1.0;
      o.target_vertices = 26;
      o.scale = {uni(1.4, 2.2), uni(0.8, 1.2), uni(0.6, 1.0)};
      break;
    case ObjectClass::pedestrian: {
      o.kind = PrimitiveKind::cylinder;
      o.size = 1.0;
      o.target_vertices = 26;
      const double d = uni(0.3, 0.45);
      o.scale = {d, d, uni(0.8, 1.3)};
      break;
    }
    case ObjectClass::bicyclist:
      o.kind = PrimitiveKind::cube;
      o.size = 1.0;
      o.target_vertices = 26;
      o.scale = {uni(1.0, 1.6), uni(0.25, 0.4), uni(0.9, 1.2)};
      break;
    case ObjectClass::other: {
      const double pick = u01(rng);
      o.size = uni(0.4, 0.75);
      if (pick < 0.6) {
        o.kind = PrimitiveKind::cube;
        o.target_vertices = 26;
      } else if (pick < 0.8) {
        o.kind = PrimitiveKind::sphere;
        o.target_vertices = 42;
      } else {
        o.kind = PrimitiveKind::tetrahedron;
        o.target_vertices = 34;
      }
      break;
    }
  }
  return o;
}

double footprint_radius(const ObjectSpec& o) {
  return 0.5 * o.size * std::hypot(o.scale.x, o.scale.y);
}

}  // namespace

Environment with_ground_intensity(const Environment& env, double ground_intensity) {
  Environment out = env;
  for (auto& p : out.background.points) p.intensity = ground_intensity;
  return out;
}

std::vector<SceneLayout> synth_layouts(int count, std::uint64_t seed, const GridSpec& grid) {
  if (count < 1) throw ConfigError("synth: count must be >= 1");
  std::vector<SceneLayout> layouts;
  layouts.reserve(static_cast<std::size_t>(count));
  for (int s = 0; s < count; ++s) {
    std::mt19937_64 rng(seed * 1000003ULL + static_cast<std::uint64_t>(s));
    std::uniform_real_distribution<double> reflect(0.1, 0.9);
    SceneLayout layout;
    layout.ground_intensity = reflect(rng);
    std::vector<ObjectSpec>& objects = layout.objects;
    if (s % 5 != 0) {
      std::uniform_int_distribution<int> n_objects(1, 4);
      std::uniform_int_distribution<int> cls(0, kDefaultNumClasses - 1);
      std::uniform_real_distribution<double> ux(std::max(grid.roi.x_min, 3.0), std::min(grid.roi.x_max, 14.5));
      std::uniform_real_distribution<double> uy(std::max(grid.roi.y_min, -6.5), std::min(grid.roi.y_max, 6.5));
      std::uniform_real_distribution<double> uyaw(-180.0, 180.0);
      const int n = n_objects(rng);
      for (int k = 0; k < n; ++k) {
        ObjectSpec o = random_object(rng, cls(rng));
        o.intensity = reflect(rng);
        for (int attempt = 0; attempt < 50; ++attempt) {
          o.pose = Pose({ux(rng), uy(rng), 0.0}, uyaw(rng));
          const bool clear = std::none_of(objects.begin(), objects.end(), [&](const ObjectSpec& other) {
            const double dx = other.pose.translation.x - o.pose.translation.x;
            const double dy = other.pose.translation.y - o.pose.translation.y;
            return std::hypot(dx, dy) < footprint_radius(o) + footprint_radius(other) + 0.4;
          });
          if (clear) {
            objects.push_back(o);
            break;
          }
        }
      }
    }
    layouts.push_back(std::move(layout));
  }
  return layouts;
}

std::vector<LabeledScene> synth_dataset(int count, std::uint64_t seed, const Environment& env) {
  const auto layouts = synth_layouts(count, seed, env.grid);
  std::vector<LabeledScene> scenes;
  scenes.reserve(layouts.size());
  for (const auto& layout : layouts) {
    scenes.push_back(label_scene(with_ground_intensity(env, layout.ground_intensity), layout.objects));
  }
  return scenes;
}

std::vector<Pose> EvalGrid::controlled_grid(const Pose& base, double offset) {
  std::vector<Pose> poses;
  const double offsets[] = {0.0, -offset, offset};
  const double yaws[] = {0.0, -2.5, 2.5, -5.0, 5.0};
  for (const double dx : offsets) {
    for (const double dy : offsets) {
      for (const double yaw : yaws) {
        poses.emplace_back(base.translation + Vec3{dx, dy, 0.0}, base.yaw_deg + yaw);
      }
    }
  }
  return poses;
}

EvalGrid EvalGrid::standard(const Pose& base, std::uint64_t seed) {
  EvalGrid g;
  g.base = base;
  g.seed = seed;
  g.controlled = controlled_grid(base);
  g.bands = {{"distance_0_50cm", 0.0, 0.5, 0.0, 0.0, 100},
             {"distance_50_100cm", 0.5, 1.0, 0.0, 0.0, 100},
             {"orientation_0_5deg", 0.0, 0.0, 0.0, 5.0, 10},
             {"orientation_0_10deg", 0.0, 0.0, 0.0, 10.0, 10}};
  return g;
}

std::vector<Pose> sample_band(const UnseenBand& band, const Pose& base, const std::vector<Pose>& controlled,
                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<Pose> out;
  while (static_cast<int>(out.size()) < band.samples) {
    const double d = band.distance_min + (band.distance_max - band.distance_min) * u01(rng);
    const double theta = 2.0 * std::numbers::pi * u01(rng);
    const double mag = band.yaw_min + (band.yaw_max - band.yaw_min) * u01(rng);
    const double yaw = u01(rng) < 0.5 ? -mag : mag;
    Pose p(base.translation + Vec3{d * std::cos(theta), d * std::sin(theta), 0.0}, base.yaw_deg + yaw);
    const bool seen = std::any_of(controlled.begin(), controlled.end(), [&](const Pose& c) {
      return norm(c.translation - p.translation) < 1e-9 && std::abs(c.yaw_deg - p.yaw_deg) < 1e-9;
    });
    if (!seen) out.push_back(p);
  }
  return out;
}

EvalTable evaluate(const TriangleMesh& mesh, const TriangleMesh& reference, const EvalGrid& grid,
                   const AttackGoal& goal, const Environment& env, const DetectorParams& params) {
  if (mesh.faces() != reference.faces()) throw ConfigError("evaluate: mesh and reference topologies differ");
  goal.validate();
  auto score = [&](const std::string& name, const std::vector<Pose>& poses) {
    BandResult br{name, 0, poses.size()};
    const TriangleMesh& m = mesh;
    for (const auto& victim : make_victims(reference, poses, env.grid)) {
      const auto obstacles = detect_posed(env, params, m, {}, victim);
      if (goal_achieved(goal, obstacles, victim.mask_rect)) ++br.success;
    }
    return br;
  };
  EvalTable table;
  table.controlled = score("controlled", grid.controlled);
  for (std::size_t b = 0; b < grid.bands.size(); ++b) {
    const auto poses = sample_band(grid.bands[b], grid.base, grid.controlled, grid.seed + 7919ULL * (b + 1));
    table.unseen.push_back(score(grid.bands[b].name, poses));
  }
  return table;
}

nlohmann::json eval_to_json(const EvalTable& table) {
  auto row = [](const BandResult& b) {
    return nlohmann::json{{"name", b.name}, {"success", b.success}, {"total", b.total}, {"rate", b.rate()}};
  };
  nlohmann::json j;
  j["controlled"] = row(table.controlled);
  j["unseen"] = nlohmann::json::array();
  for (const auto& b : table.unseen) j["unseen"].push_back(row(b));
  return j;
}

}  // namespace lidaradv
