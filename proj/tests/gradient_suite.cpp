#include "gradient_suite.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "fd.hpp"
#include "lidaradv/attack.hpp"

using namespace lidaradv;

namespace {

GridSpec small_grid() {
  GridSpec g;
  g.rows = 6;
  g.cols = 7;
  g.slabs = 5;
  g.cell_size = 0.25;
  g.origin_x = 1.0;
  g.origin_y = -1.0;
  g.z_min = 0.0;
  g.z_max = 1.0;
  g.roi = {0.0, 10.0, -5.0, 5.0};
  return g;
}

// Random cloud inside the grid interior, coordinates kept 1e-3 cells away
// from lattice planes (the tanh kernel jumps there).
PointCloud random_cloud(std::mt19937_64& rng, const GridSpec& g, int n) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto coord = [&](double lo, double step, int cells) {
    for (;;) {
      const double u = 0.2 + (cells - 1.4) * u01(rng);
      const double frac = u - std::floor(u);
      if (frac > 1e-3 && frac < 1.0 - 1e-3) return lo + u * step;
    }
  };
  PointCloud c;
  for (int i = 0; i < n; ++i) {
    c.points.push_back({{coord(g.origin_x, g.cell_size, g.rows), coord(g.origin_y, g.cell_size, g.cols),
                         coord(g.z_min, g.slab_height(), g.slabs)},
                        u01(rng)});
  }
  return c;
}

double grid_dot(const SoftGrid& g, const SoftGridAdjoint& a) {
  double s = 0.0;
  for (std::size_t k = 0; k < g.mass.size(); ++k) s += a.mass[k] * g.mass[k] + a.intensity_mass[k] * g.intensity_mass[k];
  return s;
}

double feature_dot(const FeatureMap& f, const FeatureMap& a) {
  double s = 0.0;
  for (std::size_t k = 0; k < f.data.size(); ++k) s += f.data[k] * a.data[k];
  return s;
}

}  // namespace

namespace gradcheck {

Result regularizers() {
  const TriangleMesh mesh = make_primitive(PrimitiveKind::cube, 0.5, 152);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd(0.0, 0.02);
  Result lap_r{"laplacian_loss", 0.0, 0}, l2_r{"l2_loss", 0.0, 0};
  for (int trial = 0; trial < 100; ++trial) {
    Displacement d(mesh.vertex_count());
    for (auto& v : d) v = {nd(rng), nd(rng), nd(rng)};
    const auto lap = laplacian_loss(d, mesh.adjacency());
    const auto l2 = l2_loss(d);
    std::vector<double> a_lap, f_lap, a_l2, f_l2;
    for (std::size_t i = 0; i < d.size(); i += 7) {
      for (int ax = 0; ax < 3; ++ax) {
        auto f = [&](auto&& loss) {
          return [&, loss](double h) {
            Displacement p = d;
            p[i][ax] += h;
            return loss(p);
          };
        };
        f_lap.push_back(fd::central(f([&](const Displacement& p) { return laplacian_loss(p, mesh.adjacency()).value; }), 1e-6));
        f_l2.push_back(fd::central(f([](const Displacement& p) { return l2_loss(p).value; }), 1e-6));
        a_lap.push_back(lap.grad[i][ax]);
        a_l2.push_back(l2.grad[i][ax]);
      }
    }
    lap_r.add(fd::rel_error(a_lap, f_lap));
    l2_r.add(fd::rel_error(a_l2, f_l2));
  }
  return {lap_r.name, std::max(lap_r.worst, l2_r.worst), lap_r.cases + l2_r.cases};
}

Result soft_count(ProxyMode mode) {
  const GridSpec g = small_grid();
  ProxyConfig cfg;
  cfg.mode = mode;
  std::mt19937_64 rng(21);
  std::normal_distribution<double> nd(0.0, 1.0);
  Result r{"soft_count/" + std::string(to_string(mode)), 0.0, 0};
  for (int trial = 0; trial < 100; ++trial) {
    const PointCloud cloud = random_cloud(rng, g, 12);
    SoftGridAdjoint adj;
    const std::size_t n = g.cell_count() * g.slabs;
    for (std::size_t k = 0; k < n; ++k) {
      adj.mass.push_back(nd(rng));
      adj.intensity_mass.push_back(nd(rng));
    }
    const auto grad = soft_count_backward(cloud, g, cfg, adj);
    std::vector<double> a, f;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      for (int ax = 0; ax < 3; ++ax) {
        f.push_back(fd::central(
            [&](double h) {
              PointCloud p = cloud;
              p.points[i].position[ax] += h;
              return grid_dot(lidaradv::soft_count(p, g, cfg), adj);
            },
            1e-7));
        a.push_back(grad[i][ax]);
      }
    }
    r.add(fd::rel_error(a, f));
  }
  return r;
}

Result soft_features(bool straight_through) {
  const GridSpec g = small_grid();
  std::mt19937_64 rng(31);
  std::normal_distribution<double> nd(0.0, 1.0);
  ProxyConfig cfg;
  cfg.mode = ProxyMode::trilinear;
  cfg.straight_through = straight_through;
  Result r{straight_through ? "soft_features/straight_through" : "soft_features/exact", 0.0, 0};
  for (int trial = 0; trial < 100; ++trial) {
    const SoftGrid grid = lidaradv::soft_count(random_cloud(rng, g, 25), g, cfg);
    FeatureMap adj(g.rows, g.cols);
    for (auto& v : adj.data) v = nd(rng);
    const SoftGridAdjoint back = soft_features_backward(grid, g, cfg, adj);
    // Straight-through oracle: max_height = G_top * T_top and
    // non_empty = sum_p G_p with the top slab held fixed.
    auto value = [&](const SoftGrid& s) {
      FeatureMap fm = lidaradv::soft_features(s, g, cfg);
      if (!straight_through) return feature_dot(fm, adj);
      for (int row = 0; row < g.rows; ++row) {
        for (int col = 0; col < g.cols; ++col) {
          int top = -1;
          for (int p = g.slabs - 1; p >= 0 && top < 0; --p) {
            if (grid.mass[grid.index(row, col, p)] > cfg.epsilon) top = p;
          }
          double total = 0.0;
          for (int p = 0; p < g.slabs; ++p) total += s.mass[s.index(row, col, p)];
          fm.at(row, col, FeatureChannel::non_empty) = total;
          fm.at(row, col, FeatureChannel::max_height) = top < 0 ? 0.0 : s.mass[s.index(row, col, top)] * g.slab_value(top);
        }
      }
      return feature_dot(fm, adj);
    };
    std::vector<double> a, f;
    for (std::size_t k = 0; k < grid.mass.size(); ++k) {
      if (grid.mass[k] < 1e-3) continue;  // away from the occupancy threshold
      f.push_back(fd::central(
          [&](double h) {
            SoftGrid s = grid;
            s.mass[k] += h;
            return value(s);
          },
          1e-7));
      a.push_back(back.mass[k]);
      f.push_back(fd::central(
          [&](double h) {
            SoftGrid s = grid;
            s.intensity_mass[k] += h;
            return value(s);
          },
          1e-7));
      a.push_back(back.intensity_mass[k]);
    }
    r.add(fd::rel_error(a, f));
  }
  return r;
}

Result detector(double* region_mismatch) {
  std::mt19937_64 rng(41);
  std::normal_distribution<double> nd(0.0, 1.0);
  Result r{"detector backward", 0.0, 0};
  double worst_region = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const DetectorParams params = DetectorParams::initialize(1000 + trial);
    FeatureMap x(5, 6);
    for (auto& v : x.data) v = nd(rng);
    const ModelOutput out0 = forward(params, x);
    OutputAdjoint adj(out0.rows, out0.cols, out0.num_classes);
    for (auto* vec : {&adj.offset_row, &adj.offset_col, &adj.objectness, &adj.positiveness, &adj.height, &adj.class_probs}) {
      for (auto& v : *vec) v = nd(rng);
    }
    auto value = [&](const FeatureMap& in) {
      const ModelOutput o = forward(params, in);
      double s = 0.0;
      for (std::size_t k = 0; k < o.objectness.size(); ++k) {
        s += adj.offset_row[k] * o.offset_row[k] + adj.offset_col[k] * o.offset_col[k] +
             adj.objectness[k] * o.objectness[k] + adj.positiveness[k] * o.positiveness[k] + adj.height[k] * o.height[k];
      }
      for (std::size_t k = 0; k < o.class_probs.size(); ++k) s += adj.class_probs[k] * o.class_probs[k];
      return s;
    };
    const FeatureMap grad = backward(params, x, adj);
    std::vector<double> a, f;
    for (std::size_t k = trial % 3; k < x.data.size(); k += 3) {
      f.push_back(fd::central(
          [&](double h) {
            FeatureMap p = x;
            p.data[k] += h;
            return value(p);
          },
          1e-6));
      a.push_back(grad.data[k]);
    }
    r.add(fd::rel_error(a, f));

    // Region backward equals the full backward of a region-restricted adjoint.
    const CellRegion region{1, 2, 3, 2};
    OutputAdjoint radj(region.rows, region.cols, out0.num_classes);
    OutputAdjoint full(out0.rows, out0.cols, out0.num_classes);
    for (int row = 0; row < region.rows; ++row) {
      for (int col = 0; col < region.cols; ++col) {
        const auto src = adj.cell(region.row0 + row, region.col0 + col);
        const auto dst = radj.cell(row, col);
        radj.positiveness[dst] = full.positiveness[src] = adj.positiveness[src];
        radj.height[dst] = full.height[src] = adj.height[src];
        for (int k = 0; k < out0.num_classes; ++k) {
          radj.class_probs[dst * out0.num_classes + k] = full.class_probs[src * out0.num_classes + k] =
              adj.class_probs[src * out0.num_classes + k];
        }
      }
    }
    const FeatureMap g_region = backward_region(params, x, region, radj);
    const FeatureMap g_full = backward(params, x, full);
    worst_region = std::max(worst_region, fd::rel_error(g_region.data, g_full.data));
  }
  if (region_mismatch != nullptr) *region_mismatch = worst_region;
  return r;
}

Result hit() {
  std::mt19937_64 rng(51);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> nd(0.0, 1.0);
  Result r{"hit_backward", 0.0, 0};
  while (r.cases < 100) {
    std::vector<Vec3> verts{{5.0 + 0.3 * u(rng), u(rng), u(rng)}, {5.0 + 0.3 * u(rng), u(rng), u(rng)},
                            {5.0 + 0.3 * u(rng), u(rng), u(rng)}};
    const Vec3 origin{0.0, 0.1 * u(rng), 0.1 * u(rng)};
    const Vec3 target = (verts[0] + verts[1] + verts[2]) / 3.0;
    const Vec3 dir = (target - origin) / norm(target - origin);
    TriangleMesh mesh;
    try {
      mesh = TriangleMesh(verts, {Face{0, 1, 2}});
    } catch (const std::invalid_argument&) {
      continue;
    }
    const auto h = intersect_triangle(origin, dir, verts[0], verts[1], verts[2]);
    if (!h) continue;
    const HitRecord rec{0, 0, (*h)[0], {1.0 - (*h)[1] - (*h)[2], (*h)[1], (*h)[2]}};
    const Vec3 a{nd(rng), nd(rng), nd(rng)};
    const HitAdjoint ha = hit_backward(rec, mesh, dir, a);
    if (ha.degenerate) continue;
    std::vector<double> an, f;
    for (int k = 0; k < 3; ++k) {
      for (int ax = 0; ax < 3; ++ax) {
        f.push_back(fd::central(
            [&](double step) {
              auto v = verts;
              v[k][ax] += step;
              // Plane intersection with the assignment held fixed.
              const Vec3 n = cross(v[1] - v[0], v[2] - v[0]);
              const double t = dot(n, v[0] - origin) / dot(n, dir);
              return dot(a, origin + dir * t);
            },
            1e-6));
        an.push_back(ha.adjoint[static_cast<std::size_t>(k)][ax]);
      }
    }
    r.add(fd::rel_error(an, f));
  }
  return r;
}

Result total_loss(const DetectorParams& params, int scenes) {
  const Environment env = make_flat_environment();
  const TriangleMesh cube = make_primitive(PrimitiveKind::cube, 0.5, 152);
  // Exact-derivative settings: no straight-through sign and, for relabel,
  // the positiveness factor differentiated too.
  AttackConfig cfg;
  cfg.proxy.straight_through = false;
  cfg.relabel_full_product = true;
  Result r{"total_loss end-to-end", 0.0, 0};
  for (int scene = 0; scene < scenes; ++scene) {
    std::mt19937_64 rng(61 + scene);
    std::uniform_real_distribution<double> ux(6.0, 10.0), uy(-2.0, 2.0), uyaw(-90.0, 90.0);
    const Pose pose({ux(rng), uy(rng), 0.0}, uyaw(rng));
    for (const GoalKind kind : {GoalKind::hide, GoalKind::relabel}) {
      AttackGoal goal{kind, 3, 1};
      const AttackContext ctx(env, params, cube, goal, {pose});
      std::normal_distribution<double> nd(0.0, 0.01);
      Displacement disp(cube.vertex_count());
      for (auto& d : disp) d = {nd(rng), nd(rng), nd(rng)};
      const std::vector<std::size_t> idx{0};
      const TotalLoss tl = lidaradv::total_loss(ctx, disp, idx, cfg);
      // Coordinates the adversarial term reaches (hit faces).
      double gmax = 0.0;
      for (const auto& g : tl.grad) gmax = std::max({gmax, std::abs(g.x), std::abs(g.y), std::abs(g.z)});
      std::vector<std::pair<std::size_t, int>> active;
      for (std::size_t v = 0; v < disp.size(); ++v) {
        for (int ax = 0; ax < 3; ++ax) {
          if (std::abs(tl.grad[v][ax]) > 1e-3 * gmax) active.emplace_back(v, ax);
        }
      }
      std::shuffle(active.begin(), active.end(), rng);
      std::vector<double> a, f;
      for (std::size_t c = 0; c < active.size() && a.size() < 10; ++c) {
        const auto [v, ax] = active[c];
        auto value = [&](double h) {
          Displacement p = disp;
          p[v][ax] += h;
          return lidaradv::total_loss(ctx, p, idx, cfg).value;
        };
        // Piecewise check: skip coordinates whose stencil straddles a
        // ray/face or cell-boundary switch.
        const double g1 = fd::central(value, 1e-5);
        const double g2 = fd::central(value, 5e-6);
        if (std::abs(g1 - g2) > 1e-3 * std::max(1.0, std::abs(g1))) continue;
        f.push_back(g1);
        a.push_back(tl.grad[v][ax]);
      }
      if (a.size() < 10) {
        r.worst = std::max(r.worst, 1.0);  // too few smooth coordinates
        continue;
      }
      r.worst = std::max(r.worst, fd::rel_error(a, f));
      r.cases += static_cast<int>(a.size());
    }
  }
  return r;
}

}  // namespace gradcheck
