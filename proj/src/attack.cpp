#include "lidaradv/attack.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "lidaradv/json_io.hpp"

namespace lidaradv {

void AttackConfig::validate() const {
  if (!(lambda > 0.0) || !(beta > 0.0) || !(lr > 0.0)) throw ConfigError("attack: lambda, beta and lr must be positive");
  if (max_iters < 1) throw ConfigError("attack: max_iters must be >= 1");
  if (victim_set.empty()) throw ConfigError("attack: victim set is empty");
  if (score_every < 1 || minibatch < 1) throw ConfigError("attack: score_every and minibatch must be >= 1");
  if (displacement_bound < 0.0) throw ConfigError("attack: displacement_bound must be non-negative");
  proxy.validate();
}

namespace {

void check_shapes(const ModelOutput& output, const CellMask& mask) {
  if (output.rows != mask.rows || output.cols != mask.cols) {
    throw std::invalid_argument("adversarial loss: output and mask shapes differ");
  }
}

}  // namespace

LossValue adv_loss_hide(const ModelOutput& output, const CellMask& mask) {
  check_shapes(output, mask);
  LossValue lv{0.0, OutputAdjoint(output.rows, output.cols, output.num_classes)};
  for (int r = 0; r < output.rows; ++r) {
    for (int c = 0; c < output.cols; ++c) {
      if (!mask.at(r, c)) continue;
      const auto k = output.cell(r, c);
      lv.value += output.positiveness[k];
      lv.adjoint.positiveness[k] = 1.0;
    }
  }
  return lv;
}

LossValue adv_loss_relabel(const ModelOutput& output, const CellMask& mask, int source_class, int target_class,
                           bool full_product) {
  check_shapes(output, mask);
  const int k_classes = output.num_classes;
  if (source_class < 0 || source_class >= k_classes || target_class < 0 || target_class >= k_classes) {
    throw std::invalid_argument("adv_loss_relabel: class id out of range");
  }
  LossValue lv{0.0, OutputAdjoint(output.rows, output.cols, k_classes)};
  for (int r = 0; r < output.rows; ++r) {
    for (int c = 0; c < output.cols; ++c) {
      if (!mask.at(r, c)) continue;
      const auto k = output.cell(r, c);
      const double pos = output.positiveness[k];
      const double diff = output.prob(r, c, source_class) - output.prob(r, c, target_class);
      lv.value += diff * pos;
      lv.adjoint.class_probs[k * k_classes + source_class] += pos;
      lv.adjoint.class_probs[k * k_classes + target_class] -= pos;
      if (full_product) lv.adjoint.positiveness[k] = diff;
    }
  }
  return lv;
}

LossValue adv_loss(const AttackGoal& goal, const ModelOutput& output, const CellMask& mask, bool full_product) {
  if (goal.kind == GoalKind::hide) return adv_loss_hide(output, mask);
  return adv_loss_relabel(output, mask, goal.source_class, goal.target_class, full_product);
}

CellMask crop_mask(const CellMask& mask, const CellRegion& region) {
  CellMask out(region.rows, region.cols);
  for (int r = 0; r < region.rows; ++r) {
    for (int c = 0; c < region.cols; ++c) out.set(r, c, mask.at(region.row0 + r, region.col0 + c));
  }
  return out;
}

AttackContext::AttackContext(const Environment& e, const DetectorParams& p, TriangleMesh mesh, AttackGoal g,
                             const std::vector<Pose>& poses)
    : env(&e), params(&p), benign(std::move(mesh)), goal(g) {
  goal.validate();
  if (goal.kind == GoalKind::relabel &&
      (goal.source_class >= p.num_classes || goal.target_class >= p.num_classes || goal.source_class < 0 ||
       goal.target_class < 0)) {
    throw ConfigError("relabel goal: class id out of range");
  }
  victims = make_victims(benign, poses, e.grid);
  adjacency = benign.adjacency();
}

double pose_adv_loss(const AttackContext& ctx, const Victim& victim, std::span<const Vec3> disp,
                     const AttackConfig& cfg, Displacement* grad) {
  const Environment& env = *ctx.env;
  const GridSpec& grid = env.grid;
  const TriangleMesh mesh = posed_mesh(ctx.benign, disp, victim.transform);
  const SceneScan scan = render_scene(mesh, env.background, env.rays, env.object_intensity);

  // Input window: the mask region plus the detector's receptive margin.
  const CellRegion window = victim.mask_region.dilated(2, grid.rows, grid.cols);
  const GridSpec sub = grid.window(window.row0, window.col0, window.rows, window.cols);
  const CellRegion inner{victim.mask_region.row0 - window.row0, victim.mask_region.col0 - window.col0,
                         victim.mask_region.rows, victim.mask_region.cols};
  const double x_lo = sub.origin_x - sub.cell_size, x_hi = sub.origin_x + sub.rows * sub.cell_size;
  const double y_lo = sub.origin_y - sub.cell_size, y_hi = sub.origin_y + sub.cols * sub.cell_size;
  auto relevant = [&](const Vec3& p) {
    return grid.roi.contains(p.x, p.y) && p.x >= x_lo && p.x < x_hi && p.y >= y_lo && p.y < y_hi;
  };

  PointCloud cloud;
  for (const auto& pt : scan.background_kept.points) {
    if (relevant(pt.position)) cloud.points.push_back(pt);
  }
  const std::size_t fg_begin = cloud.size();
  std::vector<std::size_t> fg_source;
  for (std::size_t i = 0; i < scan.foreground.size(); ++i) {
    if (!relevant(scan.foreground.points[i].position)) continue;
    cloud.points.push_back(scan.foreground.points[i]);
    fg_source.push_back(i);
  }

  const SoftGrid soft = soft_count(cloud, sub, cfg.proxy);
  const FeatureMap features = soft_features(soft, sub, cfg.proxy);
  const ModelOutput out = forward_region(*ctx.params, features, inner);
  const LossValue lv = adv_loss(ctx.goal, out, crop_mask(victim.mask, victim.mask_region), cfg.relabel_full_product);
  if (grad == nullptr) return lv.value;

  const FeatureMap d_features = backward_region(*ctx.params, features, inner, lv.adjoint);
  const SoftGridAdjoint d_soft = soft_features_backward(soft, sub, cfg.proxy, d_features);
  const std::vector<Vec3> d_points = soft_count_backward(cloud, sub, cfg.proxy, d_soft);
  for (std::size_t j = 0; j < fg_source.size(); ++j) {
    const Vec3& dp = d_points[fg_begin + j];
    if (dp.x == 0.0 && dp.y == 0.0 && dp.z == 0.0) continue;
    const HitRecord& hit = scan.hits[fg_source[j]];
    const HitAdjoint ha = hit_backward(hit, mesh, env.rays.directions[hit.ray_index], dp);
    if (ha.degenerate) continue;
    for (int k = 0; k < 3; ++k) (*grad)[ha.vertices[k]] += victim.transform.rotate_back(ha.adjoint[k]);
  }
  return lv.value;
}

TotalLoss total_loss(const AttackContext& ctx, std::span<const Vec3> disp, std::span<const std::size_t> pose_indices,
                     const AttackConfig& cfg) {
  const std::size_t n = ctx.benign.vertices().size();
  if (disp.size() != n) throw std::invalid_argument("total_loss: displacement size mismatch");
  if (pose_indices.empty()) throw std::invalid_argument("total_loss: no poses");
  TotalLoss tl;
  tl.grad.assign(n, Vec3{});
  Displacement pose_grad(n);
  for (const std::size_t idx : pose_indices) {
    std::fill(pose_grad.begin(), pose_grad.end(), Vec3{});
    tl.adversarial += pose_adv_loss(ctx, ctx.victims.at(idx), disp, cfg, &pose_grad);
    for (std::size_t i = 0; i < n; ++i) tl.grad[i] += pose_grad[i];
  }
  const double inv = 1.0 / static_cast<double>(pose_indices.size());
  tl.adversarial *= inv;
  for (auto& g : tl.grad) g = g * inv;

  const LossWithGrad lap = laplacian_loss(disp, ctx.adjacency);
  const LossWithGrad l2 = l2_loss(disp);
  tl.laplacian = lap.value;
  tl.l2 = l2.value;
  tl.value = tl.adversarial + cfg.lambda * (lap.value + cfg.beta * l2.value);
  for (std::size_t i = 0; i < n; ++i) tl.grad[i] += cfg.lambda * (lap.grad[i] + cfg.beta * l2.grad[i]);
  return tl;
}

void adam_step(AdamState& state, Displacement& disp, std::span<const Vec3> grad, double lr) {
  if (state.m.size() != disp.size()) {
    state.m.assign(disp.size(), Vec3{});
    state.v.assign(disp.size(), Vec3{});
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < disp.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      const double g = grad[i][a];
      double& m = state.m[i][a];
      double& v = state.v[i][a];
      m = state.beta1 * m + (1.0 - state.beta1) * g;
      v = state.beta2 * v + (1.0 - state.beta2) * g * g;
      const double update = lr * (m / c1) / (std::sqrt(v / c2) + state.eps);
      disp[i][a] -= update;
    }
  }
}

std::size_t AttackResult::success_count() const {
  return static_cast<std::size_t>(std::count(pose_success.begin(), pose_success.end(), std::uint8_t{1}));
}

std::vector<std::uint8_t> score_poses(const AttackContext& ctx, std::span<const Vec3> disp) {
  std::vector<std::uint8_t> flags;
  flags.reserve(ctx.victims.size());
  for (const auto& victim : ctx.victims) {
    const auto obstacles = detect_posed(*ctx.env, *ctx.params, ctx.benign, disp, victim);
    flags.push_back(goal_achieved(ctx.goal, obstacles, victim.mask_rect) ? 1 : 0);
  }
  return flags;
}

void check_precondition(const AttackContext& ctx) {
  for (std::size_t i = 0; i < ctx.victims.size(); ++i) {
    const auto& victim = ctx.victims[i];
    const auto obstacles = detect_posed(*ctx.env, *ctx.params, ctx.benign, {}, victim);
    if (!benign_precondition(ctx.goal, obstacles, victim.mask_rect)) {
      throw ConfigError("benign object is not detected as required at victim pose " + std::to_string(i));
    }
  }
}

namespace {

double max_norm(std::span<const Vec3> disp) {
  double m = 0.0;
  for (const auto& d : disp) m = std::max(m, norm(d));
  return m;
}

void finish(AttackResult& result, const AttackContext& ctx, const Displacement& disp) {
  result.displacement = disp;
  result.adversarial = ctx.benign.with_vertices(displaced_vertices(ctx.benign, disp));
  result.laplacian = laplacian_loss(disp, ctx.adjacency).value;
  result.l2 = l2_loss(disp).value;
  result.max_displacement = max_norm(disp);
  result.object_size = object_extent(ctx.benign);
}

}  // namespace

AttackResult run_attack(const TriangleMesh& mesh, const AttackGoal& goal, const AttackConfig& cfg,
                        const Environment& env, const DetectorParams& params) {
  cfg.validate();
  const AttackContext ctx(env, params, mesh, goal, cfg.victim_set);
  check_precondition(ctx);

  const std::size_t n = mesh.vertices().size();
  const std::size_t poses = ctx.victims.size();
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> all(poses);
  std::iota(all.begin(), all.end(), std::size_t{0});

  AttackResult result;
  result.method = "whitebox";
  Displacement disp(n);
  AdamState adam(n);
  Displacement best = disp;
  std::size_t best_count = 0;
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<std::uint8_t> best_flags(poses, 0);

  for (int it = 0; it < cfg.max_iters; ++it) {
    std::vector<std::size_t> batch = all;
    if (static_cast<int>(poses) > cfg.full_pass_limit) {
      std::shuffle(batch.begin(), batch.end(), rng);
      batch.resize(std::min<std::size_t>(poses, static_cast<std::size_t>(cfg.minibatch)));
      std::sort(batch.begin(), batch.end());
    }
    const TotalLoss tl = total_loss(ctx, disp, batch, cfg);
    result.loss_trace.push_back(tl.value);
    result.queries += batch.size();
    adam_step(adam, disp, tl.grad, cfg.lr);
    if (cfg.displacement_bound > 0.0) {
      for (auto& d : disp) {
        const double len = norm(d);
        if (len > cfg.displacement_bound) d = d * (cfg.displacement_bound / len);
      }
    }
    result.iterations = it + 1;

    if ((it + 1) % cfg.score_every != 0 && it + 1 != cfg.max_iters) continue;
    const auto flags = score_poses(ctx, disp);
    result.hard_checks += poses;
    const std::size_t count = static_cast<std::size_t>(std::count(flags.begin(), flags.end(), std::uint8_t{1}));
    if (count > best_count || (count == best_count && count > 0 && tl.value < best_loss)) {
      best_count = count;
      best_loss = tl.value;
      best = disp;
      best_flags = flags;
    }
    if (count == poses) {
      result.success_queries = result.queries;
      break;
    }
  }
  result.pose_success = best_flags;
  // Nothing succeeded: report the final iterate.
  finish(result, ctx, best_count > 0 ? best : disp);
  return result;
}

AttackResult bisect_lambda(const TriangleMesh& mesh, const AttackGoal& goal, AttackConfig cfg, const Environment& env,
                           const DetectorParams& params, double lo, double hi, int steps, double* chosen) {
  if (!(lo > 0.0 && hi > lo) || steps < 1) throw ConfigError("bisect_lambda: need 0 < lo < hi and steps >= 1");
  cfg.lambda = lo;
  AttackResult best = run_attack(mesh, goal, cfg, env, params);
  double best_lambda = lo;
  if (best.success()) {
    double a = std::log(lo), b = std::log(hi);
    for (int s = 0; s < steps; ++s) {
      const double mid = 0.5 * (a + b);
      cfg.lambda = std::exp(mid);
      AttackResult r = run_attack(mesh, goal, cfg, env, params);
      if (r.success()) {
        a = mid;
        best = std::move(r);
        best_lambda = cfg.lambda;
      } else {
        b = mid;
      }
    }
  }
  if (chosen != nullptr) *chosen = best_lambda;
  return best;
}

double object_extent(const TriangleMesh& mesh) {
  const auto [lo, hi] = mesh.bounds();
  return std::max({hi.x - lo.x, hi.y - lo.y, hi.z - lo.z});
}

nlohmann::json result_to_json(const AttackResult& result) {
  nlohmann::json j;
  j["method"] = result.method;
  j["iterations"] = result.iterations;
  j["queries"] = result.queries;
  j["success_queries"] = result.success_queries ? nlohmann::json(*result.success_queries) : nlohmann::json(nullptr);
  j["hard_checks"] = result.hard_checks;
  j["pose_success"] = result.pose_success;
  j["success_count"] = result.success_count();
  j["success"] = result.success();
  j["laplacian"] = result.laplacian;
  j["l2"] = result.l2;
  j["max_displacement"] = result.max_displacement;
  j["object_size"] = result.object_size;
  j["displacement_flagged"] = result.displacement_flagged();
  j["loss_trace"] = result.loss_trace;
  return j;
}

}  // namespace lidaradv
