#include "lidaradv/evolution.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace lidaradv {

void EvolutionConfig::validate() const {
  if (!(sigma > 0.0) || !(reference_size > 0.0)) throw ConfigError("evolution: sigma must be positive");
  if (survivors < 1 || offspring < survivors) throw ConfigError("evolution: need offspring >= survivors >= 1");
  if (max_generations < 0) throw ConfigError("evolution: max_generations must be >= 0");
  if (!(lambda >= 0.0) || !(beta >= 0.0)) throw ConfigError("evolution: lambda and beta must be non-negative");
  if (victim_set.empty()) throw ConfigError("evolution: victim set is empty");
}

double hard_adv_loss(const AttackContext& ctx, const Victim& victim, std::span<const Vec3> disp) {
  const Environment& env = *ctx.env;
  const GridSpec& grid = env.grid;
  const TriangleMesh mesh = posed_mesh(ctx.benign, disp, victim.transform);
  const SceneScan scan = render_scene(mesh, env.background, env.rays, env.object_intensity);
  const CellRegion window = victim.mask_region.dilated(2, grid.rows, grid.cols);
  const GridSpec sub = grid.window(window.row0, window.col0, window.rows, window.cols);
  const CellRegion inner{victim.mask_region.row0 - window.row0, victim.mask_region.col0 - window.col0,
                         victim.mask_region.rows, victim.mask_region.cols};
  PointCloud cloud;
  auto keep = [&](const LidarPoint& pt) {
    if (grid.roi.contains(pt.position.x, pt.position.y) && sub.cell_of(pt.position.x, pt.position.y).first >= 0) {
      cloud.points.push_back(pt);
    }
  };
  for (const auto& pt : scan.background_kept.points) keep(pt);
  for (const auto& pt : scan.foreground.points) keep(pt);
  const ModelOutput out = forward_region(*ctx.params, hard_features(cloud, sub), inner);
  return adv_loss(ctx.goal, out, crop_mask(victim.mask, victim.mask_region)).value;
}

double fitness(const AttackContext& ctx, std::span<const Vec3> disp, double lambda, double beta) {
  double adv = 0.0;
  for (const auto& victim : ctx.victims) adv += hard_adv_loss(ctx, victim, disp);
  adv /= static_cast<double>(ctx.victims.size());
  const double reg = laplacian_loss(disp, ctx.adjacency).value + beta * l2_loss(disp).value;
  return -(adv + lambda * reg);
}

namespace {

struct Candidate {
  Displacement disp;
  double fit = 0.0;
};

}  // namespace

AttackResult evolve(const TriangleMesh& mesh, const AttackGoal& goal, const EvolutionConfig& cfg,
                    const Environment& env, const DetectorParams& params, EvolutionTrace* trace) {
  cfg.validate();
  const AttackContext ctx(env, params, mesh, goal, cfg.victim_set);
  check_precondition(ctx);

  const std::size_t n = mesh.vertices().size();
  const double sigma = cfg.sigma * object_extent(mesh) / cfg.reference_size;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, sigma);
  std::uniform_int_distribution<int> pick(0, cfg.survivors - 1);

  AttackResult result;
  result.method = "evolution";
  EvolutionTrace local;
  EvolutionTrace& tr = trace != nullptr ? *trace : local;
  tr = EvolutionTrace{};

  std::vector<Candidate> population(static_cast<std::size_t>(cfg.survivors));
  for (auto& c : population) {
    c.disp.assign(n, Vec3{});
    c.fit = fitness(ctx, c.disp, cfg.lambda, cfg.beta);
    ++tr.fitness_queries;
  }
  tr.best_fitness.push_back(population.front().fit);
  result.loss_trace.push_back(-population.front().fit);

  auto check = [&](const Candidate& best) {
    const auto flags = score_poses(ctx, best.disp);
    result.hard_checks += flags.size();
    result.pose_success = flags;
    return std::all_of(flags.begin(), flags.end(), [](std::uint8_t f) { return f == 1; });
  };
  bool done = check(population.front());

  for (int gen = 0; gen < cfg.max_generations && !done; ++gen) {
    std::vector<Candidate> pool = population;
    pool.reserve(population.size() + static_cast<std::size_t>(cfg.offspring));
    for (int k = 0; k < cfg.offspring; ++k) {
      const Candidate& parent = population[static_cast<std::size_t>(pick(rng))];
      Candidate child;
      child.disp = parent.disp;
      for (auto& d : child.disp) {
        d.x += noise(rng);
        d.y += noise(rng);
        d.z += noise(rng);
      }
      child.fit = fitness(ctx, child.disp, cfg.lambda, cfg.beta);
      ++tr.fitness_queries;
      pool.push_back(std::move(child));
    }
    std::stable_sort(pool.begin(), pool.end(), [](const Candidate& a, const Candidate& b) { return a.fit > b.fit; });
    pool.resize(population.size());
    population = std::move(pool);
    tr.generations = gen + 1;
    tr.best_fitness.push_back(population.front().fit);
    result.loss_trace.push_back(-population.front().fit);
    done = check(population.front());
    if (done) result.success_queries = tr.fitness_queries;
  }

  const Displacement& best = population.front().disp;
  result.iterations = tr.generations;
  result.queries = tr.fitness_queries;
  result.displacement = best;
  result.adversarial = mesh.with_vertices(displaced_vertices(mesh, best));
  result.laplacian = laplacian_loss(best, ctx.adjacency).value;
  result.l2 = l2_loss(best).value;
  for (const auto& d : best) result.max_displacement = std::max(result.max_displacement, norm(d));
  result.object_size = object_extent(mesh);
  return result;
}

}  // namespace lidaradv
