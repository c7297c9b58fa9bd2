#pragma once

#include <cstdint>
#include <vector>

#include "lidaradv/attack.hpp"

namespace lidaradv {

struct EvolutionConfig {
  /// Per-coordinate noise in meters for a 0.5 m object; scaled by
  /// object size / reference_size.
  double sigma = 0.1;
  double reference_size = 0.5;
  int offspring = 500;
  int survivors = 5;
  int max_generations = 20;
  std::uint64_t seed = 0;
  double lambda = 0.003;
  double beta = 0.05;
  std::vector<Pose> victim_set;

  void validate() const;
};

/// -(mean hard-pipeline adversarial loss over the victim poses +
/// lambda * (laplacian + beta * l2)). Higher is better.
double fitness(const AttackContext& ctx, std::span<const Vec3> disp, double lambda, double beta);

/// Hard-pipeline adversarial loss of one pose, evaluated on the mask window.
double hard_adv_loss(const AttackContext& ctx, const Victim& victim, std::span<const Vec3> disp);

struct EvolutionTrace {
  std::vector<double> best_fitness;  ///< after initialization, then per generation
  std::size_t fitness_queries = 0;
  int generations = 0;
};

/// Elitist evolution strategy. `result.queries` counts fitness evaluations
/// (survivors + offspring * generations).
AttackResult evolve(const TriangleMesh& mesh, const AttackGoal& goal, const EvolutionConfig& cfg,
                    const Environment& env, const DetectorParams& params, EvolutionTrace* trace = nullptr);

}  // namespace lidaradv
