#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lidaradv/scene.hpp"

namespace lidaradv {

struct AttackConfig {
  double lambda = 0.003;
  double beta = 0.05;
  ProxyConfig proxy;
  double lr = 0.01;
  int max_iters = 2000;
  std::uint64_t seed = 0;
  std::vector<Pose> victim_set;
  int score_every = 50;
  /// Poses per iteration once |D| exceeds this; full pass otherwise.
  int minibatch = 8;
  int full_pass_limit = 16;
  /// Relabel: also differentiate through the positiveness factor.
  bool relabel_full_product = false;
  /// Per-vertex displacement norm cap applied after each step; 0 disables.
  double displacement_bound = 0.0;

  void validate() const;
};

struct LossValue {
  double value = 0.0;
  OutputAdjoint adjoint;
};

/// Sum of positiveness over masked cells; adjoint 1 there. `output` and
/// `mask` share their shape.
LossValue adv_loss_hide(const ModelOutput& output, const CellMask& mask);

/// Sum over masked cells of (c_source - c_target) * pos. With `full_product`
/// false the positiveness factor carries no adjoint.
LossValue adv_loss_relabel(const ModelOutput& output, const CellMask& mask, int source_class, int target_class,
                           bool full_product = false);

LossValue adv_loss(const AttackGoal& goal, const ModelOutput& output, const CellMask& mask,
                   bool full_product = false);

/// Mask restricted to a region, in region coordinates.
CellMask crop_mask(const CellMask& mask, const CellRegion& region);

struct TotalLoss {
  double value = 0.0;
  double adversarial = 0.0;  ///< mean L_adv over the evaluated poses
  double laplacian = 0.0;
  double l2 = 0.0;
  Displacement grad;
};

/// Everything an attack evaluates against.
struct AttackContext {
  const Environment* env = nullptr;
  const DetectorParams* params = nullptr;
  TriangleMesh benign;
  AttackGoal goal;
  std::vector<Victim> victims;
  std::vector<std::vector<std::uint32_t>> adjacency;

  AttackContext(const Environment& e, const DetectorParams& p, TriangleMesh mesh, AttackGoal g,
                const std::vector<Pose>& poses);
};

/// Proxy-pipeline adversarial loss of one pose and its gradient with respect
/// to the object-frame displacement (accumulated into `grad` when non-null).
double pose_adv_loss(const AttackContext& ctx, const Victim& victim, std::span<const Vec3> disp,
                     const AttackConfig& cfg, Displacement* grad);

/// Mean adversarial loss over `pose_indices` plus lambda * (laplacian +
/// beta * l2), with gradient.
TotalLoss total_loss(const AttackContext& ctx, std::span<const Vec3> disp, std::span<const std::size_t> pose_indices,
                     const AttackConfig& cfg);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  Displacement m;
  Displacement v;

  explicit AdamState(std::size_t n = 0) : m(n), v(n) {}
};

/// One bias-corrected Adam update of `disp` in place.
void adam_step(AdamState& state, Displacement& disp, std::span<const Vec3> grad, double lr);

struct AttackResult {
  std::string method;
  TriangleMesh adversarial;
  Displacement displacement;
  std::vector<double> loss_trace;
  std::vector<std::uint8_t> pose_success;
  double laplacian = 0.0;
  double l2 = 0.0;
  int iterations = 0;
  /// Per-pose loss evaluations used by the optimizer.
  std::size_t queries = 0;
  /// Optimizer queries spent when full success was first observed.
  std::optional<std::size_t> success_queries;
  std::size_t hard_checks = 0;
  double max_displacement = 0.0;
  /// Largest bounding-box extent of the benign mesh.
  double object_size = 0.0;

  std::size_t success_count() const;
  bool success() const { return !pose_success.empty() && success_count() == pose_success.size(); }
  /// Successful run whose max displacement exceeds 0.2 * object size.
  bool displacement_flagged() const { return success() && max_displacement > 0.2 * object_size; }
};

/// Hard-pipeline success flags for every victim pose.
std::vector<std::uint8_t> score_poses(const AttackContext& ctx, std::span<const Vec3> disp);

/// Throws ConfigError unless the benign mesh satisfies the goal's
/// precondition at every pose.
void check_precondition(const AttackContext& ctx);

/// Gradient attack (Adam on total_loss), scored on the hard pipeline every
/// `score_every` iterations.
AttackResult run_attack(const TriangleMesh& mesh, const AttackGoal& goal, const AttackConfig& cfg,
                        const Environment& env, const DetectorParams& params);

/// Largest lambda in [lo, hi] (log-scale bisection, `steps` probes) whose
/// attack still succeeds on every pose. Returns the run at that lambda.
AttackResult bisect_lambda(const TriangleMesh& mesh, const AttackGoal& goal, AttackConfig cfg, const Environment& env,
                           const DetectorParams& params, double lo, double hi, int steps, double* chosen = nullptr);

nlohmann::json result_to_json(const AttackResult& result);

/// Largest axis extent of the mesh bounds.
double object_extent(const TriangleMesh& mesh);

}  // namespace lidaradv
