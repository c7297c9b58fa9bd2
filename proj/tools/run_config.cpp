#include "run_config.hpp"

#include <set>

#include "lidaradv/json_io.hpp"
#include "lidaradv/mesh_io.hpp"

namespace lidaradv::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void check_keys(const json& j, const char* section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(section) + ": expected an object");
  const std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!keys.contains(k)) throw ConfigError(std::string(section) + ": unknown key '" + k + "'");
  }
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty()) return p;
  return fs::weakly_canonical(p.is_absolute() ? p : base / p);
}

std::string path_string(const fs::path& p) { return p.generic_string(); }

int read_class(const json& j) {
  if (j.is_number_integer()) return j.get<int>();
  return parse_class(j.get<std::string>());
}

ObjectSpec parse_object(const json& j, ObjectSpec o) {
  check_keys(j, "object", {"kind", "size", "scale", "target_vertices", "pose", "class", "intensity", "mesh"});
  if (j.contains("kind")) o.kind = parse_primitive_kind(j.at("kind").get<std::string>());
  read_opt(j, "size", o.size);
  read_opt(j, "scale", o.scale);
  read_opt(j, "target_vertices", o.target_vertices);
  read_opt(j, "pose", o.pose);
  if (j.contains("class")) o.class_id = read_class(j.at("class"));
  read_opt(j, "intensity", o.intensity);
  return o;
}

json object_json(const ObjectSpec& o) {
  return {{"kind", std::string(to_string(o.kind))},
          {"size", o.size},
          {"scale", o.scale},
          {"target_vertices", o.target_vertices},
          {"pose", o.pose},
          {"class", std::string(class_name(o.class_id))},
          {"intensity", o.intensity}};
}

void parse_scene(const json& j, SceneSpec& s, const fs::path& base) {
  check_keys(j, "scene", {"background", "background_file", "ray_mode", "ground_intensity", "objects"});
  if (j.contains("background")) {
    const auto name = j.at("background").get<std::string>();
    if (name == "flat_ground") {
      s.background = BackgroundKind::flat_ground;
    } else if (name == "captured") {
      s.background = BackgroundKind::captured;
    } else {
      throw ConfigError("scene: unknown background '" + name + "'");
    }
  }
  if (j.contains("background_file")) s.background_file = resolve(j.at("background_file").get<std::string>(), base);
  if (j.contains("ray_mode")) {
    const auto name = j.at("ray_mode").get<std::string>();
    if (name == "spec") {
      s.ray_mode = RayMode::spec;
    } else if (name == "from_background") {
      s.ray_mode = RayMode::from_background;
    } else {
      throw ConfigError("scene: unknown ray_mode '" + name + "'");
    }
  }
  read_opt(j, "ground_intensity", s.ground_intensity);
  if (j.contains("objects")) {
    s.objects.clear();
    for (const auto& o : j.at("objects")) s.objects.push_back(parse_object(o, ObjectSpec{}));
  }
}

json scene_json(const SceneSpec& s) {
  json objects = json::array();
  for (const auto& o : s.objects) objects.push_back(object_json(o));
  return {{"background", s.background == BackgroundKind::flat_ground ? "flat_ground" : "captured"},
          {"background_file", path_string(s.background_file)},
          {"ray_mode", s.ray_mode == RayMode::spec ? "spec" : "from_background"},
          {"ground_intensity", s.ground_intensity},
          {"objects", objects}};
}

void parse_goal(const json& j, AttackGoal& g) {
  check_keys(j, "goal", {"kind", "source", "target"});
  if (j.contains("kind")) {
    const auto name = j.at("kind").get<std::string>();
    if (name == "hide") {
      g.kind = GoalKind::hide;
    } else if (name == "relabel") {
      g.kind = GoalKind::relabel;
    } else {
      throw ConfigError("goal: unknown kind '" + name + "'");
    }
  }
  if (j.contains("source")) g.source_class = read_class(j.at("source"));
  if (j.contains("target")) g.target_class = read_class(j.at("target"));
}

void parse_attack(const json& j, AttackConfig& a) {
  check_keys(j, "attack",
             {"lambda", "beta", "proxy", "lr", "max_iters", "score_every", "minibatch", "full_pass_limit",
              "relabel_full_product", "displacement_bound"});
  read_opt(j, "lambda", a.lambda);
  read_opt(j, "beta", a.beta);
  if (j.contains("proxy")) {
    check_keys(j.at("proxy"), "attack.proxy", {"mode", "mu", "alpha", "epsilon", "straight_through"});
    a.proxy = j.at("proxy").get<ProxyConfig>();
  }
  read_opt(j, "lr", a.lr);
  read_opt(j, "max_iters", a.max_iters);
  read_opt(j, "score_every", a.score_every);
  read_opt(j, "minibatch", a.minibatch);
  read_opt(j, "full_pass_limit", a.full_pass_limit);
  read_opt(j, "relabel_full_product", a.relabel_full_product);
  read_opt(j, "displacement_bound", a.displacement_bound);
}

void parse_evolution(const json& j, EvolutionConfig& e) {
  check_keys(j, "evolution", {"sigma", "reference_size", "offspring", "survivors", "max_generations", "lambda", "beta"});
  read_opt(j, "sigma", e.sigma);
  read_opt(j, "reference_size", e.reference_size);
  read_opt(j, "offspring", e.offspring);
  read_opt(j, "survivors", e.survivors);
  read_opt(j, "max_generations", e.max_generations);
  read_opt(j, "lambda", e.lambda);
  read_opt(j, "beta", e.beta);
}

void parse_train(const json& j, TrainConfig& t) {
  check_keys(j, "train", {"epochs", "lr", "crop", "random_crops", "positive_weight", "offset_weight"});
  read_opt(j, "epochs", t.epochs);
  read_opt(j, "lr", t.lr);
  read_opt(j, "crop", t.crop);
  read_opt(j, "random_crops", t.random_crops);
  read_opt(j, "positive_weight", t.positive_weight);
  read_opt(j, "offset_weight", t.offset_weight);
  if (t.epochs < 0 || !(t.lr > 0.0) || t.crop < 1 || t.random_crops < 0) throw ConfigError("train: invalid settings");
}

}  // namespace

std::vector<Pose> VictimSpec::resolve() const {
  if (!poses.empty()) return poses;
  if (use_grid) return EvalGrid::controlled_grid(base, offset);
  return {base};
}

void RunConfig::apply_seed() {
  train.seed = seed;
  attack.seed = seed;
  evolution.seed = seed;
}

RunConfig parse_config(const json& j, const fs::path& base_dir) {
  RunConfig cfg;
  try {
    check_keys(j, "config",
               {"seed", "grid", "sensor", "scene", "object", "model", "synth", "train", "goal", "victims", "attack",
                "evolution", "evaluate"});
    read_opt(j, "seed", cfg.seed);
    if (j.contains("grid")) cfg.grid = j.at("grid").get<GridSpec>();
    if (j.contains("sensor")) cfg.sensor = j.at("sensor").get<SensorSpec>();
    if (j.contains("scene")) parse_scene(j.at("scene"), cfg.scene, base_dir);
    if (j.contains("object")) {
      const json& o = j.at("object");
      cfg.object = parse_object(o, cfg.object);
      if (o.contains("mesh")) cfg.object_mesh = resolve(o.at("mesh").get<std::string>(), base_dir);
    }
    if (j.contains("model")) cfg.model = resolve(j.at("model").get<std::string>(), base_dir);
    if (j.contains("synth")) {
      check_keys(j.at("synth"), "synth", {"count", "held_out"});
      read_opt(j.at("synth"), "count", cfg.synth_count);
      read_opt(j.at("synth"), "held_out", cfg.synth_held_out);
      if (cfg.synth_count < 1 || cfg.synth_held_out < 0) throw ConfigError("synth: count must be >= 1");
    }
    if (j.contains("train")) parse_train(j.at("train"), cfg.train);
    if (j.contains("goal")) parse_goal(j.at("goal"), cfg.goal);
    if (j.contains("victims")) {
      const json& v = j.at("victims");
      check_keys(v, "victims", {"poses", "grid"});
      read_opt(v, "poses", cfg.victims.poses);
      if (v.contains("grid")) {
        check_keys(v.at("grid"), "victims.grid", {"base", "offset"});
        cfg.victims.use_grid = true;
        read_opt(v.at("grid"), "base", cfg.victims.base);
        read_opt(v.at("grid"), "offset", cfg.victims.offset);
      }
    }
    if (j.contains("attack")) parse_attack(j.at("attack"), cfg.attack);
    if (j.contains("evolution")) parse_evolution(j.at("evolution"), cfg.evolution);
    if (j.contains("evaluate")) {
      const json& e = j.at("evaluate");
      check_keys(e, "evaluate", {"base", "mesh", "reference"});
      read_opt(e, "base", cfg.eval.base);
      if (e.contains("mesh")) cfg.eval.mesh = resolve(e.at("mesh").get<std::string>(), base_dir);
      if (e.contains("reference")) cfg.eval.reference = resolve(e.at("reference").get<std::string>(), base_dir);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.apply_seed();
  return cfg;
}

RunConfig load_config(const fs::path& path, std::string* manifest_command) {
  json j;
  try {
    j = read_json(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (j.is_object() && j.contains("config") && j.contains("command")) {
    if (manifest_command != nullptr) *manifest_command = j.at("command").get<std::string>();
    j = j.at("config");
  }
  return parse_config(j, fs::absolute(path).parent_path());
}

json to_json(const RunConfig& cfg) {
  json victims;
  if (!cfg.victims.poses.empty()) {
    victims["poses"] = cfg.victims.poses;
  } else if (cfg.victims.use_grid) {
    victims["grid"] = {{"base", cfg.victims.base}, {"offset", cfg.victims.offset}};
  } else {
    victims["poses"] = std::vector<Pose>{cfg.victims.base};
  }
  json object = object_json(cfg.object);
  object.erase("pose");
  if (!cfg.object_mesh.empty()) object["mesh"] = path_string(cfg.object_mesh);
  const AttackConfig& a = cfg.attack;
  const EvolutionConfig& e = cfg.evolution;
  const TrainConfig& t = cfg.train;
  return {
      {"seed", cfg.seed},
      {"grid", cfg.grid},
      {"sensor", cfg.sensor},
      {"scene", scene_json(cfg.scene)},
      {"object", object},
      {"model", path_string(cfg.model)},
      {"synth", {{"count", cfg.synth_count}, {"held_out", cfg.synth_held_out}}},
      {"train",
       {{"epochs", t.epochs},
        {"lr", t.lr},
        {"crop", t.crop},
        {"random_crops", t.random_crops},
        {"positive_weight", t.positive_weight},
        {"offset_weight", t.offset_weight}}},
      {"goal",
       {{"kind", cfg.goal.kind == GoalKind::hide ? "hide" : "relabel"},
        {"source", std::string(class_name(cfg.goal.source_class))},
        {"target", std::string(class_name(cfg.goal.target_class))}}},
      {"victims", victims},
      {"attack",
       {{"lambda", a.lambda},
        {"beta", a.beta},
        {"proxy", a.proxy},
        {"lr", a.lr},
        {"max_iters", a.max_iters},
        {"score_every", a.score_every},
        {"minibatch", a.minibatch},
        {"full_pass_limit", a.full_pass_limit},
        {"relabel_full_product", a.relabel_full_product},
        {"displacement_bound", a.displacement_bound}}},
      {"evolution",
       {{"sigma", e.sigma},
        {"reference_size", e.reference_size},
        {"offspring", e.offspring},
        {"survivors", e.survivors},
        {"max_generations", e.max_generations},
        {"lambda", e.lambda},
        {"beta", e.beta}}},
      {"evaluate",
       {{"base", cfg.eval.base}, {"mesh", path_string(cfg.eval.mesh)}, {"reference", path_string(cfg.eval.reference)}}},
  };
}

TriangleMesh load_object(const RunConfig& cfg) {
  if (!cfg.object_mesh.empty()) return read_obj(cfg.object_mesh);
  return object_mesh(cfg.object);
}

}  // namespace lidaradv::cli
