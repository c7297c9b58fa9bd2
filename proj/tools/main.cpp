// lidaradv_cli: scene synthesis, detector training, rendering, detection,
// attacks and evaluation. Exit codes: 0 ok, 1 runtime failure, 2 config or
// usage error.

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "lidaradv/json_io.hpp"
#include "lidaradv/mesh_io.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lidaradv;
using namespace lidaradv::cli;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string model;
};

struct Extra {
  std::string goal;
  std::string source;
  std::string target;
  std::string mesh;
  std::string reference;
  std::string stl;
  std::string obj;
};

RunConfig resolve_config(const std::string& command, const Common& common, const Extra& extra) {
  RunConfig cfg;
  if (!common.config.empty()) {
    std::string manifest_command;
    cfg = load_config(common.config, &manifest_command);
    if (!manifest_command.empty() && manifest_command != command) {
      throw ConfigError("manifest was written by '" + manifest_command + "', not '" + command + "'");
    }
  }
  if (common.seed) {
    cfg.seed = *common.seed;
    cfg.apply_seed();
  }
  auto abs = [](const std::string& p) { return fs::weakly_canonical(fs::absolute(p)); };
  if (!common.model.empty()) cfg.model = abs(common.model);
  if (!extra.goal.empty()) {
    if (extra.goal == "hide") {
      cfg.goal.kind = GoalKind::hide;
    } else if (extra.goal == "relabel") {
      cfg.goal.kind = GoalKind::relabel;
    } else {
      throw ConfigError("unknown goal '" + extra.goal + "'");
    }
  }
  try {
    if (!extra.source.empty()) cfg.goal.source_class = parse_class(extra.source);
    if (!extra.target.empty()) cfg.goal.target_class = parse_class(extra.target);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (command == "attack" || command == "evolve") {
    if (!extra.mesh.empty()) cfg.object_mesh = abs(extra.mesh);
  }
  if (command == "evaluate") {
    if (!extra.mesh.empty()) cfg.eval.mesh = abs(extra.mesh);
    if (!extra.reference.empty()) cfg.eval.reference = abs(extra.reference);
  }
  return cfg;
}

DetectorParams load_model(const RunConfig& cfg) {
  if (cfg.model.empty()) throw ConfigError("no detector weights: set \"model\" or pass --model");
  if (!fs::exists(cfg.model)) throw ConfigError("weights file not found: " + cfg.model.string());
  return load_params(cfg.model);
}

Environment environment(const RunConfig& cfg) { return make_environment(cfg.scene, cfg.grid, cfg.sensor); }

void write_manifest(const fs::path& out, const std::string& command, const RunConfig& cfg, const json& extra = {}) {
  json m{{"tool", "lidaradv_cli"}, {"format", 1}, {"command", command}, {"config", to_json(cfg)}};
  if (!extra.is_null()) m["arguments"] = extra;
  write_json(m, out / "manifest.json");
}

json scene_summary(const LabeledScene& s) {
  std::size_t cells = 0;
  for (const auto o : s.targets.object) cells += o;
  return {{"object_cells", cells}, {"anchors", s.anchors.size()}};
}

void run_synth(const RunConfig& cfg, const fs::path& out) {
  const Environment env = make_flat_environment(cfg.grid, cfg.sensor);
  const auto layouts = synth_layouts(cfg.synth_count, cfg.seed, cfg.grid);
  json scenes = json::array();
  for (const auto& layout : layouts) {
    json objects = json::array();
    for (const auto& o : layout.objects) {
      objects.push_back({{"kind", std::string(to_string(o.kind))},
                         {"size", o.size},
                         {"scale", o.scale},
                         {"target_vertices", o.target_vertices},
                         {"pose", o.pose},
                         {"class", std::string(class_name(o.class_id))},
                         {"intensity", o.intensity}});
    }
    const LabeledScene labeled = label_scene(with_ground_intensity(env, layout.ground_intensity), layout.objects);
    json s = scene_summary(labeled);
    s["ground_intensity"] = layout.ground_intensity;
    s["objects"] = objects;
    scenes.push_back(s);
  }
  write_json({{"seed", cfg.seed}, {"count", cfg.synth_count}, {"scenes", scenes}}, out / "dataset.json");
}

void run_train(const RunConfig& cfg, const fs::path& out) {
  const Environment env = make_flat_environment(cfg.grid, cfg.sensor);
  const auto train_set = synth_dataset(cfg.synth_count, cfg.seed, env);
  TrainReport report;
  const DetectorParams params = train(train_set, cfg.train, &report);
  save_params(params, out / "weights.json");
  json r{{"epoch_loss", report.epoch_loss},
         {"final_objectness_loss", report.final_objectness_loss},
         {"final_positiveness_loss", report.final_positiveness_loss},
         {"final_offset_loss", report.final_offset_loss},
         {"final_height_loss", report.final_height_loss},
         {"final_class_loss", report.final_class_loss},
         {"train_accuracy", objectness_accuracy(params, train_set)}};
  if (cfg.synth_held_out > 0) {
    const auto held_out = synth_dataset(cfg.synth_held_out, cfg.seed + 1, env);
    r["held_out_accuracy"] = objectness_accuracy(params, held_out);
  }
  write_json(r, out / "train_report.json");
}

std::vector<TriangleMesh> posed_objects(const SceneSpec& scene) {
  std::vector<TriangleMesh> meshes;
  for (const auto& o : scene.objects) meshes.push_back(apply_pose(object_mesh(o), o.pose));
  return meshes;
}

SceneScan scan_scene(const RunConfig& cfg, const Environment& env) { return render_objects(env, cfg.scene.objects); }

void run_render(const RunConfig& cfg, const fs::path& out) {
  const Environment env = environment(cfg);
  const SceneScan scan = scan_scene(cfg, env);
  write_cloud(scan.combined(), out / "scan.csv");
  if (!cfg.scene.objects.empty()) write_obj(merge_meshes(posed_objects(cfg.scene)).mesh, out / "scene.obj");
  write_json({{"points", scan.combined().size()},
              {"foreground_points", scan.foreground.size()},
              {"background_points", scan.background_kept.size()}},
             out / "render.json");
}

void run_detect(const RunConfig& cfg, const fs::path& out) {
  const Environment env = environment(cfg);
  const DetectorParams params = load_model(cfg);
  const SceneScan scan = scan_scene(cfg, env);
  const auto obstacles = detect_cloud(scan.combined(), env.grid, params);
  write_json(detection_report(obstacles), out / "detections.json");
}

json goal_json(const AttackGoal& goal) {
  return {{"kind", goal.kind == GoalKind::hide ? "hide" : "relabel"},
          {"source", std::string(class_name(goal.source_class))},
          {"target", std::string(class_name(goal.target_class))}};
}

void write_attack_artifacts(const fs::path& out, const TriangleMesh& benign, const AttackResult& result,
                            const AttackGoal& goal, const std::vector<Pose>& poses) {
  write_obj(benign, out / "input.obj");
  write_obj(result.adversarial, out / "adversarial.obj");
  write_stl(result.adversarial, out / "adversarial.stl");
  json r = result_to_json(result);
  r["goal"] = goal_json(goal);
  r["victims"] = poses;
  write_json(r, out / "result.json");
  if (result.displacement_flagged()) {
    std::fprintf(stderr, "warning: max displacement %.3f m exceeds 0.2 x object size %.3f m\n",
                 result.max_displacement, result.object_size);
  }
}

void run_attack_cmd(const RunConfig& cfg, const fs::path& out) {
  const Environment env = environment(cfg);
  const DetectorParams params = load_model(cfg);
  const TriangleMesh benign = load_object(cfg);
  AttackConfig a = cfg.attack;
  a.victim_set = cfg.victims.resolve();
  const AttackResult result = run_attack(benign, cfg.goal, a, env, params);
  write_attack_artifacts(out, benign, result, cfg.goal, a.victim_set);
}

void run_evolve_cmd(const RunConfig& cfg, const fs::path& out) {
  const Environment env = environment(cfg);
  const DetectorParams params = load_model(cfg);
  const TriangleMesh benign = load_object(cfg);
  EvolutionConfig e = cfg.evolution;
  e.victim_set = cfg.victims.resolve();
  EvolutionTrace trace;
  const AttackResult result = evolve(benign, cfg.goal, e, env, params, &trace);
  write_attack_artifacts(out, benign, result, cfg.goal, e.victim_set);
}

void run_evaluate(const RunConfig& cfg, const fs::path& out) {
  if (cfg.eval.mesh.empty()) throw ConfigError("evaluate: no mesh (set evaluate.mesh or pass --mesh)");
  const Environment env = environment(cfg);
  const DetectorParams params = load_model(cfg);
  const TriangleMesh mesh = read_obj(cfg.eval.mesh);
  const TriangleMesh reference = cfg.eval.reference.empty() ? load_object(cfg) : read_obj(cfg.eval.reference);
  const EvalGrid grid = EvalGrid::standard(cfg.eval.base, cfg.seed);
  json j = eval_to_json(evaluate(mesh, reference, grid, cfg.goal, env, params));
  j["goal"] = goal_json(cfg.goal);
  write_json(j, out / "eval.json");
}

// Fills export arguments missing from the command line from an export
// manifest.
void replay_export_arguments(const fs::path& manifest, Extra& extra) {
  json m;
  try {
    m = read_json(manifest);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("cannot read ") + manifest.string() + ": " + e.what());
  }
  if (m.value("command", "") != "export" || !m.contains("arguments")) {
    throw ConfigError("export: --config must be a manifest written by export");
  }
  const json& a = m.at("arguments");
  auto fill = [&](std::string& dst, const char* key) {
    if (dst.empty() && a.contains(key)) dst = a.at(key).get<std::string>();
  };
  fill(extra.mesh, "mesh");
  if (extra.stl.empty() && extra.obj.empty()) {
    fill(extra.stl, "stl");
    fill(extra.obj, "obj");
  }
}

void run_export(const Extra& extra) {
  if (extra.mesh.empty() || (extra.stl.empty() && extra.obj.empty())) {
    throw ConfigError("export: need --mesh and one of --stl / --obj");
  }
  const TriangleMesh mesh = read_obj(extra.mesh);
  for (const auto& p : {extra.stl, extra.obj}) {
    if (!p.empty()) fs::create_directories(fs::absolute(p).parent_path());
  }
  if (!extra.stl.empty()) write_stl(mesh, extra.stl);
  if (!extra.obj.empty()) write_obj(mesh, extra.obj);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LiDAR obstacle-detection simulator and adversarial mesh toolkit"};
  app.require_subcommand(1);
  Common common;
  Extra extra;

  struct Command {
    const char* name;
    const char* help;
    std::function<void(const RunConfig&, const fs::path&)> run;
  };
  const std::vector<Command> commands{
      {"synth", "generate a synthetic labeled dataset", run_synth},
      {"train", "train the detector on synthetic scenes", run_train},
      {"render", "ray-cast a scene into a point cloud", run_render},
      {"detect", "run the full detection pipeline on a scene", run_detect},
      {"attack", "gradient (whitebox) adversarial mesh attack", run_attack_cmd},
      {"evolve", "evolution (blackbox) adversarial mesh attack", run_evolve_cmd},
      {"evaluate", "score a mesh over controlled and unseen poses", run_evaluate},
      {"export", "convert an OBJ mesh to STL / OBJ", nullptr},
  };

  std::vector<CLI::App*> subs;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", common.config, "JSON config or manifest.json of an earlier run");
    sub->add_option("--seed", common.seed, "master seed");
    sub->add_option("--out", common.out, "output directory")->capture_default_str();
    const std::string name = c.name;
    if (name != "synth" && name != "train" && name != "render" && name != "export") {
      sub->add_option("--model", common.model, "detector weights (JSON header)");
    }
    if (name == "attack" || name == "evolve" || name == "evaluate") {
      sub->add_option("--goal", extra.goal, "hide | relabel");
      sub->add_option("--source", extra.source, "relabel source class");
      sub->add_option("--target", extra.target, "relabel target class");
      sub->add_option("--mesh", extra.mesh, "object mesh (OBJ)");
    }
    if (name == "evaluate") sub->add_option("--reference", extra.reference, "benign mesh the masks come from");
    if (name == "export") {
      sub->add_option("--mesh", extra.mesh, "input OBJ");
      sub->add_option("--stl", extra.stl, "binary STL output");
      sub->add_option("--obj", extra.obj, "OBJ output");
    }
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  for (std::size_t i = 0; i < commands.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    const std::string name = commands[i].name;
    try {
      if (name == "export") {
        if (!common.config.empty()) replay_export_arguments(common.config, extra);
        run_export(extra);
        const fs::path out = subs[i]->count("--out") > 0 ? fs::path(common.out)
                                                         : fs::absolute(extra.stl.empty() ? extra.obj : extra.stl).parent_path();
        fs::create_directories(out);
        const json args{{"mesh", fs::weakly_canonical(fs::absolute(extra.mesh)).generic_string()},
                        {"stl", extra.stl.empty() ? "" : fs::weakly_canonical(fs::absolute(extra.stl)).generic_string()},
                        {"obj", extra.obj.empty() ? "" : fs::weakly_canonical(fs::absolute(extra.obj)).generic_string()}};
        write_manifest(out, name, RunConfig{}, args);
        return 0;
      }
      const RunConfig cfg = resolve_config(name, common, extra);
      const fs::path out(common.out);
      fs::create_directories(out);
      commands[i].run(cfg, out);
      write_manifest(out, name, cfg);
      return 0;
    } catch (const ConfigError& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return 1;
    }
  }
  return 2;
}
