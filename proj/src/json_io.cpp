#include "lidaradv/json_io.hpp"

#include <fstream>
#include <stdexcept>

namespace lidaradv {

namespace {

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void to_json(nlohmann::json& j, const Vec3& v) { j = nlohmann::json::array({v.x, v.y, v.z}); }

void from_json(const nlohmann::json& j, Vec3& v) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected [x, y, z]");
  v = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

void to_json(nlohmann::json& j, const Pose& p) { j = {{"translation", p.translation}, {"yaw_deg", p.yaw_deg}}; }

void from_json(const nlohmann::json& j, Pose& p) {
  Vec3 t;
  double yaw = 0.0;
  read_opt(j, "translation", t);
  read_opt(j, "yaw_deg", yaw);
  p = Pose(t, yaw);
}

void to_json(nlohmann::json& j, const Rect2& r) {
  j = {{"x_min", r.x_min}, {"x_max", r.x_max}, {"y_min", r.y_min}, {"y_max", r.y_max}};
}

void from_json(const nlohmann::json& j, Rect2& r) {
  r.x_min = j.at("x_min").get<double>();
  r.x_max = j.at("x_max").get<double>();
  r.y_min = j.at("y_min").get<double>();
  r.y_max = j.at("y_max").get<double>();
}

void to_json(nlohmann::json& j, const GridSpec& g) {
  j = {{"rows", g.rows},         {"cols", g.cols},         {"slabs", g.slabs}, {"cell_size", g.cell_size},
       {"origin_x", g.origin_x}, {"origin_y", g.origin_y}, {"z_min", g.z_min}, {"z_max", g.z_max},
       {"roi", g.roi}};
}

void from_json(const nlohmann::json& j, GridSpec& g) {
  read_opt(j, "rows", g.rows);
  read_opt(j, "cols", g.cols);
  read_opt(j, "slabs", g.slabs);
  read_opt(j, "cell_size", g.cell_size);
  read_opt(j, "origin_x", g.origin_x);
  read_opt(j, "origin_y", g.origin_y);
  read_opt(j, "z_min", g.z_min);
  read_opt(j, "z_max", g.z_max);
  read_opt(j, "roi", g.roi);
  g.validate();
}

void to_json(nlohmann::json& j, const ProxyConfig& c) {
  j = {{"mode", std::string(to_string(c.mode))}, {"mu", c.mu}, {"alpha", c.alpha}, {"epsilon", c.epsilon},
       {"straight_through", c.straight_through}};
}

void from_json(const nlohmann::json& j, ProxyConfig& c) {
  if (j.contains("mode")) c.mode = parse_proxy_mode(j.at("mode").get<std::string>());
  read_opt(j, "mu", c.mu);
  read_opt(j, "alpha", c.alpha);
  read_opt(j, "epsilon", c.epsilon);
  read_opt(j, "straight_through", c.straight_through);
  c.validate();
}

void to_json(nlohmann::json& j, const SensorSpec& s) {
  j = {{"azimuth_count", s.azimuth_count},
       {"elevation_count", s.elevation_count},
       {"elevation_min_deg", s.elevation_min_deg},
       {"elevation_max_deg", s.elevation_max_deg},
       {"height", s.height}};
}

void from_json(const nlohmann::json& j, SensorSpec& s) {
  read_opt(j, "azimuth_count", s.azimuth_count);
  read_opt(j, "elevation_count", s.elevation_count);
  read_opt(j, "elevation_min_deg", s.elevation_min_deg);
  read_opt(j, "elevation_max_deg", s.elevation_max_deg);
  read_opt(j, "height", s.height);
  if (s.azimuth_count < 1 || s.elevation_count < 1) throw std::invalid_argument("sensor: counts must be >= 1");
}

}  // namespace lidaradv
