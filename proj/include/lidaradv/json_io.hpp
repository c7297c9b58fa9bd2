#pragma once

#include <filesystem>

#include "json.hpp"
#include "lidaradv/features.hpp"
#include "lidaradv/geometry.hpp"
#include "lidaradv/lidar_sim.hpp"

namespace lidaradv {

nlohmann::json read_json(const std::filesystem::path& path);
/// Pretty-printed, trailing newline. Output is a pure function of `j`.
void write_json(const nlohmann::json& j, const std::filesystem::path& path);

void to_json(nlohmann::json& j, const Vec3& v);
void from_json(const nlohmann::json& j, Vec3& v);
void to_json(nlohmann::json& j, const Pose& p);
void from_json(const nlohmann::json& j, Pose& p);
void to_json(nlohmann::json& j, const Rect2& r);
void from_json(const nlohmann::json& j, Rect2& r);
void to_json(nlohmann::json& j, const GridSpec& g);
/// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, GridSpec& g);
void to_json(nlohmann::json& j, const ProxyConfig& c);
void from_json(const nlohmann::json& j, ProxyConfig& c);
void to_json(nlohmann::json& j, const SensorSpec& s);
void from_json(const nlohmann::json& j, SensorSpec& s);

}  // namespace lidaradv
