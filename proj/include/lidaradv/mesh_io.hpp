#pragma once

#include <filesystem>

#include "lidaradv/geometry.hpp"

namespace lidaradv {

/// Wavefront OBJ, `v` and triangular `f` records only. Polygon faces with more
/// than three vertices are rejected; texture/normal indices are ignored.
TriangleMesh read_obj(const std::filesystem::path& path);
void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path);

/// Binary STL (80-byte header, uint32 count, 50 bytes per triangle).
void write_stl(const TriangleMesh& mesh, const std::filesystem::path& path);
/// Triangle count stored in a binary STL file.
std::uint32_t read_stl_triangle_count(const std::filesystem::path& path);

}  // namespace lidaradv
