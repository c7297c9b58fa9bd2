#include "lidaradv/mesh_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>

namespace lidaradv {

namespace {

static_assert(std::endian::native == std::endian::little, "binary writers assume little-endian");

void put_f32(std::ostream& os, double v) {
  const auto f = static_cast<float>(v);
  os.write(reinterpret_cast<const char*>(&f), sizeof f);
}

std::uint32_t parse_index(const std::string& token, std::size_t vertex_count) {
  const auto slash = token.find('/');
  const long idx = std::stol(token.substr(0, slash));
  const long resolved = idx < 0 ? static_cast<long>(vertex_count) + idx : idx - 1;
  if (resolved < 0 || resolved >= static_cast<long>(vertex_count)) {
    throw std::runtime_error("OBJ face index out of range: " + token);
  }
  return static_cast<std::uint32_t>(resolved);
}

}  // namespace

TriangleMesh read_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v.x >> v.y >> v.z)) throw std::runtime_error("malformed OBJ vertex: " + line);
      vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<std::string> tokens;
      for (std::string t; ls >> t;) tokens.push_back(t);
      if (tokens.size() != 3) throw std::runtime_error("OBJ face is not a triangle: " + line);
      faces.push_back({parse_index(tokens[0], vertices.size()), parse_index(tokens[1], vertices.size()),
                       parse_index(tokens[2], vertices.size())});
    }
  }
  return TriangleMesh(std::move(vertices), std::move(faces));
}

void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(17);
  for (const auto& v : mesh.vertices()) out << "v " << v.x << ' ' << v.y << ' ' << v.z << '\n';
  for (const auto& f : mesh.faces()) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

void write_stl(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  std::array<char, 80> header{};
  const std::string title = "lidaradv binary STL";
  std::memcpy(header.data(), title.data(), title.size());
  out.write(header.data(), header.size());
  const auto count = static_cast<std::uint32_t>(mesh.face_count());
  out.write(reinterpret_cast<const char*>(&count), sizeof count);
  const auto& v = mesh.vertices();
  for (const auto& f : mesh.faces()) {
    Vec3 n = cross(v[f[1]] - v[f[0]], v[f[2]] - v[f[0]]);
    const double len = norm(n);
    if (len > 0.0) n = n / len;
    put_f32(out, n.x);
    put_f32(out, n.y);
    put_f32(out, n.z);
    for (auto idx : f) {
      put_f32(out, v[idx].x);
      put_f32(out, v[idx].y);
      put_f32(out, v[idx].z);
    }
    const std::uint16_t attr = 0;
    out.write(reinterpret_cast<const char*>(&attr), sizeof attr);
  }
}

std::uint32_t read_stl_triangle_count(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  in.seekg(80);
  std::uint32_t count = 0;
  if (!in.read(reinterpret_cast<char*>(&count), sizeof count)) {
    throw std::runtime_error("truncated STL header: " + path.string());
  }
  const auto expected = 84 + static_cast<std::uintmax_t>(count) * 50;
  if (std::filesystem::file_size(path) != expected) {
    throw std::runtime_error("STL size does not match triangle count: " + path.string());
  }
  return count;
}

}  // namespace lidaradv
