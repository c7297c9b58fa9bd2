#include "lidaradv/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "lidaradv/json_io.hpp"

namespace lidaradv {

namespace {

struct AxisWeights {
  int lower = 0;
  double w[2] = {1.0, 0.0};
  double dw[2] = {0.0, 0.0};  // d w / d (grid coordinate)
};

AxisWeights axis_weights(const ProxyConfig& cfg, double g) {
  AxisWeights a;
  const double lower = std::floor(g);
  a.lower = static_cast<int>(lower);
  const double d = kernel_distance(cfg, g, lower);
  const double dd = kernel_distance_derivative(cfg, g, lower);
  a.w[0] = 1.0 - d;
  a.w[1] = d;
  a.dw[0] = -dd;
  a.dw[1] = dd;
  return a;
}

// Grid coordinates of a point. The slab coordinate is clamped to the slab
// range; `z_free` is false when the clamp is active (zero z gradient).
struct GridCoord {
  double u, v, w;
  bool z_free;
};

GridCoord grid_coord(const Vec3& p, const GridSpec& spec) {
  GridCoord g;
  g.u = (p.x - spec.origin_x) / spec.cell_size;
  g.v = (p.y - spec.origin_y) / spec.cell_size;
  const double w = (p.z - spec.z_min) / spec.slab_height();
  const double w_max = spec.slabs - 1;
  g.w = std::clamp(w, 0.0, w_max);
  g.z_free = w > 0.0 && w < w_max;
  return g;
}

}  // namespace

void GridSpec::validate() const {
  if (rows < 1 || cols < 1 || slabs < 1) throw std::invalid_argument("GridSpec: counts must be >= 1");
  if (!(cell_size > 0.0)) throw std::invalid_argument("GridSpec: cell_size must be positive");
  if (!(z_min < z_max)) throw std::invalid_argument("GridSpec: z_min must be below z_max");
}

std::pair<int, int> GridSpec::cell_of(double x, double y) const {
  const double u = std::floor((x - origin_x) / cell_size);
  const double v = std::floor((y - origin_y) / cell_size);
  if (u < 0 || v < 0 || u >= rows || v >= cols) return {-1, -1};
  return {static_cast<int>(u), static_cast<int>(v)};
}

GridSpec GridSpec::window(int row0, int col0, int nrows, int ncols) const {
  GridSpec w = *this;
  w.rows = nrows;
  w.cols = ncols;
  w.origin_x = origin_x + row0 * cell_size;
  w.origin_y = origin_y + col0 * cell_size;
  return w;
}

ProxyMode parse_proxy_mode(std::string_view name) {
  if (name == "trilinear") return ProxyMode::trilinear;
  if (name == "tanh") return ProxyMode::tanh;
  if (name == "interpolated") return ProxyMode::interpolated;
  throw std::invalid_argument("unknown proxy mode: " + std::string(name));
}

std::string_view to_string(ProxyMode mode) {
  switch (mode) {
    case ProxyMode::trilinear: return "trilinear";
    case ProxyMode::tanh: return "tanh";
    case ProxyMode::interpolated: return "interpolated";
  }
  return "unknown";
}

void ProxyConfig::validate() const {
  if (!(mu > 0.0)) throw std::invalid_argument("ProxyConfig: mu must be positive");
  if (!(epsilon > 0.0)) throw std::invalid_argument("ProxyConfig: epsilon must be positive");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("ProxyConfig: alpha must lie in [0, 1]");
}

double kernel_distance(const ProxyConfig& cfg, double u1, double u2) {
  switch (cfg.mode) {
    case ProxyMode::trilinear: return u1 - std::floor(u2);
    case ProxyMode::tanh: return 0.5 + 0.5 * std::tanh(cfg.mu * (u1 - u2 - 1.0));
    case ProxyMode::interpolated:
      return cfg.alpha * (0.5 + 0.5 * std::tanh(5.0 * cfg.mu * (u1 - u2 - 1.0))) +
             (1.0 - cfg.alpha) * (u1 - std::floor(u2));
  }
  return 0.0;
}

double kernel_distance_derivative(const ProxyConfig& cfg, double u1, double u2) {
  auto tanh_slope = [&](double scale) {
    const double th = std::tanh(scale * (u1 - u2 - 1.0));
    return 0.5 * scale * (1.0 - th * th);
  };
  switch (cfg.mode) {
    case ProxyMode::trilinear: return 1.0;
    case ProxyMode::tanh: return tanh_slope(cfg.mu);
    case ProxyMode::interpolated: return cfg.alpha * tanh_slope(5.0 * cfg.mu) + (1.0 - cfg.alpha);
  }
  return 0.0;
}

PointCloud roi_filter(const PointCloud& cloud, const GridSpec& spec) {
  PointCloud out;
  for (const auto& p : cloud.points) {
    if (spec.roi.contains(p.position.x, p.position.y)) out.points.push_back(p);
  }
  return out;
}

FeatureMap hard_features(const PointCloud& cloud, const GridSpec& spec) {
  spec.validate();
  FeatureMap fm(spec.rows, spec.cols);
  std::vector<double> sum_h(spec.cell_count(), 0.0), sum_i(spec.cell_count(), 0.0);
  std::vector<int> count(spec.cell_count(), 0);
  for (const auto& pt : cloud.points) {
    const auto [r, c] = spec.cell_of(pt.position.x, pt.position.y);
    if (r < 0) continue;
    const auto k = static_cast<std::size_t>(r) * spec.cols + c;
    const double z = pt.position.z;
    if (count[k] == 0 || z > fm.at(r, c, FeatureChannel::max_height)) {
      fm.at(r, c, FeatureChannel::max_height) = z;
      fm.at(r, c, FeatureChannel::max_intensity) = pt.intensity;
    }
    sum_h[k] += z;
    sum_i[k] += pt.intensity;
    ++count[k];
  }
  for (int r = 0; r < spec.rows; ++r) {
    for (int c = 0; c < spec.cols; ++c) {
      const auto k = static_cast<std::size_t>(r) * spec.cols + c;
      if (count[k] > 0) {
        fm.at(r, c, FeatureChannel::mean_height) = sum_h[k] / count[k];
        fm.at(r, c, FeatureChannel::mean_intensity) = sum_i[k] / count[k];
        fm.at(r, c, FeatureChannel::count) = count[k];
        fm.at(r, c, FeatureChannel::non_empty) = 1.0;
      }
      const auto [x, y] = spec.cell_center(r, c);
      fm.at(r, c, FeatureChannel::direction) = std::atan2(y, x);
      fm.at(r, c, FeatureChannel::distance) = std::hypot(x, y);
    }
  }
  return fm;
}

SoftGrid soft_count(const PointCloud& cloud, const GridSpec& spec, const ProxyConfig& cfg) {
  spec.validate();
  SoftGrid g;
  g.rows = spec.rows;
  g.cols = spec.cols;
  g.slabs = spec.slabs;
  const std::size_t n = spec.cell_count() * spec.slabs;
  g.mass.assign(n, 0.0);
  g.intensity_mass.assign(n, 0.0);
  for (const auto& pt : cloud.points) {
    const GridCoord gc = grid_coord(pt.position, spec);
    // Quick reject: both neighbors outside the grid.
    if (gc.u < -1.0 || gc.v < -1.0 || gc.u >= spec.rows || gc.v >= spec.cols) continue;
    const AxisWeights au = axis_weights(cfg, gc.u);
    const AxisWeights av = axis_weights(cfg, gc.v);
    const AxisWeights aw = axis_weights(cfg, gc.w);
    for (int a = 0; a < 2; ++a) {
      const int r = au.lower + a;
      if (r < 0 || r >= spec.rows) continue;
      for (int b = 0; b < 2; ++b) {
        const int c = av.lower + b;
        if (c < 0 || c >= spec.cols) continue;
        const double wuv = au.w[a] * av.w[b];
        for (int d = 0; d < 2; ++d) {
          const int p = aw.lower + d;
          if (p < 0 || p >= spec.slabs) continue;
          const double w = wuv * aw.w[d];
          const auto k = g.index(r, c, p);
          g.mass[k] += w;
          g.intensity_mass[k] += w * pt.intensity;
        }
      }
    }
  }
  return g;
}

std::vector<Vec3> soft_count_backward(const PointCloud& cloud, const GridSpec& spec, const ProxyConfig& cfg,
                                      const SoftGridAdjoint& adjoint) {
  std::vector<Vec3> grad(cloud.size());
  const SoftGrid shape{spec.rows, spec.cols, spec.slabs, {}, {}};
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& pt = cloud.points[i];
    const GridCoord gc = grid_coord(pt.position, spec);
    if (gc.u < -1.0 || gc.v < -1.0 || gc.u >= spec.rows || gc.v >= spec.cols) continue;
    const AxisWeights au = axis_weights(cfg, gc.u);
    const AxisWeights av = axis_weights(cfg, gc.v);
    const AxisWeights aw = axis_weights(cfg, gc.w);
    double gu = 0.0, gv = 0.0, gw = 0.0;
    for (int a = 0; a < 2; ++a) {
      const int r = au.lower + a;
      if (r < 0 || r >= spec.rows) continue;
      for (int b = 0; b < 2; ++b) {
        const int c = av.lower + b;
        if (c < 0 || c >= spec.cols) continue;
        for (int d = 0; d < 2; ++d) {
          const int p = aw.lower + d;
          if (p < 0 || p >= spec.slabs) continue;
          const auto k = shape.index(r, c, p);
          // Adjoint on the scalar weight w (mass += w, intensity_mass += w * I).
          const double aw_total = adjoint.mass[k] + adjoint.intensity_mass[k] * pt.intensity;
          if (aw_total == 0.0) continue;
          gu += aw_total * au.dw[a] * av.w[b] * aw.w[d];
          gv += aw_total * au.w[a] * av.dw[b] * aw.w[d];
          gw += aw_total * au.w[a] * av.w[b] * aw.dw[d];
        }
      }
    }
    grad[i] = {gu / spec.cell_size, gv / spec.cell_size, gc.z_free ? gw / spec.slab_height() : 0.0};
  }
  return grad;
}

namespace {

// Topmost occupied slab of a column, -1 when the column is empty.
int top_slab(const SoftGrid& g, int r, int c, double threshold) {
  for (int p = g.slabs - 1; p >= 0; --p) {
    if (g.mass[g.index(r, c, p)] > threshold) return p;
  }
  return -1;
}

}  // namespace

FeatureMap soft_features(const SoftGrid& g, const GridSpec& spec, const ProxyConfig& cfg) {
  FeatureMap fm(g.rows, g.cols);
  const double eps = cfg.epsilon;
  for (int r = 0; r < g.rows; ++r) {
    for (int c = 0; c < g.cols; ++c) {
      double total = 0.0, height_mass = 0.0, int_mass = 0.0;
      for (int p = 0; p < g.slabs; ++p) {
        const auto k = g.index(r, c, p);
        total += g.mass[k];
        height_mass += g.mass[k] * spec.slab_value(p);
        int_mass += g.intensity_mass[k];
      }
      const int top = top_slab(g, r, c, eps);
      if (top >= 0) {
        const auto k = g.index(r, c, top);
        fm.at(r, c, FeatureChannel::max_height) = spec.slab_value(top);
        fm.at(r, c, FeatureChannel::max_intensity) = g.intensity_mass[k] / (g.mass[k] + eps);
      }
      fm.at(r, c, FeatureChannel::mean_height) = height_mass / (total + eps);
      fm.at(r, c, FeatureChannel::mean_intensity) = int_mass / (total + eps);
      fm.at(r, c, FeatureChannel::count) = total;
      fm.at(r, c, FeatureChannel::non_empty) = total > eps ? 1.0 : 0.0;
      const auto [x, y] = spec.cell_center(r, c);
      fm.at(r, c, FeatureChannel::direction) = std::atan2(y, x);
      fm.at(r, c, FeatureChannel::distance) = std::hypot(x, y);
    }
  }
  return fm;
}

SoftGridAdjoint soft_features_backward(const SoftGrid& g, const GridSpec& spec, const ProxyConfig& cfg,
                                       const FeatureMap& adj) {
  SoftGridAdjoint out;
  out.mass.assign(g.mass.size(), 0.0);
  out.intensity_mass.assign(g.mass.size(), 0.0);
  const double eps = cfg.epsilon;
  for (int r = 0; r < g.rows; ++r) {
    for (int c = 0; c < g.cols; ++c) {
      const double a_max_h = adj.at(r, c, FeatureChannel::max_height);
      const double a_max_i = adj.at(r, c, FeatureChannel::max_intensity);
      const double a_mean_h = adj.at(r, c, FeatureChannel::mean_height);
      const double a_mean_i = adj.at(r, c, FeatureChannel::mean_intensity);
      const double a_count = adj.at(r, c, FeatureChannel::count);
      const double a_nonempty = adj.at(r, c, FeatureChannel::non_empty);
      if (a_max_h == 0.0 && a_max_i == 0.0 && a_mean_h == 0.0 && a_mean_i == 0.0 && a_count == 0.0 &&
          a_nonempty == 0.0) {
        continue;
      }
      double total = 0.0, height_mass = 0.0, int_mass = 0.0;
      for (int p = 0; p < g.slabs; ++p) {
        const auto k = g.index(r, c, p);
        total += g.mass[k];
        height_mass += g.mass[k] * spec.slab_value(p);
        int_mass += g.intensity_mass[k];
      }
      const double denom = total + eps;
      const double mean_h = height_mass / denom;
      const double mean_i = int_mass / denom;
      for (int p = 0; p < g.slabs; ++p) {
        const auto k = g.index(r, c, p);
        out.mass[k] += a_mean_h * (spec.slab_value(p) - mean_h) / denom - a_mean_i * mean_i / denom + a_count;
        if (cfg.straight_through) out.mass[k] += a_nonempty;
        out.intensity_mass[k] += a_mean_i / denom;
      }
      const int top = top_slab(g, r, c, eps);
      if (top >= 0) {
        const auto k = g.index(r, c, top);
        // max_height = sign(G_top) * T_top with sign passed through as identity.
        if (cfg.straight_through) out.mass[k] += a_max_h * spec.slab_value(top);
        const double dk = g.mass[k] + eps;
        out.mass[k] -= a_max_i * g.intensity_mass[k] / (dk * dk);
        out.intensity_mass[k] += a_max_i / dk;
      }
    }
  }
  return out;
}

std::pair<double, double> proxy_error(const PointCloud& cloud, const GridSpec& spec) {
  const FeatureMap hard = hard_features(cloud, spec);
  auto count_error = [&](ProxyMode mode) {
    ProxyConfig cfg;
    cfg.mode = mode;
    const FeatureMap soft = soft_features(soft_count(cloud, spec, cfg), spec, cfg);
    double err = 0.0;
    for (int r = 0; r < spec.rows; ++r) {
      for (int c = 0; c < spec.cols; ++c) {
        err += std::abs(soft.at(r, c, FeatureChannel::count) - hard.at(r, c, FeatureChannel::count));
      }
    }
    return err;
  };
  return {count_error(ProxyMode::trilinear), count_error(ProxyMode::tanh)};
}

void write_feature_map(const FeatureMap& fm, const GridSpec& spec, const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little);
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (double v : fm.data) {
      const auto f = static_cast<float>(v);
      out.write(reinterpret_cast<const char*>(&f), sizeof f);
    }
  }
  nlohmann::json side;
  side["format"] = "lidaradv-feature-map";
  side["version"] = 1;
  side["layout"] = "row,col,channel";
  side["dtype"] = "float32-le";
  side["channels"] = {"max_height", "max_intensity", "mean_height", "mean_intensity",
                      "count",      "direction",     "distance",    "non_empty"};
  side["rows"] = fm.rows;
  side["cols"] = fm.cols;
  side["grid"] = spec;
  write_json(side, std::filesystem::path(path.string() + ".json"));
}

FeatureMap read_feature_map(const std::filesystem::path& path, GridSpec* spec_out) {
  const nlohmann::json side = read_json(std::filesystem::path(path.string() + ".json"));
  FeatureMap fm(side.at("rows").get<int>(), side.at("cols").get<int>());
  if (spec_out) *spec_out = side.at("grid").get<GridSpec>();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  for (double& v : fm.data) {
    float f = 0.0f;
    if (!in.read(reinterpret_cast<char*>(&f), sizeof f)) throw std::runtime_error("truncated feature map");
    v = f;
  }
  return fm;
}

}  // namespace lidaradv
