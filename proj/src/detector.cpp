#include "lidaradv/detector.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "json.hpp"
#include "lidaradv/json_io.hpp"

namespace lidaradv {

namespace {

constexpr int kIn = DetectorParams::kInputs;
constexpr int kHid = DetectorParams::kHidden;

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Planar tile of `channels` planes, each h x w, anchored at grid cell
// (row0, col0).
struct Tile {
  int channels = 0, h = 0, w = 0, row0 = 0, col0 = 0;
  std::vector<double> v;

  Tile() = default;
  Tile(int c, int hh, int ww, int r0, int c0)
      : channels(c), h(hh), w(ww), row0(r0), col0(c0), v(static_cast<std::size_t>(c) * hh * ww, 0.0) {}
  double* plane(int c) { return v.data() + static_cast<std::size_t>(c) * h * w; }
  const double* plane(int c) const { return v.data() + static_cast<std::size_t>(c) * h * w; }
};

// out (O x h x w) += conv3x3(in (C x (h+2) x (w+2)), weights O x C x 3 x 3).
void conv3x3_accumulate(const Tile& in, const std::vector<double>& weights, Tile& out) {
  const int h = out.h, w = out.w, iw = in.w;
  for (int o = 0; o < out.channels; ++o) {
    double* dst = out.plane(o);
    for (int c = 0; c < in.channels; ++c) {
      const double* src = in.plane(c);
      const double* k = &weights[(static_cast<std::size_t>(o) * in.channels + c) * 9];
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const double wt = k[ky * 3 + kx];
          if (wt == 0.0) continue;
          for (int y = 0; y < h; ++y) {
            const double* s = src + static_cast<std::size_t>(y + ky) * iw + kx;
            double* d = dst + static_cast<std::size_t>(y) * w;
            for (int x = 0; x < w; ++x) d[x] += wt * s[x];
          }
        }
      }
    }
  }
}

// Transposed pass of conv3x3_accumulate: accumulates input adjoints and,
// when `dweights` is non-null, weight gradients.
void conv3x3_backward(const Tile& in, const std::vector<double>& weights, const Tile& dout, Tile* din,
                      std::vector<double>* dweights) {
  const int h = dout.h, w = dout.w, iw = in.w;
  for (int o = 0; o < dout.channels; ++o) {
    const double* g = dout.plane(o);
    for (int c = 0; c < in.channels; ++c) {
      const double* src = in.plane(c);
      double* dsrc = din ? din->plane(c) : nullptr;
      const std::size_t kbase = (static_cast<std::size_t>(o) * in.channels + c) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const double wt = weights[kbase + ky * 3 + kx];
          double acc = 0.0;
          for (int y = 0; y < h; ++y) {
            const double* gy = g + static_cast<std::size_t>(y) * w;
            const std::size_t off = static_cast<std::size_t>(y + ky) * iw + kx;
            if (dsrc) {
              double* d = dsrc + off;
              for (int x = 0; x < w; ++x) d[x] += wt * gy[x];
            }
            if (dweights) {
              const double* s = src + off;
              for (int x = 0; x < w; ++x) acc += gy[x] * s[x];
            }
          }
          if (dweights) (*dweights)[kbase + ky * 3 + kx] += acc;
        }
      }
    }
  }
}

struct Activations {
  CellRegion region;   // output region R
  CellRegion region1;  // layer-1 region (R grown by one, clipped)
  Tile input;          // (R1 grown by one), zero outside the grid
  Tile z1;             // over R1
  Tile a1;             // over R grown by one, zero outside the grid
  Tile z2;             // over R
  Tile a2;             // over R
  Tile head;           // head pre-activations over R
};

Activations run_forward(const DetectorParams& p, const FeatureMap& x, const CellRegion& region) {
  if (region.rows <= 0 || region.cols <= 0 || region.row0 < 0 || region.col0 < 0 ||
      region.row0 + region.rows > x.rows || region.col0 + region.cols > x.cols) {
    throw std::invalid_argument("detector: region outside feature map");
  }
  if (p.w1.size() != static_cast<std::size_t>(kHid * kIn * 9) || p.w2.size() != static_cast<std::size_t>(kHid * kHid * 9) ||
      p.w3.size() != static_cast<std::size_t>(p.head_channels() * kHid)) {
    throw std::invalid_argument("detector: parameter shapes do not match the architecture");
  }
  Activations a;
  a.region = region;
  a.region1 = region.dilated(1, x.rows, x.cols);
  const CellRegion& r1 = a.region1;

  a.input = Tile(kIn, r1.rows + 2, r1.cols + 2, r1.row0 - 1, r1.col0 - 1);
  for (int c = 0; c < kIn; ++c) {
    double* dst = a.input.plane(c);
    for (int y = 0; y < a.input.h; ++y) {
      const int gr = a.input.row0 + y;
      if (gr < 0 || gr >= x.rows) continue;
      for (int xx = 0; xx < a.input.w; ++xx) {
        const int gc = a.input.col0 + xx;
        if (gc < 0 || gc >= x.cols) continue;
        dst[y * a.input.w + xx] = x.at(gr, gc, c) * p.input_scale[c];
      }
    }
  }

  a.z1 = Tile(kHid, r1.rows, r1.cols, r1.row0, r1.col0);
  for (int o = 0; o < kHid; ++o) std::fill_n(a.z1.plane(o), r1.rows * r1.cols, p.b1[o]);
  conv3x3_accumulate(a.input, p.w1, a.z1);

  a.a1 = Tile(kHid, region.rows + 2, region.cols + 2, region.row0 - 1, region.col0 - 1);
  for (int o = 0; o < kHid; ++o) {
    const double* src = a.z1.plane(o);
    double* dst = a.a1.plane(o);
    for (int y = 0; y < r1.rows; ++y) {
      for (int xx = 0; xx < r1.cols; ++xx) {
        const int ty = r1.row0 + y - a.a1.row0;
        const int tx = r1.col0 + xx - a.a1.col0;
        dst[ty * a.a1.w + tx] = std::max(0.0, src[y * r1.cols + xx]);
      }
    }
  }

  a.z2 = Tile(kHid, region.rows, region.cols, region.row0, region.col0);
  for (int o = 0; o < kHid; ++o) std::fill_n(a.z2.plane(o), region.rows * region.cols, p.b2[o]);
  conv3x3_accumulate(a.a1, p.w2, a.z2);
  a.a2 = a.z2;
  for (double& v : a.a2.v) v = std::max(0.0, v);

  const int hc = p.head_channels();
  const int n = region.rows * region.cols;
  a.head = Tile(hc, region.rows, region.cols, region.row0, region.col0);
  for (int k = 0; k < hc; ++k) {
    double* dst = a.head.plane(k);
    std::fill_n(dst, n, p.b3[k]);
    for (int c = 0; c < kHid; ++c) {
      const double wt = p.w3[static_cast<std::size_t>(k) * kHid + c];
      const double* src = a.a2.plane(c);
      for (int i = 0; i < n; ++i) dst[i] += wt * src[i];
    }
  }
  return a;
}

ModelOutput activate(const Activations& a, int num_classes) {
  const CellRegion& r = a.region;
  ModelOutput out(r.rows, r.cols, num_classes);
  const int n = r.rows * r.cols;
  for (int i = 0; i < n; ++i) {
    out.offset_row[i] = a.head.plane(0)[i];
    out.offset_col[i] = a.head.plane(1)[i];
    out.objectness[i] = sigmoid(a.head.plane(2)[i]);
    out.positiveness[i] = sigmoid(a.head.plane(3)[i]);
    out.height[i] = a.head.plane(4)[i];
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < num_classes; ++k) mx = std::max(mx, a.head.plane(5 + k)[i]);
    double sum = 0.0;
    for (int k = 0; k < num_classes; ++k) {
      const double e = std::exp(a.head.plane(5 + k)[i] - mx);
      out.class_probs[static_cast<std::size_t>(i) * num_classes + k] = e;
      sum += e;
    }
    for (int k = 0; k < num_classes; ++k) out.class_probs[static_cast<std::size_t>(i) * num_classes + k] /= sum;
  }
  return out;
}

// Head pre-activation adjoint from an adjoint on activated outputs.
Tile head_adjoint_from_output(const Activations& a, const ModelOutput& out, const OutputAdjoint& adj) {
  const int K = out.num_classes;
  Tile d(5 + K, a.region.rows, a.region.cols, a.region.row0, a.region.col0);
  const int n = a.region.rows * a.region.cols;
  for (int i = 0; i < n; ++i) {
    d.plane(0)[i] = adj.offset_row[i];
    d.plane(1)[i] = adj.offset_col[i];
    const double so = out.objectness[i], sp = out.positiveness[i];
    d.plane(2)[i] = adj.objectness[i] * so * (1.0 - so);
    d.plane(3)[i] = adj.positiveness[i] * sp * (1.0 - sp);
    d.plane(4)[i] = adj.height[i];
    double dotp = 0.0;
    for (int k = 0; k < K; ++k) {
      const auto j = static_cast<std::size_t>(i) * K + k;
      dotp += adj.class_probs[j] * out.class_probs[j];
    }
    for (int k = 0; k < K; ++k) {
      const auto j = static_cast<std::size_t>(i) * K + k;
      d.plane(5 + k)[i] = out.class_probs[j] * (adj.class_probs[j] - dotp);
    }
  }
  return d;
}

// Back-propagates a head adjoint. Either output pointer may be null.
void run_backward(const DetectorParams& p, const Activations& a, const Tile& dhead, FeatureMap* dx,
                  DetectorParams* grads) {
  const CellRegion& r = a.region;
  const int n = r.rows * r.cols;
  const int hc = p.head_channels();

  Tile da2(kHid, r.rows, r.cols, r.row0, r.col0);
  for (int k = 0; k < hc; ++k) {
    const double* g = dhead.plane(k);
    for (int c = 0; c < kHid; ++c) {
      const double wt = p.w3[static_cast<std::size_t>(k) * kHid + c];
      double* d = da2.plane(c);
      const double* act = a.a2.plane(c);
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        d[i] += wt * g[i];
        acc += g[i] * act[i];
      }
      if (grads) grads->w3[static_cast<std::size_t>(k) * kHid + c] += acc;
    }
    if (grads) grads->b3[k] += std::accumulate(g, g + n, 0.0);
  }
  Tile dz2 = da2;
  for (std::size_t i = 0; i < dz2.v.size(); ++i) {
    if (!(a.z2.v[i] > 0.0)) dz2.v[i] = 0.0;
  }
  if (grads) {
    for (int o = 0; o < kHid; ++o) grads->b2[o] += std::accumulate(dz2.plane(o), dz2.plane(o) + n, 0.0);
  }

  Tile da1(kHid, a.a1.h, a.a1.w, a.a1.row0, a.a1.col0);
  conv3x3_backward(a.a1, p.w2, dz2, &da1, grads ? &grads->w2 : nullptr);

  const CellRegion& r1 = a.region1;
  Tile dz1(kHid, r1.rows, r1.cols, r1.row0, r1.col0);
  for (int o = 0; o < kHid; ++o) {
    const double* src = da1.plane(o);
    const double* z = a.z1.plane(o);
    double* dst = dz1.plane(o);
    for (int y = 0; y < r1.rows; ++y) {
      for (int xx = 0; xx < r1.cols; ++xx) {
        const int ty = r1.row0 + y - da1.row0;
        const int tx = r1.col0 + xx - da1.col0;
        const int i = y * r1.cols + xx;
        dst[i] = z[i] > 0.0 ? src[ty * da1.w + tx] : 0.0;
      }
    }
    if (grads) grads->b1[o] += std::accumulate(dst, dst + r1.rows * r1.cols, 0.0);
  }

  Tile din(kIn, a.input.h, a.input.w, a.input.row0, a.input.col0);
  conv3x3_backward(a.input, p.w1, dz1, dx ? &din : nullptr, grads ? &grads->w1 : nullptr);
  if (!dx) return;
  for (int c = 0; c < kIn; ++c) {
    const double* src = din.plane(c);
    for (int y = 0; y < din.h; ++y) {
      const int gr = din.row0 + y;
      if (gr < 0 || gr >= dx->rows) continue;
      for (int xx = 0; xx < din.w; ++xx) {
        const int gc = din.col0 + xx;
        if (gc < 0 || gc >= dx->cols) continue;
        dx->at(gr, gc, c) += src[y * din.w + xx] * p.input_scale[c];
      }
    }
  }
}

void check_input(const FeatureMap& x) {
  if (x.rows <= 0 || x.cols <= 0 ||
      x.data.size() != static_cast<std::size_t>(x.rows) * x.cols * kFeatureChannels) {
    throw std::invalid_argument("detector: feature map shape mismatch");
  }
}

void check_adjoint(const OutputAdjoint& adj, const CellRegion& region, int num_classes) {
  const auto n = region.cell_count();
  if (adj.rows != region.rows || adj.cols != region.cols || adj.objectness.size() != n ||
      adj.class_probs.size() != n * static_cast<std::size_t>(num_classes)) {
    throw std::invalid_argument("detector: adjoint shape mismatch");
  }
}

}  // namespace

std::string_view class_name(int class_id) {
  switch (class_id) {
    case 0: return "vehicle";
    case 1: return "pedestrian";
    case 2: return "bicyclist";
    case 3: return "other";
    default: return "unknown";
  }
}

int parse_class(std::string_view name) {
  for (int k = 0; k < kDefaultNumClasses; ++k) {
    if (class_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown class: " + std::string(name));
}

CellRegion CellRegion::dilated(int margin, int grid_rows, int grid_cols) const {
  const int r0 = std::max(0, row0 - margin);
  const int c0 = std::max(0, col0 - margin);
  const int r1 = std::min(grid_rows, row0 + rows + margin);
  const int c1 = std::min(grid_cols, col0 + cols + margin);
  return {r0, c0, std::max(0, r1 - r0), std::max(0, c1 - c0)};
}

std::size_t CellMask::count() const {
  return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), std::uint8_t{1}));
}

CellRegion CellMask::bounding_region() const {
  int r0 = rows, c0 = cols, r1 = -1, c1 = -1;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (!at(r, c)) continue;
      r0 = std::min(r0, r);
      c0 = std::min(c0, c);
      r1 = std::max(r1, r);
      c1 = std::max(c1, c);
    }
  }
  if (r1 < 0) return {};
  return {r0, c0, r1 - r0 + 1, c1 - c0 + 1};
}

ModelOutput::ModelOutput(int r, int c, int k)
    : rows(r),
      cols(c),
      num_classes(k),
      offset_row(static_cast<std::size_t>(r) * c, 0.0),
      offset_col(offset_row),
      objectness(offset_row),
      positiveness(offset_row),
      height(offset_row),
      class_probs(static_cast<std::size_t>(r) * c * k, 0.0) {}

DetectorParams DetectorParams::zeros(int num_classes) {
  DetectorParams p;
  p.num_classes = num_classes;
  p.w1.assign(kHidden * kInputs * 9, 0.0);
  p.b1.assign(kHidden, 0.0);
  p.w2.assign(kHidden * kHidden * 9, 0.0);
  p.b2.assign(kHidden, 0.0);
  p.w3.assign(static_cast<std::size_t>(p.head_channels()) * kHidden, 0.0);
  p.b3.assign(static_cast<std::size_t>(p.head_channels()), 0.0);
  return p;
}

DetectorParams DetectorParams::initialize(std::uint64_t seed, int num_classes) {
  DetectorParams p = zeros(num_classes);
  p.seed = seed;
  std::mt19937_64 rng(seed);
  auto fill = [&](std::vector<double>& w, int fan_in) {
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-s, s);
    for (double& v : w) v = u(rng);
  };
  fill(p.w1, kInputs * 9);
  fill(p.w2, kHidden * 9);
  fill(p.w3, kHidden);
  return p;
}

ModelOutput forward(const DetectorParams& params, const FeatureMap& x) {
  check_input(x);
  return forward_region(params, x, {0, 0, x.rows, x.cols});
}

ModelOutput forward_region(const DetectorParams& params, const FeatureMap& x, const CellRegion& region) {
  check_input(x);
  return activate(run_forward(params, x, region), params.num_classes);
}

FeatureMap backward(const DetectorParams& params, const FeatureMap& x, const OutputAdjoint& adjoint) {
  check_input(x);
  return backward_region(params, x, {0, 0, x.rows, x.cols}, adjoint);
}

FeatureMap backward_region(const DetectorParams& params, const FeatureMap& x, const CellRegion& region,
                           const OutputAdjoint& adjoint) {
  check_input(x);
  check_adjoint(adjoint, region, params.num_classes);
  const Activations a = run_forward(params, x, region);
  const ModelOutput out = activate(a, params.num_classes);
  const Tile dhead = head_adjoint_from_output(a, out, adjoint);
  FeatureMap dx(x.rows, x.cols);
  run_backward(params, a, dhead, &dx, nullptr);
  return dx;
}

namespace {

double smooth_l1(double d, double* grad) {
  const double ad = std::abs(d);
  if (ad < 1.0) {
    *grad = d;
    return 0.5 * d * d;
  }
  *grad = d > 0 ? 1.0 : -1.0;
  return ad - 0.5;
}

double bce_with_logit(double z, double y) {
  // log(1 + exp(-|z|)) + max(z, 0) - z y
  return std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0) - z * y;
}

struct CropLoss {
  double obj = 0.0, pos = 0.0, off = 0.0, hei = 0.0, cls = 0.0;
  double total() const { return obj + pos + off + hei + cls; }
};

CropLoss crop_loss(const Activations& a, const ModelOutput& out, const CellTargets& t, const TrainConfig& cfg,
                   Tile& dhead) {
  const CellRegion& r = a.region;
  const int K = out.num_classes;
  CropLoss loss;
  double weight_sum = 0.0;
  int object_cells = 0;
  for (int y = 0; y < r.rows; ++y) {
    for (int x = 0; x < r.cols; ++x) {
      const auto g = static_cast<std::size_t>(r.row0 + y) * t.cols + (r.col0 + x);
      const bool obj = t.object[g] != 0;
      weight_sum += obj ? cfg.positive_weight : 1.0;
      object_cells += obj ? 1 : 0;
    }
  }
  const double inv_w = 1.0 / weight_sum;
  const double inv_o = 1.0 / std::max(1, object_cells);
  for (int y = 0; y < r.rows; ++y) {
    for (int x = 0; x < r.cols; ++x) {
      const int i = y * r.cols + x;
      const auto g = static_cast<std::size_t>(r.row0 + y) * t.cols + (r.col0 + x);
      const bool obj = t.object[g] != 0;
      const double target = obj ? 1.0 : 0.0;
      const double w = (obj ? cfg.positive_weight : 1.0) * inv_w;
      loss.obj += w * bce_with_logit(a.head.plane(2)[i], target);
      loss.pos += w * bce_with_logit(a.head.plane(3)[i], target);
      dhead.plane(2)[i] = w * (out.objectness[i] - target);
      dhead.plane(3)[i] = w * (out.positiveness[i] - target);
      if (!obj) continue;
      double gr = 0.0;
      const double wo = cfg.offset_weight * inv_o;
      loss.off += wo * smooth_l1(out.offset_row[i] - t.offset_row[g], &gr);
      dhead.plane(0)[i] = wo * gr;
      loss.off += wo * smooth_l1(out.offset_col[i] - t.offset_col[g], &gr);
      dhead.plane(1)[i] = wo * gr;
      loss.hei += inv_o * smooth_l1(out.height[i] - t.height[g], &gr);
      dhead.plane(4)[i] = inv_o * gr;
      const int cls = t.class_id[g];
      for (int k = 0; k < K; ++k) {
        const double pk = out.class_probs[static_cast<std::size_t>(i) * K + k];
        const double yk = k == cls ? 1.0 : 0.0;
        if (k == cls) loss.cls -= inv_o * std::log(std::max(pk, 1e-300));
        dhead.plane(5 + k)[i] = inv_o * (pk - yk);
      }
    }
  }
  return loss;
}

struct Adam {
  std::vector<std::vector<double>> m, v;
  long step = 0;
};

std::vector<std::vector<double>*> tensors(DetectorParams& p) { return {&p.w1, &p.b1, &p.w2, &p.b2, &p.w3, &p.b3}; }

}  // namespace

DetectorParams train(const std::vector<LabeledScene>& scenes, const TrainConfig& cfg, TrainReport* report) {
  if (scenes.empty()) throw std::invalid_argument("train: need at least one scene");
  DetectorParams params = DetectorParams::initialize(cfg.seed);
  if (cfg.epochs <= 0) return params;

  Adam adam;
  for (auto* t : tensors(params)) {
    adam.m.emplace_back(t->size(), 0.0);
    adam.v.emplace_back(t->size(), 0.0);
  }
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const int crop = cfg.crop;
  CropLoss last;
  int last_count = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::pair<std::size_t, CellRegion>> crops;
    std::uniform_int_distribution<int> jitter(-crop / 4, crop / 4);
    for (std::size_t s = 0; s < scenes.size(); ++s) {
      const auto& x = scenes[s].input;
      auto place = [&](int cr, int cc) {
        const int r0 = std::clamp(cr - crop / 2, 0, std::max(0, x.rows - crop));
        const int c0 = std::clamp(cc - crop / 2, 0, std::max(0, x.cols - crop));
        crops.emplace_back(s, CellRegion{r0, c0, std::min(crop, x.rows), std::min(crop, x.cols)});
      };
      for (const auto& [ar, ac] : scenes[s].anchors) place(ar + jitter(rng), ac + jitter(rng));
      std::uniform_int_distribution<int> rr(0, x.rows - 1), cc(0, x.cols - 1);
      for (int k = 0; k < cfg.random_crops; ++k) place(rr(rng), cc(rng));
    }
    std::shuffle(crops.begin(), crops.end(), rng);

    double epoch_loss = 0.0;
    CropLoss sum;
    for (const auto& [s, region] : crops) {
      const Activations a = run_forward(params, scenes[s].input, region);
      const ModelOutput out = activate(a, params.num_classes);
      Tile dhead(params.head_channels(), region.rows, region.cols, region.row0, region.col0);
      const CropLoss l = crop_loss(a, out, scenes[s].targets, cfg, dhead);
      epoch_loss += l.total();
      sum.obj += l.obj;
      sum.pos += l.pos;
      sum.off += l.off;
      sum.hei += l.hei;
      sum.cls += l.cls;

      DetectorParams grads = DetectorParams::zeros(params.num_classes);
      run_backward(params, a, dhead, nullptr, &grads);

      ++adam.step;
      const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam.step));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam.step));
      auto pt = tensors(params);
      auto gt = tensors(grads);
      for (std::size_t t = 0; t < pt.size(); ++t) {
        auto& w = *pt[t];
        const auto& g = *gt[t];
        for (std::size_t i = 0; i < w.size(); ++i) {
          adam.m[t][i] = b1 * adam.m[t][i] + (1 - b1) * g[i];
          adam.v[t][i] = b2 * adam.v[t][i] + (1 - b2) * g[i] * g[i];
          w[i] -= cfg.lr * (adam.m[t][i] / c1) / (std::sqrt(adam.v[t][i] / c2) + eps);
        }
      }
    }
    const auto n = static_cast<double>(crops.size());
    if (report) report->epoch_loss.push_back(epoch_loss / n);
    last = sum;
    last_count = static_cast<int>(crops.size());
  }
  if (report && last_count > 0) {
    report->final_objectness_loss = last.obj / last_count;
    report->final_positiveness_loss = last.pos / last_count;
    report->final_offset_loss = last.off / last_count;
    report->final_height_loss = last.hei / last_count;
    report->final_class_loss = last.cls / last_count;
  }
  return params;
}

double objectness_accuracy(const DetectorParams& params, const std::vector<LabeledScene>& scenes) {
  std::size_t correct = 0, total = 0;
  for (const auto& s : scenes) {
    const ModelOutput out = forward(params, s.input);
    for (std::size_t i = 0; i < out.objectness.size(); ++i) {
      const bool predicted = out.objectness[i] > 0.5;
      correct += predicted == (s.targets.object[i] != 0) ? 1 : 0;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

Metric parse_metric(std::string_view name, int num_classes) {
  if (name == "pos") return {MetricKind::positiveness, 0};
  if (name == "obj") return {MetricKind::objectness, 0};
  if (name == "hei") return {MetricKind::height, 0};
  if (name == "off") return {MetricKind::offset, 0};
  if (name.starts_with("cls_")) {
    const std::string digits(name.substr(4));
    if (!digits.empty() && std::all_of(digits.begin(), digits.end(), [](char ch) { return ch >= '0' && ch <= '9'; })) {
      const int k = std::stoi(digits);
      if (k < num_classes) return {MetricKind::class_prob, k};
    }
  }
  throw std::invalid_argument("unknown metric: " + std::string(name));
}

std::vector<double> extract_metric(const ModelOutput& output, const Metric& metric, const CellMask& mask) {
  if (mask.rows != output.rows || mask.cols != output.cols) {
    throw std::invalid_argument("extract_metric: mask shape does not match output");
  }
  const std::size_t n = static_cast<std::size_t>(output.rows) * output.cols;
  const int channels = metric.kind == MetricKind::offset ? 2 : 1;
  std::vector<double> out(n * channels, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.cells[i]) continue;
    switch (metric.kind) {
      case MetricKind::positiveness: out[i] = output.positiveness[i]; break;
      case MetricKind::objectness: out[i] = output.objectness[i]; break;
      case MetricKind::height: out[i] = output.height[i]; break;
      case MetricKind::class_prob:
        out[i] = output.class_probs[i * output.num_classes + metric.class_id];
        break;
      case MetricKind::offset:
        out[2 * i] = output.offset_row[i];
        out[2 * i + 1] = output.offset_col[i];
        break;
    }
  }
  return out;
}

void save_params(const DetectorParams& params, const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little);
  std::filesystem::path blob = path;
  blob.replace_extension(".bin");
  nlohmann::json header;
  header["format"] = "lidaradv-detector";
  header["version"] = 1;
  header["architecture"] = "conv3x3(8->16)+relu,conv3x3(16->16)+relu,conv1x1(16->5+K)";
  header["num_classes"] = params.num_classes;
  header["seed"] = params.seed;
  header["input_scale"] = params.input_scale;
  header["metadata"] = nlohmann::json::parse(params.metadata);
  header["blob"] = blob.filename().string();
  header["dtype"] = "float64-le";
  auto& list = header["tensors"];
  list = nlohmann::json::array();
  std::ofstream out(blob, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + blob.string());
  std::size_t offset = 0;
  const std::vector<std::pair<std::string, const std::vector<double>*>> named = {
      {"w1", &params.w1}, {"b1", &params.b1}, {"w2", &params.w2},
      {"b2", &params.b2}, {"w3", &params.w3}, {"b3", &params.b3}};
  for (const auto& [name, t] : named) {
    list.push_back({{"name", name}, {"offset", offset}, {"count", t->size()}});
    out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(double)));
    offset += t->size();
  }
  write_json(header, path);
}

DetectorParams load_params(const std::filesystem::path& path) {
  const nlohmann::json header = read_json(path);
  if (header.value("format", "") != "lidaradv-detector" || header.value("version", 0) != 1) {
    throw std::runtime_error("unsupported weights file: " + path.string());
  }
  DetectorParams p = DetectorParams::zeros(header.at("num_classes").get<int>());
  p.seed = header.at("seed").get<std::uint64_t>();
  p.input_scale = header.at("input_scale").get<std::array<double, kFeatureChannels>>();
  p.metadata = header.at("metadata").dump();
  const auto blob = path.parent_path() / header.at("blob").get<std::string>();
  std::ifstream in(blob, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + blob.string());
  std::vector<std::pair<std::string, std::vector<double>*>> named = {{"w1", &p.w1}, {"b1", &p.b1}, {"w2", &p.w2},
                                                                     {"b2", &p.b2}, {"w3", &p.w3}, {"b3", &p.b3}};
  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    auto it = std::find_if(named.begin(), named.end(), [&](const auto& kv) { return kv.first == name; });
    if (it == named.end()) throw std::runtime_error("unknown tensor " + name);
    const auto count = entry.at("count").get<std::size_t>();
    if (count != it->second->size()) throw std::runtime_error("tensor " + name + " has the wrong size");
    in.seekg(static_cast<std::streamoff>(entry.at("offset").get<std::size_t>() * sizeof(double)));
    if (!in.read(reinterpret_cast<char*>(it->second->data()), static_cast<std::streamsize>(count * sizeof(double)))) {
      throw std::runtime_error("truncated weights blob " + blob.string());
    }
  }
  return p;
}

}  // namespace lidaradv
