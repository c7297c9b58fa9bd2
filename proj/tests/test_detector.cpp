#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "lidaradv/detector.hpp"

using namespace lidaradv;

namespace {

FeatureMap random_map(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 2.0);
  FeatureMap x(rows, cols);
  for (auto& v : x.data) v = u(rng);
  return x;
}

LabeledScene toy_scene(std::uint64_t seed) {
  LabeledScene s;
  s.input = random_map(24, 24, seed);
  s.targets.rows = s.targets.cols = 24;
  const std::size_t n = 24 * 24;
  s.targets.object.assign(n, 0);
  s.targets.offset_row.assign(n, 0.0);
  s.targets.offset_col.assign(n, 0.0);
  s.targets.height.assign(n, 0.0);
  s.targets.class_id.assign(n, -1);
  for (int r = 10; r < 14; ++r) {
    for (int c = 10; c < 14; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * 24 + c;
      s.targets.object[i] = 1;
      s.targets.offset_row[i] = 11.5 - r;
      s.targets.offset_col[i] = 11.5 - c;
      s.targets.height[i] = 0.5;
      s.targets.class_id[i] = 3;
    }
  }
  s.anchors = {{12, 12}};
  return s;
}

}  // namespace

TEST_CASE("zero weights give neutral outputs") {
  const DetectorParams p = DetectorParams::zeros();
  const ModelOutput out = forward(p, random_map(6, 7, 1));
  for (std::size_t i = 0; i < out.objectness.size(); ++i) {
    CHECK(out.objectness[i] == 0.5);
    CHECK(out.positiveness[i] == 0.5);
    CHECK(out.offset_row[i] == 0.0);
    for (int k = 0; k < out.num_classes; ++k) CHECK(out.class_probs[i * out.num_classes + k] == doctest::Approx(0.25));
  }
}

TEST_CASE("forward is deterministic and softmax normalized") {
  const DetectorParams p = DetectorParams::initialize(4);
  const FeatureMap x = random_map(10, 10, 2);
  const ModelOutput a = forward(p, x);
  const ModelOutput b = forward(p, x);
  CHECK(a.objectness == b.objectness);
  CHECK(a.class_probs == b.class_probs);
  double worst = 0.0;
  for (int r = 0; r < a.rows; ++r) {
    for (int c = 0; c < a.cols; ++c) {
      double s = 0.0;
      for (int k = 0; k < a.num_classes; ++k) s += a.prob(r, c, k);
      worst = std::max(worst, std::abs(s - 1.0));
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("forward is translation equivariant away from borders") {
  const DetectorParams p = DetectorParams::initialize(5);
  const FeatureMap x = random_map(16, 16, 3);
  const int dr = 3, dc = 2;
  FeatureMap shifted(16, 16);
  for (int r = 0; r + dr < 16; ++r) {
    for (int c = 0; c + dc < 16; ++c) {
      for (int ch = 0; ch < kFeatureChannels; ++ch) shifted.at(r + dr, c + dc, ch) = x.at(r, c, ch);
    }
  }
  const ModelOutput a = forward(p, x);
  const ModelOutput b = forward(p, shifted);
  double worst = 0.0;
  for (int r = 2; r + dr < 14; ++r) {
    for (int c = 2; c + dc < 14; ++c) {
      worst = std::max(worst, std::abs(a.objectness[a.cell(r, c)] - b.objectness[b.cell(r + dr, c + dc)]));
      worst = std::max(worst, std::abs(a.height[a.cell(r, c)] - b.height[b.cell(r + dr, c + dc)]));
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("receptive field is 5x5") {
  const DetectorParams p = DetectorParams::initialize(6);
  FeatureMap x = random_map(15, 15, 4);
  const ModelOutput before = forward(p, x);
  for (int ch = 0; ch < kFeatureChannels; ++ch) x.at(7, 7, ch) += 1.0;
  const ModelOutput after = forward(p, x);
  bool outside_changed = false;
  bool center_changed = false;
  for (int r = 0; r < 15; ++r) {
    for (int c = 0; c < 15; ++c) {
      const bool diff = before.objectness[before.cell(r, c)] != after.objectness[after.cell(r, c)] ||
                        before.height[before.cell(r, c)] != after.height[after.cell(r, c)];
      if (std::abs(r - 7) > 2 || std::abs(c - 7) > 2) outside_changed |= diff;
      if (r == 7 && c == 7) center_changed = diff;
    }
  }
  CHECK_FALSE(outside_changed);
  CHECK(center_changed);
}

TEST_CASE("zero adjoint gives zero input gradient") {
  const DetectorParams p = DetectorParams::initialize(7);
  const FeatureMap x = random_map(9, 9, 5);
  const OutputAdjoint zero(9, 9, p.num_classes);
  const FeatureMap g = backward(p, x, zero);
  for (const double v : g.data) CHECK(v == 0.0);
}

TEST_CASE("forward_region matches the full pass") {
  const DetectorParams p = DetectorParams::initialize(8);
  const FeatureMap x = random_map(20, 20, 6);
  const ModelOutput full = forward(p, x);
  const CellRegion region{0, 5, 6, 9};
  const ModelOutput part = forward_region(p, x, region);
  double worst = 0.0;
  for (int r = 0; r < region.rows; ++r) {
    for (int c = 0; c < region.cols; ++c) {
      worst = std::max(worst, std::abs(part.positiveness[part.cell(r, c)] -
                                       full.positiveness[full.cell(region.row0 + r, region.col0 + c)]));
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("training determinism and zero epochs") {
  const std::vector<LabeledScene> scenes = {toy_scene(1), toy_scene(2)};
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 12;
  const DetectorParams init = train(scenes, cfg);
  CHECK(init.w1 == DetectorParams::initialize(12).w1);
  CHECK(init.w3 == DetectorParams::initialize(12).w3);

  cfg.epochs = 3;
  TrainReport report;
  const DetectorParams a = train(scenes, cfg, &report);
  const DetectorParams b = train(scenes, cfg);
  CHECK(a.w1 == b.w1);
  CHECK(a.b3 == b.b3);
  CHECK(report.epoch_loss.size() == 3);
  CHECK(report.epoch_loss.back() < report.epoch_loss.front());
}

TEST_CASE("metric parsing and extraction") {
  CHECK(parse_metric("pos").kind == MetricKind::positiveness);
  CHECK(parse_metric("cls_2").class_id == 2);
  CHECK_THROWS_AS(parse_metric("cls_4"), std::invalid_argument);
  CHECK_THROWS_AS(parse_metric("foo"), std::invalid_argument);

  const ModelOutput out = forward(DetectorParams::initialize(9), random_map(4, 4, 7));
  CellMask mask(4, 4);
  mask.set(1, 2);
  const auto pos = extract_metric(out, parse_metric("pos"), mask);
  CHECK(pos[out.cell(1, 2)] == out.positiveness[out.cell(1, 2)]);
  CHECK(pos[out.cell(0, 0)] == 0.0);
  const auto off = extract_metric(out, parse_metric("off"), mask);
  CHECK(off.size() == 32);
  CHECK(off[2 * out.cell(1, 2) + 1] == out.offset_col[out.cell(1, 2)]);
  const auto cls = extract_metric(out, parse_metric("cls_1"), mask);
  CHECK(cls[out.cell(1, 2)] == out.prob(1, 2, 1));
  CHECK_THROWS_AS(extract_metric(out, parse_metric("obj"), CellMask(3, 4)), std::invalid_argument);
}

TEST_CASE("parameter save and load is bitwise") {
  DetectorParams p = DetectorParams::initialize(10);
  p.metadata = R"({"note":"x"})";
  const auto path = std::filesystem::temp_directory_path() / "lidaradv_params.json";
  save_params(p, path);
  const DetectorParams back = load_params(path);
  CHECK(back == p);
}
