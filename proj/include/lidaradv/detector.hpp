#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lidaradv/features.hpp"

namespace lidaradv {

inline constexpr int kDefaultNumClasses = 4;

enum class ObjectClass : int { vehicle = 0, pedestrian = 1, bicyclist = 2, other = 3 };

std::string_view class_name(int class_id);
int parse_class(std::string_view name);

/// Rectangle of cells [row0, row0 + rows) x [col0, col0 + cols).
struct CellRegion {
  int row0 = 0;
  int col0 = 0;
  int rows = 0;
  int cols = 0;

  bool contains(int r, int c) const { return r >= row0 && r < row0 + rows && c >= col0 && c < col0 + cols; }
  std::size_t cell_count() const { return static_cast<std::size_t>(rows) * cols; }
  /// Grown by `margin` cells on every side, clipped to a rows x cols grid.
  CellRegion dilated(int margin, int grid_rows, int grid_cols) const;
};

/// Boolean cell mask over a rows x cols grid.
struct CellMask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> cells;

  CellMask() = default;
  CellMask(int r, int c) : rows(r), cols(c), cells(static_cast<std::size_t>(r) * c, 0) {}

  bool at(int r, int c) const { return cells[static_cast<std::size_t>(r) * cols + c] != 0; }
  void set(int r, int c, bool v = true) { cells[static_cast<std::size_t>(r) * cols + c] = v ? 1 : 0; }
  std::size_t count() const;
  /// Bounding rectangle of the set cells (empty region when none).
  CellRegion bounding_region() const;
};

/// Weights of the fixed per-cell detector: conv3x3(8->16) + ReLU,
/// conv3x3(16->16) + ReLU, conv1x1(16->5+K). Head channels are
/// [offset_row, offset_col, objectness logit, positiveness logit, height,
/// K class logits]. Inputs are multiplied by the constant `input_scale`
/// before the first layer.
struct DetectorParams {
  static constexpr int kInputs = kFeatureChannels;
  static constexpr int kHidden = 16;

  int num_classes = kDefaultNumClasses;
  std::uint64_t seed = 0;
  std::array<double, kFeatureChannels> input_scale{1.0, 1.0, 1.0, 1.0, 0.25, 1.0, 0.1, 1.0};
  std::vector<double> w1, b1, w2, b2, w3, b3;
  /// Free-form training metadata carried through serialization.
  std::string metadata = "{}";

  int head_channels() const { return 5 + num_classes; }
  /// Zero weights and biases of the right shapes.
  static DetectorParams zeros(int num_classes = kDefaultNumClasses);
  /// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases.
  static DetectorParams initialize(std::uint64_t seed, int num_classes = kDefaultNumClasses);

  bool operator==(const DetectorParams&) const = default;
};

/// Per-cell model outputs over a region of rows x cols cells.
struct ModelOutput {
  int rows = 0;
  int cols = 0;
  int num_classes = 0;
  std::vector<double> offset_row;    ///< cells
  std::vector<double> offset_col;    ///< cells
  std::vector<double> objectness;    ///< sigmoid
  std::vector<double> positiveness;  ///< sigmoid
  std::vector<double> height;        ///< meters
  std::vector<double> class_probs;   ///< softmax, (cell, class) order

  ModelOutput() = default;
  ModelOutput(int r, int c, int k);
  std::size_t cell(int r, int c) const { return static_cast<std::size_t>(r) * cols + c; }
  double prob(int r, int c, int k) const { return class_probs[cell(r, c) * num_classes + k]; }
};

/// Adjoint on the activated outputs; same shapes as ModelOutput.
using OutputAdjoint = ModelOutput;

/// Forward pass over the whole map.
ModelOutput forward(const DetectorParams& params, const FeatureMap& x);
/// Outputs for `region` only, identical to the matching cells of forward().
ModelOutput forward_region(const DetectorParams& params, const FeatureMap& x, const CellRegion& region);

/// Gradient of <adjoint, forward(x)> with respect to x.
FeatureMap backward(const DetectorParams& params, const FeatureMap& x, const OutputAdjoint& adjoint);
/// Region variant: `adjoint` covers `region`; the result has x's shape and is
/// nonzero only within `region` grown by two cells.
FeatureMap backward_region(const DetectorParams& params, const FeatureMap& x, const CellRegion& region,
                           const OutputAdjoint& adjoint);

/// Per-cell supervision derived from ground-truth footprints.
struct CellTargets {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> object;  ///< 1 on object cells
  std::vector<double> offset_row;
  std::vector<double> offset_col;
  std::vector<double> height;
  std::vector<int> class_id;  ///< -1 on background cells
};

struct LabeledScene {
  FeatureMap input;
  CellTargets targets;
  /// Cells around which training crops are centered (object centers).
  std::vector<std::pair<int, int>> anchors;
};

struct TrainConfig {
  int epochs = 30;
  double lr = 3e-3;
  std::uint64_t seed = 1;
  int crop = 20;                 ///< output crop side in cells
  int random_crops = 2;          ///< extra crops per scene per epoch
  double positive_weight = 4.0;  ///< BCE weight on object cells
  double offset_weight = 5.0;    ///< scale of the offset smooth-L1 term
};

struct TrainReport {
  std::vector<double> epoch_loss;
  double final_objectness_loss = 0.0;
  double final_positiveness_loss = 0.0;
  double final_offset_loss = 0.0;
  double final_height_loss = 0.0;
  double final_class_loss = 0.0;
};

/// Adam on random crops. Deterministic for a fixed seed; zero epochs returns
/// the seeded initialization.
DetectorParams train(const std::vector<LabeledScene>& scenes, const TrainConfig& cfg, TrainReport* report = nullptr);

/// Fraction of cells whose thresholded objectness (> 0.5) matches the target.
double objectness_accuracy(const DetectorParams& params, const std::vector<LabeledScene>& scenes);

enum class MetricKind { positiveness, objectness, height, class_prob, offset };

struct Metric {
  MetricKind kind = MetricKind::positiveness;
  int class_id = 0;  ///< class_prob only
};

/// Parses pos | obj | hei | off | cls_<i>; throws std::invalid_argument.
Metric parse_metric(std::string_view name, int num_classes = kDefaultNumClasses);

/// Metric values on masked cells, zeros elsewhere. `off` yields two channels
/// (row, col) per cell; every other metric one.
std::vector<double> extract_metric(const ModelOutput& output, const Metric& metric, const CellMask& mask);

/// Writes `<path>` (JSON header) and `<path stem>.bin` (float64 tensors).
void save_params(const DetectorParams& params, const std::filesystem::path& path);
DetectorParams load_params(const std::filesystem::path& path);

}  // namespace lidaradv
