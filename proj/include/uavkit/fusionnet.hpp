#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "uavkit/evalkit.hpp"
#include "uavkit/geometry.hpp"

namespace uavkit::fusionnet {

// Dense (channels, height, width) array, double precision throughout.
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;

  static FeatureMap zeros(int c, int h, int w) {
    return FeatureMap{c, h, w, std::vector<double>(static_cast<std::size_t>(c) * h * w, 0.0)};
  }
  double& at(int c, int y, int x) {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  bool same_shape(const FeatureMap& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

// 3x3 or 1x1 cross-correlation; padding = kernel/2 preserves spatial size at
// stride 1.
struct ConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;  // 1 or 3
  int stride = 1;  // 1 or 2
  std::vector<double> weights;  // (out, in, k, k)
  std::vector<double> bias;     // (out)

  static ConvLayer make(int in_ch, int out_ch, int kernel, int stride);
};

struct ConvGrads {
  std::vector<double> weights;
  std::vector<double> bias;
};

FeatureMap conv_forward(const ConvLayer& layer, const FeatureMap& x);
// Returns grad wrt x; fills `grads` with the parameter adjoints.
FeatureMap conv_backward(const ConvLayer& layer, const FeatureMap& x, const FeatureMap& grad_out,
                         ConvGrads* grads);

// Nearest-neighbor 2x replication; the adjoint sums each 2x2 block.
FeatureMap upsample2x(const FeatureMap& x);
FeatureMap upsample2x_adjoint(const FeatureMap& grad_out);

enum class FusionMode { fixed, adaptive };

// Learnable scalars weighting the upsampled deep feature before
// concatenation. Unconstrained sign.
struct FusionCoefficients {
  double a45 = 1.0;
  double a34 = 1.0;
  FusionMode mode = FusionMode::adaptive;
};

// Tiny detector: 5 stride-2 backbone convs tapped at strides 8/16/32
// (channels 8/16/32 on a 3x64x64 input), a top-down path with the fusion
// coefficients, a bottom-up aggregation path, and a linear 1x1 head per
// level. All hidden activations are tanh, which keeps finite-difference
// checks meaningful.
struct ToyModel {
  std::array<ConvLayer, 5> backbone;
  ConvLayer td_lateral5, td_lateral4, td_lateral3;
  ConvLayer td_mix4, td_mix3;
  ConvLayer bu_mix3, bu_down3, bu_mix4, bu_down4, bu_mix5;
  ConvLayer head3, head4, head5;
  FusionCoefficients fusion;

  static constexpr int kPyramidChannels = 8;
  static constexpr int kHeadChannels = 5;  // objectness + (dx, dy, w, h)
  static constexpr std::array<int, 3> kStrides{8, 16, 32};

  static ToyModel random(std::uint64_t seed, FusionMode mode);
  ToyModel zeros_like() const;
};

struct ParamRef {
  std::string path;   // e.g. "backbone.2.weights", "fusion.a45"
  std::string group;  // backbone | neck | head | fusion
  double* data = nullptr;
  std::size_t size = 0;
};

// Stable enumeration of every parameter array, alphas last.
std::vector<ParamRef> parameters(ToyModel& m);
std::size_t parameter_count(const ToyModel& m);

struct PyramidLevels {
  FeatureMap p3, p4, p5;
};

// Backbone taps.
struct BackboneOut {
  FeatureMap c3, c4, c5;
};

BackboneOut backbone_forward(const ToyModel& m, const FeatureMap& image);

// Top-down path with the fusion coefficients:
//   P5' = conv(C5);  P_i' = mix(concat(alpha * upsample2x(P_{i+1}'), conv(C_i)))
// where the scaled deep half occupies the first kPyramidChannels channels.
PyramidLevels af_topdown(const ToyModel& m, const BackboneOut& c);

// The same path with no coefficient applied, coded without the multiply;
// used to verify that fixed alpha = 1 reproduces it exactly.
PyramidLevels topdown_without_coefficients(const ToyModel& m, const BackboneOut& c);

// Bottom-up aggregation: P3 = mix(P3'); P_{i+1} = mix(concat(down(P_i), P_{i+1}')).
PyramidLevels pan_bottomup(const ToyModel& m, const PyramidLevels& td);

struct ModelOutput {
  FeatureMap h3, h4, h5;
};

ModelOutput forward(const ToyModel& m, const FeatureMap& image);

// Channel concatenation of two maps with equal spatial dims.
FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b);

struct LevelTargets {
  FeatureMap t3, t4, t5;
};

struct TrainSample {
  std::string id;
  FeatureMap image;  // 3 x H x W, values in [0,1]
  LevelTargets targets;
  std::vector<geometry::PixelBox> gt_boxes;
};

// Mean-squared-error objectness/box surrogate targets for an annotated image.
LevelTargets targets_from_boxes(const std::vector<geometry::PixelBox>& boxes, int image_width,
                                int image_height);

double loss_mse(const ModelOutput& out, const LevelTargets& targets);

// Loss of one sample; convenience for finite-difference probes.
double forward_loss(const ToyModel& m, const TrainSample& sample);

// Mean loss + mean parameter gradients over the batch (alphas included).
double loss_and_gradients(const ToyModel& m, const std::vector<TrainSample>& batch,
                          ToyModel* grads);

// One full-batch gradient-descent step. Groups named in `frozen_groups` are
// not updated; fixed-mode fusion coefficients never are. Throws
// DivergenceError on a non-finite loss.
double train_step(ToyModel& m, const std::vector<TrainSample>& batch, double lr,
                  const std::vector<std::string>& frozen_groups = {});

// Turns head outputs back into ranked detections (one per cell above the
// confidence floor).
std::vector<evalkit::Detection> decode_detections(const ModelOutput& out,
                                                  const std::string& image_id, int image_width,
                                                  int image_height, double confidence_floor = 0.05);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_path;
};

// Central differences over every parameter including both alphas. Error is
// measured relative to max(1, |fd|, |analytic|). `stride` > 1 probes every
// stride-th parameter (full check when 1).
GradCheckResult grad_check(ToyModel& m, const std::vector<TrainSample>& batch, double epsilon,
                           std::size_t stride = 1);

struct SweepCell {
  std::string label;
  bool adaptive = false;
  double final_loss = 0.0;
  double a45 = 1.0;
  double a34 = 1.0;
  evalkit::APReport report;
};

struct SweepConfig {
  std::vector<TrainSample> train;
  int steps = 30;
  double lr = 0.2;
  std::uint64_t seed = 0;
  double iou_threshold = 0.5;
};

// One fixed-coefficient run per value (a45 = a34 = value) plus one adaptive
// run initialized at 1.0.
std::vector<SweepCell> alpha_sweep(const std::vector<double>& values, const SweepConfig& cfg);

std::string format_sweep_table(const std::vector<SweepCell>& cells);

// Versioned JSON checkpoint of all parameter arrays, shapes, and both
// alphas; byte-stable for a given model state.
std::string checkpoint_to_json(const ToyModel& m);
ToyModel checkpoint_from_json(const std::string& text);
void save_checkpoint(const std::string& path, const ToyModel& m);
ToyModel load_checkpoint(const std::string& path);

}  // namespace uavkit::fusionnet
