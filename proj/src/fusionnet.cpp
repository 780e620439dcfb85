#include "uavkit/fusionnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "uavkit/errors.hpp"
#include "uavkit/rng.hpp"

namespace uavkit::fusionnet {

namespace {

void validate_map(const FeatureMap& x, const char* what) {
  if (x.channels < 1 || x.height < 1 || x.width < 1) {
    throw ValidationError(std::string(what) + ": dimensions must be >= 1");
  }
  const auto expected = static_cast<std::size_t>(x.channels) * x.height * x.width;
  if (x.values.size() != expected) {
    throw ValidationError(std::string(what) + ": value count does not match shape");
  }
}

void validate_layer(const ConvLayer& layer) {
  if (layer.kernel != 1 && layer.kernel != 3) {
    throw ValidationError("conv kernel must be 1 or 3");
  }
  if (layer.stride != 1 && layer.stride != 2) {
    throw ValidationError("conv stride must be 1 or 2");
  }
  if (layer.in_channels < 1 || layer.out_channels < 1) {
    throw ValidationError("conv channel counts must be >= 1");
  }
  const auto w = static_cast<std::size_t>(layer.out_channels) * layer.in_channels *
                 layer.kernel * layer.kernel;
  if (layer.weights.size() != w || layer.bias.size() != static_cast<std::size_t>(layer.out_channels)) {
    throw ValidationError("conv parameter arrays do not match declared shape");
  }
}

int conv_out_dim(int in, int kernel, int stride) {
  const int pad = kernel / 2;
  return (in + 2 * pad - kernel) / stride + 1;
}

FeatureMap tanh_map(const FeatureMap& x) {
  FeatureMap y = x;
  for (double& v : y.values) v = std::tanh(v);
  return y;
}

// Uses the stored activation: d tanh(z) = 1 - tanh(z)^2.
FeatureMap tanh_backward(const FeatureMap& act, const FeatureMap& grad_out) {
  FeatureMap g = grad_out;
  for (std::size_t i = 0; i < g.values.size(); ++i) {
    g.values[i] *= 1.0 - act.values[i] * act.values[i];
  }
  return g;
}

FeatureMap scale_map(const FeatureMap& x, double s) {
  FeatureMap y = x;
  for (double& v : y.values) v *= s;
  return y;
}

void add_inplace(FeatureMap& dst, const FeatureMap& src) {
  for (std::size_t i = 0; i < dst.values.size(); ++i) dst.values[i] += src.values[i];
}

double dot(const FeatureMap& a, const FeatureMap& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) s += a.values[i] * b.values[i];
  return s;
}

void split_channels(const FeatureMap& g, int first_channels, FeatureMap& ga, FeatureMap& gb) {
  ga = FeatureMap::zeros(first_channels, g.height, g.width);
  gb = FeatureMap::zeros(g.channels - first_channels, g.height, g.width);
  const std::size_t plane = static_cast<std::size_t>(g.height) * g.width;
  std::copy_n(g.values.begin(), plane * first_channels, ga.values.begin());
  std::copy_n(g.values.begin() + static_cast<std::ptrdiff_t>(plane * first_channels),
              plane * (g.channels - first_channels), gb.values.begin());
}

FeatureMap conv_backward_core(const ConvLayer& layer, const FeatureMap& x,
                              const FeatureMap& grad_out, std::vector<double>& gw,
                              std::vector<double>& gb) {
  const int k = layer.kernel;
  const int pad = k / 2;
  FeatureMap gx = FeatureMap::zeros(x.channels, x.height, x.width);
  for (int oc = 0; oc < layer.out_channels; ++oc) {
    for (int oy = 0; oy < grad_out.height; ++oy) {
      const int y0 = oy * layer.stride - pad;
      for (int ox = 0; ox < grad_out.width; ++ox) {
        const int x0 = ox * layer.stride - pad;
        const double g = grad_out.at(oc, oy, ox);
        gb[oc] += g;
        for (int ic = 0; ic < layer.in_channels; ++ic) {
          for (int ky = 0; ky < k; ++ky) {
            const int y = y0 + ky;
            if (y < 0 || y >= x.height) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int xx = x0 + kx;
              if (xx < 0 || xx >= x.width) continue;
              const std::size_t wi =
                  ((static_cast<std::size_t>(oc) * layer.in_channels + ic) * k + ky) * k + kx;
              gw[wi] += g * x.at(ic, y, xx);
              gx.at(ic, y, xx) += g * layer.weights[wi];
            }
          }
        }
      }
    }
  }
  return gx;
}

// Per-model layer registry; a stable order drives init, enumeration, and
// serialization.
struct LayerSlot {
  const char* name;
  const char* group;
  ConvLayer& (*get)(ToyModel&);
};

const std::array<LayerSlot, 15>& layer_slots() {
  static const std::array<LayerSlot, 15> slots = {{
      {"backbone.0", "backbone", +[](ToyModel& m) -> ConvLayer& { return m.backbone[0]; }},
      {"backbone.1", "backbone", +[](ToyModel& m) -> ConvLayer& { return m.backbone[1]; }},
      {"backbone.2", "backbone", +[](ToyModel& m) -> ConvLayer& { return m.backbone[2]; }},
      {"backbone.3", "backbone", +[](ToyModel& m) -> ConvLayer& { return m.backbone[3]; }},
      {"backbone.4", "backbone", +[](ToyModel& m) -> ConvLayer& { return m.backbone[4]; }},
      {"td_lateral5", "neck", +[](ToyModel& m) -> ConvLayer& { return m.td_lateral5; }},
      {"td_lateral4", "neck", +[](ToyModel& m) -> ConvLayer& { return m.td_lateral4; }},
      {"td_lateral3", "neck", +[](ToyModel& m) -> ConvLayer& { return m.td_lateral3; }},
      {"td_mix4", "neck", +[](ToyModel& m) -> ConvLayer& { return m.td_mix4; }},
      {"td_mix3", "neck", +[](ToyModel& m) -> ConvLayer& { return m.td_mix3; }},
      {"bu_mix3", "neck", +[](ToyModel& m) -> ConvLayer& { return m.bu_mix3; }},
      {"bu_down3", "neck", +[](ToyModel& m) -> ConvLayer& { return m.bu_down3; }},
      {"bu_mix4", "neck", +[](ToyModel& m) -> ConvLayer& { return m.bu_mix4; }},
      {"bu_down4", "neck", +[](ToyModel& m) -> ConvLayer& { return m.bu_down4; }},
      {"bu_mix5", "neck", +[](ToyModel& m) -> ConvLayer& { return m.bu_mix5; }},
  }};
  return slots;
}

const std::array<LayerSlot, 3>& head_slots() {
  static const std::array<LayerSlot, 3> slots = {{
      {"head3", "head", +[](ToyModel& m) -> ConvLayer& { return m.head3; }},
      {"head4", "head", +[](ToyModel& m) -> ConvLayer& { return m.head4; }},
      {"head5", "head", +[](ToyModel& m) -> ConvLayer& { return m.head5; }},
  }};
  return slots;
}

ToyModel build_skeleton(FusionMode mode) {
  ToyModel m;
  const int pc = ToyModel::kPyramidChannels;
  m.backbone[0] = ConvLayer::make(3, 8, 3, 2);
  m.backbone[1] = ConvLayer::make(8, 8, 3, 2);
  m.backbone[2] = ConvLayer::make(8, 8, 3, 2);
  m.backbone[3] = ConvLayer::make(8, 16, 3, 2);
  m.backbone[4] = ConvLayer::make(16, 32, 3, 2);
  m.td_lateral5 = ConvLayer::make(32, pc, 3, 1);
  m.td_lateral4 = ConvLayer::make(16, pc, 3, 1);
  m.td_lateral3 = ConvLayer::make(8, pc, 3, 1);
  m.td_mix4 = ConvLayer::make(2 * pc, pc, 3, 1);
  m.td_mix3 = ConvLayer::make(2 * pc, pc, 3, 1);
  m.bu_mix3 = ConvLayer::make(pc, pc, 3, 1);
  m.bu_down3 = ConvLayer::make(pc, pc, 3, 2);
  m.bu_mix4 = ConvLayer::make(2 * pc, pc, 3, 1);
  m.bu_down4 = ConvLayer::make(pc, pc, 3, 2);
  m.bu_mix5 = ConvLayer::make(2 * pc, pc, 3, 1);
  m.head3 = ConvLayer::make(pc, ToyModel::kHeadChannels, 1, 1);
  m.head4 = ConvLayer::make(pc, ToyModel::kHeadChannels, 1, 1);
  m.head5 = ConvLayer::make(pc, ToyModel::kHeadChannels, 1, 1);
  m.fusion = FusionCoefficients{1.0, 1.0, mode};
  return m;
}

// Every activation that the backward pass revisits.
struct ForwardCache {
  FeatureMap image;
  FeatureMap a1, a2, c3, c4, c5;
  FeatureMap p5t, u5, l4, cat4, p4t, u4, l3, cat3, p3t;
  FeatureMap p3, d3, catb4, p4, d4, catb5, p5;
  FeatureMap h3, h4, h5;
};

void run_backbone(const ToyModel& m, const FeatureMap& image, ForwardCache& c) {
  c.image = image;
  c.a1 = tanh_map(conv_forward(m.backbone[0], image));
  c.a2 = tanh_map(conv_forward(m.backbone[1], c.a1));
  c.c3 = tanh_map(conv_forward(m.backbone[2], c.a2));
  c.c4 = tanh_map(conv_forward(m.backbone[3], c.c3));
  c.c5 = tanh_map(conv_forward(m.backbone[4], c.c4));
}

void run_topdown(const ToyModel& m, ForwardCache& c) {
  c.p5t = tanh_map(conv_forward(m.td_lateral5, c.c5));
  c.u5 = upsample2x(c.p5t);
  c.l4 = tanh_map(conv_forward(m.td_lateral4, c.c4));
  c.cat4 = concat_channels(scale_map(c.u5, m.fusion.a45), c.l4);
  c.p4t = tanh_map(conv_forward(m.td_mix4, c.cat4));
  c.u4 = upsample2x(c.p4t);
  c.l3 = tanh_map(conv_forward(m.td_lateral3, c.c3));
  c.cat3 = concat_channels(scale_map(c.u4, m.fusion.a34), c.l3);
  c.p3t = tanh_map(conv_forward(m.td_mix3, c.cat3));
}

void run_bottomup(const ToyModel& m, ForwardCache& c) {
  c.p3 = tanh_map(conv_forward(m.bu_mix3, c.p3t));
  c.d3 = tanh_map(conv_forward(m.bu_down3, c.p3));
  c.catb4 = concat_channels(c.d3, c.p4t);
  c.p4 = tanh_map(conv_forward(m.bu_mix4, c.catb4));
  c.d4 = tanh_map(conv_forward(m.bu_down4, c.p4));
  c.catb5 = concat_channels(c.d4, c.p5t);
  c.p5 = tanh_map(conv_forward(m.bu_mix5, c.catb5));
}

void run_heads(const ToyModel& m, ForwardCache& c) {
  c.h3 = conv_forward(m.head3, c.p3);
  c.h4 = conv_forward(m.head4, c.p4);
  c.h5 = conv_forward(m.head5, c.p5);
}

void full_forward(const ToyModel& m, const FeatureMap& image, ForwardCache& c) {
  run_backbone(m, image, c);
  run_topdown(m, c);
  run_bottomup(m, c);
  run_heads(m, c);
}

FeatureMap conv_bwd_accumulate(const ConvLayer& layer, ConvLayer& gslot, const FeatureMap& x,
                               const FeatureMap& grad_out) {
  return conv_backward_core(layer, x, grad_out, gslot.weights, gslot.bias);
}

// Fills per-sample gradients into `g` (accumulating; caller pre-zeroes once
// per batch) and returns the sample loss.
double backward_sample(const ToyModel& m, const ForwardCache& c, const LevelTargets& t,
                       ToyModel& g) {
  const std::size_t n_total = c.h3.values.size() + c.h4.values.size() + c.h5.values.size();
  const double inv_n = 1.0 / static_cast<double>(n_total);
  double loss = 0.0;
  auto head_grad = [&](const FeatureMap& h, const FeatureMap& tt) {
    FeatureMap d = h;
    for (std::size_t i = 0; i < d.values.size(); ++i) {
      const double r = h.values[i] - tt.values[i];
      loss += r * r;
      d.values[i] = 2.0 * r * inv_n;
    }
    return d;
  };
  const FeatureMap dh3 = head_grad(c.h3, t.t3);
  const FeatureMap dh4 = head_grad(c.h4, t.t4);
  const FeatureMap dh5 = head_grad(c.h5, t.t5);
  loss *= inv_n;

  FeatureMap dp3 = conv_bwd_accumulate(m.head3, g.head3, c.p3, dh3);
  FeatureMap dp4 = conv_bwd_accumulate(m.head4, g.head4, c.p4, dh4);
  FeatureMap dp5 = conv_bwd_accumulate(m.head5, g.head5, c.p5, dh5);

  // Bottom-up, deepest first.
  const FeatureMap db5z = tanh_backward(c.p5, dp5);
  const FeatureMap dcatb5 = conv_bwd_accumulate(m.bu_mix5, g.bu_mix5, c.catb5, db5z);
  FeatureMap dd4, dp5t;
  split_channels(dcatb5, ToyModel::kPyramidChannels, dd4, dp5t);
  add_inplace(dp4, conv_bwd_accumulate(m.bu_down4, g.bu_down4, c.p4, tanh_backward(c.d4, dd4)));

  const FeatureMap db4z = tanh_backward(c.p4, dp4);
  const FeatureMap dcatb4 = conv_bwd_accumulate(m.bu_mix4, g.bu_mix4, c.catb4, db4z);
  FeatureMap dd3, dp4t;
  split_channels(dcatb4, ToyModel::kPyramidChannels, dd3, dp4t);
  add_inplace(dp3, conv_bwd_accumulate(m.bu_down3, g.bu_down3, c.p3, tanh_backward(c.d3, dd3)));

  const FeatureMap db3z = tanh_backward(c.p3, dp3);
  FeatureMap dp3t = conv_bwd_accumulate(m.bu_mix3, g.bu_mix3, c.p3t, db3z);

  // Top-down, shallowest first. The scaled-upsample half of each concat
  // yields the coefficient gradient <d_half, upsample(P')>.
  const FeatureMap dm3z = tanh_backward(c.p3t, dp3t);
  const FeatureMap dcat3 = conv_bwd_accumulate(m.td_mix3, g.td_mix3, c.cat3, dm3z);
  FeatureMap ds4, dl3;
  split_channels(dcat3, ToyModel::kPyramidChannels, ds4, dl3);
  g.fusion.a34 += dot(ds4, c.u4);
  add_inplace(dp4t, upsample2x_adjoint(scale_map(ds4, m.fusion.a34)));
  FeatureMap dc3 = conv_bwd_accumulate(m.td_lateral3, g.td_lateral3, c.c3, tanh_backward(c.l3, dl3));

  const FeatureMap dm4z = tanh_backward(c.p4t, dp4t);
  const FeatureMap dcat4 = conv_bwd_accumulate(m.td_mix4, g.td_mix4, c.cat4, dm4z);
  FeatureMap ds5, dl4;
  split_channels(dcat4, ToyModel::kPyramidChannels, ds5, dl4);
  g.fusion.a45 += dot(ds5, c.u5);
  add_inplace(dp5t, upsample2x_adjoint(scale_map(ds5, m.fusion.a45)));
  FeatureMap dc4 = conv_bwd_accumulate(m.td_lateral4, g.td_lateral4, c.c4, tanh_backward(c.l4, dl4));

  const FeatureMap dl5z = tanh_backward(c.p5t, dp5t);
  FeatureMap dc5 = conv_bwd_accumulate(m.td_lateral5, g.td_lateral5, c.c5, dl5z);

  // Backbone; c3 and c4 also fed the laterals above.
  add_inplace(dc4, conv_bwd_accumulate(m.backbone[4], g.backbone[4], c.c4, tanh_backward(c.c5, dc5)));
  add_inplace(dc3, conv_bwd_accumulate(m.backbone[3], g.backbone[3], c.c3, tanh_backward(c.c4, dc4)));
  const FeatureMap da2 =
      conv_bwd_accumulate(m.backbone[2], g.backbone[2], c.a2, tanh_backward(c.c3, dc3));
  const FeatureMap da1 =
      conv_bwd_accumulate(m.backbone[1], g.backbone[1], c.a1, tanh_backward(c.a2, da2));
  conv_bwd_accumulate(m.backbone[0], g.backbone[0], c.image, tanh_backward(c.a1, da1));
  return loss;
}

void validate_sample(const TrainSample& s) {
  validate_map(s.image, "train sample image");
  if (s.image.channels != 3) throw ValidationError("train sample image must have 3 channels");
  if (s.image.width % 32 != 0 || s.image.height % 32 != 0 || s.image.width < 32 ||
      s.image.height < 32) {
    throw ValidationError("train sample image dims must be positive multiples of 32");
  }
}

std::string format_double(double v, const char* fmt) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

}  // namespace

ConvLayer ConvLayer::make(int in_ch, int out_ch, int kernel, int stride) {
  ConvLayer layer;
  layer.in_channels = in_ch;
  layer.out_channels = out_ch;
  layer.kernel = kernel;
  layer.stride = stride;
  layer.weights.assign(static_cast<std::size_t>(out_ch) * in_ch * kernel * kernel, 0.0);
  layer.bias.assign(static_cast<std::size_t>(out_ch), 0.0);
  validate_layer(layer);
  return layer;
}

FeatureMap conv_forward(const ConvLayer& layer, const FeatureMap& x) {
  validate_layer(layer);
  validate_map(x, "conv input");
  if (x.channels != layer.in_channels) {
    throw ValidationError("conv input has " + std::to_string(x.channels) + " channels, layer expects " +
                          std::to_string(layer.in_channels));
  }
  const int k = layer.kernel;
  const int pad = k / 2;
  const int oh = conv_out_dim(x.height, k, layer.stride);
  const int ow = conv_out_dim(x.width, k, layer.stride);
  if (oh < 1 || ow < 1) throw ValidationError("conv input too small for kernel");
  FeatureMap out = FeatureMap::zeros(layer.out_channels, oh, ow);
  for (int oc = 0; oc < layer.out_channels; ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      const int y0 = oy * layer.stride - pad;
      for (int ox = 0; ox < ow; ++ox) {
        const int x0 = ox * layer.stride - pad;
        double acc = layer.bias[oc];
        for (int ic = 0; ic < layer.in_channels; ++ic) {
          for (int ky = 0; ky < k; ++ky) {
            const int y = y0 + ky;
            if (y < 0 || y >= x.height) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int xx = x0 + kx;
              if (xx < 0 || xx >= x.width) continue;
              acc += layer.weights[((static_cast<std::size_t>(oc) * layer.in_channels + ic) * k + ky) * k +
                                   kx] *
                     x.at(ic, y, xx);
            }
          }
        }
        out.at(oc, oy, ox) = acc;
      }
    }
  }
  return out;
}

FeatureMap conv_backward(const ConvLayer& layer, const FeatureMap& x, const FeatureMap& grad_out,
                         ConvGrads* grads) {
  validate_layer(layer);
  validate_map(x, "conv input");
  validate_map(grad_out, "conv output grad");
  const int oh = conv_out_dim(x.height, layer.kernel, layer.stride);
  const int ow = conv_out_dim(x.width, layer.kernel, layer.stride);
  if (grad_out.channels != layer.out_channels || grad_out.height != oh || grad_out.width != ow) {
    throw ValidationError("conv output grad shape mismatch");
  }
  if (grads == nullptr) throw ValidationError("conv_backward requires a gradient sink");
  grads->weights.assign(layer.weights.size(), 0.0);
  grads->bias.assign(layer.bias.size(), 0.0);
  return conv_backward_core(layer, x, grad_out, grads->weights, grads->bias);
}

FeatureMap upsample2x(const FeatureMap& x) {
  validate_map(x, "upsample input");
  FeatureMap out = FeatureMap::zeros(x.channels, 2 * x.height, 2 * x.width);
  for (int c = 0; c < x.channels; ++c) {
    for (int y = 0; y < out.height; ++y) {
      for (int xx = 0; xx < out.width; ++xx) {
        out.at(c, y, xx) = x.at(c, y / 2, xx / 2);
      }
    }
  }
  return out;
}

FeatureMap upsample2x_adjoint(const FeatureMap& grad_out) {
  validate_map(grad_out, "upsample adjoint input");
  if (grad_out.height % 2 != 0 || grad_out.width % 2 != 0) {
    throw ValidationError("upsample adjoint input dims must be even");
  }
  FeatureMap g = FeatureMap::zeros(grad_out.channels, grad_out.height / 2, grad_out.width / 2);
  for (int c = 0; c < grad_out.channels; ++c) {
    for (int y = 0; y < grad_out.height; ++y) {
      for (int xx = 0; xx < grad_out.width; ++xx) {
        g.at(c, y / 2, xx / 2) += grad_out.at(c, y, xx);
      }
    }
  }
  return g;
}

FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b) {
  validate_map(a, "concat lhs");
  validate_map(b, "concat rhs");
  if (a.height != b.height || a.width != b.width) {
    throw ValidationError("concat inputs must share spatial dims");
  }
  FeatureMap out = FeatureMap::zeros(a.channels + b.channels, a.height, a.width);
  std::copy(a.values.begin(), a.values.end(), out.values.begin());
  std::copy(b.values.begin(), b.values.end(),
            out.values.begin() + static_cast<std::ptrdiff_t>(a.values.size()));
  return out;
}

ToyModel ToyModel::random(std::uint64_t seed, FusionMode mode) {
  ToyModel m = build_skeleton(mode);
  Rng rng = Rng::stream(seed, "model_init");
  for (ParamRef& ref : parameters(m)) {
    if (ref.group == "fusion") continue;  // alphas start at 1.0
    if (ref.path.ends_with(".bias")) {
      for (std::size_t i = 0; i < ref.size; ++i) ref.data[i] = 0.05 * rng.normal();
    } else {
      // Path strings are "<layer>.weights"; recover fan-in from the slot.
      ToyModel* self = &m;
      double fan_in = 1.0;
      for (const LayerSlot& slot : layer_slots()) {
        if (ref.path == std::string(slot.name) + ".weights") {
          const ConvLayer& l = slot.get(*self);
          fan_in = static_cast<double>(l.in_channels) * l.kernel * l.kernel;
        }
      }
      for (const LayerSlot& slot : head_slots()) {
        if (ref.path == std::string(slot.name) + ".weights") {
          const ConvLayer& l = slot.get(*self);
          fan_in = static_cast<double>(l.in_channels) * l.kernel * l.kernel;
        }
      }
      const double sd = 1.0 / std::sqrt(fan_in);
      for (std::size_t i = 0; i < ref.size; ++i) ref.data[i] = sd * rng.normal();
    }
  }
  return m;
}

ToyModel ToyModel::zeros_like() const {
  ToyModel g = build_skeleton(fusion.mode);
  g.fusion.a45 = 0.0;
  g.fusion.a34 = 0.0;
  return g;
}

std::vector<ParamRef> parameters(ToyModel& m) {
  std::vector<ParamRef> refs;
  auto push = [&](const LayerSlot& slot) {
    ConvLayer& l = slot.get(m);
    refs.push_back({std::string(slot.name) + ".weights", slot.group, l.weights.data(), l.weights.size()});
    refs.push_back({std::string(slot.name) + ".bias", slot.group, l.bias.data(), l.bias.size()});
  };
  for (const LayerSlot& slot : layer_slots()) push(slot);
  for (const LayerSlot& slot : head_slots()) push(slot);
  refs.push_back({"fusion.a45", "fusion", &m.fusion.a45, 1});
  refs.push_back({"fusion.a34", "fusion", &m.fusion.a34, 1});
  return refs;
}

std::size_t parameter_count(const ToyModel& m) {
  std::size_t n = 0;
  for (const ParamRef& r : parameters(const_cast<ToyModel&>(m))) n += r.size;
  return n;
}

BackboneOut backbone_forward(const ToyModel& m, const FeatureMap& image) {
  ForwardCache c;
  run_backbone(m, image, c);
  return BackboneOut{std::move(c.c3), std::move(c.c4), std::move(c.c5)};
}

PyramidLevels af_topdown(const ToyModel& m, const BackboneOut& bb) {
  ForwardCache c;
  c.c3 = bb.c3;
  c.c4 = bb.c4;
  c.c5 = bb.c5;
  run_topdown(m, c);
  return PyramidLevels{std::move(c.p3t), std::move(c.p4t), std::move(c.p5t)};
}

PyramidLevels topdown_without_coefficients(const ToyModel& m, const BackboneOut& bb) {
  // Same layers, no scalar multiply anywhere on the deep half.
  const FeatureMap p5 = tanh_map(conv_forward(m.td_lateral5, bb.c5));
  const FeatureMap l4 = tanh_map(conv_forward(m.td_lateral4, bb.c4));
  const FeatureMap p4 = tanh_map(conv_forward(m.td_mix4, concat_channels(upsample2x(p5), l4)));
  const FeatureMap l3 = tanh_map(conv_forward(m.td_lateral3, bb.c3));
  const FeatureMap p3 = tanh_map(conv_forward(m.td_mix3, concat_channels(upsample2x(p4), l3)));
  return PyramidLevels{p3, p4, p5};
}

PyramidLevels pan_bottomup(const ToyModel& m, const PyramidLevels& td) {
  ForwardCache c;
  c.p3t = td.p3;
  c.p4t = td.p4;
  c.p5t = td.p5;
  run_bottomup(m, c);
  return PyramidLevels{std::move(c.p3), std::move(c.p4), std::move(c.p5)};
}

ModelOutput forward(const ToyModel& m, const FeatureMap& image) {
  ForwardCache c;
  full_forward(m, image, c);
  return ModelOutput{std::move(c.h3), std::move(c.h4), std::move(c.h5)};
}

LevelTargets targets_from_boxes(const std::vector<geometry::PixelBox>& boxes, int image_width,
                                int image_height) {
  if (image_width < 32 || image_height < 32 || image_width % 32 != 0 || image_height % 32 != 0) {
    throw ValidationError("target image dims must be positive multiples of 32");
  }
  LevelTargets t;
  std::array<FeatureMap*, 3> maps = {&t.t3, &t.t4, &t.t5};
  for (int i = 0; i < 3; ++i) {
    const int s = ToyModel::kStrides[i];
    *maps[i] = FeatureMap::zeros(ToyModel::kHeadChannels, image_height / s, image_width / s);
  }
  for (const geometry::PixelBox& b : boxes) {
    if (!(b.x_max > b.x_min) || !(b.y_max > b.y_min)) {
      throw ValidationError("target box must have positive area");
    }
    const double side = std::sqrt(b.area());
    const int level = side <= 8.0 ? 0 : (side <= 16.0 ? 1 : 2);
    const int s = ToyModel::kStrides[level];
    FeatureMap& map = *maps[level];
    const double cx = 0.5 * (b.x_min + b.x_max);
    const double cy = 0.5 * (b.y_min + b.y_max);
    const int gx = std::clamp(static_cast<int>(cx / s), 0, map.width - 1);
    const int gy = std::clamp(static_cast<int>(cy / s), 0, map.height - 1);
    map.at(0, gy, gx) = 1.0;
    map.at(1, gy, gx) = cx / s - (gx + 0.5);
    map.at(2, gy, gx) = cy / s - (gy + 0.5);
    map.at(3, gy, gx) = b.width() / image_width;
    map.at(4, gy, gx) = b.height() / image_height;
  }
  return t;
}

double loss_mse(const ModelOutput& out, const LevelTargets& targets) {
  const std::array<const FeatureMap*, 3> hs = {&out.h3, &out.h4, &out.h5};
  const std::array<const FeatureMap*, 3> ts = {&targets.t3, &targets.t4, &targets.t5};
  double sum = 0.0;
  std::size_t n = 0;
  for (int i = 0; i < 3; ++i) {
    if (!hs[i]->same_shape(*ts[i])) throw ValidationError("loss target shape mismatch");
    for (std::size_t j = 0; j < hs[i]->values.size(); ++j) {
      const double r = hs[i]->values[j] - ts[i]->values[j];
      sum += r * r;
    }
    n += hs[i]->values.size();
  }
  return sum / static_cast<double>(n);
}

double forward_loss(const ToyModel& m, const TrainSample& sample) {
  validate_sample(sample);
  return loss_mse(forward(m, sample.image), sample.targets);
}

double loss_and_gradients(const ToyModel& m, const std::vector<TrainSample>& batch,
                          ToyModel* grads) {
  if (batch.empty()) throw ValidationError("batch must not be empty");
  if (grads == nullptr) throw ValidationError("gradient sink required");
  *grads = m.zeros_like();
  double loss = 0.0;
  for (const TrainSample& s : batch) {
    validate_sample(s);
    ForwardCache c;
    full_forward(m, s.image, c);
    loss += backward_sample(m, c, s.targets, *grads);
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (ParamRef& r : parameters(*grads)) {
    for (std::size_t i = 0; i < r.size; ++i) r.data[i] *= inv_b;
  }
  return loss * inv_b;
}

double train_step(ToyModel& m, const std::vector<TrainSample>& batch, double lr,
                  const std::vector<std::string>& frozen_groups) {
  ToyModel grads = m.zeros_like();
  const double loss = loss_and_gradients(m, batch, &grads);
  if (!std::isfinite(loss)) throw DivergenceError("training loss is not finite");
  const std::set<std::string> frozen(frozen_groups.begin(), frozen_groups.end());
  std::vector<ParamRef> pm = parameters(m);
  std::vector<ParamRef> pg = parameters(grads);
  for (std::size_t i = 0; i < pm.size(); ++i) {
    if (frozen.count(pm[i].group) != 0) continue;
    if (pm[i].group == "fusion" && m.fusion.mode == FusionMode::fixed) continue;
    for (std::size_t j = 0; j < pm[i].size; ++j) pm[i].data[j] -= lr * pg[i].data[j];
  }
  return loss;
}

std::vector<evalkit::Detection> decode_detections(const ModelOutput& out,
                                                  const std::string& image_id, int image_width,
                                                  int image_height, double confidence_floor) {
  std::vector<evalkit::Detection> dets;
  const std::array<const FeatureMap*, 3> hs = {&out.h3, &out.h4, &out.h5};
  for (int i = 0; i < 3; ++i) {
    const FeatureMap& h = *hs[i];
    const int s = ToyModel::kStrides[i];
    for (int gy = 0; gy < h.height; ++gy) {
      for (int gx = 0; gx < h.width; ++gx) {
        const double obj = h.at(0, gy, gx);
        if (!(obj >= confidence_floor)) continue;
        const double cx = (gx + 0.5 + h.at(1, gy, gx)) * s;
        const double cy = (gy + 0.5 + h.at(2, gy, gx)) * s;
        const double bw = std::clamp(std::abs(h.at(3, gy, gx)) * image_width, 0.5,
                                     static_cast<double>(image_width));
        const double bh = std::clamp(std::abs(h.at(4, gy, gx)) * image_height, 0.5,
                                     static_cast<double>(image_height));
        geometry::PixelBox box;
        box.x_min = std::clamp(cx - bw / 2.0, 0.0, image_width - 0.5);
        box.y_min = std::clamp(cy - bh / 2.0, 0.0, image_height - 0.5);
        box.x_max = std::clamp(cx + bw / 2.0, box.x_min + 0.25, static_cast<double>(image_width));
        box.y_max = std::clamp(cy + bh / 2.0, box.y_min + 0.25, static_cast<double>(image_height));
        dets.push_back({box, std::clamp(obj, confidence_floor, 1.0), image_id});
      }
    }
  }
  return dets;
}

GradCheckResult grad_check(ToyModel& m, const std::vector<TrainSample>& batch, double epsilon,
                           std::size_t stride) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) {
    throw ValidationError("grad_check epsilon must lie in [1e-7, 1e-3]");
  }
  if (stride < 1) throw ValidationError("grad_check stride must be >= 1");
  ToyModel grads = m.zeros_like();
  loss_and_gradients(m, batch, &grads);
  auto batch_loss = [&]() {
    double s = 0.0;
    for (const TrainSample& sample : batch) s += loss_mse(forward(m, sample.image), sample.targets);
    return s / static_cast<double>(batch.size());
  };
  std::vector<ParamRef> pm = parameters(m);
  std::vector<ParamRef> pg = parameters(grads);
  GradCheckResult result;
  std::size_t global = 0;
  for (std::size_t r = 0; r < pm.size(); ++r) {
    for (std::size_t j = 0; j < pm[r].size; ++j, ++global) {
      if (global % stride != 0) continue;
      const double saved = pm[r].data[j];
      pm[r].data[j] = saved + epsilon;
      const double lp = batch_loss();
      pm[r].data[j] = saved - epsilon;
      const double lm = batch_loss();
      pm[r].data[j] = saved;
      const double fd = (lp - lm) / (2.0 * epsilon);
      const double an = pg[r].data[j];
      const double rel = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_path = pm[r].path + "[" + std::to_string(j) + "]";
      }
    }
  }
  return result;
}

std::vector<SweepCell> alpha_sweep(const std::vector<double>& values, const SweepConfig& cfg) {
  if (cfg.train.empty()) throw ValidationError("alpha sweep needs at least one train sample");
  if (cfg.steps < 1) throw ValidationError("alpha sweep needs steps >= 1");
  std::vector<SweepCell> cells;
  auto run_cell = [&](const std::string& label, FusionMode mode, double init) {
    SweepCell cell;
    cell.label = label;
    cell.adaptive = mode == FusionMode::adaptive;
    ToyModel model = ToyModel::random(Rng::derive_seed(cfg.seed, "sweep/" + label), mode);
    model.fusion.a45 = init;
    model.fusion.a34 = init;
    double loss = 0.0;
    for (int step = 0; step < cfg.steps; ++step) {
      try {
        loss = train_step(model, cfg.train, cfg.lr);
      } catch (const DivergenceError& e) {
        throw DivergenceError("sweep cell " + label + ": " + e.what());
      }
    }
    cell.final_loss = loss;
    cell.a45 = model.fusion.a45;
    cell.a34 = model.fusion.a34;
    std::vector<evalkit::Detection> dets;
    evalkit::GroundTruthMap gts;
    for (const TrainSample& s : cfg.train) {
      const ModelOutput out = forward(model, s.image);
      for (evalkit::Detection& d :
           decode_detections(out, s.id, s.image.width, s.image.height)) {
        dets.push_back(std::move(d));
      }
      gts[s.id] = s.gt_boxes;
    }
    evalkit::EvalOptions opts;
    opts.iou_threshold = cfg.iou_threshold;
    bool any_gt = false;
    for (const auto& [id, boxes] : gts) any_gt = any_gt || !boxes.empty();
    if (any_gt) cell.report = evalkit::size_stratified_report(dets, gts, opts);
    cells.push_back(std::move(cell));
  };
  for (double v : values) {
    run_cell("fixed_" + format_double(v, "%.2f"), FusionMode::fixed, v);
  }
  run_cell("adaptive", FusionMode::adaptive, 1.0);
  return cells;
}

std::string format_sweep_table(const std::vector<SweepCell>& cells) {
  auto ap_cell = [](const std::optional<double>& v) {
    return v.has_value() ? format_double(*v, "%.4f") : std::string("-");
  };
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof(line), "%-12s %10s %10s %12s %10s %10s %12s %10s %10s\n", "cell",
                "a45", "a34", "loss", "AP_0~8^2", "AP_8~16^2", "AP_16~32^2", "AP_small", "AP_all");
  os << line;
  for (const SweepCell& c : cells) {
    std::snprintf(line, sizeof(line), "%-12s %10.4f %10.4f %12.6f %10s %10s %12s %10s %10s\n",
                  c.label.c_str(), c.a45, c.a34, c.final_loss, ap_cell(c.report.ap_0_64).c_str(),
                  ap_cell(c.report.ap_64_256).c_str(), ap_cell(c.report.ap_256_1024).c_str(),
                  ap_cell(c.report.ap_small).c_str(), ap_cell(c.report.ap_overall).c_str());
    os << line;
  }
  return os.str();
}

std::string checkpoint_to_json(const ToyModel& m) {
  nlohmann::ordered_json doc;
  doc["format_version"] = 1;
  doc["mode"] = m.fusion.mode == FusionMode::adaptive ? "adaptive" : "fixed";
  doc["a45"] = m.fusion.a45;
  doc["a34"] = m.fusion.a34;
  doc["layers"] = nlohmann::ordered_json::array();
  ToyModel& mm = const_cast<ToyModel&>(m);
  auto emit = [&](const LayerSlot& slot) {
    const ConvLayer& l = slot.get(mm);
    nlohmann::ordered_json jl;
    jl["name"] = slot.name;
    jl["in_channels"] = l.in_channels;
    jl["out_channels"] = l.out_channels;
    jl["kernel"] = l.kernel;
    jl["stride"] = l.stride;
    jl["weights"] = l.weights;
    jl["bias"] = l.bias;
    doc["layers"].push_back(std::move(jl));
  };
  for (const LayerSlot& slot : layer_slots()) emit(slot);
  for (const LayerSlot& slot : head_slots()) emit(slot);
  return doc.dump(2) + "\n";
}

ToyModel checkpoint_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint parse error: ") + e.what());
  }
  try {
    if (doc.at("format_version").get<int>() != 1) {
      throw ValidationError("unsupported checkpoint format_version");
    }
    const std::string mode_str = doc.at("mode").get<std::string>();
    if (mode_str != "adaptive" && mode_str != "fixed") {
      throw ValidationError("checkpoint mode must be 'adaptive' or 'fixed'");
    }
    ToyModel m = build_skeleton(mode_str == "adaptive" ? FusionMode::adaptive : FusionMode::fixed);
    m.fusion.a45 = doc.at("a45").get<double>();
    m.fusion.a34 = doc.at("a34").get<double>();
    const auto& layers = doc.at("layers");
    std::vector<const LayerSlot*> slots;
    for (const LayerSlot& slot : layer_slots()) slots.push_back(&slot);
    for (const LayerSlot& slot : head_slots()) slots.push_back(&slot);
    if (layers.size() != slots.size()) {
      throw ValidationError("checkpoint has " + std::to_string(layers.size()) + " layers, expected " +
                            std::to_string(slots.size()));
    }
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const auto& jl = layers[i];
      ConvLayer& l = slots[i]->get(m);
      if (jl.at("name").get<std::string>() != slots[i]->name) {
        throw ValidationError("checkpoint layer order mismatch at " + std::string(slots[i]->name));
      }
      if (jl.at("in_channels").get<int>() != l.in_channels ||
          jl.at("out_channels").get<int>() != l.out_channels ||
          jl.at("kernel").get<int>() != l.kernel || jl.at("stride").get<int>() != l.stride) {
        throw ValidationError("checkpoint layer shape mismatch at " + std::string(slots[i]->name));
      }
      const auto w = jl.at("weights").get<std::vector<double>>();
      const auto b = jl.at("bias").get<std::vector<double>>();
      if (w.size() != l.weights.size() || b.size() != l.bias.size()) {
        throw ValidationError("checkpoint parameter count mismatch at " + std::string(slots[i]->name));
      }
      l.weights = w;
      l.bias = b;
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint field error: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const ToyModel& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out << checkpoint_to_json(m);
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

ToyModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace uavkit::fusionnet
