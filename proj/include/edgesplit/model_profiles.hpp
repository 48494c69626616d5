#pragma once

// Layer-wise DNN profiles and the quantities derived from a partition point.
//
// A partition point l in [0, L] means layers 1..l run on the device and
// layers l+1..L on the edge server. l = 0 is full offload, l = L is full
// on-device execution.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include "edgesplit/error.hpp"
#include "edgesplit/rng.hpp"

namespace edgesplit {

/// Single-precision activations.
inline constexpr std::int64_t kElementBytes = 4;

enum class LayerKind { conv, dense };

struct ConvDims {
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::int64_t c = 0;
  bool operator==(const ConvDims&) const = default;
};

struct DenseDims {
  std::int64_t v = 0;
  bool operator==(const DenseDims&) const = default;
};

using OutDims = std::variant<ConvDims, DenseDims>;

constexpr std::int64_t conv_output_bytes(std::int64_t elem_bytes, std::int64_t h, std::int64_t w,
                                         std::int64_t c) {
  return elem_bytes * h * w * c;
}

constexpr std::int64_t dense_output_bytes(std::int64_t elem_bytes, std::int64_t v) {
  return elem_bytes * v;
}

inline std::int64_t output_bytes(const OutDims& dims) {
  if (const auto* conv = std::get_if<ConvDims>(&dims)) {
    return conv_output_bytes(kElementBytes, conv->h, conv->w, conv->c);
  }
  return dense_output_bytes(kElementBytes, std::get<DenseDims>(dims).v);
}

struct LayerProfile {
  LayerKind kind = LayerKind::conv;
  std::int64_t flops = 0;
  std::int64_t param_bytes = 0;
  OutDims out_dims = ConvDims{};
  std::int64_t out_bytes = 0;

  static LayerProfile make(LayerKind kind, std::int64_t flops, std::int64_t param_bytes, OutDims dims) {
    LayerProfile layer{kind, flops, param_bytes, dims, 0};
    layer.out_bytes = output_bytes(dims);
    return layer;
  }
};

struct ModelProfile {
  int model_id = 0;
  std::string name;
  std::vector<LayerProfile> layers;
  std::int64_t raw_input_bytes = 0;
  std::int64_t total_bytes = 0;
  /// layer_count() + 1 entries; entry l is the leakage score at partition point l.
  std::vector<double> leakage_table;

  int layer_count() const { return static_cast<int>(layers.size()); }

  std::int64_t total_flops() const {
    std::int64_t sum = 0;
    for (const auto& layer : layers) sum += layer.flops;
    return sum;
  }
  std::int64_t total_param_bytes() const {
    std::int64_t sum = 0;
    for (const auto& layer : layers) sum += layer.param_bytes;
    return sum;
  }
};

using Catalog = std::vector<ModelProfile>;

struct PartitionSummary {
  std::int64_t download_bytes = 0;  // parameters of device-side layers
  std::int64_t local_flops = 0;
  std::int64_t edge_flops = 0;
  std::int64_t upload_bytes = 0;  // per sample
  double leakage = 1.0;
};

/// Throws InvariantError naming the model (and layer, if relevant).
inline void validate_profile(const ModelProfile& profile) {
  const std::string who = "model " + std::to_string(profile.model_id) +
                          (profile.name.empty() ? "" : " (" + profile.name + ")");
  if (profile.layers.empty()) throw InvariantError(who + ": no layers");
  for (std::size_t l = 0; l < profile.layers.size(); ++l) {
    const auto& layer = profile.layers[l];
    const std::string where = who + " layer " + std::to_string(l + 1);
    if (layer.flops < 0) throw InvariantError(where + ": negative flops");
    if (layer.param_bytes < 0) throw InvariantError(where + ": negative param_bytes");
    const bool dims_match_kind = (layer.kind == LayerKind::conv) == std::holds_alternative<ConvDims>(layer.out_dims);
    if (!dims_match_kind) throw InvariantError(where + ": out_dims do not match layer kind");
    if (layer.out_bytes != output_bytes(layer.out_dims)) {
      throw InvariantError(where + ": out_bytes disagrees with out_dims");
    }
    if (layer.out_bytes < 0) throw InvariantError(where + ": negative output volume");
  }
  if (profile.raw_input_bytes < 0) throw InvariantError(who + ": negative raw_input_bytes");
  if (profile.total_bytes < profile.total_param_bytes()) {
    throw InvariantError(who + ": total_bytes smaller than the sum of layer parameters");
  }
  const auto& lea = profile.leakage_table;
  if (static_cast<int>(lea.size()) != profile.layer_count() + 1) {
    throw InvariantError(who + ": leakage_table must have L+1 entries");
  }
  if (lea.front() != 1.0) throw InvariantError(who + ": leakage_table[0] must be exactly 1");
  if (lea.back() != 0.0) throw InvariantError(who + ": leakage_table[L] must be exactly 0");
  for (std::size_t l = 0; l < lea.size(); ++l) {
    if (!(lea[l] >= 0.0 && lea[l] <= 1.0)) {
      throw InvariantError(who + ": leakage_table[" + std::to_string(l) + "] outside [0,1]");
    }
    if (l > 0 && lea[l] > lea[l - 1]) {
      throw InvariantError(who + ": leakage_table not monotone non-increasing at " + std::to_string(l));
    }
  }
}

inline void check_partition_point(const ModelProfile& profile, int l) {
  if (l < 0 || l > profile.layer_count()) {
    throw DomainError("partition point " + std::to_string(l) + " outside [0, " +
                      std::to_string(profile.layer_count()) + "] for model " +
                      std::to_string(profile.model_id));
  }
}

inline double leakage_at(const ModelProfile& profile, int l) {
  check_partition_point(profile, l);
  return profile.leakage_table[static_cast<std::size_t>(l)];
}

inline PartitionSummary partition_summary(const ModelProfile& profile, int l) {
  check_partition_point(profile, l);
  PartitionSummary s;
  const int L = profile.layer_count();
  for (int m = 0; m < L; ++m) {
    const auto& layer = profile.layers[static_cast<std::size_t>(m)];
    if (m < l) {
      s.download_bytes += layer.param_bytes;
      s.local_flops += layer.flops;
    } else {
      s.edge_flops += layer.flops;
    }
  }
  if (l == 0) {
    s.upload_bytes = profile.raw_input_bytes;
  } else if (l == L) {
    s.upload_bytes = 0;
  } else {
    s.upload_bytes = profile.layers[static_cast<std::size_t>(l - 1)].out_bytes;
  }
  s.leakage = profile.leakage_table[static_cast<std::size_t>(l)];
  return s;
}

// ---------------------------------------------------------------------------
// Synthetic catalog
// ---------------------------------------------------------------------------

enum class ModelFamily { lenet7, lenet9, lenet12, resnet18, resnet34, resnet50, vgg13, vgg16, vgg19 };

inline constexpr std::array<ModelFamily, 9> kAllFamilies = {
    ModelFamily::lenet7,   ModelFamily::lenet9,   ModelFamily::lenet12, ModelFamily::resnet18, ModelFamily::resnet34,
    ModelFamily::resnet50, ModelFamily::vgg13,    ModelFamily::vgg16,   ModelFamily::vgg19};

inline std::string family_name(ModelFamily f) {
  switch (f) {
    case ModelFamily::lenet7: return "lenet7";
    case ModelFamily::lenet9: return "lenet9";
    case ModelFamily::lenet12: return "lenet12";
    case ModelFamily::resnet18: return "resnet18";
    case ModelFamily::resnet34: return "resnet34";
    case ModelFamily::resnet50: return "resnet50";
    case ModelFamily::vgg13: return "vgg13";
    case ModelFamily::vgg16: return "vgg16";
    case ModelFamily::vgg19: return "vgg19";
  }
  return "unknown";
}

inline ModelFamily family_from_name(const std::string& name) {
  for (auto f : kAllFamilies) {
    if (family_name(f) == name) return f;
  }
  throw ConfigError("unknown model family '" + name + "'");
}

namespace detail {

/// Accumulates layers while tracking the running feature-map shape.
class ArchBuilder {
 public:
  ArchBuilder(std::int64_t h, std::int64_t w, std::int64_t c) : h_(h), w_(w), c_(c) {}

  /// k x k convolution, 'same' padding, optional stride, optional 2x2 pooling
  /// merged into the unit.
  void conv(std::int64_t k, std::int64_t out_c, std::int64_t stride = 1, std::int64_t pool = 1) {
    const std::int64_t oh = ceil_div(h_, stride);
    const std::int64_t ow = ceil_div(w_, stride);
    const std::int64_t flops = 2 * k * k * c_ * out_c * oh * ow;
    const std::int64_t params = (k * k * c_ * out_c + out_c) * kElementBytes;
    h_ = ceil_div(oh, pool);
    w_ = ceil_div(ow, pool);
    c_ = out_c;
    layers_.push_back(LayerProfile::make(LayerKind::conv, flops, params, ConvDims{h_, w_, c_}));
  }

  /// Residual block as one atomic unit; convs given as (kernel, channels, stride).
  void block(const std::vector<std::array<std::int64_t, 3>>& convs, bool projection, std::int64_t pool = 1) {
    std::int64_t h = h_, w = w_, c = c_;
    std::int64_t flops = 0, params = 0, stride_total = 1;
    for (const auto& [k, out_c, stride] : convs) {
      h = ceil_div(h, stride);
      w = ceil_div(w, stride);
      flops += 2 * k * k * c * out_c * h * w;
      params += (k * k * c * out_c + out_c) * kElementBytes;
      c = out_c;
      stride_total *= stride;
    }
    if (projection) {
      flops += 2 * c_ * c * h * w;
      params += (c_ * c + c) * kElementBytes;
    }
    (void)stride_total;
    h_ = ceil_div(h, pool);
    w_ = ceil_div(w, pool);
    c_ = c;
    layers_.push_back(LayerProfile::make(LayerKind::conv, flops, params, ConvDims{h_, w_, c_}));
  }

  void dense(std::int64_t out_v) {
    const std::int64_t in_v = flat_ ? v_ : h_ * w_ * c_;
    const std::int64_t flops = 2 * in_v * out_v;
    const std::int64_t params = (in_v * out_v + out_v) * kElementBytes;
    flat_ = true;
    v_ = out_v;
    layers_.push_back(LayerProfile::make(LayerKind::dense, flops, params, DenseDims{out_v}));
  }

  /// Global average pooling folded into the next dense layer's input.
  void global_pool() {
    v_ = c_;
    flat_ = true;
  }

  std::vector<LayerProfile> take() { return std::move(layers_); }

 private:
  static std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }
  std::int64_t h_, w_, c_;
  std::int64_t v_ = 0;
  bool flat_ = false;
  std::vector<LayerProfile> layers_;
};

inline std::int64_t scaled(std::int64_t channels, double width) {
  return std::max<std::int64_t>(1, std::llround(static_cast<double>(channels) * width));
}

inline std::vector<LayerProfile> lenet_layers(ModelFamily f, double width) {
  ArchBuilder b(32, 32, 1);
  b.conv(5, scaled(6, width), 1, 2);
  b.conv(5, scaled(16, width), 1, 2);
  if (f == ModelFamily::lenet9 || f == ModelFamily::lenet12) b.conv(3, scaled(32, width), 1, 2);
  if (f == ModelFamily::lenet12) b.conv(3, scaled(64, width), 1, 2);
  if (f == ModelFamily::lenet12) b.dense(scaled(256, width));
  b.dense(scaled(120, width));
  b.dense(scaled(84, width));
  b.dense(10);
  return b.take();
}

inline std::vector<LayerProfile> vgg_layers(ModelFamily f, double width) {
  // Channel plan per stage and convs per stage; the last conv of a stage
  // carries the 2x2 max-pool.
  std::array<int, 5> per_stage{};
  switch (f) {
    case ModelFamily::vgg13: per_stage = {2, 2, 2, 2, 2}; break;
    case ModelFamily::vgg16: per_stage = {2, 2, 3, 3, 3}; break;
    default: per_stage = {2, 2, 4, 4, 4}; break;
  }
  const std::array<std::int64_t, 5> channels{64, 128, 256, 512, 512};
  ArchBuilder b(224, 224, 3);
  for (std::size_t s = 0; s < 5; ++s) {
    for (int n = 0; n < per_stage[s]; ++n) {
      b.conv(3, scaled(channels[s], width), 1, n + 1 == per_stage[s] ? 2 : 1);
    }
  }
  b.dense(scaled(4096, width));
  b.dense(scaled(4096, width));
  b.dense(1000);
  return b.take();
}

inline std::vector<LayerProfile> resnet_layers(ModelFamily f, double width) {
  ArchBuilder b(224, 224, 3);
  b.conv(7, scaled(64, width), 2, 2);  // stem + max-pool
  const bool bottleneck = f == ModelFamily::resnet50;
  const std::array<int, 4> blocks = f == ModelFamily::resnet18 ? std::array<int, 4>{2, 2, 2, 2}
                                                               : std::array<int, 4>{3, 4, 6, 3};
  const std::array<std::int64_t, 4> widths{64, 128, 256, 512};
  std::int64_t in_c = scaled(64, width);
  for (std::size_t s = 0; s < 4; ++s) {
    const std::int64_t c = scaled(widths[s], width);
    for (int n = 0; n < blocks[s]; ++n) {
      const std::int64_t stride = (n == 0 && s > 0) ? 2 : 1;
      if (bottleneck) {
        const std::int64_t out_c = 4 * c;
        b.block({{1, c, 1}, {3, c, stride}, {1, out_c, 1}}, n == 0);
        in_c = out_c;
      } else {
        b.block({{3, c, stride}, {3, c, 1}}, n == 0 && s > 0 && in_c != c);
        in_c = c;
      }
    }
  }
  b.global_pool();
  b.dense(1000);
  return b.take();
}

/// Piecewise-linear leakage through the measured VGG16-class anchors.
inline std::vector<double> anchored_leakage(int L) {
  const std::vector<std::pair<double, double>> anchors{
      {0.0, 1.0}, {2.0, 0.99}, {8.0, 0.59}, {14.0, 0.35}, {static_cast<double>(L), 0.0}};
  std::vector<double> table(static_cast<std::size_t>(L) + 1);
  for (int l = 0; l <= L; ++l) {
    const double x = l;
    for (std::size_t a = 1; a < anchors.size(); ++a) {
      if (x <= anchors[a].first) {
        const auto [x0, y0] = anchors[a - 1];
        const auto [x1, y1] = anchors[a];
        table[static_cast<std::size_t>(l)] = y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        break;
      }
    }
  }
  // Exact anchor values (avoid interpolation round-off at the knots).
  for (const auto& [x, y] : anchors) {
    if (x <= L) table[static_cast<std::size_t>(x)] = y;
  }
  table.front() = 1.0;
  table.back() = 0.0;
  return table;
}

/// 1 - (l/L)^p, concave and decreasing for p > 1.
inline std::vector<double> concave_leakage(int L, double p) {
  std::vector<double> table(static_cast<std::size_t>(L) + 1);
  for (int l = 0; l <= L; ++l) {
    table[static_cast<std::size_t>(l)] = 1.0 - std::pow(static_cast<double>(l) / L, p);
  }
  table.front() = 1.0;
  table.back() = 0.0;
  return table;
}

}  // namespace detail

/// Builds one profile of the given family. Service 0 of a family is the
/// reference architecture; later services get a seeded width multiplier
/// (and, outside the VGG16 class, a jittered leakage exponent).
inline ModelProfile make_family_profile(ModelFamily family, int model_id, double width, double leakage_exponent) {
  ModelProfile p;
  p.model_id = model_id;
  p.name = family_name(family);
  switch (family) {
    case ModelFamily::lenet7:
    case ModelFamily::lenet9:
    case ModelFamily::lenet12:
      p.layers = detail::lenet_layers(family, width);
      p.raw_input_bytes = conv_output_bytes(kElementBytes, 32, 32, 1);
      break;
    case ModelFamily::resnet18:
    case ModelFamily::resnet34:
    case ModelFamily::resnet50:
      p.layers = detail::resnet_layers(family, width);
      p.raw_input_bytes = conv_output_bytes(kElementBytes, 224, 224, 3);
      break;
    default:
      p.layers = detail::vgg_layers(family, width);
      p.raw_input_bytes = conv_output_bytes(kElementBytes, 224, 224, 3);
      break;
  }
  p.total_bytes = p.total_param_bytes();
  p.leakage_table = family == ModelFamily::vgg16 ? detail::anchored_leakage(p.layer_count())
                                                 : detail::concave_leakage(p.layer_count(), leakage_exponent);
  return p;
}

/// Deterministic catalog of families.size() * services_per_model profiles,
/// grouped by family, model ids 0..I-1 in generation order.
inline Catalog synth_catalog(const std::vector<ModelFamily>& families, int services_per_model, std::uint64_t seed) {
  if (services_per_model < 1) throw DomainError("services_per_model must be >= 1");
  Rng rng(seed);
  Catalog catalog;
  int id = 0;
  for (auto family : families) {
    for (int s = 0; s < services_per_model; ++s) {
      double width = 1.0;
      double exponent = 1.3;
      if (s > 0) {
        width = rng.uniform(0.75, 1.25);
        exponent = rng.uniform(1.15, 1.6);
      }
      ModelProfile p = make_family_profile(family, id, width, exponent);
      p.name += "-s" + std::to_string(s);
      validate_profile(p);
      catalog.push_back(std::move(p));
      ++id;
    }
  }
  return catalog;
}

inline Catalog synth_catalog(int services_per_model, std::uint64_t seed) {
  return synth_catalog(std::vector<ModelFamily>(kAllFamilies.begin(), kAllFamilies.end()), services_per_model, seed);
}

inline int max_layer_count(const Catalog& catalog) {
  int best = 0;
  for (const auto& p : catalog) best = std::max(best, p.layer_count());
  return best;
}

}  // namespace edgesplit
