#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "roadfix/errors.hpp"
#include "roadfix/hash.hpp"
#include "roadfix/nn/sequential.hpp"
#include "roadfix/raster.hpp"

namespace roadfix {

using nn::Mode;
using nn::Tape;
using nn::Tensor;

// ---------------------------------------------------------------------------
// Configuration

/// glcic: the original completion network (4 dilated layers, 2/4/8/16).
/// glcrc: 8 dilated layers with dilation 2..9 for a wider road context.
enum class Variant { kGlcic, kGlcrc };

inline std::string to_string(Variant v) { return v == Variant::kGlcic ? "glcic" : "glcrc"; }

inline Variant parse_variant(const std::string& s) {
  if (s == "glcic") return Variant::kGlcic;
  if (s == "glcrc") return Variant::kGlcrc;
  throw InvalidArgument("unknown architecture variant '" + s + "' (expected glcic or glcrc)");
}

inline std::vector<int> default_dilations(Variant v) {
  if (v == Variant::kGlcic) return {2, 4, 8, 16};
  return {2, 3, 4, 5, 6, 7, 8, 9};
}

struct GeneratorConfig {
  int in_channels = 2;  // masked raster + mask indicator
  int base_channels = 32;
  Variant variant = Variant::kGlcrc;
  std::vector<int> dilations = default_dilations(Variant::kGlcrc);
  int encoder_layers = 6;
  int decoder_layers = 3;  // two 2x upsampling layers + output conv

  static GeneratorConfig make(Variant v, int base_channels) {
    GeneratorConfig c;
    c.variant = v;
    c.base_channels = base_channels;
    c.dilations = default_dilations(v);
    return c;
  }

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (in_channels != 2) out.push_back("generator.in_channels must be 2");
    if (base_channels < 1) out.push_back("generator.base_channels must be >= 1");
    if (encoder_layers != 6) out.push_back("generator.encoder_layers must be 6");
    if (decoder_layers != 3) out.push_back("generator.decoder_layers must be 3");
    if (dilations != default_dilations(variant)) {
      out.push_back(variant == Variant::kGlcrc ? "generator.dilations must be [2..9] for glcrc"
                                               : "generator.dilations must be [2,4,8,16] for glcic");
    }
    return out;
  }
};

struct DiscriminatorConfig {
  int base_channels = 32;
  int global_side = 256;
  int local_side = 128;
  int global_conv_layers = 6;
  int local_conv_layers = 5;
  int context_dim = 512;  // 1024 * base_channels / 64

  static DiscriminatorConfig make(int base_channels) {
    DiscriminatorConfig c;
    c.base_channels = base_channels;
    c.context_dim = std::max(1, 1024 * base_channels / 64);
    return c;
  }

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (base_channels < 1) out.push_back("discriminator.base_channels must be >= 1");
    if (global_side != 256) out.push_back("discriminator.global_side must be 256");
    if (local_side != 128) out.push_back("discriminator.local_side must be 128");
    if (global_conv_layers != 6) out.push_back("discriminator.global_conv_layers must be 6");
    if (local_conv_layers != 5) out.push_back("discriminator.local_conv_layers must be 5");
    if (context_dim < 1) out.push_back("discriminator.context_dim must be >= 1");
    return out;
  }
};

struct ModelConfig {
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;

  static ModelConfig make(Variant v, int base_channels) {
    return {GeneratorConfig::make(v, base_channels), DiscriminatorConfig::make(base_channels)};
  }

  std::vector<std::string> problems() const {
    auto out = generator.problems();
    auto d = discriminator.problems();
    out.insert(out.end(), d.begin(), d.end());
    return out;
  }

  void validate() const {
    const auto p = problems();
    if (p.empty()) return;
    std::string msg = "invalid model config:";
    for (const auto& s : p) msg += "\n  " + s;
    throw InvalidArgument(msg);
  }
};

inline void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = {{"in_channels", c.in_channels},       {"base_channels", c.base_channels},
       {"variant", to_string(c.variant)},    {"dilations", c.dilations},
       {"encoder_layers", c.encoder_layers}, {"decoder_layers", c.decoder_layers}};
}

inline void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  c = GeneratorConfig::make(parse_variant(j.value("variant", std::string("glcrc"))),
                            j.value("base_channels", 32));
  c.in_channels = j.value("in_channels", c.in_channels);
  c.dilations = j.value("dilations", c.dilations);
  c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
}

inline void to_json(nlohmann::json& j, const DiscriminatorConfig& c) {
  j = {{"base_channels", c.base_channels},
       {"global_side", c.global_side},
       {"local_side", c.local_side},
       {"global_conv_layers", c.global_conv_layers},
       {"local_conv_layers", c.local_conv_layers},
       {"context_dim", c.context_dim},
       {"fusion", "concat-linear-sigmoid"}};
}

inline void from_json(const nlohmann::json& j, DiscriminatorConfig& c) {
  c = DiscriminatorConfig::make(j.value("base_channels", 32));
  c.global_side = j.value("global_side", c.global_side);
  c.local_side = j.value("local_side", c.local_side);
  c.global_conv_layers = j.value("global_conv_layers", c.global_conv_layers);
  c.local_conv_layers = j.value("local_conv_layers", c.local_conv_layers);
  c.context_dim = j.value("context_dim", c.context_dim);
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"generator", c.generator}, {"discriminator", c.discriminator}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.generator = j.at("generator").get<GeneratorConfig>();
  c.discriminator = j.at("discriminator").get<DiscriminatorConfig>();
}

/// Stable hash of the architecture; checkpoints refuse to load into a
/// network built from a config with a different hash.
inline std::uint64_t config_hash(const ModelConfig& c) { return fnv1a64(nlohmann::json(c).dump()); }

// ---------------------------------------------------------------------------
// Networks

template <typename T>
void append_conv_block(nn::Sequential<T>& net, const std::string& name, int in, int out, int kernel, int stride,
                       int dilation = 1) {
  const int pad = dilation * (kernel - 1) / 2;
  net.add(name + ".conv", nn::Conv2d<T>(in, out, kernel, stride, dilation, pad));
  net.add(name + ".bn", nn::BatchNorm2d<T>(out));
  net.add(name + ".relu", nn::ReLU<T>());
}

/// Completion network: encoder (two 2x downsamplings), dilated stack at
/// quarter resolution, two 2x upsamplings, 1-channel sigmoid output.
template <typename T>
class Generator {
 public:
  explicit Generator(GeneratorConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    const auto problems = cfg_.problems();
    if (!problems.empty()) throw InvalidArgument("invalid generator config: " + problems.front());
    const int c = cfg_.base_channels;
    append_conv_block(net_, "enc1", cfg_.in_channels, c, 5, 1);
    append_conv_block(net_, "enc2", c, 2 * c, 3, 2);
    append_conv_block(net_, "enc3", 2 * c, 2 * c, 3, 1);
    append_conv_block(net_, "enc4", 2 * c, 4 * c, 3, 2);
    append_conv_block(net_, "enc5", 4 * c, 4 * c, 3, 1);
    append_conv_block(net_, "enc6", 4 * c, 4 * c, 3, 1);
    dilated_begin_ = net_.size();
    for (std::size_t i = 0; i < cfg_.dilations.size(); ++i) {
      append_conv_block(net_, "dil" + std::to_string(i + 1), 4 * c, 4 * c, 3, 1, cfg_.dilations[i]);
    }
    dilated_end_ = net_.size();
    net_.add("dec1.deconv", nn::ConvTranspose2d<T>(4 * c, 2 * c, 4, 2, 1));
    net_.add("dec1.bn", nn::BatchNorm2d<T>(2 * c));
    net_.add("dec1.relu", nn::ReLU<T>());
    net_.add("dec2.deconv", nn::ConvTranspose2d<T>(2 * c, c, 4, 2, 1));
    net_.add("dec2.bn", nn::BatchNorm2d<T>(c));
    net_.add("dec2.relu", nn::ReLU<T>());
    net_.add("out.conv", nn::Conv2d<T>(c, 1, 3, 1));
    net_.add("out.sigmoid", nn::Sigmoid<T>());
    net_.reset_parameters(seed, "generator.");
  }

  const GeneratorConfig& config() const { return cfg_; }
  nn::Sequential<T>& network() { return net_; }
  /// Layer index range of the dilated stack inside network().
  std::pair<std::size_t, std::size_t> dilated_range() const { return {dilated_begin_, dilated_end_}; }

  /// Stacks (masked raster, mask) into the 2-channel network input.
  static Tensor<T> make_input(const Tensor<T>& masked, const Tensor<T>& mask) {
    nn::require_same_shape(masked, mask, "generator input");
    if (masked.c() != 1) throw InvalidArgument("generator expects 1-channel rasters");
    Tensor<T> x(masked.n(), 2, masked.h(), masked.w());
    for (int n = 0; n < masked.n(); ++n) {
      std::copy_n(masked.plane(n, 0), masked.plane_size(), x.plane(n, 0));
      std::copy_n(mask.plane(n, 0), mask.plane_size(), x.plane(n, 1));
    }
    return x;
  }

  Tensor<T> forward(const Tensor<T>& input, Mode mode, Tape* tape = nullptr) {
    check_input(input);
    return net_.forward(input, mode, tape);
  }

  /// Pre-sigmoid output.
  Tensor<T> forward_logits(const Tensor<T>& input, Mode mode) {
    check_input(input);
    return net_.forward(input, mode, nullptr, 0, net_.size() - 1);
  }

  Tensor<T> backward(const Tape& tape, const Tensor<T>& grad_out, nn::BackwardOptions opts = {false, true}) {
    return net_.backward(tape, grad_out, opts);
  }

  std::vector<nn::ParamRef<T>> parameters() {
    std::vector<nn::ParamRef<T>> out;
    net_.collect("generator.", out);
    return out;
  }

 private:
  void check_input(const Tensor<T>& x) const {
    if (x.c() != cfg_.in_channels || x.h() % 4 != 0 || x.w() % 4 != 0 || x.h() < 4 || x.w() < 4) {
      throw InvalidArgument("generator input must be (N," + std::to_string(cfg_.in_channels) +
                            ",H,W) with H,W multiples of 4, got " + x.shape_string());
    }
  }

  GeneratorConfig cfg_;
  nn::Sequential<T> net_;
  std::size_t dilated_begin_ = 0, dilated_end_ = 0;
};

/// Global (whole map) and local (patch around the repair) critics whose
/// context vectors are concatenated and mapped to one logit.
template <typename T>
class Discriminator {
 public:
  struct Tapes {
    Tape local, global, fuse;
  };

  explicit Discriminator(DiscriminatorConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    const auto problems = cfg_.problems();
    if (!problems.empty()) throw InvalidArgument("invalid discriminator config: " + problems.front());
    const int c = cfg_.base_channels;
    const int local_ch[] = {c, 2 * c, 4 * c, 8 * c, 8 * c};
    int in = 1;
    for (int i = 0; i < cfg_.local_conv_layers; ++i) {
      append_conv_block(local_, "conv" + std::to_string(i + 1), in, local_ch[i], 5, 2);
      in = local_ch[i];
    }
    const int local_side = cfg_.local_side >> cfg_.local_conv_layers;
    local_.add("flatten", nn::Flatten<T>());
    local_.add("fc", nn::Linear<T>(in * local_side * local_side, cfg_.context_dim));
    local_.add("fc_relu", nn::ReLU<T>());

    const int global_ch[] = {c, 2 * c, 4 * c, 8 * c, 8 * c, 8 * c};
    in = 1;
    for (int i = 0; i < cfg_.global_conv_layers; ++i) {
      append_conv_block(global_, "conv" + std::to_string(i + 1), in, global_ch[i], 5, 2);
      in = global_ch[i];
    }
    const int global_side = cfg_.global_side >> cfg_.global_conv_layers;
    global_.add("flatten", nn::Flatten<T>());
    global_.add("fc", nn::Linear<T>(in * global_side * global_side, cfg_.context_dim));
    global_.add("fc_relu", nn::ReLU<T>());

    fuse_.add("fc", nn::Linear<T>(2 * cfg_.context_dim, 1));
    local_.reset_parameters(seed, "discriminator.local.");
    global_.reset_parameters(seed, "discriminator.global.");
    fuse_.reset_parameters(seed, "discriminator.fuse.");
  }

  const DiscriminatorConfig& config() const { return cfg_; }

  /// Returns logits, shape (N,1,1,1).
  Tensor<T> forward(const Tensor<T>& full, const Tensor<T>& patch, Mode mode, Tapes* tapes = nullptr) {
    if (full.c() != 1 || full.h() != cfg_.global_side || full.w() != cfg_.global_side) {
      throw InvalidArgument("global critic expects (N,1," + std::to_string(cfg_.global_side) + "," +
                            std::to_string(cfg_.global_side) + "), got " + full.shape_string());
    }
    if (patch.c() != 1 || patch.h() != cfg_.local_side || patch.w() != cfg_.local_side || patch.n() != full.n()) {
      throw InvalidArgument("local critic expects (N,1," + std::to_string(cfg_.local_side) + "," +
                            std::to_string(cfg_.local_side) + "), got " + patch.shape_string());
    }
    const Tensor<T> lv = local_.forward(patch, mode, tapes ? &tapes->local : nullptr);
    const Tensor<T> gv = global_.forward(full, mode, tapes ? &tapes->global : nullptr);
    const int d = cfg_.context_dim;
    Tensor<T> joint(full.n(), 2 * d, 1, 1);
    for (int n = 0; n < full.n(); ++n) {
      std::copy_n(gv.sample(n), d, joint.sample(n));
      std::copy_n(lv.sample(n), d, joint.sample(n) + d);
    }
    return fuse_.forward(joint, mode, tapes ? &tapes->fuse : nullptr);
  }

  /// Gradients w.r.t. (full, patch); empty tensors when opts.input_grad is false.
  std::pair<Tensor<T>, Tensor<T>> backward(const Tapes& tapes, const Tensor<T>& grad_logits, nn::BackwardOptions opts) {
    const Tensor<T> gj = fuse_.backward(tapes.fuse, grad_logits, {true, opts.param_grads});
    const int d = cfg_.context_dim;
    Tensor<T> gg(gj.n(), d, 1, 1), gl(gj.n(), d, 1, 1);
    for (int n = 0; n < gj.n(); ++n) {
      std::copy_n(gj.sample(n), d, gg.sample(n));
      std::copy_n(gj.sample(n) + d, d, gl.sample(n));
    }
    Tensor<T> g_full = global_.backward(tapes.global, gg, opts);
    Tensor<T> g_patch = local_.backward(tapes.local, gl, opts);
    return {std::move(g_full), std::move(g_patch)};
  }

  std::vector<nn::ParamRef<T>> parameters() {
    std::vector<nn::ParamRef<T>> out;
    local_.collect("discriminator.local.", out);
    global_.collect("discriminator.global.", out);
    fuse_.collect("discriminator.fuse.", out);
    return out;
  }

 private:
  DiscriminatorConfig cfg_;
  nn::Sequential<T> local_, global_, fuse_;
};

// ---------------------------------------------------------------------------
// Local patch geometry

/// side x side window centred on `region`, shifted minimally to stay inside
/// the raster. Always contains the region when region.size <= side.
inline MaskRegion local_window(const MaskRegion& region, int height, int width, int side = 128) {
  if (region.size > side) {
    throw InvalidArgument("region side " + std::to_string(region.size) + " exceeds local patch side " +
                          std::to_string(side));
  }
  if (height < side || width < side) throw InvalidArgument("raster smaller than local patch");
  const int top = std::clamp(region.top - (side - region.size) / 2, 0, height - side);
  const int left = std::clamp(region.left - (side - region.size) / 2, 0, width - side);
  return {top, left, side};
}

inline RoadRaster crop_local(const RoadRaster& r, const MaskRegion& region, int side = 128) {
  require_region_fits(r, region);
  return crop(r, local_window(region, r.height(), r.width(), side));
}

/// Batched window crop; windows[n] applies to sample n.
template <typename T>
Tensor<T> crop_windows(const Tensor<T>& x, const std::vector<MaskRegion>& windows) {
  const int side = windows.empty() ? 0 : windows.front().size;
  Tensor<T> out(x.n(), x.c(), side, side);
  for (int n = 0; n < x.n(); ++n) {
    const MaskRegion& w = windows[n];
    for (int c = 0; c < x.c(); ++c)
      for (int y = 0; y < side; ++y) std::copy_n(&x.at(n, c, w.top + y, w.left), side, &out.at(n, c, y, 0));
  }
  return out;
}

/// Adjoint of crop_windows: adds patch gradients back into `grad`.
template <typename T>
void uncrop_windows_add(Tensor<T>& grad, const Tensor<T>& patch_grad, const std::vector<MaskRegion>& windows) {
  for (int n = 0; n < grad.n(); ++n) {
    const MaskRegion& w = windows[n];
    for (int c = 0; c < grad.c(); ++c)
      for (int y = 0; y < w.size; ++y) {
        T* dst = &grad.at(n, c, w.top + y, w.left);
        const T* src = &patch_grad.at(n, c, y, 0);
        for (int x = 0; x < w.size; ++x) dst[x] += src[x];
      }
  }
}

// ---------------------------------------------------------------------------
// Parameter accounting (closed form, independent of instantiation)

struct ParamCount {
  std::size_t encoder = 0;
  std::size_t dilated = 0;
  std::size_t decoder = 0;
  std::size_t discriminator = 0;
  std::size_t generator() const { return encoder + dilated + decoder; }
  std::size_t total() const { return generator() + discriminator; }
};

inline ParamCount param_count(const ModelConfig& cfg) {
  auto conv = [](std::size_t in, std::size_t out, std::size_t k) { return in * out * k * k + out; };
  auto bn = [](std::size_t ch) { return 2 * ch; };
  ParamCount pc;
  const std::size_t c = cfg.generator.base_channels;
  const std::size_t enc[][3] = {{static_cast<std::size_t>(cfg.generator.in_channels), c, 5},
                                {c, 2 * c, 3},
                                {2 * c, 2 * c, 3},
                                {2 * c, 4 * c, 3},
                                {4 * c, 4 * c, 3},
                                {4 * c, 4 * c, 3}};
  for (const auto& l : enc) pc.encoder += conv(l[0], l[1], l[2]) + bn(l[1]);
  pc.dilated = cfg.generator.dilations.size() * (conv(4 * c, 4 * c, 3) + bn(4 * c));
  pc.decoder = conv(4 * c, 2 * c, 4) + bn(2 * c) + conv(2 * c, c, 4) + bn(c) + conv(c, 1, 3);

  const auto& d = cfg.discriminator;
  const std::size_t dc = d.base_channels, ctx = d.context_dim;
  const std::size_t local_ch[] = {dc, 2 * dc, 4 * dc, 8 * dc, 8 * dc};
  const std::size_t global_ch[] = {dc, 2 * dc, 4 * dc, 8 * dc, 8 * dc, 8 * dc};
  std::size_t in = 1;
  for (int i = 0; i < d.local_conv_layers; ++i) {
    pc.discriminator += conv(in, local_ch[i], 5) + bn(local_ch[i]);
    in = local_ch[i];
  }
  std::size_t side = static_cast<std::size_t>(d.local_side >> d.local_conv_layers);
  pc.discriminator += in * side * side * ctx + ctx;
  in = 1;
  for (int i = 0; i < d.global_conv_layers; ++i) {
    pc.discriminator += conv(in, global_ch[i], 5) + bn(global_ch[i]);
    in = global_ch[i];
  }
  side = static_cast<std::size_t>(d.global_side >> d.global_conv_layers);
  pc.discriminator += in * side * side * ctx + ctx;
  pc.discriminator += 2 * ctx + 1;
  return pc;
}

// ---------------------------------------------------------------------------
// Raster-level convenience

template <typename T>
Tensor<T> to_tensor(const RoadRaster& r) {
  Tensor<T> t(1, 1, r.height(), r.width());
  for (std::size_t i = 0; i < r.pixel_count(); ++i) t[i] = static_cast<T>(r.values()[i]);
  return t;
}

template <typename T>
RoadRaster to_raster(const Tensor<T>& t, int n = 0) {
  std::vector<float> v(t.plane_size());
  const T* p = t.plane(n, 0);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::clamp(static_cast<float>(p[i]), 0.0f, 1.0f);
  return RoadRaster(t.h(), t.w(), std::move(v));
}

/// Inference on one 256x256 map whose mask area is already zeroed.
template <typename T>
RoadRaster generator_forward(Generator<T>& g, const RoadRaster& input, const RoadRaster& mask) {
  if (input.height() != 256 || input.width() != 256 || mask.height() != 256 || mask.width() != 256) {
    throw InvalidArgument("generator_forward expects 256x256 input and mask");
  }
  const Tensor<T> x = Generator<T>::make_input(to_tensor<T>(input), to_tensor<T>(mask));
  return to_raster(g.forward(x, Mode::kEval));
}

/// Critic logit and probability for one (map, local patch) pair.
template <typename T>
std::pair<double, double> discriminator_forward(Discriminator<T>& d, const RoadRaster& full, const RoadRaster& patch) {
  const Tensor<T> logit = d.forward(to_tensor<T>(full), to_tensor<T>(patch), Mode::kEval);
  const double z = logit[0];
  return {z, 1.0 / (1.0 + std::exp(-z))};
}

}  // namespace roadfix
