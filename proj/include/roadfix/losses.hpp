#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "roadfix/errors.hpp"
#include "roadfix/hash.hpp"
#include "roadfix/nn/sequential.hpp"
#include "roadfix/raster.hpp"

namespace roadfix {

using nn::Tensor;

enum class ReconLoss { kMse, kPerceptual };
enum class AdvLoss { kBce, kRalsgan };

inline std::string to_string(ReconLoss r) { return r == ReconLoss::kMse ? "mse" : "perceptual"; }
inline std::string to_string(AdvLoss a) { return a == AdvLoss::kBce ? "bce" : "ralsgan"; }

inline ReconLoss parse_recon_loss(const std::string& s) {
  if (s == "mse") return ReconLoss::kMse;
  if (s == "perceptual") return ReconLoss::kPerceptual;
  throw InvalidArgument("unknown reconstruction loss '" + s + "' (expected mse or perceptual)");
}

inline AdvLoss parse_adv_loss(const std::string& s) {
  if (s == "bce") return AdvLoss::kBce;
  if (s == "ralsgan") return AdvLoss::kRalsgan;
  throw InvalidArgument("unknown adversarial loss '" + s + "' (expected bce or ralsgan)");
}

struct LossConfig {
  ReconLoss recon = ReconLoss::kMse;
  AdvLoss adv = AdvLoss::kBce;
  double adv_weight = 0.0004;
  std::vector<std::string> perceptual_layers = {"relu2", "relu4"};

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (!(adv_weight >= 0.0) || !std::isfinite(adv_weight)) out.push_back("loss.adv_weight must be finite and >= 0");
    if (recon == ReconLoss::kPerceptual && perceptual_layers.empty()) {
      out.push_back("loss.perceptual_layers must name at least one stage");
    }
    return out;
  }
};

inline void to_json(nlohmann::json& j, const LossConfig& c) {
  j = {{"recon", to_string(c.recon)},
       {"adv", to_string(c.adv)},
       {"adv_weight", c.adv_weight},
       {"perceptual_layers", c.perceptual_layers}};
}

inline void from_json(const nlohmann::json& j, LossConfig& c) {
  c = LossConfig{};
  if (j.contains("recon")) c.recon = parse_recon_loss(j.at("recon").get<std::string>());
  if (j.contains("adv")) c.adv = parse_adv_loss(j.at("adv").get<std::string>());
  c.adv_weight = j.value("adv_weight", c.adv_weight);
  c.perceptual_layers = j.value("perceptual_layers", c.perceptual_layers);
}

/// Scalar loss and its gradient with respect to the prediction.
template <typename T>
struct LossResult {
  double value = 0.0;
  Tensor<T> grad;
};

// ---------------------------------------------------------------------------
// Reconstruction

/// sum(mask * (pred - target)^2) / sum(mask) over the whole batch.
template <typename T>
LossResult<T> masked_mse(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& mask) {
  nn::require_same_shape(pred, target, "masked_mse");
  nn::require_same_shape(pred, mask, "masked_mse");
  double denom = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) denom += mask[i];
  if (denom <= 0.0) throw InvalidArgument("masked_mse: mask is all zero");
  LossResult<T> out{0.0, Tensor<T>(pred.shape())};
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - target[i];
    acc += mask[i] * d * d;
    out.grad[i] = static_cast<T>(2.0 * mask[i] * d / denom);
  }
  out.value = acc / denom;
  return out;
}

inline double masked_mse(const RoadRaster& pred, const RoadRaster& target, const RoadRaster& mask) {
  auto t = [](const RoadRaster& r) {
    Tensor<double> x(1, 1, r.height(), r.width());
    for (std::size_t i = 0; i < r.pixel_count(); ++i) x[i] = r.values()[i];
    return x;
  };
  return masked_mse(t(pred), t(target), t(mask)).value;
}

/// Frozen convolutional feature network. Stages are addressed by the layer
/// names of the underlying Sequential; weights never change after build.
template <typename T>
class FeatureExtractor {
 public:
  FeatureExtractor(nn::Sequential<T> net, int in_channels, std::string provenance)
      : net_(std::move(net)), in_channels_(in_channels), provenance_(std::move(provenance)) {
    for (std::size_t i = 0; i < net_.size(); ++i) index_[net_.name(i)] = i;
  }

  /// Four conv+relu stages (3->8, 8->16 s2, 16->16, 16->32 s2) with
  /// He-initialised weights from `seed`. Used when no pretrained backbone is
  /// available; random projections still separate sharp from blurred maps.
  static FeatureExtractor random(std::uint64_t seed = 0x5eed) {
    nn::Sequential<T> net;
    net.add("conv1", nn::Conv2d<T>(3, 8, 3, 1));
    net.add("relu1", nn::ReLU<T>());
    net.add("conv2", nn::Conv2d<T>(8, 16, 3, 2, 1, 1));
    net.add("relu2", nn::ReLU<T>());
    net.add("conv3", nn::Conv2d<T>(16, 16, 3, 1));
    net.add("relu3", nn::ReLU<T>());
    net.add("conv4", nn::Conv2d<T>(16, 32, 3, 2, 1, 1));
    net.add("relu4", nn::ReLU<T>());
    net.reset_parameters(seed, "perceptual.");
    return FeatureExtractor(std::move(net), 3, "fixed-seed-random:" + std::to_string(seed));
  }

  const std::string& provenance() const { return provenance_; }
  int in_channels() const { return in_channels_; }
  bool has_stage(const std::string& name) const { return index_.count(name) != 0; }

  /// Layer index + 1 of a named stage.
  std::size_t stage_end(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("unknown perceptual stage '" + name + "'");
    return it->second + 1;
  }

  /// Activations at the requested stages, ordered by depth. `record` keeps
  /// the tapes backward() needs.
  struct Pass {
    std::vector<Tensor<T>> features;
    std::vector<std::size_t> ends;  // layer index + 1 of each stage, ascending
    std::vector<nn::Tape> tapes;    // one per segment between stages
  };

  Pass run(const Tensor<T>& x, const std::vector<std::string>& stages, bool record) const {
    std::vector<std::size_t> ends;
    for (const auto& s : stages) ends.push_back(stage_end(s));
    std::sort(ends.begin(), ends.end());
    ends.erase(std::unique(ends.begin(), ends.end()), ends.end());
    Pass pass;
    pass.ends = ends;
    if (record) pass.tapes.resize(ends.size());
    Tensor<T> h = expand(x);
    std::size_t begin = 0;
    for (std::size_t k = 0; k < ends.size(); ++k) {
      h = net_.forward(h, nn::Mode::kEval, record ? &pass.tapes[k] : nullptr, begin, ends[k]);
      pass.features.push_back(h);
      begin = ends[k];
    }
    return pass;
  }

  /// grads[k] is the gradient at pass.features[k]; returns d/dx of the
  /// original 1-channel input.
  Tensor<T> backward(const Pass& pass, std::vector<Tensor<T>> grads) const {
    Tensor<T> g = std::move(grads.back());
    for (std::size_t k = pass.ends.size(); k-- > 0;) {
      if (k + 1 < pass.ends.size()) nn::add_into(g, grads[k]);
      g = net_.backward(pass.tapes[k], g, {true, false});
    }
    return collapse(g);
  }

 private:
  // 1-channel rasters are replicated to the extractor's channel count.
  Tensor<T> expand(const Tensor<T>& x) const {
    if (x.c() == in_channels_) return x;
    if (x.c() != 1) throw InvalidArgument("perceptual input must have 1 or " + std::to_string(in_channels_) + " channels");
    Tensor<T> out(x.n(), in_channels_, x.h(), x.w());
    for (int n = 0; n < x.n(); ++n)
      for (int c = 0; c < in_channels_; ++c) std::copy_n(x.plane(n, 0), x.plane_size(), out.plane(n, c));
    return out;
  }

  Tensor<T> collapse(const Tensor<T>& g) const {
    if (in_channels_ == 1) return g;
    Tensor<T> out(g.n(), 1, g.h(), g.w());
    for (int n = 0; n < g.n(); ++n)
      for (int c = 0; c < g.c(); ++c) {
        const T* src = g.plane(n, c);
        T* dst = out.plane(n, 0);
        for (std::size_t i = 0; i < g.plane_size(); ++i) dst[i] += src[i];
      }
    return out;
  }

  mutable nn::Sequential<T> net_;
  int in_channels_;
  std::string provenance_;
  std::map<std::string, std::size_t> index_;
};

/// Mean over `layers` of the per-layer mean squared feature difference.
/// The gradient is with respect to `pred` only.
template <typename T>
LossResult<T> perceptual_loss(const Tensor<T>& pred, const Tensor<T>& target, const FeatureExtractor<T>& extractor,
                              const std::vector<std::string>& layers) {
  nn::require_same_shape(pred, target, "perceptual_loss");
  if (layers.empty()) throw InvalidArgument("perceptual_loss needs at least one layer");
  const auto p = extractor.run(pred, layers, true);
  const auto t = extractor.run(target, layers, false);
  // Duplicate names count once per mention, like the mean over the list.
  std::vector<double> weight(p.ends.size(), 0.0);
  for (const auto& name : layers) {
    const auto pos = extractor.stage_end(name);
    weight[std::lower_bound(p.ends.begin(), p.ends.end(), pos) - p.ends.begin()] += 1.0 / layers.size();
  }
  LossResult<T> out;
  std::vector<Tensor<T>> grads;
  for (std::size_t k = 0; k < p.ends.size(); ++k) {
    const Tensor<T>& a = p.features[k];
    const Tensor<T>& b = t.features[k];
    const double count = static_cast<double>(a.size());
    Tensor<T> g(a.shape());
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = static_cast<double>(a[i]) - b[i];
      acc += d * d;
      g[i] = static_cast<T>(weight[k] * 2.0 * d / count);
    }
    out.value += weight[k] * acc / count;
    grads.push_back(std::move(g));
  }
  out.grad = extractor.backward(p, std::move(grads));
  return out;
}

// ---------------------------------------------------------------------------
// Adversarial terms. Values and gradients in double; batches are tiny.

struct AdversarialLoss {
  double value = 0.0;
  std::vector<double> grad_real;
  std::vector<double> grad_fake;
};

inline constexpr double kProbEps = 1e-7;

namespace detail {

inline double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline void require_nonempty(std::span<const double> v, const char* what) {
  if (v.empty()) throw InvalidArgument(std::string(what) + ": empty batch");
}

inline double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

inline double clamp_prob(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }

}  // namespace detail

/// Discriminator cross-entropy on probabilities: -mean(log r) - mean(log(1-f)).
/// Probabilities are clamped to [eps, 1-eps]; the gradient of a clamped entry is 0.
inline AdversarialLoss bce_gan_d(std::span<const double> real_prob, std::span<const double> fake_prob) {
  detail::require_nonempty(real_prob, "bce_gan_d");
  detail::require_nonempty(fake_prob, "bce_gan_d");
  AdversarialLoss out;
  const double nr = static_cast<double>(real_prob.size()), nf = static_cast<double>(fake_prob.size());
  for (double p : real_prob) {
    const double c = detail::clamp_prob(p);
    out.value -= std::log(c) / nr;
    out.grad_real.push_back(c == p ? -1.0 / (nr * p) : 0.0);
  }
  for (double p : fake_prob) {
    const double c = detail::clamp_prob(p);
    out.value -= std::log(1.0 - c) / nf;
    out.grad_fake.push_back(c == p ? 1.0 / (nf * (1.0 - p)) : 0.0);
  }
  return out;
}

/// Non-saturating generator cross-entropy: -mean(log f).
inline AdversarialLoss bce_gan_g(std::span<const double> fake_prob) {
  detail::require_nonempty(fake_prob, "bce_gan_g");
  AdversarialLoss out;
  const double nf = static_cast<double>(fake_prob.size());
  for (double p : fake_prob) {
    const double c = detail::clamp_prob(p);
    out.value -= std::log(c) / nf;
    out.grad_fake.push_back(c == p ? -1.0 / (nf * p) : 0.0);
  }
  return out;
}

/// Relativistic average least squares, critic side, on raw logits:
/// 1/2 mean (r - mean f - 1)^2 + 1/2 mean (f - mean r + 1)^2.
inline AdversarialLoss ralsgan_d(std::span<const double> real, std::span<const double> fake) {
  detail::require_nonempty(real, "ralsgan_d");
  detail::require_nonempty(fake, "ralsgan_d");
  const double mr = detail::mean(real), mf = detail::mean(fake);
  const double nr = static_cast<double>(real.size()), nf = static_cast<double>(fake.size());
  std::vector<double> a(real.size()), b(fake.size());
  double sa = 0.0, sb = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < real.size(); ++i) {
    a[i] = (real[i] - mf) - 1.0;
    sa += a[i];
    va += a[i] * a[i];
  }
  for (std::size_t j = 0; j < fake.size(); ++j) {
    b[j] = (fake[j] - mr) + 1.0;
    sb += b[j];
    vb += b[j] * b[j];
  }
  AdversarialLoss out;
  out.value = 0.5 * va / nr + 0.5 * vb / nf;
  const double ma = sa / nr, mb = sb / nf;
  for (double x : a) out.grad_real.push_back((x - mb) / nr);
  for (double x : b) out.grad_fake.push_back((x - ma) / nf);
  return out;
}

/// Generator side: the critic loss with the roles of real and fake exchanged.
inline AdversarialLoss ralsgan_g(std::span<const double> real, std::span<const double> fake) {
  AdversarialLoss swapped = ralsgan_d(fake, real);
  std::swap(swapped.grad_real, swapped.grad_fake);
  return swapped;
}

/// Critic loss of the configured kind, differentiated with respect to logits.
inline AdversarialLoss critic_loss(AdvLoss kind, std::span<const double> real_logits,
                                   std::span<const double> fake_logits) {
  if (kind == AdvLoss::kRalsgan) return ralsgan_d(real_logits, fake_logits);
  std::vector<double> pr, pf;
  for (double z : real_logits) pr.push_back(detail::sigmoid(z));
  for (double z : fake_logits) pf.push_back(detail::sigmoid(z));
  AdversarialLoss out = bce_gan_d(pr, pf);
  // d/dz of -log s(z) is -(1 - s); of -log(1 - s(z)) is s. Exact away from the clamp.
  const double nr = static_cast<double>(pr.size()), nf = static_cast<double>(pf.size());
  for (std::size_t i = 0; i < pr.size(); ++i) out.grad_real[i] = -(1.0 - pr[i]) / nr;
  for (std::size_t j = 0; j < pf.size(); ++j) out.grad_fake[j] = pf[j] / nf;
  return out;
}

/// Generator adversarial term of the configured kind, with respect to logits.
inline AdversarialLoss generator_adv_loss(AdvLoss kind, std::span<const double> real_logits,
                                          std::span<const double> fake_logits) {
  if (kind == AdvLoss::kRalsgan) return ralsgan_g(real_logits, fake_logits);
  std::vector<double> pf;
  for (double z : fake_logits) pf.push_back(detail::sigmoid(z));
  AdversarialLoss out = bce_gan_g(pf);
  const double nf = static_cast<double>(pf.size());
  for (std::size_t j = 0; j < pf.size(); ++j) out.grad_fake[j] = -(1.0 - pf[j]) / nf;
  out.grad_real.assign(real_logits.size(), 0.0);
  return out;
}

// ---------------------------------------------------------------------------
// Combined generator objective

/// What the critic says about a prediction, plus how to push logit
/// gradients back to that prediction.
template <typename T>
struct CriticOutput {
  std::vector<double> real_logits;
  std::vector<double> fake_logits;
  std::function<Tensor<T>(const std::vector<double>& grad_fake)> backward;
};

template <typename T>
using Critic = std::function<CriticOutput<T>(const Tensor<T>& pred)>;

struct ObjectiveTerms {
  double recon = 0.0;
  double adv = 0.0;
  double total = 0.0;
};

template <typename T>
struct ObjectiveResult {
  ObjectiveTerms terms;
  Tensor<T> grad;
};

/// Reconstruction term restricted to the mask. Perceptual features are taken
/// of pred inside the mask composited over the target outside it, so pixels
/// outside the mask contribute neither loss nor gradient.
template <typename T>
LossResult<T> recon_loss(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& mask, const LossConfig& cfg,
                         const FeatureExtractor<T>* extractor) {
  if (cfg.recon == ReconLoss::kMse) return masked_mse(pred, target, mask);
  if (!extractor) throw InvalidArgument("perceptual loss needs a feature extractor");
  nn::require_same_shape(pred, mask, "recon_loss");
  nn::require_same_shape(pred, target, "recon_loss");
  Tensor<T> composite(pred.shape());
  for (std::size_t i = 0; i < pred.size(); ++i) composite[i] = pred[i] * mask[i] + target[i] * (T{1} - mask[i]);
  LossResult<T> out = perceptual_loss(composite, target, *extractor, cfg.perceptual_layers);
  for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] *= mask[i];
  return out;
}

/// recon + adv_weight * generator adversarial term. With adv_weight 0 or no
/// critic the adversarial term is skipped entirely.
template <typename T>
ObjectiveResult<T> generator_objective(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& mask,
                                       const LossConfig& cfg, const FeatureExtractor<T>* extractor,
                                       const Critic<T>& critic) {
  LossResult<T> rec = recon_loss(pred, target, mask, cfg, extractor);
  ObjectiveResult<T> out;
  out.terms.recon = rec.value;
  out.grad = std::move(rec.grad);
  if (cfg.adv_weight > 0.0 && critic) {
    const CriticOutput<T> c = critic(pred);
    const AdversarialLoss adv = generator_adv_loss(cfg.adv, c.real_logits, c.fake_logits);
    out.terms.adv = adv.value;
    std::vector<double> scaled(adv.grad_fake.size());
    for (std::size_t j = 0; j < scaled.size(); ++j) scaled[j] = cfg.adv_weight * adv.grad_fake[j];
    const Tensor<T> g = c.backward(scaled);
    nn::add_into(out.grad, g);
  }
  out.terms.total = out.terms.recon + cfg.adv_weight * out.terms.adv;
  return out;
}

}  // namespace roadfix
