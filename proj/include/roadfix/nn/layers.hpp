#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "roadfix/errors.hpp"
#include "roadfix/nn/im2col.hpp"
#include "roadfix/nn/tensor.hpp"

namespace roadfix::nn {

/// kTrain: batch statistics, running averages updated.
/// kFrozen: batch statistics, nothing mutated (a frozen network inside a training step).
/// kEval: running statistics.
enum class Mode { kTrain, kFrozen, kEval };

struct BackwardOptions {
  bool input_grad = true;
  bool param_grads = true;
};

/// Per-call state a layer needs for its backward pass.
struct LayerCache {
  virtual ~LayerCache() = default;
};

/// A learnable tensor (grad != nullptr) or a persistent buffer (grad == nullptr).
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  /// When `cache` is non-null it receives what backward() needs.
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode, std::unique_ptr<LayerCache>* cache) = 0;
  virtual Tensor<T> backward(const LayerCache& cache, const Tensor<T>& grad_out, BackwardOptions opts) = 0;
  virtual void collect(const std::string& /*prefix*/, std::vector<ParamRef<T>>& /*out*/) {}
  virtual void reset_parameters(std::uint64_t /*seed*/) {}
  virtual std::unique_ptr<Layer> clone() const = 0;
};

namespace detail {

template <typename T>
void he_normal(Tensor<T>& w, double fan_in, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (auto& v : w.values()) v = static_cast<T>(dist(rng));
}

template <typename T>
AlignedVector<T>& workspace(std::size_t n) {
  static thread_local AlignedVector<T> buf;
  if (buf.size() < n) buf.resize(n);
  return buf;
}

template <typename T>
struct InputCache : LayerCache {
  explicit InputCache(Tensor<T> x) : input(std::move(x)) {}
  Tensor<T> input;
};

}  // namespace detail

/// 2-D convolution with square kernel, stride, dilation and zero padding.
template <typename T>
class Conv2d final : public Layer<T> {
 public:
  /// pad < 0 selects "same" padding for stride 1: dilation * (kernel - 1) / 2.
  Conv2d(int in, int out, int kernel, int stride = 1, int dilation = 1, int pad = -1)
      : in_(in), out_(out), kernel_(kernel), stride_(stride), dilation_(dilation),
        pad_(pad >= 0 ? pad : dilation * (kernel - 1) / 2),
        weight_(out, in, kernel, kernel), bias_(out, 1, 1, 1),
        grad_weight_(out, in, kernel, kernel), grad_bias_(out, 1, 1, 1) {}

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return kernel_; }
  int stride() const { return stride_; }
  int dilation() const { return dilation_; }
  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

  ConvGeometry geometry(const Tensor<T>& x) const {
    return ConvGeometry{in_, x.h(), x.w(), kernel_, stride_, pad_, dilation_};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode, std::unique_ptr<LayerCache>* cache) override {
    if (x.c() != in_) {
      throw InvalidArgument("conv expects " + std::to_string(in_) + " channels, got " + x.shape_string());
    }
    const ConvGeometry g = geometry(x);
    const int rows = g.col_rows(), cols = g.col_cols();
    if (g.out_height() < 1 || g.out_width() < 1) throw InvalidArgument("conv input too small: " + x.shape_string());
    auto y = Tensor<T>::uninitialized({x.n(), out_, g.out_height(), g.out_width()});
    if (cache) *cache = std::make_unique<detail::InputCache<T>>(x);
    if (out_ <= kDirectMaxOut) {
      for (int n = 0; n < x.n(); ++n) conv_direct(x.sample(n), g, weight_.data(), bias_.data(), out_, y.sample(n));
      return y;
    }
    const int step = chunk_rows(g), ow = g.out_width();
    auto& col = detail::workspace<T>(static_cast<std::size_t>(rows) * step * ow);
    ConstMatrixMap<T> w(weight_.data(), out_, rows);
    for (int n = 0; n < x.n(); ++n) {
      MatrixMap<T> yn(y.sample(n), out_, cols);
      for (int oy = 0; oy < g.out_height(); oy += step) {
        const int oy1 = std::min(g.out_height(), oy + step), nc = (oy1 - oy) * ow;
        im2col(x.sample(n), g, col.data(), oy, oy1);
        yn.middleCols(oy * ow, nc).noalias() = w * ConstMatrixMap<T>(col.data(), rows, nc);
      }
      for (int o = 0; o < out_; ++o) yn.row(o).array() += bias_[o];
    }
    return y;
  }

  Tensor<T> backward(const LayerCache& cache, const Tensor<T>& gy, BackwardOptions opts) override {
    const Tensor<T>& x = static_cast<const detail::InputCache<T>&>(cache).input;
    const ConvGeometry g = geometry(x);
    const int rows = g.col_rows(), cols = g.col_cols();
    Tensor<T> gx;
    if (opts.input_grad) gx = Tensor<T>(x.shape());
    if (out_ <= kDirectMaxOut) {
      for (int n = 0; n < x.n(); ++n) {
        conv_direct_backward(x.sample(n), g, weight_.data(), out_, gy.sample(n),
                             opts.param_grads ? grad_weight_.data() : nullptr,
                             opts.param_grads ? grad_bias_.data() : nullptr,
                             opts.input_grad ? gx.sample(n) : nullptr);
      }
      return gx;
    }
    const int step = chunk_rows(g), ow = g.out_width();
    auto& col = detail::workspace<T>(static_cast<std::size_t>(rows) * step * ow);
    ConstTransposedMap<T> wt(weight_.data(), rows, out_);
    MatrixMap<T> gw(grad_weight_.data(), out_, rows);
    for (int n = 0; n < x.n(); ++n) {
      ConstMatrixMap<T> gyn(gy.sample(n), out_, cols);
      if (opts.param_grads) {
        for (int o = 0; o < out_; ++o) grad_bias_[o] += gyn.row(o).sum();
      }
      for (int oy = 0; oy < g.out_height(); oy += step) {
        const int oy1 = std::min(g.out_height(), oy + step), nc = (oy1 - oy) * ow;
        const auto gblock = gyn.middleCols(oy * ow, nc);
        if (opts.param_grads) {
          im2col(x.sample(n), g, col.data(), oy, oy1);
          gw.noalias() += gblock * ConstMatrixMap<T>(col.data(), rows, nc).transpose();
        }
        if (opts.input_grad) {
          MatrixMap<T>(col.data(), rows, nc).noalias() = wt * gblock;
          col2im(col.data(), g, gx.sample(n), oy, oy1);
        }
      }
    }
    return gx;
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override {
    out.push_back({prefix + ".weight", &weight_, &grad_weight_});
    out.push_back({prefix + ".bias", &bias_, &grad_bias_});
  }

  void reset_parameters(std::uint64_t seed) override {
    detail::he_normal(weight_, static_cast<double>(in_) * kernel_ * kernel_, seed);
    bias_.fill(T{0});
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2d>(*this); }

 private:
  static constexpr int kDirectMaxOut = 4;
  int in_, out_, kernel_, stride_, dilation_, pad_;
  Tensor<T> weight_, bias_, grad_weight_, grad_bias_;
};

/// Transposed convolution (fractionally strided). Weight layout (in, out, k, k).
template <typename T>
class ConvTranspose2d final : public Layer<T> {
 public:
  ConvTranspose2d(int in, int out, int kernel = 4, int stride = 2, int pad = 1)
      : in_(in), out_(out), kernel_(kernel), stride_(stride), pad_(pad),
        weight_(in, out, kernel, kernel), bias_(out, 1, 1, 1),
        grad_weight_(in, out, kernel, kernel), grad_bias_(out, 1, 1, 1) {}

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

  // Geometry of the forward convolution this layer is the adjoint of:
  // it maps the (larger) output image onto the input grid.
  ConvGeometry geometry(int in_h, int in_w) const {
    const int oh = (in_h - 1) * stride_ - 2 * pad_ + kernel_;
    const int ow = (in_w - 1) * stride_ - 2 * pad_ + kernel_;
    return ConvGeometry{out_, oh, ow, kernel_, stride_, pad_, 1};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode, std::unique_ptr<LayerCache>* cache) override {
    if (x.c() != in_) {
      throw InvalidArgument("deconv expects " + std::to_string(in_) + " channels, got " + x.shape_string());
    }
    const ConvGeometry g = geometry(x.h(), x.w());
    const int rows = g.col_rows(), pin = x.h() * x.w();
    Tensor<T> y(x.n(), out_, g.height, g.width);
    const int step = chunk_rows(g), iw = x.w();
    auto& col = detail::workspace<T>(static_cast<std::size_t>(rows) * step * iw);
    ConstTransposedMap<T> wt(weight_.data(), rows, in_);
    for (int n = 0; n < x.n(); ++n) {
      ConstMatrixMap<T> xn(x.sample(n), in_, pin);
      for (int iy = 0; iy < x.h(); iy += step) {
        const int iy1 = std::min(x.h(), iy + step), nc = (iy1 - iy) * iw;
        MatrixMap<T>(col.data(), rows, nc).noalias() = wt * xn.middleCols(iy * iw, nc);
        col2im(col.data(), g, y.sample(n), iy, iy1);
      }
      for (int o = 0; o < out_; ++o) {
        T* p = y.plane(n, o);
        for (std::size_t i = 0; i < y.plane_size(); ++i) p[i] += bias_[o];
      }
    }
    if (cache) *cache = std::make_unique<detail::InputCache<T>>(x);
    return y;
  }

  Tensor<T> backward(const LayerCache& cache, const Tensor<T>& gy, BackwardOptions opts) override {
    const Tensor<T>& x = static_cast<const detail::InputCache<T>&>(cache).input;
    const ConvGeometry g = geometry(x.h(), x.w());
    const int rows = g.col_rows(), pin = x.h() * x.w();
    Tensor<T> gx;
    if (opts.input_grad) gx = Tensor<T>(x.shape());
    const int step = chunk_rows(g), iw = x.w();
    auto& col = detail::workspace<T>(static_cast<std::size_t>(rows) * step * iw);
    ConstMatrixMap<T> w(weight_.data(), in_, rows);
    MatrixMap<T> gw(grad_weight_.data(), in_, rows);
    for (int n = 0; n < x.n(); ++n) {
      if (opts.param_grads) {
        for (int o = 0; o < out_; ++o) {
          const T* p = gy.plane(n, o);
          T acc{0};
          for (std::size_t i = 0; i < gy.plane_size(); ++i) acc += p[i];
          grad_bias_[o] += acc;
        }
      }
      ConstMatrixMap<T> xn(x.sample(n), in_, pin);
      for (int iy = 0; iy < x.h(); iy += step) {
        const int iy1 = std::min(x.h(), iy + step), nc = (iy1 - iy) * iw;
        im2col(gy.sample(n), g, col.data(), iy, iy1);
        ConstMatrixMap<T> c(col.data(), rows, nc);
        if (opts.param_grads) gw.noalias() += xn.middleCols(iy * iw, nc) * c.transpose();
        if (opts.input_grad) {
          MatrixMap<T>(gx.sample(n), in_, pin).middleCols(iy * iw, nc).noalias() = w * c;
        }
      }
    }
    return gx;
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override {
    out.push_back({prefix + ".weight", &weight_, &grad_weight_});
    out.push_back({prefix + ".bias", &bias_, &grad_bias_});
  }

  void reset_parameters(std::uint64_t seed) override {
    // Each output pixel receives (kernel/stride)^2 taps per input channel.
    const double taps = static_cast<double>(kernel_) * kernel_ / (stride_ * stride_);
    detail::he_normal(weight_, in_ * taps, seed);
    bias_.fill(T{0});
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ConvTranspose2d>(*this); }

 private:
  int in_, out_, kernel_, stride_, pad_;
  Tensor<T> weight_, bias_, grad_weight_, grad_bias_;
};

/// Per-channel batch normalisation with learnable scale/shift.
template <typename T>
class BatchNorm2d final : public Layer<T> {
 public:
  explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5)
      : channels_(channels), momentum_(momentum), eps_(eps),
        gamma_(channels, 1, 1, 1, T{1}), beta_(channels, 1, 1, 1), running_mean_(channels, 1, 1, 1),
        running_var_(channels, 1, 1, 1, T{1}), grad_gamma_(channels, 1, 1, 1), grad_beta_(channels, 1, 1, 1) {}

  Tensor<T>& gamma() { return gamma_; }
  Tensor<T>& beta() { return beta_; }
  Tensor<T>& running_mean() { return running_mean_; }
  Tensor<T>& running_var() { return running_var_; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, std::unique_ptr<LayerCache>* cache) override {
    if (x.c() != channels_) throw InvalidArgument("batchnorm channel mismatch: " + x.shape_string());
    auto state = std::make_unique<Cache>();
    state->batch_stats = mode != Mode::kEval;
    state->inv_std.resize(channels_);
    state->normalized = Tensor<T>::uninitialized(x.shape());
    auto y = Tensor<T>::uninitialized(x.shape());
    const Eigen::Index plane = static_cast<Eigen::Index>(x.plane_size());
    const double count = static_cast<double>(x.n()) * plane;
    for (int c = 0; c < channels_; ++c) {
      double mean, var;
      if (state->batch_stats) {
        double s = 0.0, s2 = 0.0;
        for (int n = 0; n < x.n(); ++n) s += ConstArrayMap(x.plane(n, c), plane).sum();
        mean = s / count;
        for (int n = 0; n < x.n(); ++n) {
          s2 += (ConstArrayMap(x.plane(n, c), plane) - static_cast<T>(mean)).square().sum();
        }
        var = s2 / count;
        if (mode == Mode::kTrain) {
          const double unbiased = count > 1 ? s2 / (count - 1) : var;
          running_mean_[c] = static_cast<T>((1 - momentum_) * running_mean_[c] + momentum_ * mean);
          running_var_[c] = static_cast<T>((1 - momentum_) * running_var_[c] + momentum_ * unbiased);
        }
      } else {
        mean = running_mean_[c];
        var = running_var_[c];
      }
      const T istd = static_cast<T>(1.0 / std::sqrt(var + eps_));
      const T m = static_cast<T>(mean);
      state->inv_std[c] = istd;
      for (int n = 0; n < x.n(); ++n) {
        ArrayMap xh(state->normalized.plane(n, c), plane);
        xh = (ConstArrayMap(x.plane(n, c), plane) - m) * istd;
        ArrayMap(y.plane(n, c), plane) = xh * gamma_[c] + beta_[c];
      }
    }
    if (cache) *cache = std::move(state);
    return y;
  }

  Tensor<T> backward(const LayerCache& cache, const Tensor<T>& gy, BackwardOptions opts) override {
    const auto& st = static_cast<const Cache&>(cache);
    const Tensor<T>& xh = st.normalized;
    Tensor<T> gx;
    if (opts.input_grad) gx = Tensor<T>::uninitialized(gy.shape());
    const Eigen::Index plane = static_cast<Eigen::Index>(gy.plane_size());
    const double count = static_cast<double>(gy.n()) * plane;
    for (int c = 0; c < channels_; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (int n = 0; n < gy.n(); ++n) {
        ConstArrayMap g(gy.plane(n, c), plane);
        sum_g += g.sum();
        sum_gx += (g * ConstArrayMap(xh.plane(n, c), plane)).sum();
      }
      if (opts.param_grads) {
        grad_gamma_[c] += static_cast<T>(sum_gx);
        grad_beta_[c] += static_cast<T>(sum_g);
      }
      if (!opts.input_grad) continue;
      const T scale = gamma_[c] * st.inv_std[c];
      for (int n = 0; n < gy.n(); ++n) {
        ConstArrayMap g(gy.plane(n, c), plane);
        ArrayMap out(gx.plane(n, c), plane);
        if (st.batch_stats) {
          const T mg = static_cast<T>(sum_g / count), mgx = static_cast<T>(sum_gx / count);
          out = scale * (g - mg - ConstArrayMap(xh.plane(n, c), plane) * mgx);
        } else {
          out = scale * g;
        }
      }
    }
    return gx;
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override {
    out.push_back({prefix + ".gamma", &gamma_, &grad_gamma_});
    out.push_back({prefix + ".beta", &beta_, &grad_beta_});
    out.push_back({prefix + ".running_mean", &running_mean_, nullptr});
    out.push_back({prefix + ".running_var", &running_var_, nullptr});
  }

  void reset_parameters(std::uint64_t) override {
    gamma_.fill(T{1});
    beta_.fill(T{0});
    running_mean_.fill(T{0});
    running_var_.fill(T{1});
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNorm2d>(*this); }

 private:
  using ArrayMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
  using ConstArrayMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

  struct Cache : LayerCache {
    bool batch_stats = true;
    Tensor<T> normalized;
    std::vector<T> inv_std;
  };

  int channels_;
  double momentum_, eps_;
  Tensor<T> gamma_, beta_, running_mean_, running_var_, grad_gamma_, grad_beta_;
};

template <typename T>
class ReLU final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode, std::unique_ptr<LayerCache>* cache) override {
    auto y = Tensor<T>::uninitialized(x.shape());
    const T* in = x.data();
    T* out = y.data();
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::max(in[i], T{0});
    if (cache) {
      auto st = std::make_unique<Cache>();
      st->active.resize(x.size());
      std::uint8_t* a = st->active.data();
      for (std::size_t i = 0; i < x.size(); ++i) a[i] = in[i] > T{0};
      *cache = std::move(st);
    }
    return y;
  }

  Tensor<T> backward(const LayerCache& cache, const Tensor<T>& gy, BackwardOptions) override {
    const std::uint8_t* a = static_cast<const Cache&>(cache).active.data();
    auto gx = Tensor<T>::uninitialized(gy.shape());
    const T* g = gy.data();
    T* out = gx.data();
    for (std::size_t i = 0; i < gx.size(); ++i) out[i] = a[i] ? g[i] : T{0};
    return gx;
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ReLU>(*this); }

 private:
  struct Cache : LayerCache {
    AlignedVector<std::uint8_t> active;
  };
};

template <typename T>
class Sigmoid final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode, std::unique_ptr<LayerCache>* cache) override {
    Tensor<T> y = x;
    for (auto& v : y.values()) v = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
    if (cache) *cache = std::make_unique<detail::InputCache<T>>(y);
    return y;
  }

  Tensor<T> backward(const LayerCache& cache, const Tensor<T>& gy, BackwardOptions) override {
    const Tensor<T>& y = static_cast<const detail::InputCache<T>&>(cache).input;
    Tensor<T> gx = gy;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= y[i] * (T{1} - y[i]);
    return gx;
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Sigmoid>(*this); }
};

/// (N, C, H, W) -> (N, C*H*W, 1, 1).
template <typename T>
class Flatten final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode, std::unique_ptr<LayerCache>* cache) override {
    if (cache) {
      auto st = std::make_unique<Cache>();
      st->shape = x.shape();
      *cache = std::move(st);
    }
    return x.reshaped({x.n(), static_cast<int>(x.sample_size()), 1, 1});
  }

  Tensor<T> backward(const LayerCache& cache, const Tensor<T>& gy, BackwardOptions) override {
    return gy.reshaped(static_cast<const Cache&>(cache).shape);
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Flatten>(*this); }

 private:
  struct Cache : LayerCache {
    typename Tensor<T>::Shape shape{};
  };
};

/// Fully connected layer on (N, in, 1, 1) activations. Weight layout (out, in).
template <typename T>
class Linear final : public Layer<T> {
 public:
  Linear(int in, int out)
      : in_(in), out_(out), weight_(out, in, 1, 1), bias_(out, 1, 1, 1), grad_weight_(out, in, 1, 1),
        grad_bias_(out, 1, 1, 1) {}

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

  Tensor<T> forward(const Tensor<T>& x, Mode, std::unique_ptr<LayerCache>* cache) override {
    if (x.sample_size() != static_cast<std::size_t>(in_)) {
      throw InvalidArgument("linear expects " + std::to_string(in_) + " features, got " + x.shape_string());
    }
    Tensor<T> y(x.n(), out_, 1, 1);
    MatrixMap<T> ym(y.data(), x.n(), out_);
    ym.noalias() = ConstMatrixMap<T>(x.data(), x.n(), in_) * ConstMatrixMap<T>(weight_.data(), out_, in_).transpose();
    for (int n = 0; n < x.n(); ++n)
      for (int o = 0; o < out_; ++o) ym(n, o) += bias_[o];
    if (cache) *cache = std::make_unique<detail::InputCache<T>>(x);
    return y;
  }

  Tensor<T> backward(const LayerCache& cache, const Tensor<T>& gy, BackwardOptions opts) override {
    const Tensor<T>& x = static_cast<const detail::InputCache<T>&>(cache).input;
    ConstMatrixMap<T> g(gy.data(), x.n(), out_);
    ConstMatrixMap<T> xm(x.data(), x.n(), in_);
    if (opts.param_grads) {
      MatrixMap<T>(grad_weight_.data(), out_, in_).noalias() += g.transpose() * xm;
      for (int n = 0; n < x.n(); ++n)
        for (int o = 0; o < out_; ++o) grad_bias_[o] += g(n, o);
    }
    Tensor<T> gx;
    if (opts.input_grad) {
      gx = Tensor<T>(x.shape());
      MatrixMap<T>(gx.data(), x.n(), in_).noalias() = g * ConstMatrixMap<T>(weight_.data(), out_, in_);
    }
    return gx;
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) override {
    out.push_back({prefix + ".weight", &weight_, &grad_weight_});
    out.push_back({prefix + ".bias", &bias_, &grad_bias_});
  }

  void reset_parameters(std::uint64_t seed) override {
    detail::he_normal(weight_, static_cast<double>(in_), seed);
    bias_.fill(T{0});
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Linear>(*this); }

 private:
  int in_, out_;
  Tensor<T> weight_, bias_, grad_weight_, grad_bias_;
};

}  // namespace roadfix::nn
