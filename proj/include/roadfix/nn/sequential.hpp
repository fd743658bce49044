#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "roadfix/hash.hpp"
#include "roadfix/nn/layers.hpp"

namespace roadfix::nn {

/// Caches recorded by one forward pass. Several tapes may be live for the
/// same network at once (e.g. a critic run on real and on fake inputs).
struct Tape {
  std::vector<std::unique_ptr<LayerCache>> caches;
  std::size_t begin = 0;
};

template <typename T>
class Sequential {
 public:
  static constexpr std::size_t kEnd = std::numeric_limits<std::size_t>::max();

  Sequential() = default;
  Sequential(const Sequential& other) : names_(other.names_) {
    for (const auto& layer : other.layers_) layers_.push_back(layer->clone());
  }
  Sequential& operator=(const Sequential& other) {
    if (this != &other) {
      Sequential copy(other);
      *this = std::move(copy);
    }
    return *this;
  }
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L>
  L& add(std::string name, L layer) {
    auto owned = std::make_unique<L>(std::move(layer));
    L& ref = *owned;
    names_.push_back(std::move(name));
    layers_.push_back(std::move(owned));
    return ref;
  }

  std::size_t size() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }

  /// Runs layers [begin, end). A non-null tape records caches for backward().
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Tape* tape = nullptr, std::size_t begin = 0,
                    std::size_t end = kEnd) {
    end = std::min(end, layers_.size());
    if (tape) {
      tape->caches.clear();
      tape->caches.resize(end - begin);
      tape->begin = begin;
    }
    if (begin >= end) return x;
    Tensor<T> h = layers_[begin]->forward(x, mode, tape ? &tape->caches[0] : nullptr);
    for (std::size_t i = begin + 1; i < end; ++i) {
      h = layers_[i]->forward(h, mode, tape ? &tape->caches[i - begin] : nullptr);
    }
    return h;
  }

  /// Backpropagates through the layers recorded in `tape`. The input
  /// gradient is only formed when opts.input_grad is set.
  Tensor<T> backward(const Tape& tape, const Tensor<T>& grad_out, BackwardOptions opts = {}) {
    Tensor<T> g = grad_out;
    for (std::size_t k = tape.caches.size(); k-- > 0;) {
      BackwardOptions step = opts;
      step.input_grad = k > 0 || opts.input_grad;
      g = layers_[tape.begin + k]->backward(*tape.caches[k], g, step);
    }
    return g;
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->collect(prefix + names_[i], out);
  }

  void reset_parameters(std::uint64_t seed, const std::string& prefix = "") {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      layers_[i]->reset_parameters(derive_seed(seed, prefix + names_[i]));
    }
  }

 private:
  std::vector<std::string> names_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

template <typename T>
void zero_grads(std::vector<ParamRef<T>>& params) {
  for (auto& p : params)
    if (p.grad) p.grad->fill(T{0});
}

/// Number of learnable scalars (buffers excluded).
template <typename T>
std::size_t count_learnable(const std::vector<ParamRef<T>>& params) {
  std::size_t n = 0;
  for (const auto& p : params)
    if (p.grad) n += p.value->size();
  return n;
}

}  // namespace roadfix::nn
