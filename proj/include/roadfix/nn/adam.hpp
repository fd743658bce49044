#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "roadfix/nn/layers.hpp"

namespace roadfix::nn {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps = 1e-8;
};

/// Adaptive-moment optimiser with bias correction. Moments are keyed by
/// parameter name so they survive checkpoint round-trips.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

  const AdamOptions& options() const { return opts_; }
  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }

  void step(std::vector<ParamRef<T>>& params) {
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(opts_.beta1), b2 = static_cast<T>(opts_.beta2);
    const T step_size = static_cast<T>(opts_.lr / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(opts_.eps);
    for (auto& p : params) {
      if (!p.grad) continue;
      Moments& mom = moments_for(p);
      T* w = p.value->data();
      const T* g = p.grad->data();
      T* m = mom.m.data();
      T* v = mom.v.data();
      for (std::size_t i = 0; i < p.value->size(); ++i) {
        m[i] = b1 * m[i] + (T{1} - b1) * g[i];
        v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
        w[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
      }
    }
  }

  /// Moment tensors as "<param>.adam_m" / "<param>.adam_v" for serialisation.
  std::vector<ParamRef<T>> state(std::vector<ParamRef<T>>& params) {
    std::vector<ParamRef<T>> out;
    for (auto& p : params) {
      if (!p.grad) continue;
      Moments& mom = moments_for(p);
      out.push_back({p.name + ".adam_m", &mom.m, nullptr});
      out.push_back({p.name + ".adam_v", &mom.v, nullptr});
    }
    return out;
  }

 private:
  struct Moments {
    Tensor<T> m, v;
  };

  Moments& moments_for(const ParamRef<T>& p) {
    auto [it, inserted] = moments_.try_emplace(p.name);
    if (inserted) {
      it->second.m = Tensor<T>(p.value->shape());
      it->second.v = Tensor<T>(p.value->shape());
    }
    return it->second;
  }

  AdamOptions opts_;
  std::int64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace roadfix::nn
