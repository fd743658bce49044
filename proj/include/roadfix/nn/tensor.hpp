#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "roadfix/errors.hpp"

namespace roadfix::nn {

// Eigen peels vector loops to the first aligned element, so the summation
// order of a reduction depends on where its buffer starts. Aligned storage
// keeps results independent of the heap layout.
template <typename T>
struct AlignedAllocator : Eigen::aligned_allocator<T> {
  template <typename U>
  struct rebind {
    using other = AlignedAllocator<U>;
  };
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  // resize() without a value leaves elements uninitialised.
  template <typename U>
  void construct(U* p) {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense NCHW tensor. Fully-connected activations use shape (N, F, 1, 1).
template <typename T>
class Tensor {
 public:
  using Shape = std::array<int, 4>;

  Tensor() = default;
  Tensor(int n, int c, int h, int w, T fill = T{0}) : shape_{n, c, h, w} {
    for (int d : shape_) {
      if (d < 0) throw InvalidArgument("negative tensor dimension in " + shape_string());
    }
    data_.assign(static_cast<std::size_t>(n) * c * h * w, fill);
  }
  explicit Tensor(Shape shape, T fill = T{0}) : Tensor(shape[0], shape[1], shape[2], shape[3], fill) {}

  /// Contents unspecified; for outputs that are fully overwritten.
  static Tensor uninitialized(Shape shape) {
    Tensor t;
    for (int d : shape) {
      if (d < 0) throw InvalidArgument("negative tensor dimension in " + shape_string(shape));
    }
    t.shape_ = shape;
    t.data_.resize(static_cast<std::size_t>(shape[0]) * shape[1] * shape[2] * shape[3]);
    return t;
  }

  int n() const { return shape_[0]; }
  int c() const { return shape_[1]; }
  int h() const { return shape_[2]; }
  int w() const { return shape_[3]; }
  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t plane_size() const { return static_cast<std::size_t>(shape_[2]) * shape_[3]; }
  std::size_t sample_size() const { return static_cast<std::size_t>(shape_[1]) * plane_size(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T* sample(int n) { return data_.data() + n * sample_size(); }
  const T* sample(int n) const { return data_.data() + n * sample_size(); }
  T* plane(int n, int c) { return sample(n) + c * plane_size(); }
  const T* plane(int n, int c) const { return sample(n) + c * plane_size(); }

  T& at(int n, int c, int y, int x) { return data_[offset(n, c, y, x)]; }
  const T& at(int n, int c, int y, int x) const { return data_[offset(n, c, y, x)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const {
    Tensor out = *this;
    if (static_cast<std::size_t>(shape[0]) * shape[1] * shape[2] * shape[3] != data_.size()) {
      throw InvalidArgument("cannot reshape " + shape_string() + " to " + shape_string(shape));
    }
    out.shape_ = shape;
    return out;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  std::string shape_string() const { return shape_string(shape_); }
  static std::string shape_string(const Shape& s) {
    return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) + "," +
           std::to_string(s[3]) + ")";
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t offset(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
  }

  Shape shape_{0, 0, 0, 0};
  AlignedVector<T> data_;
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw InvalidArgument(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
}

/// Element-wise a += b.
template <typename T>
void add_into(Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add_into");
  T* pa = a.data();
  const T* pb = b.data();
  for (std::size_t i = 0; i < a.size(); ++i) pa[i] += pb[i];
}

/// Element-wise cast, used to move between float training and double checks.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  Tensor<To> out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<To>(t[i]);
  return out;
}

}  // namespace roadfix::nn
