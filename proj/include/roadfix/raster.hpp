#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "roadfix/errors.hpp"

namespace roadfix {

/// Axis-aligned square region of a raster, in pixel coordinates.
struct MaskRegion {
  int top = 0;
  int left = 0;
  int size = 0;

  int bottom() const { return top + size; }
  int right() const { return left + size; }
  bool fits(int height, int width) const {
    return size > 0 && top >= 0 && left >= 0 && bottom() <= height && right() <= width;
  }
  bool contains(int y, int x) const { return y >= top && y < bottom() && x >= left && x < right(); }
  friend bool operator==(const MaskRegion&, const MaskRegion&) = default;
};

inline std::string to_string(const MaskRegion& r) {
  return "(top=" + std::to_string(r.top) + ", left=" + std::to_string(r.left) +
         ", size=" + std::to_string(r.size) + ")";
}

/// Single-channel road-presence raster with values in [0,1] (1 = road).
class RoadRaster {
 public:
  RoadRaster() = default;

  RoadRaster(int height, int width, float fill = 0.0f) : height_(height), width_(width) {
    check_dims(height, width);
    check_value(fill);
    values_.assign(static_cast<std::size_t>(height) * width, fill);
  }

  RoadRaster(int height, int width, std::vector<float> values)
      : height_(height), width_(width), values_(std::move(values)) {
    check_dims(height, width);
    if (values_.size() != static_cast<std::size_t>(height) * width) {
      throw InvalidArgument("raster value count " + std::to_string(values_.size()) +
                            " does not match " + std::to_string(height) + "x" +
                            std::to_string(width));
    }
    for (float v : values_) check_value(v);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t pixel_count() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  float operator()(int y, int x) const { return values_[index(y, x)]; }
  void set(int y, int x, float v) {
    check_value(v);
    values_[index(y, x)] = v;
  }

  std::span<const float> values() const { return values_; }

  bool is_binary() const {
    return std::all_of(values_.begin(), values_.end(), [](float v) { return v == 0.0f || v == 1.0f; });
  }

  double sum() const {
    double s = 0.0;
    for (float v : values_) s += v;
    return s;
  }

  friend bool operator==(const RoadRaster&, const RoadRaster&) = default;

 private:
  static void check_dims(int height, int width) {
    if (height < 1 || width < 1) {
      throw InvalidArgument("raster dimensions must be positive, got " + std::to_string(height) +
                            "x" + std::to_string(width));
    }
  }
  static void check_value(float v) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw InvalidArgument("raster value " + std::to_string(v) + " outside [0,1]");
    }
  }
  std::size_t index(int y, int x) const { return static_cast<std::size_t>(y) * width_ + x; }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> values_;
};

inline void require_region_fits(const RoadRaster& r, const MaskRegion& region) {
  if (!region.fits(r.height(), r.width())) {
    throw InvalidArgument("region " + to_string(region) + " does not fit in " +
                          std::to_string(r.height()) + "x" + std::to_string(r.width()) + " raster");
  }
}

/// value <- 1 if value >= threshold else 0.
inline RoadRaster binarize(const RoadRaster& r, float threshold = 0.5f) {
  if (!(threshold > 0.0f && threshold <= 1.0f)) {
    throw InvalidArgument("binarize threshold must lie in (0,1], got " + std::to_string(threshold));
  }
  std::vector<float> out(r.values().begin(), r.values().end());
  for (float& v : out) v = v >= threshold ? 1.0f : 0.0f;
  return RoadRaster(r.height(), r.width(), std::move(out));
}

inline RoadRaster crop(const RoadRaster& r, const MaskRegion& region) {
  require_region_fits(r, region);
  std::vector<float> out;
  out.reserve(static_cast<std::size_t>(region.size) * region.size);
  for (int y = region.top; y < region.bottom(); ++y) {
    const auto row = r.values().subspan(static_cast<std::size_t>(y) * r.width() + region.left,
                                        static_cast<std::size_t>(region.size));
    out.insert(out.end(), row.begin(), row.end());
  }
  return RoadRaster(region.size, region.size, std::move(out));
}

/// `base` outside `region`, `patch` inside it.
inline RoadRaster paste(const RoadRaster& base, const RoadRaster& patch, const MaskRegion& region) {
  require_region_fits(base, region);
  if (patch.height() != region.size || patch.width() != region.size) {
    throw InvalidArgument("patch is " + std::to_string(patch.height()) + "x" +
                          std::to_string(patch.width()) + " but region side is " +
                          std::to_string(region.size));
  }
  std::vector<float> out(base.values().begin(), base.values().end());
  for (int y = 0; y < region.size; ++y) {
    const auto src = patch.values().subspan(static_cast<std::size_t>(y) * region.size,
                                            static_cast<std::size_t>(region.size));
    std::copy(src.begin(), src.end(),
              out.begin() + static_cast<std::ptrdiff_t>((region.top + y) * base.width() + region.left));
  }
  return RoadRaster(base.height(), base.width(), std::move(out));
}

/// 1 inside `region`, 0 elsewhere.
inline RoadRaster region_indicator(int height, int width, const MaskRegion& region) {
  RoadRaster mask(height, width, 0.0f);
  require_region_fits(mask, region);
  std::vector<float> v(mask.values().begin(), mask.values().end());
  for (int y = region.top; y < region.bottom(); ++y)
    std::fill_n(v.begin() + static_cast<std::ptrdiff_t>(y * width + region.left), region.size, 1.0f);
  return RoadRaster(height, width, std::move(v));
}

/// Number of pixels with value >= 0.5 inside `region` (the whole raster when omitted).
inline long long count_road(const RoadRaster& r, std::optional<MaskRegion> region = std::nullopt) {
  const MaskRegion box = region.value_or(MaskRegion{0, 0, 0});
  const int y0 = region ? box.top : 0, y1 = region ? box.bottom() : r.height();
  const int x0 = region ? box.left : 0, x1 = region ? box.right() : r.width();
  if (region) require_region_fits(r, box);
  long long n = 0;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) n += r(y, x) >= 0.5f;
  return n;
}

/// Splits into a row-major 3x3 grid of equal tiles.
inline std::vector<RoadRaster> tile3x3(const RoadRaster& r) {
  if (r.height() % 3 != 0 || r.width() % 3 != 0) {
    throw InvalidArgument("tile3x3 needs dimensions divisible by 3, got " +
                          std::to_string(r.height()) + "x" + std::to_string(r.width()));
  }
  const int th = r.height() / 3, tw = r.width() / 3;
  std::vector<RoadRaster> tiles;
  tiles.reserve(9);
  for (int ty = 0; ty < 3; ++ty) {
    for (int tx = 0; tx < 3; ++tx) {
      std::vector<float> v;
      v.reserve(static_cast<std::size_t>(th) * tw);
      for (int y = 0; y < th; ++y) {
        const auto row = r.values().subspan(static_cast<std::size_t>(ty * th + y) * r.width() + tx * tw,
                                            static_cast<std::size_t>(tw));
        v.insert(v.end(), row.begin(), row.end());
      }
      tiles.emplace_back(th, tw, std::move(v));
    }
  }
  return tiles;
}

/// Inverse of tile3x3.
inline RoadRaster untile3x3(std::span<const RoadRaster> tiles) {
  if (tiles.size() != 9) throw InvalidArgument("untile3x3 needs exactly 9 tiles");
  const int th = tiles[0].height(), tw = tiles[0].width();
  for (const auto& t : tiles) {
    if (t.height() != th || t.width() != tw) throw InvalidArgument("untile3x3 tiles differ in size");
  }
  std::vector<float> v(static_cast<std::size_t>(9) * th * tw);
  for (int k = 0; k < 9; ++k) {
    const int ty = k / 3, tx = k % 3;
    for (int y = 0; y < th; ++y) {
      const auto row = tiles[k].values().subspan(static_cast<std::size_t>(y) * tw, static_cast<std::size_t>(tw));
      std::copy(row.begin(), row.end(),
                v.begin() + static_cast<std::ptrdiff_t>((ty * th + y) * 3 * tw + tx * tw));
    }
  }
  return RoadRaster(3 * th, 3 * tw, std::move(v));
}

namespace detail {

struct AreaWeight {
  int src;
  double weight;
};

// For each output cell along one axis, the source cells it overlaps and the
// fraction of the output footprint each one covers (weights sum to 1).
inline std::vector<std::vector<AreaWeight>> area_weights(int src_len, int dst_len) {
  std::vector<std::vector<AreaWeight>> table(static_cast<std::size_t>(dst_len));
  const double scale = static_cast<double>(src_len) / dst_len;
  for (int o = 0; o < dst_len; ++o) {
    const double lo = o * scale, hi = (o + 1) * scale;
    const int first = static_cast<int>(std::floor(lo));
    const int last = std::min(src_len - 1, static_cast<int>(std::ceil(hi)) - 1);
    for (int s = first; s <= last; ++s) {
      const double overlap = std::min<double>(hi, s + 1) - std::max<double>(lo, s);
      if (overlap > 0) table[o].push_back({s, overlap / scale});
    }
  }
  return table;
}

}  // namespace detail

/// Area-averaging resample: each output pixel is the mean of its source footprint.
inline RoadRaster resize(const RoadRaster& r, int out_height, int out_width) {
  if (out_height < 1 || out_width < 1) throw InvalidArgument("resize target must be >= 1");
  const auto wy = detail::area_weights(r.height(), out_height);
  const auto wx = detail::area_weights(r.width(), out_width);
  // Separable: columns first into a (src_h x out_w) buffer, then rows.
  std::vector<double> tmp(static_cast<std::size_t>(r.height()) * out_width, 0.0);
  for (int y = 0; y < r.height(); ++y)
    for (int ox = 0; ox < out_width; ++ox) {
      double acc = 0.0;
      for (const auto& w : wx[ox]) acc += w.weight * r(y, w.src);
      tmp[static_cast<std::size_t>(y) * out_width + ox] = acc;
    }
  std::vector<float> out(static_cast<std::size_t>(out_height) * out_width);
  for (int oy = 0; oy < out_height; ++oy)
    for (int ox = 0; ox < out_width; ++ox) {
      double acc = 0.0;
      for (const auto& w : wy[oy]) acc += w.weight * tmp[static_cast<std::size_t>(w.src) * out_width + ox];
      out[static_cast<std::size_t>(oy) * out_width + ox] = static_cast<float>(std::clamp(acc, 0.0, 1.0));
    }
  return RoadRaster(out_height, out_width, std::move(out));
}

inline RoadRaster resize(const RoadRaster& r, int target) { return resize(r, target, target); }

namespace detail {

struct Rect {
  int y0, y1, x0, x1;
};

// Square min/max filter with zero padding outside the raster, evaluated over
// `win` and written back only there.
template <bool kMin>
RoadRaster rank_filter(const RoadRaster& r, const Rect& win, int kernel) {
  const int half = kernel / 2;
  const int h = r.height(), w = r.width();
  const int ww = win.x1 - win.x0;
  auto pick = [](float a, float b) { return kMin ? std::min(a, b) : std::max(a, b); };
  // Horizontal pass over the window rows grown by `half`, clipped to the raster.
  const int ry0 = std::max(0, win.y0 - half), ry1 = std::min(h, win.y1 + half);
  std::vector<float> horiz(static_cast<std::size_t>(ry1 - ry0) * ww);
  for (int y = ry0; y < ry1; ++y) {
    for (int x = win.x0; x < win.x1; ++x) {
      float acc = kMin ? 1.0f : 0.0f;
      for (int xx = x - half; xx <= x + half; ++xx) acc = pick(acc, (xx < 0 || xx >= w) ? 0.0f : r(y, xx));
      horiz[static_cast<std::size_t>(y - ry0) * ww + (x - win.x0)] = acc;
    }
  }
  std::vector<float> out(r.values().begin(), r.values().end());
  for (int y = win.y0; y < win.y1; ++y) {
    for (int x = win.x0; x < win.x1; ++x) {
      float acc = kMin ? 1.0f : 0.0f;
      for (int yy = y - half; yy <= y + half; ++yy) {
        acc = pick(acc, (yy < 0 || yy >= h) ? 0.0f : horiz[static_cast<std::size_t>(yy - ry0) * ww + (x - win.x0)]);
      }
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  return RoadRaster(h, w, std::move(out));
}

inline void check_kernel(int kernel) {
  if (kernel < 1 || kernel % 2 == 0) {
    throw InvalidArgument("morphology kernel must be odd and >= 1, got " + std::to_string(kernel));
  }
}

}  // namespace detail

/// Binary erosion with a kernel x kernel square inside `region` (whole raster
/// when omitted). Neighbourhoods may read outside the region; pixels beyond
/// the raster count as 0.
inline RoadRaster erode(const RoadRaster& r, std::optional<MaskRegion> region, int kernel) {
  detail::check_kernel(kernel);
  if (!region) return detail::rank_filter<true>(r, {0, r.height(), 0, r.width()}, kernel);
  require_region_fits(r, *region);
  return detail::rank_filter<true>(r, {region->top, region->bottom(), region->left, region->right()}, kernel);
}

/// Binary dilation with a kernel x kernel square over the whole raster.
inline RoadRaster dilate(const RoadRaster& r, int kernel) {
  detail::check_kernel(kernel);
  return detail::rank_filter<false>(r, {0, r.height(), 0, r.width()}, kernel);
}

}  // namespace roadfix
