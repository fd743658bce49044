#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "roadfix/hash.hpp"
#include "roadfix/raster.hpp"
#include "roadfix/road_type.hpp"

namespace roadfix {

/// Procedurally drawn line rasters for smoke tests and desk-scale runs.
namespace synthetic {

struct Point {
  double y, x;
};

class Canvas {
 public:
  explicit Canvas(int side) : side_(side), v_(static_cast<std::size_t>(side) * side, 0.0f) {}

  // Stamps a filled disc at every half-pixel step along the segment.
  void segment(Point a, Point b, double width) {
    const double len = std::hypot(b.y - a.y, b.x - a.x);
    const int steps = std::max(1, static_cast<int>(std::ceil(len * 2)));
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      disc({a.y + t * (b.y - a.y), a.x + t * (b.x - a.x)}, width / 2);
    }
  }

  void polyline(const std::vector<Point>& pts, double width) {
    for (std::size_t i = 1; i < pts.size(); ++i) segment(pts[i - 1], pts[i], width);
  }

  RoadRaster raster() const { return RoadRaster(side_, side_, v_); }

 private:
  void disc(Point c, double r) {
    const int y0 = std::max(0, static_cast<int>(std::floor(c.y - r))), y1 = std::min(side_ - 1, static_cast<int>(std::ceil(c.y + r)));
    const int x0 = std::max(0, static_cast<int>(std::floor(c.x - r))), x1 = std::min(side_ - 1, static_cast<int>(std::ceil(c.x + r)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dy = y + 0.5 - c.y, dx = x + 0.5 - c.x;
        if (dy * dy + dx * dx <= r * r) v_[static_cast<std::size_t>(y) * side_ + x] = 1.0f;
      }
  }

  int side_;
  std::vector<float> v_;
};

// Both ends of a line through `c` with direction `angle`, extended past the tile.
inline std::pair<Point, Point> through(Point c, double angle, double reach) {
  const double dy = std::sin(angle), dx = std::cos(angle);
  return {{c.y - reach * dy, c.x - reach * dx}, {c.y + reach * dy, c.x + reach * dx}};
}

/// One binary side x side tile of the given road type.
inline RoadRaster tile(RoadType type, int side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double s = side;
  const double width = 3.0 + 4.0 * unit(rng) * s / 256.0;
  const double reach = 1.5 * s;
  auto centre = [&] { return Point{s * (0.3 + 0.4 * unit(rng)), s * (0.3 + 0.4 * unit(rng))}; };
  auto angle = [&] { return std::numbers::pi * unit(rng); };
  Canvas canvas(side);
  switch (type) {
    case RoadType::kUnknown:
    case RoadType::kStraight: {
      auto [a, b] = through(centre(), angle(), reach);
      canvas.segment(a, b, width);
      break;
    }
    case RoadType::kCurvy: {
      // Sinusoid along a random axis.
      const Point c = centre();
      const double th = angle(), amp = s * (0.08 + 0.12 * unit(rng));
      const double freq = 2 * std::numbers::pi * (0.8 + 1.2 * unit(rng)) / s, phase = 2 * std::numbers::pi * unit(rng);
      std::vector<Point> pts;
      for (double t = -reach; t <= reach; t += 2.0) {
        const double off = amp * std::sin(freq * t + phase);
        pts.push_back({c.y + t * std::sin(th) + off * std::cos(th), c.x + t * std::cos(th) - off * std::sin(th)});
      }
      canvas.polyline(pts, width);
      break;
    }
    case RoadType::kTJunction: {
      const Point c = centre();
      const double th = angle();
      auto [a, b] = through(c, th, reach);
      canvas.segment(a, b, width);
      const double side_angle = th + (unit(rng) < 0.5 ? 1 : -1) * std::numbers::pi * (0.35 + 0.3 * unit(rng));
      canvas.segment(c, {c.y + reach * std::sin(side_angle), c.x + reach * std::cos(side_angle)}, width);
      break;
    }
    case RoadType::kIntersection: {
      const Point c = centre();
      const double th = angle();
      auto [a, b] = through(c, th, reach);
      canvas.segment(a, b, width);
      auto [p, q] = through(c, th + std::numbers::pi * (0.3 + 0.4 * unit(rng)), reach);
      canvas.segment(p, q, width);
      break;
    }
  }
  return canvas.raster();
}

struct Tile {
  std::string id;
  RoadType type;
  RoadRaster raster;
};

/// `count` tiles cycling straight, curvy, t_junction, intersection.
inline std::vector<Tile> corpus(int count, int side, std::uint64_t seed) {
  static constexpr RoadType kCycle[] = {RoadType::kStraight, RoadType::kCurvy, RoadType::kTJunction,
                                        RoadType::kIntersection};
  std::vector<Tile> out;
  for (int i = 0; i < count; ++i) {
    const RoadType t = kCycle[i % 4];
    char id[32];
    std::snprintf(id, sizeof id, "syn_%04d", i);
    out.push_back({id, t, tile(t, side, derive_seed(seed, "synthetic", static_cast<std::uint64_t>(i)))});
  }
  return out;
}

}  // namespace synthetic
}  // namespace roadfix
