#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "roadfix/errors.hpp"
#include "roadfix/raster.hpp"
#include "roadfix/road_type.hpp"

namespace roadfix {

struct BufferedCounts {
  long long matched_pred = 0;
  long long total_pred = 0;
  long long matched_gt = 0;
  long long total_gt = 0;
  friend bool operator==(const BufferedCounts&, const BufferedCounts&) = default;
};

/// Pixels of each raster within Chebyshev distance rho of the other raster's
/// road pixels, via a (2 rho + 1) square dilation.
inline BufferedCounts buffered_counts(const RoadRaster& pred, const RoadRaster& gt, int rho) {
  if (pred.height() != gt.height() || pred.width() != gt.width()) {
    throw InvalidArgument("buffered_counts: shape mismatch");
  }
  if (rho < 0) throw InvalidArgument("buffer rho must be >= 0");
  if (!pred.is_binary() || !gt.is_binary()) throw InvalidArgument("buffered_counts needs binary rasters");
  const RoadRaster gt_zone = rho == 0 ? gt : dilate(gt, 2 * rho + 1);
  const RoadRaster pred_zone = rho == 0 ? pred : dilate(pred, 2 * rho + 1);
  BufferedCounts c;
  const auto p = pred.values(), g = gt.values(), pz = pred_zone.values(), gz = gt_zone.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 1.0f) {
      ++c.total_pred;
      c.matched_pred += gz[i] == 1.0f;
    }
    if (g[i] == 1.0f) {
      ++c.total_gt;
      c.matched_gt += pz[i] == 1.0f;
    }
  }
  return c;
}

/// Buffered precision. 1 when both rasters are empty, 0 when only pred is.
inline double correctness(const BufferedCounts& c) {
  if (c.total_pred == 0) return c.total_gt == 0 ? 1.0 : 0.0;
  return static_cast<double>(c.matched_pred) / static_cast<double>(c.total_pred);
}

/// Buffered recall. 1 when both rasters are empty, 0 when only gt is.
inline double completeness(const BufferedCounts& c) {
  if (c.total_gt == 0) return c.total_pred == 0 ? 1.0 : 0.0;
  return static_cast<double>(c.matched_gt) / static_cast<double>(c.total_gt);
}

/// TP / (TP + FP + FN) with buffered TP = matched_pred and FN = unmatched gt.
inline double quality(const BufferedCounts& c) {
  if (c.total_pred == 0 && c.total_gt == 0) return 1.0;
  const long long denom = c.total_pred + c.total_gt - c.matched_gt;
  return denom == 0 ? 0.0 : static_cast<double>(c.matched_pred) / static_cast<double>(denom);
}

struct Metrics {
  double correctness = 0.0;
  double completeness = 0.0;
  double quality = 0.0;
};

inline Metrics metrics_from(const BufferedCounts& c) { return {correctness(c), completeness(c), quality(c)}; }

enum class Scope { kMaskRegion, kFullTile };

inline std::string to_string(Scope s) { return s == Scope::kMaskRegion ? "mask-region" : "full-tile"; }

inline Scope parse_scope(const std::string& s) {
  if (s == "mask-region") return Scope::kMaskRegion;
  if (s == "full-tile") return Scope::kFullTile;
  throw InvalidArgument("unknown scope '" + s + "' (expected mask-region or full-tile)");
}

/// In mask-region scope both rasters are cropped to the region first, so
/// nothing outside the repair can match or be matched.
inline Metrics tile_metrics(const RoadRaster& pred, const RoadRaster& gt, const MaskRegion& region, int rho, Scope scope) {
  if (scope == Scope::kFullTile) return metrics_from(buffered_counts(pred, gt, rho));
  return metrics_from(buffered_counts(crop(pred, region), crop(gt, region), rho));
}

// ---------------------------------------------------------------------------
// Reports

struct TileMetrics {
  std::string tile_id;
  RoadType road_type = RoadType::kUnknown;
  Metrics metrics;
};

struct Aggregate {
  std::size_t tiles = 0;
  Metrics mean;
};

struct MetricsReport {
  Scope scope = Scope::kMaskRegion;
  int rho = 2;
  std::vector<TileMetrics> tiles;  // sorted by tile id
  std::vector<std::string> skipped;  // tiles without a valid region

  /// Unweighted mean over tiles of one road type.
  std::map<RoadType, Aggregate> by_type() const {
    std::map<RoadType, Aggregate> out;
    for (const auto& t : tiles) add(out[t.road_type], t.metrics);
    for (auto& [type, a] : out) finish(a);
    return out;
  }

  Aggregate overall() const {
    Aggregate a;
    for (const auto& t : tiles) add(a, t.metrics);
    finish(a);
    return a;
  }

 private:
  static void add(Aggregate& a, const Metrics& m) {
    ++a.tiles;
    a.mean.correctness += m.correctness;
    a.mean.completeness += m.completeness;
    a.mean.quality += m.quality;
  }
  static void finish(Aggregate& a) {
    if (a.tiles == 0) return;
    const double n = static_cast<double>(a.tiles);
    a.mean = {a.mean.correctness / n, a.mean.completeness / n, a.mean.quality / n};
  }
};

namespace detail {

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace detail

inline std::string report_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "tile_id,road_type,correctness,completeness,quality\n";
  for (const auto& t : r.tiles) {
    os << t.tile_id << ',' << to_string(t.road_type) << ',' << detail::fixed(t.metrics.correctness, 6) << ','
       << detail::fixed(t.metrics.completeness, 6) << ',' << detail::fixed(t.metrics.quality, 6) << '\n';
  }
  return os.str();
}

inline MetricsReport parse_report_csv(const std::string& text) {
  MetricsReport r;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      if (line != "tile_id,road_type,correctness,completeness,quality") {
        throw FormatError("report csv: unexpected header '" + line + "'");
      }
      header = false;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 5) throw FormatError("report csv line " + std::to_string(lineno) + ": expected 5 fields");
    try {
      r.tiles.push_back({f[0], parse_road_type(f[1]), {std::stod(f[2]), std::stod(f[3]), std::stod(f[4])}});
    } catch (const std::invalid_argument&) {
      throw FormatError("report csv line " + std::to_string(lineno) + ": bad number");
    }
  }
  return r;
}

/// Overall row per model (one line each), then one block per road type with
/// a line per model, in the layout of the usual comparison tables.
inline std::string comparison_table(const std::vector<std::pair<std::string, MetricsReport>>& models) {
  std::ostringstream os;
  auto row = [&](const std::string& name, const Aggregate& a) {
    os << "| " << name << " | " << detail::fixed(a.mean.correctness, 3) << " | "
       << detail::fixed(a.mean.completeness, 3) << " | " << detail::fixed(a.mean.quality, 3) << " | " << a.tiles
       << " |\n";
  };
  if (!models.empty()) {
    os << "Scope: " << to_string(models.front().second.scope) << ", buffer rho = " << models.front().second.rho
       << " px\n\n";
  }
  os << "## Overall\n\n| Model | Correctness | Completeness | Quality | Tiles |\n|---|---|---|---|---|\n";
  for (const auto& [name, rep] : models) row(name, rep.overall());
  for (RoadType type : kAllRoadTypes) {
    bool present = false;
    for (const auto& [name, rep] : models) present |= rep.by_type().count(type) > 0;
    if (!present) continue;
    os << "\n## " << to_string(type) << "\n\n| Model | Correctness | Completeness | Quality | Tiles |\n"
       << "|---|---|---|---|---|\n";
    for (const auto& [name, rep] : models) {
      const auto agg = rep.by_type();
      const auto it = agg.find(type);
      row(name, it == agg.end() ? Aggregate{} : it->second);
    }
  }
  return os.str();
}

}  // namespace roadfix
