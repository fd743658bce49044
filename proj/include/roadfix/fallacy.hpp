#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "roadfix/dataset.hpp"
#include "roadfix/errors.hpp"
#include "roadfix/hash.hpp"
#include "roadfix/raster.hpp"

namespace roadfix {

/// Synthetic segmentation failures: salt (false positives), pepper (false
/// negatives), blur (cascaded erosion) and crop (region blacked out).
enum class FallacyKind { kSalt, kPepper, kBlur, kCrop };

inline std::string to_string(FallacyKind k) {
  switch (k) {
    case FallacyKind::kSalt: return "salt";
    case FallacyKind::kPepper: return "pepper";
    case FallacyKind::kBlur: return "blur";
    case FallacyKind::kCrop: break;
  }
  return "crop";
}

inline FallacyKind parse_fallacy_kind(const std::string& s) {
  if (s == "salt") return FallacyKind::kSalt;
  if (s == "pepper") return FallacyKind::kPepper;
  if (s == "blur") return FallacyKind::kBlur;
  if (s == "crop") return FallacyKind::kCrop;
  throw InvalidArgument("unknown fallacy kind '" + s + "' (expected salt, pepper, blur or crop)");
}

struct FallacyConfig {
  FallacyKind kind = FallacyKind::kCrop;
  double n = 5.0;          // percent of region pixels (salt, pepper)
  int erosion_kernel = 3;  // blur
  int blur_passes = 1;     // blur applied this many times
  int m_min = 48;
  int m_max = 96;
  double p = 5.0;
  int max_tries = 64;
  std::uint64_t seed = 0;

  RegionSampling sampling() const { return {m_min, m_max, p, max_tries}; }

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (!(n >= 0.0 && n <= 100.0)) out.push_back("n must lie in [0,100]");
    if (erosion_kernel < 3 || erosion_kernel % 2 == 0) out.push_back("erosion_kernel must be odd and >= 3");
    if (blur_passes < 1) out.push_back("blur_passes must be >= 1");
    for (const auto& s : sampling().problems()) out.push_back(s);
    return out;
  }

  void validate() const {
    const auto pr = problems();
    if (pr.empty()) return;
    std::string msg = "invalid fallacy config:";
    for (const auto& s : pr) msg += "\n  " + s;
    throw InvalidArgument(msg);
  }

  /// One-line record of every setting, written at the top of region logs.
  std::string describe() const {
    std::ostringstream os;
    os << "kind=" << to_string(kind) << " n=" << n << " kernel=" << erosion_kernel << " blur_passes=" << blur_passes
       << " blur_center=ceil(size/2) mmin=" << m_min << " mmax=" << m_max << " p=" << p << " max_tries=" << max_tries
       << " seed=" << seed;
    return os.str();
  }
};

inline void to_json(nlohmann::json& j, const FallacyConfig& c) {
  j = {{"kind", to_string(c.kind)}, {"n", c.n},         {"erosion_kernel", c.erosion_kernel},
       {"blur_passes", c.blur_passes}, {"m_min", c.m_min}, {"m_max", c.m_max},
       {"p", c.p},                     {"max_tries", c.max_tries}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, FallacyConfig& c) {
  c = FallacyConfig{};
  if (j.contains("kind")) c.kind = parse_fallacy_kind(j.at("kind").get<std::string>());
  c.n = j.value("n", c.n);
  c.erosion_kernel = j.value("erosion_kernel", c.erosion_kernel);
  c.blur_passes = j.value("blur_passes", c.blur_passes);
  c.m_min = j.value("m_min", c.m_min);
  c.m_max = j.value("m_max", c.m_max);
  c.p = j.value("p", c.p);
  c.max_tries = j.value("max_tries", c.max_tries);
  c.seed = j.value("seed", c.seed);
}

/// round-half-up(n / 100 * size^2).
inline long long noise_count(double n, int size) {
  return static_cast<long long>(std::floor(n * static_cast<double>(size) * size / 100.0 + 0.5));
}

namespace detail {

// Region pixel offsets (into the raster) whose value equals `value`.
inline std::vector<std::size_t> region_pixels_with(const RoadRaster& r, const MaskRegion& region, float value) {
  std::vector<std::size_t> out;
  for (int y = region.top; y < region.bottom(); ++y)
    for (int x = region.left; x < region.right(); ++x)
      if (r(y, x) == value) out.push_back(static_cast<std::size_t>(y) * r.width() + x);
  return out;
}

template <typename Rng>
RoadRaster flip_sample(const RoadRaster& r, const MaskRegion& region, double n, Rng& rng, float from, float to) {
  if (!r.is_binary()) throw InvalidArgument("salt/pepper noise needs a binary raster");
  require_region_fits(r, region);
  if (!(n >= 0.0 && n <= 100.0)) throw InvalidArgument("noise percent must lie in [0,100]");
  const auto pool = region_pixels_with(r, region, from);
  const auto k = static_cast<std::size_t>(std::min<long long>(noise_count(n, region.size), pool.size()));
  std::vector<std::size_t> chosen;
  chosen.reserve(k);
  std::sample(pool.begin(), pool.end(), std::back_inserter(chosen), k, rng);
  std::vector<float> v(r.values().begin(), r.values().end());
  for (std::size_t i : chosen) v[i] = to;
  return RoadRaster(r.height(), r.width(), std::move(v));
}

}  // namespace detail

/// Turns k = round(n% * size^2) background pixels of the region white,
/// uniformly without replacement (all of them when fewer than k exist).
template <typename Rng>
RoadRaster apply_salt(const RoadRaster& r, const MaskRegion& region, double n, Rng& rng) {
  return detail::flip_sample(r, region, n, rng, 0.0f, 1.0f);
}

/// Turns k = round(n% * size^2) road pixels of the region black, uniformly
/// without replacement (all of them when fewer than k exist).
template <typename Rng>
RoadRaster apply_pepper(const RoadRaster& r, const MaskRegion& region, double n, Rng& rng) {
  return detail::flip_sample(r, region, n, rng, 1.0f, 0.0f);
}

/// Concentric square of side ceil(size/2) inside `region`.
inline MaskRegion blur_center(const MaskRegion& region) {
  const int inner = (region.size + 1) / 2;
  const int off = (region.size - inner) / 2;
  return {region.top + off, region.left + off, inner};
}

/// Erodes the region, then erodes its centre again on the result, so the
/// damage is strongest in the middle.
inline RoadRaster apply_blur(const RoadRaster& r, const MaskRegion& region, int kernel) {
  if (kernel < 3 || kernel % 2 == 0) throw InvalidArgument("blur kernel must be odd and >= 3");
  if (!r.is_binary()) throw InvalidArgument("blur noise needs a binary raster");
  require_region_fits(r, region);
  return erode(erode(r, region, kernel), blur_center(region), kernel);
}

inline RoadRaster apply_crop(const RoadRaster& r, const MaskRegion& region) {
  return paste(r, RoadRaster(region.size, region.size, 0.0f), region);
}

/// Per-tile stream so corruption is independent of processing order.
inline std::uint64_t tile_seed(std::uint64_t seed, const std::string& tile_id) { return seed ^ fnv1a64(tile_id); }

struct Corruption {
  RoadRaster raster;
  MaskRegion region;
};

/// Picks a region by rejection sampling and applies the configured noise.
inline Corruption corrupt(const RoadRaster& r, const FallacyConfig& cfg, const std::string& tile_id = "") {
  cfg.validate();
  if (!r.is_binary()) throw InvalidArgument("corrupt needs a binary raster");
  std::mt19937_64 rng(tile_seed(cfg.seed, tile_id));
  const MaskRegion region = sample_region(r, rng, cfg.sampling(), tile_id);
  switch (cfg.kind) {
    case FallacyKind::kSalt: return {apply_salt(r, region, cfg.n, rng), region};
    case FallacyKind::kPepper: return {apply_pepper(r, region, cfg.n, rng), region};
    case FallacyKind::kBlur: {
      RoadRaster out = r;
      for (int i = 0; i < cfg.blur_passes; ++i) out = apply_blur(out, region, cfg.erosion_kernel);
      return {std::move(out), region};
    }
    case FallacyKind::kCrop: break;
  }
  return {apply_crop(r, region), region};
}

// ---------------------------------------------------------------------------
// Region log: `tile_id<TAB>top<TAB>left<TAB>size<TAB>kind`

struct RegionRecord {
  std::string tile_id;
  MaskRegion region;
  FallacyKind kind = FallacyKind::kCrop;
  friend bool operator==(const RegionRecord&, const RegionRecord&) = default;
};

struct RegionLog {
  std::vector<std::string> comments;
  std::vector<RegionRecord> records;
};

inline std::string serialize(const RegionLog& log) {
  std::ostringstream os;
  for (const auto& c : log.comments) os << "# " << c << '\n';
  for (const auto& r : log.records) {
    os << r.tile_id << '\t' << r.region.top << '\t' << r.region.left << '\t' << r.region.size << '\t'
       << to_string(r.kind) << '\n';
  }
  return os.str();
}

inline RegionLog parse_region_log(const std::string& text) {
  RegionLog log;
  std::istringstream in(text);
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      log.comments.push_back(line.size() > 2 ? line.substr(2) : "");
      continue;
    }
    const auto f = detail::split_tabs(line);
    auto fail = [&](const std::string& why) {
      return FormatError("region log line " + std::to_string(lineno) + ": " + why);
    };
    if (f.size() != 5) throw fail("expected 5 tab-separated fields");
    RegionRecord rec;
    rec.tile_id = f[0];
    try {
      rec.region = {std::stoi(f[1]), std::stoi(f[2]), std::stoi(f[3])};
      rec.kind = parse_fallacy_kind(f[4]);
    } catch (const std::exception& e) {
      throw fail(e.what());
    }
    if (rec.region.size <= 0 || rec.region.top < 0 || rec.region.left < 0) throw fail("invalid region");
    log.records.push_back(std::move(rec));
  }
  return log;
}

inline RegionLog read_region_log(const std::filesystem::path& path) { return parse_region_log(detail::read_text(path)); }

}  // namespace roadfix
