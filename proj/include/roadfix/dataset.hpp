#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "roadfix/errors.hpp"
#include "roadfix/hash.hpp"
#include "roadfix/png_codec.hpp"
#include "roadfix/raster.hpp"
#include "roadfix/road_type.hpp"

namespace roadfix {

namespace fs = std::filesystem;

enum class Split { kTrain, kTest };

inline std::string to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  throw FormatError("unknown split '" + std::string(s) + "' (expected train or test)");
}

/// Side of the square tiles the networks consume.
inline constexpr int kTileSide = 256;

/// Default test share: 567 of the 9972 + 567 tiles of the full corpus.
inline constexpr double kDefaultTestFraction = 567.0 / (9972.0 + 567.0);

struct ManifestEntry {
  std::string tile_id;
  std::string path;  // relative to the manifest's directory, or absolute
  Split split = Split::kTrain;
  RoadType road_type = RoadType::kUnknown;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Tile list plus `# key: value` header lines recording how it was built.
struct Manifest {
  std::vector<std::pair<std::string, std::string>> header;
  std::vector<ManifestEntry> entries;
  fs::path base_dir;  // where relative paths resolve; not serialised

  std::size_t count(Split s) const {
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [s](const ManifestEntry& e) { return e.split == s; }));
  }

  std::vector<ManifestEntry> select(Split s) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
      if (e.split == s) out.push_back(e);
    return out;
  }

  fs::path resolve(const ManifestEntry& e) const {
    const fs::path p(e.path);
    return p.is_absolute() ? p : base_dir / p;
  }

  std::optional<std::string> header_value(const std::string& key) const {
    for (const auto& [k, v] : header)
      if (k == key) return v;
    return std::nullopt;
  }
};

inline std::string serialize(const Manifest& m) {
  std::ostringstream os;
  for (const auto& [k, v] : m.header) os << "# " << k << ": " << v << "\n";
  for (const auto& e : m.entries) {
    os << e.tile_id << '\t' << e.path << '\t' << to_string(e.split) << '\t' << to_string(e.road_type) << '\n';
  }
  return os.str();
}

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

inline std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace detail

inline Manifest parse_manifest(const std::string& text, const fs::path& base_dir = {}) {
  Manifest m;
  m.base_dir = base_dir;
  std::istringstream in(text);
  std::string line;
  std::set<std::string> seen;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string body = line.substr(line.find_first_not_of("# ") == std::string::npos
                                               ? line.size()
                                               : line.find_first_not_of("# "));
      const auto colon = body.find(": ");
      if (colon == std::string::npos) {
        m.header.emplace_back(body, "");
      } else {
        m.header.emplace_back(body.substr(0, colon), body.substr(colon + 2));
      }
      continue;
    }
    const auto f = detail::split_tabs(line);
    if (f.size() != 4) {
      throw FormatError("manifest line " + std::to_string(lineno) + ": expected 4 tab-separated fields, got " +
                        std::to_string(f.size()));
    }
    if (!seen.insert(f[0]).second) {
      throw FormatError("manifest line " + std::to_string(lineno) + ": duplicate tile id '" + f[0] + "'");
    }
    m.entries.push_back({f[0], f[1], parse_split(f[2]), parse_road_type(f[3])});
  }
  return m;
}

inline Manifest read_manifest(const fs::path& path) {
  return parse_manifest(detail::read_text(path), path.parent_path());
}

inline void write_manifest(const Manifest& m, const fs::path& path) { detail::write_text(path, serialize(m)); }

/// `tile_id<TAB>road_type` lines; '#' lines and blanks are ignored.
inline std::map<std::string, RoadType> read_tags(const fs::path& path) {
  std::istringstream in(detail::read_text(path));
  std::map<std::string, RoadType> tags;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    line = detail::strip_cr(line);
    if (line.empty() || line[0] == '#') continue;
    const auto f = detail::split_tabs(line);
    if (f.size() != 2) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected tile_id<TAB>road_type");
    }
    try {
      tags[f[0]] = parse_road_type(f[1]);
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return tags;
}

struct ManifestOptions {
  std::uint64_t seed = 0;
  double test_fraction = kDefaultTestFraction;
  /// Explicit test sources (file stems); overrides test_fraction when set.
  std::optional<std::vector<std::string>> test_sources;
  /// Each tile is kept with this probability (seeded per tile id).
  double keep_fraction = 1.0;
  /// Tiles whose road share is below this are dropped.
  double min_road_fraction = 0.0;
  std::optional<fs::path> tags;
};

namespace detail {

// Shortest text that parses back to the same double.
inline std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// Deterministic [0,1) draw keyed by (seed, id).
inline double unit_hash(std::uint64_t seed, const std::string& id) {
  return static_cast<double>(derive_seed(seed, "keep:" + id) >> 11) * 0x1.0p-53;
}

}  // namespace detail

/// Scans `root` for PNG label rasters (sorted by name). 256x256 files are
/// taken as prepared tiles; larger ones must have sides divisible by 3 and
/// are cut into a 3x3 grid, area-resized to 256 and binarised at 0.5, with
/// the tiles written under `out_dir/tiles`. The split is drawn per source
/// image so sibling tiles never straddle train and test.
inline Manifest build_manifest(const fs::path& root, const fs::path& out_dir, const ManifestOptions& opt = {}) {
  if (!fs::is_directory(root)) throw InvalidArgument("dataset root '" + root.string() + "' is not a directory");
  if (!(opt.test_fraction >= 0.0 && opt.test_fraction <= 1.0)) throw InvalidArgument("test_fraction must lie in [0,1]");
  if (!(opt.keep_fraction > 0.0 && opt.keep_fraction <= 1.0)) throw InvalidArgument("keep_fraction must lie in (0,1]");
  if (!(opt.min_road_fraction >= 0.0 && opt.min_road_fraction <= 1.0)) {
    throw InvalidArgument("min_road_fraction must lie in [0,1]");
  }
  std::vector<fs::path> files;
  for (const auto& de : fs::directory_iterator(root)) {
    if (!de.is_regular_file()) continue;
    std::string ext = de.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") files.push_back(de.path());
  }
  if (files.empty()) throw InvalidArgument("dataset root '" + root.string() + "' contains no PNG rasters");
  std::sort(files.begin(), files.end());

  struct Pending {
    std::string id, source;
    fs::path path;
    double road_fraction;
  };
  std::vector<Pending> tiles;
  std::vector<std::string> sources;
  const fs::path tile_dir = out_dir / "tiles";
  for (const auto& f : files) {
    const std::string stem = f.stem().string();
    const RoadRaster r = load_raster(f);
    sources.push_back(stem);
    if (r.height() == kTileSide && r.width() == kTileSide) {
      const RoadRaster b = binarize(r);
      tiles.push_back({stem, stem, fs::absolute(f), b.sum() / static_cast<double>(b.pixel_count())});
      continue;
    }
    if (r.height() % 3 != 0 || r.width() % 3 != 0) {
      throw InvalidArgument(f.string() + ": " + std::to_string(r.height()) + "x" + std::to_string(r.width()) +
                            " is neither a 256x256 tile nor divisible into a 3x3 grid");
    }
    fs::create_directories(tile_dir);
    const auto parts = tile3x3(r);
    for (int k = 0; k < 9; ++k) {
      const RoadRaster t = binarize(resize(parts[k], kTileSide));
      const std::string id = stem + "_" + std::to_string(k);
      const fs::path p = tile_dir / (id + ".png");
      save_raster(t, p);
      tiles.push_back({id, stem, fs::absolute(p), t.sum() / static_cast<double>(t.pixel_count())});
    }
  }

  std::map<std::string, RoadType> tags;
  if (opt.tags) {
    tags = read_tags(*opt.tags);
    std::set<std::string> known;
    for (const auto& t : tiles) known.insert(t.id);
    for (const auto& [id, type] : tags) {
      if (!known.count(id)) throw FormatError(opt.tags->string() + ": unknown tile id '" + id + "'");
    }
  }

  std::set<std::string> test;
  if (opt.test_sources) {
    const std::set<std::string> all(sources.begin(), sources.end());
    for (const auto& s : *opt.test_sources) {
      if (!all.count(s)) throw InvalidArgument("test source '" + s + "' is not in " + root.string());
      test.insert(s);
    }
  } else {
    std::vector<std::string> order = sources;
    std::shuffle(order.begin(), order.end(), std::mt19937_64(derive_seed(opt.seed, "split")));
    const auto n_test = static_cast<std::size_t>(std::llround(opt.test_fraction * static_cast<double>(order.size())));
    test.insert(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  }

  Manifest m;
  m.base_dir = out_dir;
  std::size_t dropped_keep = 0, dropped_road = 0;
  for (const auto& t : tiles) {
    if (detail::unit_hash(opt.seed, t.id) >= opt.keep_fraction) {
      ++dropped_keep;
      continue;
    }
    if (t.road_fraction < opt.min_road_fraction) {
      ++dropped_road;
      continue;
    }
    const auto tag = tags.find(t.id);
    const fs::path rel = fs::relative(t.path, fs::absolute(out_dir));
    m.entries.push_back({t.id, rel.generic_string(), test.count(t.source) ? Split::kTest : Split::kTrain,
                         tag == tags.end() ? RoadType::kUnknown : tag->second});
  }
  m.header = {{"format", "tile_id\tpath\tsplit\troad_type"},
              {"seed", std::to_string(opt.seed)},
              {"sources", std::to_string(sources.size())},
              {"split_by", "source_image"},
              {"test_fraction", opt.test_sources ? "explicit" : detail::fmt_double(opt.test_fraction)},
              {"keep_fraction", detail::fmt_double(opt.keep_fraction)},
              {"min_road_fraction", detail::fmt_double(opt.min_road_fraction)},
              {"dropped_keep_fraction", std::to_string(dropped_keep)},
              {"dropped_min_road_fraction", std::to_string(dropped_road)},
              {"train", std::to_string(m.count(Split::kTrain))},
              {"test", std::to_string(m.count(Split::kTest))}};
  return m;
}

// ---------------------------------------------------------------------------
// Training examples

/// target with the region blanked, the region indicator, and the target.
struct TrainingExample {
  RoadRaster input;
  RoadRaster mask;
  RoadRaster target;
  MaskRegion region;
};

/// A region of `size` passes when its road pixels exceed p percent of size^2
/// (strictly), compared as road * 100 > p * size^2 without division.
inline bool region_accepts(long long road_pixels, int size, double p) {
  return static_cast<double>(road_pixels) * 100.0 > p * static_cast<double>(size) * size;
}

struct RegionSampling {
  int m_min = 48;
  int m_max = 96;
  double p = 5.0;
  int max_tries = 64;

  std::vector<std::string> problems(int height = kTileSide, int width = kTileSide) const {
    std::vector<std::string> out;
    if (m_min < 1) out.push_back("m_min must be >= 1");
    if (m_max < m_min) out.push_back("m_max must be >= m_min");
    if (m_max > std::min(height, width)) out.push_back("m_max must not exceed the tile side");
    if (!(p >= 0.0 && p < 100.0)) out.push_back("p must lie in [0,100)");
    if (max_tries < 1) out.push_back("max_tries must be >= 1");
    return out;
  }

  void validate(int height = kTileSide, int width = kTileSide) const {
    const auto pr = problems(height, width);
    if (!pr.empty()) throw InvalidArgument("invalid region sampling: " + pr.front());
  }
};

/// Rejection sampling: side uniform in [m_min, m_max], position uniform over
/// in-bounds placements, accepted when region_accepts().
template <typename Rng>
MaskRegion sample_region(const RoadRaster& tile, Rng& rng, const RegionSampling& s, const std::string& tile_id = "") {
  s.validate(tile.height(), tile.width());
  std::uniform_int_distribution<int> side_dist(s.m_min, s.m_max);
  for (int attempt = 0; attempt < s.max_tries; ++attempt) {
    const int size = side_dist(rng);
    const int top = std::uniform_int_distribution<int>(0, tile.height() - size)(rng);
    const int left = std::uniform_int_distribution<int>(0, tile.width() - size)(rng);
    const MaskRegion region{top, left, size};
    if (region_accepts(count_road(tile, region), size, s.p)) return region;
  }
  throw NoValidRegion(tile_id, s.max_tries);
}

inline TrainingExample make_example(const RoadRaster& target, const MaskRegion& region) {
  require_region_fits(target, region);
  return {paste(target, RoadRaster(region.size, region.size, 0.0f), region),
          region_indicator(target.height(), target.width(), region), target, region};
}

template <typename Rng>
TrainingExample sample_training_example(const RoadRaster& tile, Rng& rng, const RegionSampling& s,
                                        const std::string& tile_id = "") {
  if (!tile.is_binary()) throw InvalidArgument("training tiles must be binary");
  return make_example(tile, sample_region(tile, rng, s, tile_id));
}

}  // namespace roadfix
