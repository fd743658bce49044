#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "roadfix/dataset.hpp"
#include "roadfix/errors.hpp"
#include "roadfix/fallacy.hpp"
#include "roadfix/metrics.hpp"
#include "roadfix/model.hpp"
#include "roadfix/png_codec.hpp"
#include "roadfix/raster.hpp"

namespace roadfix {

/// Fills `region` of a corrupted map. `truth` is only consulted by the
/// identity debug model.
using InpaintFn =
    std::function<RoadRaster(const RoadRaster& corrupted, const MaskRegion& region, const RoadRaster& truth)>;

/// paste(corrupted, binarize(G(masked, mask)) inside region). Thread-safe for
/// concurrent calls on one generator.
inline RoadRaster inpaint(Generator<float>& g, const RoadRaster& corrupted, const MaskRegion& region) {
  require_region_fits(corrupted, region);
  const int limit = DiscriminatorConfig{}.local_side;
  if (region.size > limit) {
    throw InvalidArgument("region side " + std::to_string(region.size) + " exceeds the local patch side " +
                          std::to_string(limit));
  }
  const RoadRaster masked = paste(corrupted, RoadRaster(region.size, region.size, 0.0f), region);
  const RoadRaster mask = region_indicator(corrupted.height(), corrupted.width(), region);
  const RoadRaster out = binarize(generator_forward(g, masked, mask));
  return paste(corrupted, crop(out, region), region);
}

inline InpaintFn generator_inpainter(Generator<float>& g) {
  return [&g](const RoadRaster& corrupted, const MaskRegion& region, const RoadRaster&) {
    return inpaint(g, corrupted, region);
  };
}

/// Debug model: puts the ground truth back.
inline InpaintFn identity_inpainter() {
  return [](const RoadRaster& corrupted, const MaskRegion& region, const RoadRaster& truth) {
    return paste(corrupted, crop(truth, region), region);
  };
}

/// Debug model: predicts no road anywhere in the region.
inline InpaintFn zero_inpainter() {
  return [](const RoadRaster& corrupted, const MaskRegion& region, const RoadRaster&) {
    return paste(corrupted, RoadRaster(region.size, region.size, 0.0f), region);
  };
}

namespace detail {

/// Runs fn(i) for i in [0, n) on up to `threads` workers; the first
/// exception is rethrown after all workers stop.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  if (threads <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work);
  }
  if (error) std::rethrow_exception(error);
}

inline std::vector<ManifestEntry> sorted_entries(const Manifest& m, std::optional<Split> split) {
  std::vector<ManifestEntry> out;
  for (const auto& e : m.entries)
    if (!split || e.split == *split) out.push_back(e);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.tile_id < b.tile_id; });
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Corruption of a whole split

struct CorruptOptions {
  FallacyConfig fallacy;
  std::optional<Split> split = Split::kTest;  // nullopt: every entry
  unsigned threads = 0;
};

/// Corrupts every selected tile, writing `<out_dir>/<tile_id>.png` and
/// `<out_dir>/regions.tsv`. Tiles without an acceptable region are listed as
/// `skipped` comments.
inline RegionLog corrupt_manifest(const Manifest& m, const fs::path& out_dir, const CorruptOptions& opt) {
  opt.fallacy.validate();
  const auto entries = detail::sorted_entries(m, opt.split);
  if (entries.empty()) throw InvalidArgument("no tiles to corrupt in the selected split");
  fs::create_directories(out_dir);
  std::vector<std::optional<RegionRecord>> results(entries.size());
  detail::parallel_for(entries.size(), opt.threads, [&](std::size_t i) {
    const auto& e = entries[i];
    const RoadRaster truth = binarize(load_raster(m.resolve(e)));
    try {
      Corruption c = corrupt(truth, opt.fallacy, e.tile_id);
      save_raster(c.raster, out_dir / (e.tile_id + ".png"));
      results[i] = RegionRecord{e.tile_id, c.region, opt.fallacy.kind};
    } catch (const NoValidRegion&) {
    }
  });
  RegionLog log;
  log.comments.push_back("fallacy " + opt.fallacy.describe());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (results[i]) {
      log.records.push_back(*results[i]);
    } else {
      log.comments.push_back("skipped " + entries[i].tile_id);
    }
  }
  detail::write_text(out_dir / "regions.tsv", serialize(log));
  return log;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOptions {
  FallacyConfig fallacy;  // used when corrupting on the fly
  int rho = 2;
  Scope scope = Scope::kMaskRegion;
  Split split = Split::kTest;
  unsigned threads = 0;
};

namespace detail {

struct EvalCase {
  const ManifestEntry* entry;
  std::optional<MaskRegion> region;  // preset by a region log
};

inline MetricsReport run_cases(const Manifest& m, const std::vector<EvalCase>& cases, const InpaintFn& model,
                               const EvalOptions& opt, const fs::path& corrupted_dir) {
  if (opt.rho < 0) throw InvalidArgument("rho must be >= 0");
  std::vector<std::optional<TileMetrics>> results(cases.size());
  parallel_for(cases.size(), opt.threads, [&](std::size_t i) {
    const ManifestEntry& e = *cases[i].entry;
    const RoadRaster truth = binarize(load_raster(m.resolve(e)));
    RoadRaster corrupted;
    MaskRegion region;
    if (cases[i].region) {
      region = *cases[i].region;
      corrupted = binarize(load_raster(corrupted_dir / (e.tile_id + ".png")));
      require_region_fits(corrupted, region);
    } else {
      try {
        Corruption c = corrupt(truth, opt.fallacy, e.tile_id);
        corrupted = std::move(c.raster);
        region = c.region;
      } catch (const NoValidRegion&) {
        return;
      }
    }
    const RoadRaster completed = binarize(model(corrupted, region, truth));
    results[i] = TileMetrics{e.tile_id, e.road_type, tile_metrics(completed, truth, region, opt.rho, opt.scope)};
  });
  MetricsReport r;
  r.scope = opt.scope;
  r.rho = opt.rho;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    if (results[i]) {
      r.tiles.push_back(*results[i]);
    } else {
      r.skipped.push_back(cases[i].entry->tile_id);
    }
  }
  return r;
}

}  // namespace detail

/// Corrupts each tile of the split on the fly, inpaints, and scores.
inline MetricsReport evaluate(const Manifest& m, const InpaintFn& model, const EvalOptions& opt) {
  opt.fallacy.validate();
  const auto entries = detail::sorted_entries(m, opt.split);
  if (entries.empty()) throw InvalidArgument("empty test set");
  std::vector<detail::EvalCase> cases;
  for (const auto& e : entries) cases.push_back({&e, std::nullopt});
  return detail::run_cases(m, cases, model, opt, {});
}

/// Scores tiles already corrupted by corrupt_manifest: regions from
/// `<corrupted_dir>/regions.tsv`, ground truth from the manifest. Log rows
/// of tiles outside `opt.split` are ignored.
inline MetricsReport evaluate_corrupted(const Manifest& m, const fs::path& corrupted_dir, const InpaintFn& model,
                                        const EvalOptions& opt) {
  const RegionLog log = read_region_log(corrupted_dir / "regions.tsv");
  std::map<std::string, const ManifestEntry*> by_id;
  for (const auto& e : m.entries) by_id[e.tile_id] = &e;
  std::vector<detail::EvalCase> cases;
  for (const auto& rec : log.records) {
    const auto it = by_id.find(rec.tile_id);
    if (it == by_id.end()) throw FormatError("region log names tile '" + rec.tile_id + "' absent from the manifest");
    if (it->second->split == opt.split) cases.push_back({it->second, rec.region});
  }
  if (cases.empty()) throw InvalidArgument("empty test set");
  std::sort(cases.begin(), cases.end(),
            [](const auto& a, const auto& b) { return a.entry->tile_id < b.entry->tile_id; });
  MetricsReport r = detail::run_cases(m, cases, model, opt, corrupted_dir);
  for (const auto& c : log.comments)
    if (c.rfind("skipped ", 0) == 0) {
      const auto it = by_id.find(c.substr(8));
      if (it != by_id.end() && it->second->split == opt.split) r.skipped.push_back(it->first);
    }
  return r;
}

}  // namespace roadfix
