#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace roadfix;
using namespace testing_support;

namespace {

long long count_diff(const RoadRaster& a, const RoadRaster& b, std::optional<MaskRegion> inside = std::nullopt,
                     bool outside = false) {
  long long n = 0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) {
      if (inside && inside->contains(y, x) == outside) continue;
      n += a(y, x) != b(y, x);
    }
  return n;
}

}  // namespace

TEST(Fallacy, NoiseCountRounding) {
  EXPECT_EQ(noise_count(5.0, 48), 115);  // 115.2
  EXPECT_EQ(noise_count(5.0, 50), 125);
  EXPECT_EQ(noise_count(10.0, 5), 3);  // 2.5 rounds up
  EXPECT_EQ(noise_count(0.0, 96), 0);
  EXPECT_EQ(noise_count(100.0, 7), 49);
}

TEST(Fallacy, SaltAddsExactlyKBackgroundPixels) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const RoadRaster r = random_binary(64, 64, rng, 0.2);
    const MaskRegion region{5, 9, 40};
    for (double n : {0.0, 1.0, 5.0, 33.0}) {
      const RoadRaster out = apply_salt(r, region, n, rng);
      const long long bg = 40 * 40 - count_road(r, region);
      const long long want = std::min(noise_count(n, 40), bg);
      EXPECT_EQ(count_road(out, region) - count_road(r, region), want);
      EXPECT_EQ(count_diff(r, out, region, false), want);
      EXPECT_EQ(count_diff(r, out, region, true), 0);
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) EXPECT_GE(out(y, x), r(y, x));
    }
  }
  // More than the available background: everything turns white.
  const RoadRaster full = apply_salt(RoadRaster(10, 10, 1.0f), {0, 0, 10}, 50.0, rng);
  EXPECT_EQ(count_road(full), 100);
}

TEST(Fallacy, PepperRemovesMinKRoad) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const RoadRaster r = random_binary(64, 64, rng, 0.1);
    const MaskRegion region{0, 10, 50};
    const long long road = count_road(r, region);
    for (double n : {2.0, 5.0, 50.0}) {
      const RoadRaster out = apply_pepper(r, region, n, rng);
      EXPECT_EQ(road - count_road(out, region), std::min(noise_count(n, 50), road));
      EXPECT_EQ(count_diff(r, out, region, true), 0);
    }
  }
  EXPECT_THROW(apply_pepper(RoadRaster(8, 8, 0.5f), {0, 0, 4}, 5.0, rng), InvalidArgument);
  EXPECT_THROW(apply_pepper(RoadRaster(8, 8), {6, 6, 4}, 5.0, rng), InvalidArgument);
}

TEST(Fallacy, CropZeroesExactlyTheRegion) {
  const RoadRaster r(32, 32, 1.0f);
  const RoadRaster out = apply_crop(r, {3, 4, 10});
  EXPECT_EQ(count_road(out), 32 * 32 - 100);
  EXPECT_EQ(count_road(out, MaskRegion{3, 4, 10}), 0);
}

TEST(Fallacy, BlurCentreAndErosion) {
  EXPECT_EQ(blur_center({0, 0, 48}), (MaskRegion{12, 12, 24}));
  EXPECT_EQ(blur_center({10, 20, 49}), (MaskRegion{22, 32, 25}));
  EXPECT_EQ(blur_center({0, 0, 1}), (MaskRegion{0, 0, 1}));
  std::mt19937_64 rng(3);
  const RoadRaster r = random_binary(80, 80, rng, 0.7);
  const MaskRegion region{10, 12, 50};
  const RoadRaster want = erode(erode(r, region, 3), blur_center(region), 3);
  EXPECT_EQ(apply_blur(r, region, 3), want);
  EXPECT_EQ(count_diff(r, want, region, true), 0);
  EXPECT_LE(count_road(want), count_road(r));
  EXPECT_THROW(apply_blur(r, region, 4), InvalidArgument);
  EXPECT_THROW(apply_blur(r, region, 1), InvalidArgument);
}

TEST(Fallacy, OutsideRegionUntouchedForEveryKind) {
  const auto tiles = synthetic::corpus(8, 256, 7);
  for (FallacyKind kind : {FallacyKind::kSalt, FallacyKind::kPepper, FallacyKind::kBlur, FallacyKind::kCrop}) {
    FallacyConfig cfg;
    cfg.kind = kind;
    cfg.seed = 21;
    for (const auto& t : tiles) {
      const Corruption c = corrupt(t.raster, cfg, t.id);
      EXPECT_TRUE(c.raster.is_binary());
      EXPECT_EQ(count_diff(t.raster, c.raster, c.region, true), 0) << to_string(kind) << " " << t.id;
      EXPECT_GE(c.region.size, cfg.m_min);
      EXPECT_LE(c.region.size, cfg.m_max);
      EXPECT_TRUE(region_accepts(count_road(t.raster, c.region), c.region.size, cfg.p));
      if (kind == FallacyKind::kCrop) {
        EXPECT_EQ(count_road(c.raster, c.region), 0);
      }
      const Corruption again = corrupt(t.raster, cfg, t.id);
      EXPECT_EQ(again.raster, c.raster);
      EXPECT_EQ(again.region, c.region);
    }
  }
}

TEST(Fallacy, SeedsArePerTile) {
  EXPECT_EQ(tile_seed(0, "a"), fnv1a64("a"));
  EXPECT_NE(tile_seed(1, "a"), tile_seed(1, "b"));
  const auto t = synthetic::tile(RoadType::kCurvy, 256, 1);
  FallacyConfig cfg;
  cfg.kind = FallacyKind::kSalt;
  std::set<std::string> regions;
  for (std::uint64_t s = 0; s < 8; ++s) {
    cfg.seed = s;
    regions.insert(to_string(corrupt(t, cfg, "x").region));
  }
  EXPECT_GT(regions.size(), 4u);
}

TEST(Fallacy, BlurPassesRepeat) {
  const auto t = synthetic::tile(RoadType::kIntersection, 256, 5);
  FallacyConfig cfg;
  cfg.kind = FallacyKind::kBlur;
  cfg.seed = 4;
  const Corruption once = corrupt(t, cfg, "t");
  cfg.blur_passes = 2;
  const Corruption twice = corrupt(t, cfg, "t");
  EXPECT_EQ(once.region, twice.region);
  EXPECT_EQ(twice.raster, apply_blur(once.raster, once.region, 3));
}

TEST(Fallacy, ConfigValidationAndJson) {
  FallacyConfig cfg;
  cfg.n = 150;
  cfg.erosion_kernel = 2;
  cfg.m_min = 100;
  cfg.m_max = 50;
  EXPECT_EQ(cfg.problems().size(), 3u);
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  FallacyConfig ok;
  ok.kind = FallacyKind::kPepper;
  ok.n = 7.5;
  ok.seed = 99;
  const FallacyConfig back = nlohmann::json(ok).get<FallacyConfig>();
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(ok));
  EXPECT_THROW(parse_fallacy_kind("smudge"), InvalidArgument);
  EXPECT_THROW(corrupt(RoadRaster(256, 256, 0.0f), FallacyConfig{}, "blank"), NoValidRegion);
}

TEST(RegionLogFile, RoundTrip) {
  RegionLog log;
  log.comments = {"fallacy kind=crop", "skipped z"};
  log.records = {{"a", {1, 2, 48}, FallacyKind::kSalt}, {"b_3", {100, 0, 96}, FallacyKind::kBlur}};
  const RegionLog back = parse_region_log(serialize(log));
  EXPECT_EQ(back.comments, log.comments);
  EXPECT_EQ(back.records, log.records);
  EXPECT_THROW(parse_region_log("a\t1\t2\t3\n"), FormatError);
  EXPECT_THROW(parse_region_log("a\tx\t2\t3\tcrop\n"), FormatError);
  EXPECT_THROW(parse_region_log("a\t1\t2\t0\tcrop\n"), FormatError);
  EXPECT_THROW(parse_region_log("a\t1\t2\t3\tsmear\n"), FormatError);
}
