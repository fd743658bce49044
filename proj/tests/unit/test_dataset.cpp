#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace roadfix;
using namespace testing_support;

namespace {

// A source image with one horizontal road through every grid cell.
RoadRaster striped_source(int side) {
  RoadRaster r(side, side, 0.0f);
  for (int y = 0; y < side; ++y)
    if (y % (side / 3) >= side / 6 && y % (side / 3) < side / 6 + 12)
      for (int x = 0; x < side; ++x) r.set(y, x, 1.0f);
  return r;
}

}  // namespace

TEST(Manifest, OneSourceGivesNineTiles) {
  TempDir dir("ds");
  fs::create_directories(dir / "src");
  save_raster(striped_source(768), dir / "src" / "area.png");
  const Manifest m = build_manifest(dir / "src", dir / "out");
  ASSERT_EQ(m.entries.size(), 9u);
  for (int k = 0; k < 9; ++k) {
    const auto& e = m.entries[k];
    EXPECT_EQ(e.tile_id, "area_" + std::to_string(k));
    EXPECT_EQ(e.split, m.entries[0].split);
    EXPECT_EQ(e.road_type, RoadType::kUnknown);
    EXPECT_FALSE(fs::path(e.path).is_absolute());
    const RoadRaster t = load_raster(m.resolve(e));
    EXPECT_EQ(t.height(), 256);
    EXPECT_TRUE(t.is_binary());
    EXPECT_GT(t.sum(), 0.0);
  }
}

TEST(Manifest, DeterministicBytes) {
  TempDir dir("ds");
  fs::create_directories(dir / "src");
  std::mt19937_64 rng(1);
  for (int i = 0; i < 6; ++i) save_raster(random_binary(256, 256, rng), dir / "src" / ("s" + std::to_string(i) + ".png"));
  ManifestOptions opt;
  opt.seed = 9;
  opt.test_fraction = 0.5;
  const std::string a = serialize(build_manifest(dir / "src", dir / "o1", opt));
  const std::string b = serialize(build_manifest(dir / "src", dir / "o1", opt));
  EXPECT_EQ(a, b);
  const Manifest m = parse_manifest(a, dir / "o1");
  EXPECT_EQ(m.count(Split::kTest), 3u);
  EXPECT_EQ(serialize(m), a);
}

TEST(Manifest, SplitIsPerSource) {
  TempDir dir("ds");
  fs::create_directories(dir / "src");
  for (int i = 0; i < 5; ++i) save_raster(striped_source(768), dir / "src" / ("img" + std::to_string(i) + ".png"));
  ManifestOptions opt;
  opt.test_fraction = 0.4;
  const Manifest m = build_manifest(dir / "src", dir / "out", opt);
  ASSERT_EQ(m.entries.size(), 45u);
  EXPECT_EQ(m.count(Split::kTest), 18u);
  std::map<std::string, std::set<Split>> by_source;
  for (const auto& e : m.entries) by_source[e.tile_id.substr(0, 4)].insert(e.split);
  for (const auto& [src, splits] : by_source) EXPECT_EQ(splits.size(), 1u) << src;

  opt.test_sources = std::vector<std::string>{"img3"};
  const Manifest n = build_manifest(dir / "src", dir / "out2", opt);
  for (const auto& e : n.entries) EXPECT_EQ(e.split == Split::kTest, e.tile_id.rfind("img3", 0) == 0);
  opt.test_sources = std::vector<std::string>{"nope"};
  EXPECT_THROW(build_manifest(dir / "src", dir / "out3", opt), InvalidArgument);
}

TEST(Manifest, TagsAndFilters) {
  TempDir dir("ds");
  fs::create_directories(dir / "src");
  save_raster(striped_source(256), dir / "src" / "a.png");
  save_raster(RoadRaster(256, 256, 0.0f), dir / "src" / "empty.png");
  detail::write_text(dir / "tags.tsv", "# comment\na\tcurvy\n");
  ManifestOptions opt;
  opt.tags = dir / "tags.tsv";
  Manifest m = build_manifest(dir / "src", dir / "out", opt);
  ASSERT_EQ(m.entries.size(), 2u);
  EXPECT_EQ(m.entries[0].road_type, RoadType::kCurvy);
  EXPECT_EQ(m.entries[1].road_type, RoadType::kUnknown);

  opt.min_road_fraction = 0.01;
  m = build_manifest(dir / "src", dir / "out", opt);
  ASSERT_EQ(m.entries.size(), 1u);
  EXPECT_EQ(m.header_value("dropped_min_road_fraction"), "1");

  detail::write_text(dir / "bad.tsv", "a\twiggly\n");
  opt.tags = dir / "bad.tsv";
  EXPECT_THROW(build_manifest(dir / "src", dir / "out", opt), FormatError);
  detail::write_text(dir / "ghost.tsv", "ghost\tstraight\n");
  opt.tags = dir / "ghost.tsv";
  EXPECT_THROW(build_manifest(dir / "src", dir / "out", opt), FormatError);
}

TEST(Manifest, KeepFractionIsSeededPerTile) {
  TempDir dir("ds");
  fs::create_directories(dir / "src");
  for (int i = 0; i < 4; ++i) save_raster(striped_source(768), dir / "src" / ("k" + std::to_string(i) + ".png"));
  ManifestOptions opt;
  opt.keep_fraction = 0.5;
  const Manifest a = build_manifest(dir / "src", dir / "o", opt);
  EXPECT_GT(a.entries.size(), 5u);
  EXPECT_LT(a.entries.size(), 31u);
  EXPECT_EQ(serialize(a), serialize(build_manifest(dir / "src", dir / "o", opt)));
}

TEST(Manifest, Errors) {
  TempDir dir("ds");
  EXPECT_THROW(build_manifest(dir / "missing", dir / "o"), InvalidArgument);
  fs::create_directories(dir / "empty");
  EXPECT_THROW(build_manifest(dir / "empty", dir / "o"), InvalidArgument);
  fs::create_directories(dir / "odd");
  save_raster(RoadRaster(100, 100), dir / "odd" / "x.png");
  EXPECT_THROW(build_manifest(dir / "odd", dir / "o"), InvalidArgument);

  EXPECT_THROW(parse_manifest("a\tb\ttrain\n"), FormatError);
  EXPECT_THROW(parse_manifest("a\tp\tvalidation\tunknown\n"), FormatError);
  EXPECT_THROW(parse_manifest("a\tp\ttrain\tunknown\na\tq\ttest\tunknown\n"), FormatError);
  const Manifest m = parse_manifest("# k: v\r\na\tp.png\ttest\tt_junction\r\n");
  EXPECT_EQ(m.header_value("k"), "v");
  EXPECT_EQ(m.entries.at(0).road_type, RoadType::kTJunction);
}

TEST(Region, AcceptanceIsStrict) {
  // 10x10 at p = 5 needs more than 5 road pixels.
  EXPECT_FALSE(region_accepts(5, 10, 5.0));
  EXPECT_TRUE(region_accepts(6, 10, 5.0));
  EXPECT_FALSE(region_accepts(0, 48, 0.0));
  EXPECT_TRUE(region_accepts(1, 48, 0.0));
  // 48^2 * 5% = 115.2
  EXPECT_FALSE(region_accepts(115, 48, 5.0));
  EXPECT_TRUE(region_accepts(116, 48, 5.0));
}

TEST(Region, SamplingHonoursBoundsAndSeed) {
  const auto tiles = synthetic::corpus(8, 256, 3);
  RegionSampling s;
  for (const auto& t : tiles) {
    std::mt19937_64 a(11), b(11);
    const MaskRegion r = sample_region(t.raster, a, s, t.id);
    EXPECT_EQ(r, sample_region(t.raster, b, s, t.id));
    EXPECT_TRUE(r.fits(256, 256));
    EXPECT_GE(r.size, s.m_min);
    EXPECT_LE(r.size, s.m_max);
    EXPECT_TRUE(region_accepts(count_road(t.raster, r), r.size, s.p));
  }
  std::mt19937_64 rng(1);
  try {
    sample_region(RoadRaster(256, 256, 0.0f), rng, s, "blank");
    FAIL();
  } catch (const NoValidRegion& e) {
    EXPECT_EQ(e.tile(), "blank");
  }
  s.m_max = 300;
  EXPECT_THROW(sample_region(tiles[0].raster, rng, s), InvalidArgument);
}

TEST(Region, TrainingExample) {
  const auto t = synthetic::tile(RoadType::kIntersection, 256, 4);
  const MaskRegion r{100, 90, 60};
  const TrainingExample ex = make_example(t, r);
  EXPECT_EQ(ex.target, t);
  EXPECT_EQ(ex.mask, region_indicator(256, 256, r));
  EXPECT_EQ(count_road(ex.input, r), 0);
  EXPECT_EQ(crop(ex.input, {0, 0, 90}), crop(t, {0, 0, 90}));
}

TEST(Synthetic, CorpusIsDeterministicAndTyped) {
  const auto a = synthetic::corpus(8, 256, 5), b = synthetic::corpus(8, 256, 5);
  ASSERT_EQ(a.size(), 8u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].raster, b[i].raster);
    EXPECT_EQ(a[i].type, kAllRoadTypes[i % 4]);
    EXPECT_TRUE(a[i].raster.is_binary());
    EXPECT_GT(a[i].raster.sum(), 256.0);
  }
  EXPECT_EQ(a[0].id, "syn_0000");
  EXPECT_NE(a[0].raster, synthetic::corpus(1, 256, 6)[0].raster);
}

TEST(RoadTypes, ParseRoundTrip) {
  for (RoadType t : kAllRoadTypes) EXPECT_EQ(parse_road_type(to_string(t)), t);
  EXPECT_EQ(parse_road_type("unknown"), RoadType::kUnknown);
  EXPECT_THROW(parse_road_type("roundabout"), FormatError);
}
