#include <gtest/gtest.h>

#include "support.hpp"

using namespace roadfix;
using namespace testing_support;

namespace {

nlohmann::json minimal_spec(const fs::path& out) {
  return {{"name", "run"},
          {"preset", "glcrc"},
          {"dataset", {{"synthetic", {{"tiles", 8}, {"seed", 3}}}}},
          {"output_dir", out.string()},
          {"train",
           {{"base_channels", 2},
            {"scale", 1.0},
            {"batch_size", 1},
            {"g_pretrain_steps", 2},
            {"d_pretrain_steps", 1},
            {"joint_steps", 2}}},
          {"fallacies", {{{"kind", "crop"}}, {{"kind", "salt"}, {"n", 10}}}},
          {"threads", 1}};
}

std::string problems_of(const nlohmann::json& j) {
  try {
    parse_experiment(j);
  } catch (const InvalidArgument& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Presets, MapToVariantAndLosses) {
  EXPECT_EQ(find_preset("vanilla-glcic").variant, Variant::kGlcic);
  EXPECT_EQ(find_preset("vanilla-glcic").recon, ReconLoss::kMse);
  EXPECT_EQ(find_preset("glcrc").variant, Variant::kGlcrc);
  EXPECT_EQ(find_preset("glcrc").adv, AdvLoss::kBce);
  EXPECT_EQ(find_preset("glcrc+l").recon, ReconLoss::kPerceptual);
  EXPECT_EQ(find_preset("glcrc+l").adv, AdvLoss::kRalsgan);
  try {
    find_preset("glcrc-l");
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("vanilla-glcic, glcrc, glcrc+l"), std::string::npos);
  }
}

TEST(Spec, ParsesAndAppliesPreset) {
  TempDir dir("ex");
  const ExperimentSpec s = parse_experiment(minimal_spec(dir.path()));
  EXPECT_EQ(s.train.model.generator.variant, Variant::kGlcrc);
  EXPECT_EQ(s.train.model.generator.base_channels, 2);
  EXPECT_EQ(s.train.loss.recon, ReconLoss::kMse);
  ASSERT_EQ(s.fallacies.size(), 2u);
  EXPECT_EQ(s.fallacies[1].kind, FallacyKind::kSalt);
  EXPECT_EQ(s.fallacies[1].n, 10.0);
  EXPECT_EQ(s.run_dir(), dir.path() / "run");
  // The written form parses back to the same spec.
  EXPECT_EQ(spec_json(parse_experiment(spec_json(s))), spec_json(s));
}

TEST(Spec, ReportsEveryProblemAtOnce) {
  TempDir dir("ex");
  nlohmann::json j = minimal_spec(dir.path());
  j["preset"] = "glcrc-plus";
  j["colour"] = "red";
  j["train"]["lr_g"] = "fast";
  j["train"]["momentum"] = 0.9;
  j["fallacies"][0]["kind"] = "smudge";
  j["fallacies"][1]["m_max"] = 200;
  j["metrics"] = {{"rho", -1}, {"scope", "tile"}};
  const std::string msg = problems_of(j);
  for (const char* want : {"preset: unknown 'glcrc-plus' (valid presets: vanilla-glcic, glcrc, glcrc+l)",
                           "colour: unknown key", "train.lr_g: wrong type", "train.momentum: unknown key",
                           "fallacies[0].kind", "fallacies[1]: m_max must not exceed the local patch side",
                           "metrics.rho", "metrics.scope"}) {
    EXPECT_NE(msg.find(want), std::string::npos) << want << "\n" << msg;
  }
}

TEST(Spec, DatasetAndNameRules) {
  TempDir dir("ex");
  nlohmann::json j = minimal_spec(dir.path());
  j.erase("dataset");
  EXPECT_NE(problems_of(j).find("dataset: required"), std::string::npos);
  j = minimal_spec(dir.path());
  j["dataset"]["manifest"] = "m.tsv";
  EXPECT_NE(problems_of(j).find("exactly one"), std::string::npos);
  j = minimal_spec(dir.path());
  j["name"] = "../x";
  EXPECT_NE(problems_of(j).find("plain directory name"), std::string::npos);
  j = minimal_spec(dir.path());
  j["train"]["sampling"] = {{"m_max", 129}};
  EXPECT_NE(problems_of(j).find("local patch side"), std::string::npos);
  EXPECT_EQ(problems_of(minimal_spec(dir.path())), "");
  detail::write_text(dir / "bad.json", "{ not json");
  EXPECT_THROW(read_experiment(dir / "bad.json"), InvalidArgument);
}

TEST(SyntheticDataset, WritesManifestAndSplit) {
  TempDir dir("ex");
  const Manifest m = write_synthetic_dataset(dir / "d", 12, 4);
  EXPECT_EQ(m.entries.size(), 12u);
  EXPECT_EQ(m.count(Split::kTest), 3u);
  const Manifest back = read_manifest(dir / "d" / "manifest.tsv");
  EXPECT_EQ(back.entries, m.entries);
  for (const auto& e : back.entries) {
    EXPECT_NE(e.road_type, RoadType::kUnknown);
    EXPECT_EQ(load_raster(back.resolve(e)), synthetic::corpus(12, 256, 4)[std::stoi(e.tile_id.substr(4))].raster);
  }
  TempDir other("ex");
  write_synthetic_dataset(other / "d", 12, 4);
  EXPECT_EQ(slurp(other / "d" / "manifest.tsv"), slurp(dir / "d" / "manifest.tsv"));
}

TEST(Evaluate, DebugModelsBracketTheScores) {
  TempDir dir("ex");
  const Manifest m = write_synthetic_dataset(dir / "d", 8, 5, 0.5);
  EvalOptions opt;
  opt.threads = 2;
  const MetricsReport id = evaluate(m, identity_inpainter(), opt);
  ASSERT_EQ(id.tiles.size() + id.skipped.size(), 4u);
  for (const auto& t : id.tiles) {
    EXPECT_EQ(t.metrics.correctness, 1.0);
    EXPECT_EQ(t.metrics.completeness, 1.0);
    EXPECT_EQ(t.metrics.quality, 1.0);
  }
  const MetricsReport zero = evaluate(m, zero_inpainter(), opt);
  for (const auto& t : zero.tiles) EXPECT_EQ(t.metrics.completeness, 0.0);
  EXPECT_TRUE(std::is_sorted(id.tiles.begin(), id.tiles.end(),
                             [](const auto& a, const auto& b) { return a.tile_id < b.tile_id; }));

  // Thread count does not change the report.
  opt.threads = 1;
  EXPECT_EQ(report_csv(evaluate(m, identity_inpainter(), opt)), report_csv(id));

  // Pre-corrupted tiles score like on-the-fly corruption with the same config.
  CorruptOptions co;
  co.fallacy.kind = FallacyKind::kBlur;
  const RegionLog log = corrupt_manifest(m, dir / "c", co);
  EXPECT_EQ(log.records.size(), 4u);
  EXPECT_TRUE(fs::exists(dir / "c" / "regions.tsv"));
  opt.fallacy = co.fallacy;
  EXPECT_EQ(report_csv(evaluate_corrupted(m, dir / "c", zero_inpainter(), opt)),
            report_csv(evaluate(m, zero_inpainter(), opt)));

  // A log covering both splits is filtered to the requested one.
  co.split = std::nullopt;
  corrupt_manifest(m, dir / "all", co);
  EXPECT_EQ(report_csv(evaluate_corrupted(m, dir / "all", zero_inpainter(), opt)),
            report_csv(evaluate(m, zero_inpainter(), opt)));
  opt.split = Split::kTrain;
  const MetricsReport train = evaluate_corrupted(m, dir / "all", zero_inpainter(), opt);
  EXPECT_EQ(train.tiles.size() + train.skipped.size(), 4u);
  opt.split = Split::kTest;

  Manifest empty = m;
  empty.entries.clear();
  EXPECT_THROW(evaluate(empty, identity_inpainter(), opt), InvalidArgument);
}

TEST(Evaluate, SkipsTilesWithoutRegion) {
  TempDir dir("ex");
  fs::create_directories(dir / "t");
  save_raster(RoadRaster(256, 256, 0.0f), dir / "t" / "blank.png");
  save_raster(synthetic::tile(RoadType::kStraight, 256, 1), dir / "t" / "road.png");
  const Manifest m = parse_manifest("blank\tt/blank.png\ttest\tunknown\nroad\tt/road.png\ttest\tstraight\n", dir.path());
  const MetricsReport r = evaluate(m, identity_inpainter(), {});
  EXPECT_EQ(r.skipped, std::vector<std::string>{"blank"});
  ASSERT_EQ(r.tiles.size(), 1u);
  const RegionLog log = corrupt_manifest(m, dir / "c", {});
  EXPECT_EQ(log.comments.back(), "skipped blank");
  EXPECT_EQ(evaluate_corrupted(m, dir / "c", identity_inpainter(), {}).skipped, r.skipped);
}

TEST(Evaluate, GeneratorInpaintKeepsOutsidePixels) {
  Generator<float> g(GeneratorConfig::make(Variant::kGlcic, 2), 3);
  const RoadRaster truth = synthetic::tile(RoadType::kCurvy, 256, 2);
  const MaskRegion region{40, 60, 70};
  const RoadRaster out = inpaint(g, apply_crop(truth, region), region);
  EXPECT_TRUE(out.is_binary());
  for (int y = 0; y < 256; ++y)
    for (int x = 0; x < 256; ++x)
      if (!region.contains(y, x)) {
        ASSERT_EQ(out(y, x), truth(y, x));
      }
  EXPECT_THROW(inpaint(g, truth, {0, 0, 129}), InvalidArgument);
}

TEST(Experiment, RunsResumesAndReports) {
  TempDir dir("ex");
  const ExperimentSpec s = parse_experiment(minimal_spec(dir.path()));
  RunOptions stop;
  stop.max_steps = 3;
  const ExperimentResult part = run_experiment(s, stop);
  EXPECT_TRUE(part.reports.empty());
  EXPECT_TRUE(fs::exists(part.checkpoint));
  RunOptions cont;
  cont.resume = true;
  const ExperimentResult done = run_experiment(s, cont);
  EXPECT_EQ(done.checkpoint, s.run_dir() / "final.ckpt");
  ASSERT_EQ(done.reports.size(), 2u);
  for (const char* f : {"0_crop.csv", "0_crop.md", "1_salt.csv", "1_salt.md"}) {
    EXPECT_TRUE(fs::exists(s.run_dir() / "reports" / f)) << f;
  }
  EXPECT_TRUE(fs::exists(s.run_dir() / "spec.json"));
  EXPECT_TRUE(fs::exists(s.run_dir() / "data" / "manifest.tsv"));

  // An uninterrupted run of the same spec writes the same log.
  nlohmann::json j = minimal_spec(dir.path());
  j["name"] = "straight";
  const ExperimentSpec s2 = parse_experiment(j);
  RunOptions no_eval;
  no_eval.evaluate = false;
  run_experiment(s2, no_eval);
  auto body = [](const std::string& log) { return log.substr(log.find("# schedule")); };
  EXPECT_EQ(body(slurp(s2.run_dir() / "run_log.tsv")), body(slurp(s.run_dir() / "run_log.tsv")));

  RunOptions again;
  again.resume = true;
  nlohmann::json k = minimal_spec(dir.path());
  k["name"] = "never";
  EXPECT_THROW(run_experiment(parse_experiment(k), again), InvalidArgument);
}
