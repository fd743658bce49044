#include <gtest/gtest.h>

#include "support.hpp"

using namespace roadfix;
using namespace testing_support;

TEST(Cli, HelpAndUsageErrors) {
  const CliResult help = run_cli("--help");
  EXPECT_EQ(help.code, 0);
  for (const char* cmd : {"prepare", "corrupt", "train", "inpaint", "evaluate", "report"}) {
    EXPECT_NE(help.output.find(cmd), std::string::npos) << cmd;
  }
  EXPECT_EQ(run_cli("").code, 1);
  EXPECT_EQ(run_cli("frobnicate").code, 1);
  EXPECT_EQ(run_cli("corrupt --kind salt").code, 1);  // missing required options
  EXPECT_EQ(run_cli("evaluate --manifest x --out-dir y --rho abc").code, 1);
}

TEST(Cli, PrepareIsDeterministicAndValidates) {
  TempDir dir("cli");
  ASSERT_EQ(run_cli("prepare --synthetic 8 --seed 2 --out " + quote(dir / "a")).code, 0);
  ASSERT_EQ(run_cli("prepare --synthetic 8 --seed 2 --out " + quote(dir / "b")).code, 0);
  EXPECT_EQ(slurp(dir / "a" / "manifest.tsv"), slurp(dir / "b" / "manifest.tsv"));

  fs::create_directories(dir / "src");
  save_raster(synthetic::tile(RoadType::kStraight, 256, 1), dir / "src" / "one.png");
  save_raster(synthetic::tile(RoadType::kCurvy, 256, 2), dir / "src" / "two.png");
  detail::write_text(dir / "tags.tsv", "one\tstraight\ntwo\tcurvy\n");
  const std::string args = "prepare --root " + quote(dir / "src") + " --tags " + quote(dir / "tags.tsv") +
                           " --test-fraction 0.5 --seed 1 --out ";
  ASSERT_EQ(run_cli(args + quote(dir / "p1")).code, 0);
  ASSERT_EQ(run_cli(args + quote(dir / "p2")).code, 0);
  const Manifest m = read_manifest(dir / "p1" / "manifest.tsv");
  EXPECT_EQ(m.entries.size(), 2u);
  EXPECT_EQ(m.count(Split::kTest), 1u);
  EXPECT_EQ(m.entries[1].road_type, RoadType::kCurvy);

  const CliResult missing = run_cli("prepare --root " + quote(dir / "nope") + " --out " + quote(dir / "x"));
  EXPECT_NE(missing.code, 0);
  EXPECT_NE(missing.output.find("not a directory"), std::string::npos);
  EXPECT_EQ(run_cli("prepare --out " + quote(dir / "x")).code, 1);
  detail::write_text(dir / "badtags.tsv", "three\tstraight\n");
  EXPECT_NE(run_cli("prepare --root " + quote(dir / "src") + " --tags " + quote(dir / "badtags.tsv") + " --out " +
                    quote(dir / "x"))
                .code,
            0);
}

TEST(Cli, CorruptAndEvaluateWithDebugModels) {
  TempDir dir("cli");
  ASSERT_EQ(run_cli("prepare --synthetic 8 --seed 3 --out " + quote(dir / "d")).code, 0);
  const std::string manifest = quote(dir / "d" / "manifest.tsv");
  const CliResult c = run_cli("corrupt --kind pepper --n 20 --seed 4 --in-manifest " + manifest + " --out-dir " +
                              quote(dir / "c"));
  ASSERT_EQ(c.code, 0) << c.output;
  const RegionLog log = read_region_log(dir / "c" / "regions.tsv");
  EXPECT_EQ(log.records.size(), 2u);
  for (const auto& r : log.records) EXPECT_TRUE(fs::exists(dir / "c" / (r.tile_id + ".png")));

  const CliResult e = run_cli("evaluate --debug-model identity --manifest " + manifest + " --corrupted-dir " +
                              quote(dir / "c") + " --out-dir " + quote(dir / "e"));
  ASSERT_EQ(e.code, 0) << e.output;
  const MetricsReport r = parse_report_csv(slurp(dir / "e" / "report.csv"));
  ASSERT_EQ(r.tiles.size(), 2u);
  for (const auto& t : r.tiles) EXPECT_EQ(t.metrics.quality, 1.0);
  EXPECT_TRUE(fs::exists(dir / "e" / "report.md"));
  const auto used = nlohmann::json::parse(slurp(dir / "e" / "eval.json"));
  EXPECT_EQ(used.at("model"), "debug:identity");

  const CliResult z = run_cli("evaluate --debug-model zero --kind crop --manifest " + manifest + " --out-dir " +
                              quote(dir / "z"));
  ASSERT_EQ(z.code, 0) << z.output;
  for (const auto& t : parse_report_csv(slurp(dir / "z" / "report.csv")).tiles) EXPECT_EQ(t.metrics.completeness, 0.0);

  const CliResult rep = run_cli("report --input identity=" + quote(dir / "e" / "report.csv") + " --input zero=" +
                                quote(dir / "z" / "report.csv"));
  ASSERT_EQ(rep.code, 0);
  EXPECT_NE(rep.output.find("| identity | 1.000 | 1.000 | 1.000 | 2 |"), std::string::npos) << rep.output;
  EXPECT_NE(rep.output.find("| zero |"), std::string::npos);

  EXPECT_EQ(run_cli("evaluate --debug-model oracle --manifest " + manifest + " --out-dir " + quote(dir / "q")).code, 1);
  EXPECT_EQ(run_cli("evaluate --manifest " + manifest + " --out-dir " + quote(dir / "q")).code, 1);
  EXPECT_EQ(run_cli("evaluate --debug-model zero --kind smear --manifest " + manifest + " --out-dir " +
                    quote(dir / "q"))
                .code,
            1);
  EXPECT_EQ(run_cli("evaluate --debug-model zero --manifest " + quote(dir / "none.tsv") + " --out-dir " +
                    quote(dir / "q"))
                .code,
            2);
}

TEST(Cli, TrainRejectsBadSpecs) {
  TempDir dir("cli");
  detail::write_text(dir / "s.json",
                     R"({"name": "x", "preset": "glcrc++", "dataset": {"synthetic": {"tiles": 4}}})");
  const CliResult r = run_cli("train --spec " + quote(dir / "s.json"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("valid presets: vanilla-glcic, glcrc, glcrc+l"), std::string::npos) << r.output;
  EXPECT_EQ(run_cli("train --spec " + quote(dir / "missing.json")).code, 2);
}

TEST(Cli, TrainThenInpaint) {
  TempDir dir("cli");
  const nlohmann::json spec = {{"name", "tiny"},
                               {"preset", "vanilla-glcic"},
                               {"dataset", {{"synthetic", {{"tiles", 6}, {"seed", 1}}}}},
                               {"output_dir", dir.path().string()},
                               {"train",
                                {{"base_channels", 2},
                                 {"scale", 1.0},
                                 {"batch_size", 1},
                                 {"g_pretrain_steps", 2},
                                 {"d_pretrain_steps", 1},
                                 {"joint_steps", 1}}},
                               {"threads", 1}};
  detail::write_text(dir / "spec.json", spec.dump());
  const CliResult t = run_cli("train --spec " + quote(dir / "spec.json"));
  ASSERT_EQ(t.code, 0) << t.output;
  const fs::path ckpt = dir / "tiny" / "final.ckpt";
  ASSERT_TRUE(fs::exists(ckpt));
  EXPECT_TRUE(fs::exists(dir / "tiny" / "reports" / "0_crop.csv"));

  const RoadRaster truth = synthetic::tile(RoadType::kTJunction, 256, 9);
  const MaskRegion region{30, 40, 64};
  save_raster(apply_crop(truth, region), dir / "in.png");
  const CliResult one = run_cli("inpaint --checkpoint " + quote(ckpt) + " --input " + quote(dir / "in.png") +
                                " --region 30,40,64 --out " + quote(dir / "out.png"));
  ASSERT_EQ(one.code, 0) << one.output;
  const RoadRaster out = load_raster(dir / "out.png");
  EXPECT_EQ(crop(out, {0, 0, 30}), crop(truth, {0, 0, 30}));
  EXPECT_EQ(paste(out, crop(truth, region), region), truth);

  ASSERT_EQ(run_cli("corrupt --kind crop --split all --in-manifest " + quote(dir / "tiny" / "data" / "manifest.tsv") +
                    " --out-dir " + quote(dir / "c"))
                .code,
            0);
  const CliResult batch = run_cli("inpaint --checkpoint " + quote(ckpt) + " --region-log " +
                                  quote(dir / "c" / "regions.tsv") + " --input-dir " + quote(dir / "c") + " --out " +
                                  quote(dir / "r"));
  ASSERT_EQ(batch.code, 0) << batch.output;
  const RegionLog log = read_region_log(dir / "c" / "regions.tsv");
  for (const auto& rec : log.records) EXPECT_TRUE(fs::exists(dir / "r" / (rec.tile_id + ".png")));

  EXPECT_EQ(run_cli("inpaint --checkpoint " + quote(ckpt) + " --input " + quote(dir / "in.png") +
                    " --region 30,40 --out " + quote(dir / "o.png"))
                .code,
            1);
  EXPECT_EQ(run_cli("inpaint --checkpoint " + quote(dir / "in.png") + " --input " + quote(dir / "in.png") +
                    " --region 30,40,64 --out " + quote(dir / "o.png"))
                .code,
            2);
}
