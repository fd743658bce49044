// roadfix command-line entry point.
//
// Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "roadfix.hpp"

namespace {

using namespace roadfix;

struct FallacyFlags {
  std::string kind = "crop";
  FallacyConfig cfg;

  void add(CLI::App* cmd) {
    cmd->add_option("--kind", kind, "Noise kind: salt, pepper, blur or crop")->capture_default_str();
    cmd->add_option("--n", cfg.n, "Salt/pepper amount, percent of region pixels")->capture_default_str();
    cmd->add_option("--kernel", cfg.erosion_kernel, "Blur erosion kernel side (odd)")->capture_default_str();
    cmd->add_option("--blur-passes", cfg.blur_passes, "Times the blur noise is applied")->capture_default_str();
    cmd->add_option("--mmin", cfg.m_min, "Smallest region side")->capture_default_str();
    cmd->add_option("--mmax", cfg.m_max, "Largest region side")->capture_default_str();
    cmd->add_option("--p", cfg.p, "Region accepted when road exceeds p percent of it")->capture_default_str();
    cmd->add_option("--max-tries", cfg.max_tries, "Region draws per tile before it is skipped")
        ->capture_default_str();
    cmd->add_option("--seed", cfg.seed, "Corruption seed")->capture_default_str();
  }

  FallacyConfig get() {
    cfg.kind = parse_fallacy_kind(kind);
    cfg.validate();
    return cfg;
  }
};

std::optional<Split> parse_split_flag(const std::string& s) {
  if (s == "all") return std::nullopt;
  try {
    return parse_split(s);
  } catch (const FormatError& e) {
    throw InvalidArgument(e.what());
  }
}

MaskRegion parse_region(const std::string& s) {
  MaskRegion r;
  char c1 = 0, c2 = 0;
  if (std::sscanf(s.c_str(), "%d%c%d%c%d", &r.top, &c1, &r.left, &c2, &r.size) != 5 || c1 != ',' || c2 != ',' ||
      r.size <= 0) {
    throw InvalidArgument("region must be TOP,LEFT,SIZE with a positive size, got '" + s + "'");
  }
  return r;
}

int run(int argc, char** argv) {
  CLI::App app{"roadfix: repair faulty regions of binary road maps, benchmark the repair, score it"};
  app.require_subcommand(1);

  // prepare ----------------------------------------------------------------
  auto* prepare = app.add_subcommand("prepare", "Build a tile manifest from a directory of road-map PNGs");
  std::string prep_root, prep_out, prep_tags, prep_test_sources;
  ManifestOptions mopt;
  int prep_synthetic = 0;
  prepare->add_option("--root", prep_root, "Directory of binary road-map PNGs");
  prepare->add_option("--out", prep_out, "Output directory for manifest.tsv and tiles/")->required();
  prepare->add_option("--seed", mopt.seed, "Split seed")->capture_default_str();
  prepare->add_option("--test-fraction", mopt.test_fraction, "Fraction of source images held out for testing")
      ->capture_default_str();
  prepare->add_option("--test-sources", prep_test_sources,
                      "File listing source image stems forming the test split (overrides --test-fraction)");
  prepare->add_option("--keep-fraction", mopt.keep_fraction, "Keep this fraction of tiles (hash-seeded)")
      ->capture_default_str();
  prepare->add_option("--min-road", mopt.min_road_fraction, "Drop tiles whose road fraction is below this")
      ->capture_default_str();
  prepare->add_option("--tags", prep_tags, "Sidecar of tile_id<TAB>road_type lines");
  prepare->add_option("--synthetic", prep_synthetic,
                      "Instead of --root, draw this many synthetic line tiles (25% test)");

  // corrupt ----------------------------------------------------------------
  auto* corrupt_cmd = app.add_subcommand("corrupt", "Apply a synthetic fallacy to every tile of a manifest split");
  FallacyFlags corrupt_flags;
  corrupt_flags.add(corrupt_cmd);
  std::string corrupt_manifest_path, corrupt_out, corrupt_split = "test";
  unsigned corrupt_threads = 0;
  corrupt_cmd->add_option("--in-manifest", corrupt_manifest_path, "Manifest to read")->required();
  corrupt_cmd->add_option("--out-dir", corrupt_out, "Directory for corrupted PNGs and regions.tsv")->required();
  corrupt_cmd->add_option("--split", corrupt_split, "train, test or all")->capture_default_str();
  corrupt_cmd->add_option("--threads", corrupt_threads, "Worker threads (0: all cores)")->capture_default_str();

  // train ------------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Train (and benchmark) the experiment described by a JSON spec");
  std::string spec_path;
  bool resume = false, no_eval = false;
  std::int64_t max_steps = -1;
  train->add_option("--spec", spec_path, "Experiment spec (JSON)")->required();
  train->add_flag("--resume", resume, "Continue from <output_dir>/<name>/checkpoints/latest.ckpt");
  train->add_option("--max-steps", max_steps, "Stop after this many steps and save latest.ckpt (-1: no limit)")
      ->capture_default_str();
  train->add_flag("--no-eval", no_eval, "Skip the fallacy benchmark after training");

  // inpaint ----------------------------------------------------------------
  auto* inpaint_cmd = app.add_subcommand("inpaint", "Repair regions of road maps with a trained generator");
  std::string inp_ckpt, inp_input, inp_region, inp_log, inp_input_dir, inp_out;
  inpaint_cmd->add_option("--checkpoint", inp_ckpt, "Trained checkpoint")->required();
  inpaint_cmd->add_option("--input", inp_input, "Single 256x256 map to repair");
  inpaint_cmd->add_option("--region", inp_region, "TOP,LEFT,SIZE of the region to repair (with --input)");
  inpaint_cmd->add_option("--region-log", inp_log, "regions.tsv from corrupt; repairs every row");
  inpaint_cmd->add_option("--input-dir", inp_input_dir, "Directory of <tile_id>.png maps (with --region-log)");
  inpaint_cmd->add_option("--out", inp_out, "Output PNG (single) or directory (batch)")->required();

  // evaluate ---------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("evaluate", "Corrupt, repair and score a manifest split");
  FallacyFlags eval_flags;
  eval_flags.add(eval_cmd);
  std::string eval_ckpt, eval_debug, eval_manifest, eval_corrupted, eval_out, eval_scope = "mask-region",
                                                                             eval_split = "test", eval_name;
  int eval_rho = 2;
  unsigned eval_threads = 0;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Trained checkpoint");
  eval_cmd->add_option("--debug-model", eval_debug, "identity or zero instead of a checkpoint");
  eval_cmd->add_option("--manifest", eval_manifest, "Manifest with ground-truth tiles")->required();
  eval_cmd->add_option("--corrupted-dir", eval_corrupted,
                       "Output of corrupt (regions.tsv + PNGs); otherwise tiles are corrupted on the fly");
  eval_cmd->add_option("--rho", eval_rho, "Buffer tolerance in pixels")->capture_default_str();
  eval_cmd->add_option("--scope", eval_scope, "mask-region or full-tile")->capture_default_str();
  eval_cmd->add_option("--split", eval_split, "train or test")->capture_default_str();
  eval_cmd->add_option("--name", eval_name, "Model name in the table (default: checkpoint stem or debug model)");
  eval_cmd->add_option("--out-dir", eval_out, "Directory for report.csv, report.md and eval.json")->required();
  eval_cmd->add_option("--threads", eval_threads, "Worker threads (0: all cores)")->capture_default_str();

  // report -----------------------------------------------------------------
  auto* report = app.add_subcommand("report", "Combine per-model report CSVs into one comparison table");
  std::vector<std::string> rep_inputs;
  std::string rep_out, rep_scope = "mask-region";
  int rep_rho = 2;
  report->add_option("--input", rep_inputs, "NAME=PATH of a report.csv (repeatable, table order)")->required();
  report->add_option("--scope", rep_scope, "Scope the reports were computed at")->capture_default_str();
  report->add_option("--rho", rep_rho, "Buffer the reports were computed at")->capture_default_str();
  report->add_option("--out", rep_out, "Markdown output (default: standard output)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (*prepare) {
    if (prep_synthetic > 0) {
      if (!prep_root.empty()) throw InvalidArgument("give either --root or --synthetic, not both");
      const Manifest m = write_synthetic_dataset(prep_out, prep_synthetic, mopt.seed);
      std::cout << "wrote " << m.entries.size() << " tiles to " << (fs::path(prep_out) / "manifest.tsv").string()
                << "\n";
      return 0;
    }
    if (prep_root.empty()) throw InvalidArgument("prepare needs --root (or --synthetic)");
    if (!prep_tags.empty()) mopt.tags = prep_tags;
    if (!prep_test_sources.empty()) {
      std::vector<std::string> stems;
      std::istringstream in(detail::read_text(prep_test_sources));
      for (std::string line; std::getline(in, line);) {
        line = detail::strip_cr(line);
        if (!line.empty() && line[0] != '#') stems.push_back(line);
      }
      mopt.test_sources = stems;
    }
    const Manifest m = build_manifest(prep_root, prep_out, mopt);
    write_manifest(m, fs::path(prep_out) / "manifest.tsv");
    std::cout << "wrote " << m.entries.size() << " tiles (" << m.count(Split::kTrain) << " train, "
              << m.count(Split::kTest) << " test) to " << (fs::path(prep_out) / "manifest.tsv").string() << "\n";
    return 0;
  }

  if (*corrupt_cmd) {
    CorruptOptions opt;
    opt.fallacy = corrupt_flags.get();
    opt.split = parse_split_flag(corrupt_split);
    opt.threads = corrupt_threads;
    const RegionLog log = corrupt_manifest(read_manifest(corrupt_manifest_path), corrupt_out, opt);
    std::cout << "corrupted " << log.records.size() << " tiles into " << corrupt_out << "\n";
    return 0;
  }

  if (*train) {
    const ExperimentSpec spec = read_experiment(spec_path);
    RunOptions opt;
    opt.resume = resume;
    if (max_steps >= 0) opt.max_steps = max_steps;
    opt.evaluate = !no_eval;
    const ExperimentResult res = run_experiment(spec, opt);
    std::cout << "checkpoint: " << res.checkpoint.string() << "\n";
    for (std::size_t i = 0; i < res.reports.size(); ++i) {
      const auto& [f, r] = res.reports[i];
      const Aggregate a = r.overall();
      std::printf("%-8s correctness %.3f  completeness %.3f  quality %.3f  (%zu tiles)\n", to_string(f.kind).c_str(),
                  a.mean.correctness, a.mean.completeness, a.mean.quality, a.tiles);
    }
    return 0;
  }

  if (*inpaint_cmd) {
    const Checkpoint c = load_checkpoint(inp_ckpt);
    Generator<float> g = load_generator(c);
    if (!inp_log.empty()) {
      if (inp_input_dir.empty()) throw InvalidArgument("--region-log needs --input-dir");
      const RegionLog log = read_region_log(inp_log);
      fs::create_directories(inp_out);
      for (const auto& rec : log.records) {
        const RoadRaster in = binarize(load_raster(fs::path(inp_input_dir) / (rec.tile_id + ".png")));
        save_raster(inpaint(g, in, rec.region), fs::path(inp_out) / (rec.tile_id + ".png"));
      }
      std::cout << "repaired " << log.records.size() << " maps into " << inp_out << "\n";
      return 0;
    }
    if (inp_input.empty() || inp_region.empty()) {
      throw InvalidArgument("inpaint needs --input with --region, or --region-log with --input-dir");
    }
    const RoadRaster in = binarize(load_raster(inp_input));
    save_raster(inpaint(g, in, parse_region(inp_region)), inp_out);
    return 0;
  }

  if (*eval_cmd) {
    if (eval_ckpt.empty() == eval_debug.empty()) throw InvalidArgument("give exactly one of --checkpoint or --debug-model");
    EvalOptions opt;
    opt.rho = eval_rho;
    opt.scope = parse_scope(eval_scope);
    const auto split = parse_split_flag(eval_split);
    if (!split) throw InvalidArgument("--split must be train or test");
    opt.split = *split;
    opt.threads = eval_threads;
    if (eval_corrupted.empty()) opt.fallacy = eval_flags.get();

    std::optional<Generator<float>> g;
    InpaintFn model;
    std::string name = eval_name;
    if (!eval_debug.empty()) {
      if (eval_debug == "identity") {
        model = identity_inpainter();
      } else if (eval_debug == "zero") {
        model = zero_inpainter();
      } else {
        throw InvalidArgument("unknown debug model '" + eval_debug + "' (expected identity or zero)");
      }
      if (name.empty()) name = eval_debug;
    } else {
      g.emplace(load_generator(load_checkpoint(eval_ckpt)));
      model = generator_inpainter(*g);
      if (name.empty()) name = fs::path(eval_ckpt).stem().string();
    }
    const Manifest m = read_manifest(eval_manifest);
    const MetricsReport r =
        eval_corrupted.empty() ? evaluate(m, model, opt) : evaluate_corrupted(m, eval_corrupted, model, opt);

    const fs::path out(eval_out);
    detail::write_text(out / "report.csv", report_csv(r));
    detail::write_text(out / "report.md", comparison_table({{name, r}}));
    nlohmann::json used = {{"manifest", eval_manifest},
                           {"model", eval_debug.empty() ? eval_ckpt : "debug:" + eval_debug},
                           {"rho", opt.rho},
                           {"scope", to_string(opt.scope)},
                           {"split", to_string(opt.split)},
                           {"tiles", r.tiles.size()},
                           {"skipped", r.skipped}};
    if (eval_corrupted.empty()) {
      used["fallacy"] = opt.fallacy;
    } else {
      used["corrupted_dir"] = eval_corrupted;
    }
    detail::write_text(out / "eval.json", used.dump(2) + "\n");
    const Aggregate a = r.overall();
    std::printf("%s: correctness %.3f  completeness %.3f  quality %.3f  (%zu tiles, %zu skipped)\n", name.c_str(),
                a.mean.correctness, a.mean.completeness, a.mean.quality, a.tiles, r.skipped.size());
    return 0;
  }

  if (*report) {
    std::vector<std::pair<std::string, MetricsReport>> models;
    const Scope scope = parse_scope(rep_scope);
    for (const auto& in : rep_inputs) {
      const auto eq = in.find('=');
      if (eq == std::string::npos || eq == 0) throw InvalidArgument("--input must be NAME=PATH, got '" + in + "'");
      MetricsReport r = parse_report_csv(detail::read_text(in.substr(eq + 1)));
      r.scope = scope;
      r.rho = rep_rho;
      models.emplace_back(in.substr(0, eq), std::move(r));
    }
    const std::string table = comparison_table(models);
    if (rep_out.empty()) {
      std::cout << table;
    } else {
      detail::write_text(rep_out, table);
    }
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  roadfix::nn::retain_freed_memory();
  try {
    return run(argc, argv);
  } catch (const roadfix::InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
