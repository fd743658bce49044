#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "roadfix/checkpoint.hpp"
#include "roadfix/dataset.hpp"
#include "roadfix/errors.hpp"
#include "roadfix/evaluate.hpp"
#include "roadfix/fallacy.hpp"
#include "roadfix/metrics.hpp"
#include "roadfix/png_codec.hpp"
#include "roadfix/synthetic.hpp"
#include "roadfix/trainer.hpp"

namespace roadfix {

// ---------------------------------------------------------------------------
// Presets: architecture and loss pairs of the three compared models.

struct Preset {
  std::string name;
  Variant variant;
  ReconLoss recon;
  AdvLoss adv;
};

inline const std::vector<Preset>& presets() {
  static const std::vector<Preset> all = {
      {"vanilla-glcic", Variant::kGlcic, ReconLoss::kMse, AdvLoss::kBce},
      {"glcrc", Variant::kGlcrc, ReconLoss::kMse, AdvLoss::kBce},
      {"glcrc+l", Variant::kGlcrc, ReconLoss::kPerceptual, AdvLoss::kRalsgan},
  };
  return all;
}

inline std::string preset_names() {
  std::string s;
  for (const auto& p : presets()) s += (s.empty() ? "" : ", ") + p.name;
  return s;
}

inline const Preset& find_preset(const std::string& name) {
  for (const auto& p : presets())
    if (p.name == name) return p;
  throw InvalidArgument("unknown preset '" + name + "' (valid presets: " + preset_names() + ")");
}

// ---------------------------------------------------------------------------
// Synthetic dataset on disk

/// Writes `count` procedurally drawn tiles to `<dir>/tiles/` and a manifest
/// to `<dir>/manifest.tsv`; round(count * test_fraction) tiles, chosen by a
/// seeded shuffle, form the test split.
inline Manifest write_synthetic_dataset(const fs::path& dir, int count, std::uint64_t seed,
                                        double test_fraction = 0.25) {
  if (count < 1) throw InvalidArgument("synthetic dataset needs at least one tile");
  if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) throw InvalidArgument("test_fraction must lie in [0,1]");
  const auto tiles = synthetic::corpus(count, kTileSide, seed);
  std::vector<std::size_t> order(tiles.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), std::mt19937_64(derive_seed(seed, "synthetic-split")));
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * count));
  std::set<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));

  Manifest m;
  m.base_dir = dir;
  m.header = {{"source", "synthetic"},
              {"seed", std::to_string(seed)},
              {"tiles", std::to_string(count)},
              {"test_fraction", detail::fmt_double(test_fraction)}};
  fs::create_directories(dir / "tiles");
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const fs::path rel = fs::path("tiles") / (tiles[i].id + ".png");
    save_raster(tiles[i].raster, dir / rel);
    m.entries.push_back({tiles[i].id, rel.generic_string(), test.count(i) ? Split::kTest : Split::kTrain,
                         tiles[i].type});
  }
  write_manifest(m, dir / "manifest.tsv");
  return m;
}

// ---------------------------------------------------------------------------
// Experiment spec

struct MetricSettings {
  int rho = 2;
  Scope scope = Scope::kMaskRegion;
};

struct SyntheticSource {
  int tiles = 64;
  std::uint64_t seed = 0;
  double test_fraction = 0.25;
};

/// Everything needed to rerun an experiment: dataset, preset, training
/// settings, the fallacies to benchmark and how to score them.
struct ExperimentSpec {
  std::string name;
  std::string preset = "glcrc+l";
  std::optional<fs::path> manifest;
  std::optional<SyntheticSource> synthetic;
  fs::path output_dir = "runs";
  TrainConfig train;
  std::vector<FallacyConfig> fallacies{FallacyConfig{}};
  MetricSettings metrics;
  unsigned threads = 0;

  fs::path run_dir() const { return output_dir / name; }
};

namespace detail {

class SpecReader {
 public:
  std::vector<std::string> problems;

  void keys(const nlohmann::json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) {
      problems.push_back(where + ": expected an object");
      return;
    }
    for (const auto& [k, v] : obj.items()) {
      if (std::none_of(allowed.begin(), allowed.end(), [&k](const char* a) { return k == a; })) {
        problems.push_back(where + (where.empty() ? "" : ".") + k + ": unknown key");
      }
    }
  }

  template <typename V>
  void get(const nlohmann::json& obj, const char* key, const std::string& where, V& out) {
    if (!obj.is_object() || !obj.contains(key)) return;
    try {
      out = obj.at(key).get<V>();
    } catch (const std::exception&) {
      problems.push_back(where + (where.empty() ? "" : ".") + key + ": wrong type");
    }
  }
};

}  // namespace detail

/// Parses and validates a spec; every offending field is reported at once.
inline ExperimentSpec parse_experiment(const nlohmann::json& j) {
  detail::SpecReader rd;
  ExperimentSpec s;
  rd.keys(j, "", {"name", "preset", "dataset", "output_dir", "train", "fallacies", "metrics", "threads"});
  if (!j.is_object()) throw InvalidArgument("invalid experiment spec:\n  expected a JSON object");

  rd.get(j, "name", "", s.name);
  if (s.name.empty()) rd.problems.push_back("name: required, non-empty");
  if (s.name.find_first_of("/\\") != std::string::npos || s.name == "." || s.name == "..") {
    rd.problems.push_back("name: must be a plain directory name");
  }
  rd.get(j, "preset", "", s.preset);
  const Preset* preset = nullptr;
  for (const auto& p : presets())
    if (p.name == s.preset) preset = &p;
  if (!preset) rd.problems.push_back("preset: unknown '" + s.preset + "' (valid presets: " + preset_names() + ")");
  std::string out_dir = s.output_dir.string();
  rd.get(j, "output_dir", "", out_dir);
  s.output_dir = out_dir;
  rd.get(j, "threads", "", s.threads);

  if (!j.contains("dataset")) {
    rd.problems.push_back("dataset: required (manifest or synthetic)");
  } else {
    const auto& d = j.at("dataset");
    rd.keys(d, "dataset", {"manifest", "synthetic"});
    if (d.is_object()) {
      if (d.contains("manifest") == d.contains("synthetic")) {
        rd.problems.push_back("dataset: give exactly one of manifest or synthetic");
      }
      if (d.contains("manifest")) {
        std::string p;
        rd.get(d, "manifest", "dataset", p);
        s.manifest = p;
      }
      if (d.contains("synthetic")) {
        const auto& sy = d.at("synthetic");
        rd.keys(sy, "dataset.synthetic", {"tiles", "seed", "test_fraction"});
        SyntheticSource src;
        rd.get(sy, "tiles", "dataset.synthetic", src.tiles);
        rd.get(sy, "seed", "dataset.synthetic", src.seed);
        rd.get(sy, "test_fraction", "dataset.synthetic", src.test_fraction);
        if (src.tiles < 1) rd.problems.push_back("dataset.synthetic.tiles: must be >= 1");
        if (!(src.test_fraction >= 0.0 && src.test_fraction <= 1.0)) {
          rd.problems.push_back("dataset.synthetic.test_fraction: must lie in [0,1]");
        }
        s.synthetic = src;
      }
    }
  }

  int base = s.train.model.generator.base_channels;
  if (j.contains("train")) {
    const auto& t = j.at("train");
    const std::string w = "train";
    rd.keys(t, w,
            {"base_channels", "scale", "batch_size", "lr_g", "lr_d", "beta1", "beta2", "seed", "g_pretrain_steps",
             "d_pretrain_steps", "joint_steps", "sampling", "checkpoint_every", "adv_weight", "perceptual_layers",
             "extractor_seed"});
    auto& c = s.train;
    rd.get(t, "base_channels", w, base);
    rd.get(t, "scale", w, c.scale);
    rd.get(t, "batch_size", w, c.batch_size);
    rd.get(t, "lr_g", w, c.lr_g);
    rd.get(t, "lr_d", w, c.lr_d);
    rd.get(t, "beta1", w, c.beta1);
    rd.get(t, "beta2", w, c.beta2);
    rd.get(t, "seed", w, c.seed);
    rd.get(t, "g_pretrain_steps", w, c.g_pretrain_steps);
    rd.get(t, "d_pretrain_steps", w, c.d_pretrain_steps);
    rd.get(t, "joint_steps", w, c.joint_steps);
    rd.get(t, "checkpoint_every", w, c.checkpoint_every);
    rd.get(t, "adv_weight", w, c.loss.adv_weight);
    rd.get(t, "perceptual_layers", w, c.loss.perceptual_layers);
    rd.get(t, "extractor_seed", w, c.extractor_seed);
    if (t.is_object() && t.contains("sampling")) {
      const auto& sm = t.at("sampling");
      rd.keys(sm, "train.sampling", {"m_min", "m_max", "p", "max_tries"});
      rd.get(sm, "m_min", "train.sampling", c.sampling.m_min);
      rd.get(sm, "m_max", "train.sampling", c.sampling.m_max);
      rd.get(sm, "p", "train.sampling", c.sampling.p);
      rd.get(sm, "max_tries", "train.sampling", c.sampling.max_tries);
    }
  }
  if (base < 1) {
    rd.problems.push_back("train.base_channels: must be >= 1");
  } else if (preset) {
    s.train.model = ModelConfig::make(preset->variant, base);
    s.train.loss.recon = preset->recon;
    s.train.loss.adv = preset->adv;
    for (const auto& p : s.train.problems()) rd.problems.push_back(p);
  }

  if (j.contains("fallacies")) {
    const auto& f = j.at("fallacies");
    if (!f.is_array() || f.empty()) {
      rd.problems.push_back("fallacies: expected a non-empty array");
    } else {
      s.fallacies.clear();
      for (std::size_t i = 0; i < f.size(); ++i) {
        const std::string w = "fallacies[" + std::to_string(i) + "]";
        rd.keys(f[i], w, {"kind", "n", "erosion_kernel", "blur_passes", "m_min", "m_max", "p", "max_tries", "seed"});
        FallacyConfig fc;
        std::string kind = to_string(fc.kind);
        rd.get(f[i], "kind", w, kind);
        try {
          fc.kind = parse_fallacy_kind(kind);
        } catch (const InvalidArgument& e) {
          rd.problems.push_back(w + ".kind: " + e.what());
        }
        rd.get(f[i], "n", w, fc.n);
        rd.get(f[i], "erosion_kernel", w, fc.erosion_kernel);
        rd.get(f[i], "blur_passes", w, fc.blur_passes);
        rd.get(f[i], "m_min", w, fc.m_min);
        rd.get(f[i], "m_max", w, fc.m_max);
        rd.get(f[i], "p", w, fc.p);
        rd.get(f[i], "max_tries", w, fc.max_tries);
        rd.get(f[i], "seed", w, fc.seed);
        for (const auto& p : fc.problems()) rd.problems.push_back(w + ": " + p);
        if (fc.m_max > DiscriminatorConfig{}.local_side) {
          rd.problems.push_back(w + ": m_max must not exceed the local patch side 128");
        }
        s.fallacies.push_back(fc);
      }
    }
  }

  if (j.contains("metrics")) {
    const auto& m = j.at("metrics");
    rd.keys(m, "metrics", {"rho", "scope"});
    rd.get(m, "rho", "metrics", s.metrics.rho);
    if (s.metrics.rho < 0) rd.problems.push_back("metrics.rho: must be >= 0");
    std::string scope = to_string(s.metrics.scope);
    rd.get(m, "scope", "metrics", scope);
    try {
      s.metrics.scope = parse_scope(scope);
    } catch (const InvalidArgument& e) {
      rd.problems.push_back(std::string("metrics.scope: ") + e.what());
    }
  }

  if (!rd.problems.empty()) {
    std::string msg = "invalid experiment spec:";
    for (const auto& p : rd.problems) msg += "\n  " + p;
    throw InvalidArgument(msg);
  }
  return s;
}

inline ExperimentSpec read_experiment(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument("spec " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_experiment(j);
}

inline nlohmann::json spec_json(const ExperimentSpec& s) {
  nlohmann::json j;
  j["name"] = s.name;
  j["preset"] = s.preset;
  if (s.manifest) j["dataset"]["manifest"] = s.manifest->string();
  if (s.synthetic) {
    j["dataset"]["synthetic"] = {
        {"tiles", s.synthetic->tiles}, {"seed", s.synthetic->seed}, {"test_fraction", s.synthetic->test_fraction}};
  }
  j["output_dir"] = s.output_dir.string();
  const auto& c = s.train;
  j["train"] = {{"base_channels", c.model.generator.base_channels},
                {"scale", c.scale},
                {"batch_size", c.batch_size},
                {"lr_g", c.lr_g},
                {"lr_d", c.lr_d},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"seed", c.seed},
                {"g_pretrain_steps", c.g_pretrain_steps},
                {"d_pretrain_steps", c.d_pretrain_steps},
                {"joint_steps", c.joint_steps},
                {"sampling", c.sampling},
                {"checkpoint_every", c.checkpoint_every},
                {"adv_weight", c.loss.adv_weight},
                {"perceptual_layers", c.loss.perceptual_layers},
                {"extractor_seed", c.extractor_seed}};
  j["fallacies"] = s.fallacies;
  j["metrics"] = {{"rho", s.metrics.rho}, {"scope", to_string(s.metrics.scope)}};
  j["threads"] = s.threads;
  return j;
}

// ---------------------------------------------------------------------------
// Running

struct ExperimentResult {
  fs::path run_dir;
  fs::path checkpoint;
  std::vector<std::pair<FallacyConfig, MetricsReport>> reports;
};

struct RunOptions {
  bool resume = false;                      // continue from <run>/checkpoints/latest.ckpt
  std::optional<std::int64_t> max_steps;    // stop early and leave a resumable checkpoint
  bool evaluate = true;
};

inline std::string report_name(const FallacyConfig& f, std::size_t index) {
  return std::to_string(index) + "_" + to_string(f.kind);
}

/// Manifest the spec points at, materialising the synthetic corpus if asked.
inline Manifest experiment_manifest(const ExperimentSpec& s) {
  if (s.manifest) return read_manifest(*s.manifest);
  const auto& src = *s.synthetic;
  const fs::path dir = s.run_dir() / "data";
  if (fs::exists(dir / "manifest.tsv")) return read_manifest(dir / "manifest.tsv");
  return write_synthetic_dataset(dir, src.tiles, src.seed, src.test_fraction);
}

/// Trains under `<output_dir>/<name>/`, then benchmarks every fallacy.
/// The spec, run log, checkpoints and reports all land in that directory.
inline ExperimentResult run_experiment(const ExperimentSpec& s, const RunOptions& opt = {}) {
  ExperimentResult res;
  res.run_dir = s.run_dir();
  fs::create_directories(res.run_dir);
  detail::write_text(res.run_dir / "spec.json", spec_json(s).dump(2) + "\n");
  const Manifest m = experiment_manifest(s);
  auto tiles = tiles_from_manifest(m, Split::kTrain);
  if (tiles.empty()) throw InvalidArgument("the training split is empty");

  const fs::path latest = res.run_dir / "checkpoints" / "latest.ckpt";
  std::optional<Trainer> trainer;
  if (opt.resume) {
    if (!fs::exists(latest)) throw InvalidArgument("nothing to resume: " + latest.string() + " does not exist");
    trainer.emplace(Trainer::resume(latest, std::move(tiles), res.run_dir, &s.train));
  } else {
    trainer.emplace(s.train, std::move(tiles), res.run_dir);
  }
  if (!trainer->run(opt.max_steps)) {
    trainer->save(latest);
    res.checkpoint = latest;
    return res;
  }
  res.checkpoint = res.run_dir / "final.ckpt";
  if (!opt.evaluate) return res;

  Generator<float>& g = trainer->generator();
  const fs::path report_dir = res.run_dir / "reports";
  for (std::size_t i = 0; i < s.fallacies.size(); ++i) {
    EvalOptions eo;
    eo.fallacy = s.fallacies[i];
    eo.rho = s.metrics.rho;
    eo.scope = s.metrics.scope;
    eo.threads = s.threads;
    MetricsReport r = evaluate(m, generator_inpainter(g), eo);
    const std::string base = report_name(s.fallacies[i], i);
    detail::write_text(report_dir / (base + ".csv"), report_csv(r));
    detail::write_text(report_dir / (base + ".md"), comparison_table({{s.preset, r}}));
    res.reports.emplace_back(s.fallacies[i], std::move(r));
  }
  return res;
}

}  // namespace roadfix
