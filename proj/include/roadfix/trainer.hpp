#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "roadfix/checkpoint.hpp"
#include "roadfix/dataset.hpp"
#include "roadfix/errors.hpp"
#include "roadfix/hash.hpp"
#include "roadfix/losses.hpp"
#include "roadfix/model.hpp"
#include "roadfix/nn/adam.hpp"

namespace roadfix {

// ---------------------------------------------------------------------------
// Configuration

struct TrainConfig {
  ModelConfig model = ModelConfig::make(Variant::kGlcrc, 32);
  LossConfig loss;
  // Full-length schedule; `scale` maps it to the steps actually run.
  std::int64_t g_pretrain_steps = 90000;
  std::int64_t d_pretrain_steps = 40000;
  std::int64_t joint_steps = 90000;
  double scale = 0.01;
  int batch_size = 16;
  double lr_g = 1e-4;
  double lr_d = 4e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  std::uint64_t seed = 0;
  RegionSampling sampling;
  std::int64_t checkpoint_every = 0;  // 0: phase ends and final only
  std::uint64_t extractor_seed = 0x5eed;

  /// Steps per phase after scaling; an enabled phase runs at least once.
  std::array<std::int64_t, 3> phase_steps() const {
    auto scaled = [this](std::int64_t n) -> std::int64_t {
      if (n <= 0) return 0;
      return std::max<std::int64_t>(1, std::llround(scale * static_cast<double>(n)));
    };
    return {scaled(g_pretrain_steps), scaled(d_pretrain_steps), scaled(joint_steps)};
  }

  std::vector<std::string> problems() const {
    std::vector<std::string> out = model.problems();
    for (const auto& p : loss.problems()) out.push_back(p);
    if (!(scale > 0.0 && scale <= 1.0)) out.push_back("train.scale must lie in (0,1]");
    if (g_pretrain_steps < 0) out.push_back("train.g_pretrain_steps must be >= 0");
    if (d_pretrain_steps < 0) out.push_back("train.d_pretrain_steps must be >= 0");
    if (joint_steps < 0) out.push_back("train.joint_steps must be >= 0");
    if (batch_size < 1) out.push_back("train.batch_size must be >= 1");
    if (!(lr_g > 0.0)) out.push_back("train.lr_g must be > 0");
    if (!(lr_d > 0.0)) out.push_back("train.lr_d must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) out.push_back("train.beta1 must lie in [0,1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) out.push_back("train.beta2 must lie in [0,1)");
    if (checkpoint_every < 0) out.push_back("train.checkpoint_every must be >= 0");
    for (const auto& p : sampling.problems()) out.push_back("train.sampling: " + p);
    if (sampling.m_max > model.discriminator.local_side) {
      out.push_back("train.sampling: m_max must not exceed the local patch side " +
                    std::to_string(model.discriminator.local_side));
    }
    return out;
  }

  void validate() const {
    const auto p = problems();
    if (p.empty()) return;
    std::string msg = "invalid training config:";
    for (const auto& s : p) msg += "\n  " + s;
    throw InvalidArgument(msg);
  }
};

inline void to_json(nlohmann::json& j, const RegionSampling& s) {
  j = {{"m_min", s.m_min}, {"m_max", s.m_max}, {"p", s.p}, {"max_tries", s.max_tries}};
}

inline void from_json(const nlohmann::json& j, RegionSampling& s) {
  s = RegionSampling{};
  s.m_min = j.value("m_min", s.m_min);
  s.m_max = j.value("m_max", s.m_max);
  s.p = j.value("p", s.p);
  s.max_tries = j.value("max_tries", s.max_tries);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"model", c.model},
       {"loss", c.loss},
       {"g_pretrain_steps", c.g_pretrain_steps},
       {"d_pretrain_steps", c.d_pretrain_steps},
       {"joint_steps", c.joint_steps},
       {"scale", c.scale},
       {"batch_size", c.batch_size},
       {"lr_g", c.lr_g},
       {"lr_d", c.lr_d},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"seed", c.seed},
       {"sampling", c.sampling},
       {"checkpoint_every", c.checkpoint_every},
       {"extractor_seed", c.extractor_seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
  if (j.contains("loss")) c.loss = j.at("loss").get<LossConfig>();
  c.g_pretrain_steps = j.value("g_pretrain_steps", c.g_pretrain_steps);
  c.d_pretrain_steps = j.value("d_pretrain_steps", c.d_pretrain_steps);
  c.joint_steps = j.value("joint_steps", c.joint_steps);
  c.scale = j.value("scale", c.scale);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr_g = j.value("lr_g", c.lr_g);
  c.lr_d = j.value("lr_d", c.lr_d);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.seed = j.value("seed", c.seed);
  if (j.contains("sampling")) c.sampling = j.at("sampling").get<RegionSampling>();
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.extractor_seed = j.value("extractor_seed", c.extractor_seed);
}

// ---------------------------------------------------------------------------
// Data

/// A training tile held in memory, or read from disk each time it is drawn.
struct TrainTile {
  std::string id;
  std::optional<RoadRaster> raster;
  fs::path path;

  RoadRaster get() const {
    if (raster) return *raster;
    RoadRaster r = binarize(load_raster(path));
    if (r.height() != kTileSide || r.width() != kTileSide) {
      throw TrainingError("tile '" + id + "' is not " + std::to_string(kTileSide) + "x" + std::to_string(kTileSide));
    }
    return r;
  }
};

inline std::vector<TrainTile> tiles_from_manifest(const Manifest& m, Split split = Split::kTrain) {
  std::vector<TrainTile> out;
  for (const auto& e : m.select(split)) out.push_back({e.tile_id, std::nullopt, m.resolve(e)});
  return out;
}

/// One training batch: 2-channel generator input, target, mask indicator,
/// and the regions with their local critic windows.
struct Batch {
  std::vector<std::string> tile_ids;
  std::vector<MaskRegion> regions;
  std::vector<MaskRegion> windows;
  Tensor<float> input, target, mask;
};

inline Batch assemble_batch(const std::vector<std::string>& ids, const std::vector<TrainingExample>& examples,
                            int local_side) {
  const int n = static_cast<int>(examples.size());
  const int h = examples.front().target.height(), w = examples.front().target.width();
  Batch b;
  b.tile_ids = ids;
  b.input = Tensor<float>(n, 2, h, w);
  b.target = Tensor<float>(n, 1, h, w);
  b.mask = Tensor<float>(n, 1, h, w);
  for (int i = 0; i < n; ++i) {
    const auto& ex = examples[i];
    std::copy(ex.input.values().begin(), ex.input.values().end(), b.input.plane(i, 0));
    std::copy(ex.mask.values().begin(), ex.mask.values().end(), b.input.plane(i, 1));
    std::copy(ex.target.values().begin(), ex.target.values().end(), b.target.plane(i, 0));
    std::copy(ex.mask.values().begin(), ex.mask.values().end(), b.mask.plane(i, 0));
    b.regions.push_back(ex.region);
    b.windows.push_back(local_window(ex.region, h, w, local_side));
  }
  return b;
}

/// pred inside the mask, the known map outside it.
inline Tensor<float> composite(const Tensor<float>& pred, const Batch& b) {
  Tensor<float> out(pred.shape());
  for (std::size_t i = 0; i < pred.size(); ++i) out[i] = pred[i] * b.mask[i] + b.target[i] * (1.0f - b.mask[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Trainer

/// Position in the schedule: phase 1 (generator), 2 (critic), 3 (joint),
/// 4 once finished. `step` counts steps already done in that phase.
struct Position {
  int phase = 1;
  std::int64_t step = 0;
  friend bool operator==(const Position&, const Position&) = default;
};

/// Three-phase schedule: generator on reconstruction, critic against the
/// frozen generator, then one critic step and one generator step per
/// iteration. All randomness is a function of (seed, step), so a resumed
/// run replays exactly what an uninterrupted one would have done.
class Trainer {
 public:
  static constexpr const char* kLogName = "run_log.tsv";
  static constexpr const char* kTimingName = "timing.tsv";

  /// Fresh run. With an empty out_dir nothing is written to disk and the
  /// log is only kept in memory.
  Trainer(TrainConfig cfg, std::vector<TrainTile> tiles, fs::path out_dir = {})
      : Trainer(std::move(cfg), std::move(tiles), std::move(out_dir), true) {}

  /// Continues the run saved in `checkpoint`. When `expected` is given its
  /// model must hash like the stored one.
  static Trainer resume(const fs::path& checkpoint, std::vector<TrainTile> tiles, fs::path out_dir = {},
                        const TrainConfig* expected = nullptr) {
    const Checkpoint c = load_checkpoint(checkpoint);
    checkpoint_model_config(c, expected ? &expected->model : nullptr);
    TrainConfig cfg;
    try {
      cfg = c.config.get<TrainConfig>();
    } catch (const std::exception& e) {
      throw CheckpointError(std::string("checkpoint training config: ") + e.what());
    }
    if (expected && nlohmann::json(*expected) != c.config) {
      std::string diff;
      const nlohmann::json want(*expected);
      for (const auto& [k, v] : want.items())
        if (!c.config.contains(k) || c.config.at(k) != v) diff += " " + k;
      throw CheckpointError("training config differs from the checkpoint in:" + diff);
    }
    Trainer t(std::move(cfg), std::move(tiles), std::move(out_dir), false);
    t.restore(c);
    return t;
  }

  const TrainConfig& config() const { return cfg_; }
  Position position() const { return pos_; }
  bool finished() const { return pos_.phase > 3; }
  Generator<float>& generator() { return gen_; }
  Discriminator<float>& discriminator() { return disc_; }
  const std::string& log_text() const { return log_; }
  const FeatureExtractor<float>* extractor() const { return extractor_ ? &*extractor_ : nullptr; }

  /// Runs until the schedule ends or `max_steps` further steps are done.
  /// Returns true when the schedule is complete.
  bool run(std::optional<std::int64_t> max_steps = std::nullopt) {
    std::int64_t done = 0;
    while (!finished()) {
      if (max_steps && done >= *max_steps) return false;
      const auto t0 = std::chrono::steady_clock::now();
      const Position at = pos_;
      if (at.phase == 1) {
        phase1_step();
      } else if (at.phase == 2) {
        phase2_step();
      } else {
        phase3_step();
      }
      ++pos_.step;
      ++done;
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      record_timing(at, secs);
      normalize();
      if (!out_dir_.empty()) {
        if (cfg_.checkpoint_every > 0 && global_step(at) % cfg_.checkpoint_every == cfg_.checkpoint_every - 1) {
          save(out_dir_ / "checkpoints" / ("step_" + std::to_string(global_step(at) + 1) + ".ckpt"));
        }
        if (pos_.phase != at.phase) save(out_dir_ / "checkpoints" / ("phase" + std::to_string(at.phase) + ".ckpt"));
      }
    }
    if (!out_dir_.empty()) save(out_dir_ / "final.ckpt");
    return true;
  }

  /// Parameters, optimiser state, schedule position and log offset.
  void save(const fs::path& path) {
    Checkpoint c;
    c.config = nlohmann::json(cfg_);
    c.config_hash = config_hash(cfg_.model);
    c.meta = {{"phase", pos_.phase},
              {"step", pos_.step},
              {"log_offset", log_.size()},
              {"adam_g_steps", adam_g_.steps()},
              {"adam_d_steps", adam_d_.steps()},
              {"extractor", extractor_ ? extractor_->provenance() : std::string("none")}};
    auto gp = gen_.parameters();
    auto dp = disc_.parameters();
    append_tensors(c, gp);
    append_tensors(c, dp);
    append_tensors(c, adam_g_.state(gp));
    append_tensors(c, adam_d_.state(dp));
    save_checkpoint(c, path);
  }

  /// Tile ids the batch of global step `g` draws (one batch per joint iteration).
  std::vector<std::string> batch_tile_ids(Position at) { return make_batch(at).tile_ids; }

  /// Global step index: phases laid end to end.
  std::int64_t global_step(Position at) const {
    const auto n = cfg_.phase_steps();
    std::int64_t g = at.step;
    for (int p = 1; p < at.phase && p <= 3; ++p) g += n[p - 1];
    return g;
  }

 private:
  Trainer(TrainConfig cfg, std::vector<TrainTile> tiles, fs::path out_dir, bool fresh)
      : cfg_(std::move(cfg)),
        tiles_(std::move(tiles)),
        out_dir_(std::move(out_dir)),
        gen_((cfg_.validate(), cfg_.model.generator), derive_seed(cfg_.seed, "generator")),
        disc_(cfg_.model.discriminator, derive_seed(cfg_.seed, "discriminator")),
        adam_g_({cfg_.lr_g, cfg_.beta1, cfg_.beta2}),
        adam_d_({cfg_.lr_d, cfg_.beta1, cfg_.beta2}) {
    if (tiles_.empty()) throw InvalidArgument("training needs at least one tile");
    if (cfg_.loss.recon == ReconLoss::kPerceptual) {
      extractor_ = FeatureExtractor<float>::random(cfg_.extractor_seed);
      for (const auto& s : cfg_.loss.perceptual_layers)
        if (!extractor_->has_stage(s)) throw InvalidArgument("unknown perceptual stage '" + s + "'");
    }
    if (fresh) {
      const auto n = cfg_.phase_steps();
      log_ = "# config " + nlohmann::json(cfg_).dump() + "\n";
      log_ += "# schedule " + std::to_string(n[0]) + "/" + std::to_string(n[1]) + "/" + std::to_string(n[2]) + "\n";
      log_ += "# extractor " + (extractor_ ? extractor_->provenance() : std::string("none")) + "\n";
      log_ += "# columns phase\tstep\tloss_name\tvalue\n";
      if (!out_dir_.empty()) {
        fs::create_directories(out_dir_);
        detail::write_text(out_dir_ / kLogName, log_);
        detail::write_text(out_dir_ / kTimingName, "# phase\tstep\tseconds\n");
      }
      normalize();
    }
  }

  void restore(const Checkpoint& c) {
    auto gp = gen_.parameters();
    auto dp = disc_.parameters();
    restore_tensors(c, gp);
    restore_tensors(c, dp);
    auto gs = adam_g_.state(gp);
    auto ds = adam_d_.state(dp);
    restore_tensors(c, gs);
    restore_tensors(c, ds);
    try {
      pos_ = {c.meta.at("phase").get<int>(), c.meta.at("step").get<std::int64_t>()};
      adam_g_.set_steps(c.meta.at("adam_g_steps").get<std::int64_t>());
      adam_d_.set_steps(c.meta.at("adam_d_steps").get<std::int64_t>());
      const auto offset = c.meta.at("log_offset").get<std::size_t>();
      if (!out_dir_.empty()) {
        const fs::path log_path = out_dir_ / kLogName;
        if (!fs::exists(log_path) || fs::file_size(log_path) < offset) {
          throw CheckpointError("run log " + log_path.string() + " is shorter than the checkpoint's log offset");
        }
        fs::resize_file(log_path, offset);
        log_ = detail::read_text(log_path);
      } else {
        log_.clear();
      }
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(std::string("checkpoint meta: ") + e.what());
    }
    if (pos_.phase < 1 || pos_.phase > 4 || pos_.step < 0) throw CheckpointError("checkpoint position out of range");
    normalize();
  }

  void normalize() {
    const auto n = cfg_.phase_steps();
    while (pos_.phase <= 3 && pos_.step >= n[pos_.phase - 1]) {
      ++pos_.phase;
      pos_.step = 0;
    }
  }

  // Per-epoch shuffles derived from the seed; no sampler state to persist.
  std::size_t tile_for(std::int64_t draw) {
    const auto count = static_cast<std::int64_t>(tiles_.size());
    const std::int64_t epoch = draw / count;
    if (epoch != perm_epoch_) {
      perm_.resize(tiles_.size());
      std::iota(perm_.begin(), perm_.end(), std::size_t{0});
      std::shuffle(perm_.begin(), perm_.end(),
                   std::mt19937_64(derive_seed(cfg_.seed, "epoch", static_cast<std::uint64_t>(epoch))));
      perm_epoch_ = epoch;
    }
    return perm_[static_cast<std::size_t>(draw % count)];
  }

  Batch make_batch(Position at) {
    const std::int64_t g = global_step(at);
    std::vector<TrainingExample> examples;
    std::vector<std::string> ids;
    for (int b = 0; b < cfg_.batch_size; ++b) {
      const std::int64_t draw = g * cfg_.batch_size + b;
      std::mt19937_64 rng(derive_seed(cfg_.seed, "example", static_cast<std::uint64_t>(draw)));
      std::size_t idx = tile_for(draw);
      // Tiles without an acceptable region are replaced by seeded fallbacks.
      constexpr int kFallbacks = 32;
      for (int k = 0;; ++k) {
        const TrainTile& tile = tiles_[idx];
        try {
          examples.push_back(sample_training_example(tile.get(), rng, cfg_.sampling, tile.id));
          ids.push_back(tile.id);
          break;
        } catch (const NoValidRegion&) {
          if (k == kFallbacks) {
            throw TrainingError("data exhausted: no tile with a valid region near phase " + std::to_string(at.phase) +
                                " step " + std::to_string(at.step));
          }
          idx = derive_seed(cfg_.seed, "fallback", static_cast<std::uint64_t>(draw), static_cast<std::uint64_t>(k)) %
                tiles_.size();
        }
      }
    }
    return assemble_batch(ids, examples, cfg_.model.discriminator.local_side);
  }

  static std::vector<double> logits_of(const Tensor<float>& t) { return {t.values().begin(), t.values().end()}; }

  static Tensor<float> logits_grad(const std::vector<double>& g) {
    Tensor<float> t(static_cast<int>(g.size()), 1, 1, 1);
    for (std::size_t i = 0; i < g.size(); ++i) t[i] = static_cast<float>(g[i]);
    return t;
  }

  void phase1_step() {
    const Batch b = make_batch(pos_);
    Tape tape;
    const Tensor<float> pred = gen_.forward(b.input, Mode::kTrain, &tape);
    LossResult<float> rec = recon_loss(pred, b.target, b.mask, cfg_.loss, extractor());
    log("recon", rec.value);
    auto gp = gen_.parameters();
    nn::zero_grads(gp);
    gen_.backward(tape, rec.grad);
    adam_g_.step(gp);
  }

  // One critic update on (real, completed) pairs; returns the critic loss.
  double critic_step(const Batch& b, const Tensor<float>& pred) {
    const Tensor<float> fake = composite(pred, b);
    Discriminator<float>::Tapes tr, tf;
    const Tensor<float> lr = disc_.forward(b.target, crop_windows(b.target, b.windows), Mode::kTrain, &tr);
    const Tensor<float> lf = disc_.forward(fake, crop_windows(fake, b.windows), Mode::kTrain, &tf);
    const AdversarialLoss a = critic_loss(cfg_.loss.adv, logits_of(lr), logits_of(lf));
    check_finite("adv_d", a.value);
    auto dp = disc_.parameters();
    nn::zero_grads(dp);
    disc_.backward(tr, logits_grad(a.grad_real), {false, true});
    disc_.backward(tf, logits_grad(a.grad_fake), {false, true});
    adam_d_.step(dp);
    return a.value;
  }

  void phase2_step() {
    const Batch b = make_batch(pos_);
    const Tensor<float> pred = gen_.forward(b.input, Mode::kFrozen);
    log("adv_d", critic_step(b, pred));
  }

  void phase3_step() {
    const Batch b = make_batch(pos_);
    Tape tape;
    const Tensor<float> pred = gen_.forward(b.input, Mode::kTrain, &tape);
    const double adv_d = critic_step(b, pred);

    const Tensor<float> real_patch = crop_windows(b.target, b.windows);
    Critic<float> critic = [&](const Tensor<float>& p) {
      const Tensor<float> fake = composite(p, b);
      auto tapes = std::make_shared<Discriminator<float>::Tapes>();
      const Tensor<float> lf = disc_.forward(fake, crop_windows(fake, b.windows), Mode::kFrozen, tapes.get());
      const Tensor<float> lr = disc_.forward(b.target, real_patch, Mode::kFrozen);
      CriticOutput<float> out{logits_of(lr), logits_of(lf), {}};
      out.backward = [this, tapes, &b](const std::vector<double>& grad_fake) {
        auto [g_full, g_patch] = disc_.backward(*tapes, logits_grad(grad_fake), {true, false});
        uncrop_windows_add(g_full, g_patch, b.windows);
        for (std::size_t i = 0; i < g_full.size(); ++i) g_full[i] *= b.mask[i];
        return g_full;
      };
      return out;
    };
    ObjectiveResult<float> obj = generator_objective(pred, b.target, b.mask, cfg_.loss, extractor(), critic);
    log("recon", obj.terms.recon);
    log("adv_g", obj.terms.adv);
    log("adv_d", adv_d);
    log("total", obj.terms.total);
    auto gp = gen_.parameters();
    nn::zero_grads(gp);
    gen_.backward(tape, obj.grad);
    adam_g_.step(gp);
  }

  void check_finite(const std::string& name, double v) const {
    if (!std::isfinite(v)) {
      throw TrainingError("non-finite " + name + " loss at phase " + std::to_string(pos_.phase) + " step " +
                          std::to_string(pos_.step));
    }
  }

  void log(const std::string& name, double v) {
    check_finite(name, v);
    const std::string line = std::to_string(pos_.phase) + "\t" + std::to_string(pos_.step) + "\t" + name + "\t" +
                             detail::fmt_double(v) + "\n";
    log_ += line;
    if (!out_dir_.empty()) append(out_dir_ / kLogName, line);
  }

  void record_timing(Position at, double secs) {
    if (out_dir_.empty()) return;
    append(out_dir_ / kTimingName,
           std::to_string(at.phase) + "\t" + std::to_string(at.step) + "\t" + detail::fmt_double(secs) + "\n");
  }

  static void append(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    out << text;
    if (!out) throw Error("cannot append to " + path.string());
  }

  TrainConfig cfg_;
  std::vector<TrainTile> tiles_;
  fs::path out_dir_;
  Generator<float> gen_;
  Discriminator<float> disc_;
  nn::Adam<float> adam_g_, adam_d_;
  std::optional<FeatureExtractor<float>> extractor_;
  Position pos_;
  std::string log_;
  std::vector<std::size_t> perm_;
  std::int64_t perm_epoch_ = -1;
};

// ---------------------------------------------------------------------------
// Smoke run

struct SmokeResult {
  double initial = 0.0;  // probe reconstruction loss before training
  double final = 0.0;    // and after
  std::string log;
};

struct SmokeOptions {
  int steps = 200;
  int tiles = 32;
  int base_channels = 8;
  int batch_size = 4;
  int probe_size = 8;
};

/// Generator-only training on procedurally drawn line tiles, with the masked
/// reconstruction loss measured on a fixed probe batch before and after.
template <typename TileFactory>
SmokeResult smoke_train(std::uint64_t seed, const SmokeOptions& opt, TileFactory&& make_tiles) {
  std::vector<TrainTile> tiles = make_tiles(opt.tiles, seed);
  TrainConfig cfg;
  cfg.model = ModelConfig::make(Variant::kGlcrc, opt.base_channels);
  cfg.loss.recon = ReconLoss::kMse;
  cfg.g_pretrain_steps = opt.steps;
  cfg.d_pretrain_steps = 0;
  cfg.joint_steps = 0;
  cfg.scale = 1.0;
  cfg.batch_size = opt.batch_size;
  cfg.seed = seed;

  std::vector<TrainingExample> probe;
  std::vector<std::string> ids;
  std::mt19937_64 rng(derive_seed(seed, "probe"));
  for (int i = 0; i < static_cast<int>(tiles.size()) && static_cast<int>(probe.size()) < opt.probe_size; ++i) {
    try {
      probe.push_back(sample_training_example(tiles[i].get(), rng, cfg.sampling, tiles[i].id));
      ids.push_back(tiles[i].id);
    } catch (const NoValidRegion&) {
    }
  }
  if (probe.empty()) throw TrainingError("smoke run: no probe tile has a valid region");
  const Batch pb = assemble_batch(ids, probe, cfg.model.discriminator.local_side);

  Trainer trainer(cfg, std::move(tiles));
  // Batch statistics at both ends so untrained running averages don't skew the probe.
  auto probe_loss = [&] {
    const Tensor<float> pred = trainer.generator().forward(pb.input, Mode::kFrozen);
    return masked_mse(pred, pb.target, pb.mask).value;
  };
  SmokeResult r;
  r.initial = probe_loss();
  if (opt.steps > 0) trainer.run();
  r.final = probe_loss();
  r.log = trainer.log_text();
  return r;
}

}  // namespace roadfix
