#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "fan/checkpoint.hpp"
#include "fan/config.hpp"
#include "fan/datagen.hpp"
#include "fan/eval.hpp"
#include "fan/trainer.hpp"

namespace fan::pipeline {

namespace fs = std::filesystem;

/// First-class ablation switches (one flag per published ablation row).
enum class Ablation { kNone, kNoRsa, kNoDec, kPairedOnly, kUnpairedOnly, kMixed };

inline Ablation parse_ablation(const std::string& s) {
  if (s.empty() || s == "none") return Ablation::kNone;
  if (s == "no-rsa") return Ablation::kNoRsa;
  if (s == "no-dec") return Ablation::kNoDec;
  if (s == "paired-only") return Ablation::kPairedOnly;
  if (s == "unpaired-only") return Ablation::kUnpairedOnly;
  if (s == "mixed") return Ablation::kMixed;
  throw ValidationError("unknown ablation '" + s + "'");
}

inline std::string hex64(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

template <typename T>
datagen::Dataset<T> generate(const RunConfig& cfg) {
  return datagen::generate_dataset<T>(cfg.data, cfg.seed, cfg.net.image_side);
}

template <typename T>
fs::path gen_data(const RunConfig& cfg) {
  cfg.validate();
  datagen::Dataset<T> ds = generate<T>(cfg);
  const fs::path dir(cfg.paths.dataset_dir);
  datagen::write_dataset(ds, dir);
  return dir / "manifest.tsv";
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

template <typename T>
void append_metrics(const train::MetricsLog& log, const fs::path& path) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("metrics: cannot open " + path.string());
  char buf[64];
  for (const auto& row : log.rows) {
    std::snprintf(buf, sizeof(buf), "%.17g", row.value);
    out << row.step << "\t" << row.stage << "\t" << row.term << "\t" << buf << "\n";
  }
}

inline void write_run_preamble(const RunConfig& cfg, const fs::path& run_dir) {
  fs::create_directories(run_dir);
  save_config(cfg, run_dir / "config.json");
  std::ofstream seed(run_dir / "seed.txt");
  seed << cfg.seed << "\n";
}

/// Applies an ablation to a stage-2 style plan and trainer config.
template <typename T>
void apply_ablation(Ablation ab, train::StagePlan<T>& plan,
                    train::TrainerConfig<T>& tcfg) {
  switch (ab) {
    case Ablation::kNone:
      break;
    case Ablation::kNoRsa:
      tcfg.use_rsa = false;
      break;
    case Ablation::kNoDec:
      // feature-level regression only: drop every image-level term
      plan.weights.enc_dec = T(0);
      plan.weights.id = T(0);
      plan.weights.gan = T(0);
      break;
    case Ablation::kPairedOnly:
      plan.data_mode = train::DataMode::kPaired;
      break;
    case Ablation::kUnpairedOnly:
      plan.data_mode = train::DataMode::kUnpaired;
      break;
    case Ablation::kMixed:
      plan.data_mode = train::DataMode::kMixed;
      break;
  }
}

template <typename T>
struct TrainOutcome {
  fs::path checkpoint;
  std::uint64_t steps = 0;
  ModelSet<T> models;
  train::MetricsLog metrics;
};

/// Runs one stage end to end: assembles the stage's model family (from fresh
/// initialization and/or the prerequisite checkpoint), trains, writes the
/// stage checkpoint and appends metrics. Missing prerequisites raise
/// ConfigError; a divergence dumps `diverged.ckpt` before rethrowing.
template <typename T>
TrainOutcome<T> train_stage_cmd(const RunConfig& cfg, train::StageId stage,
                                Ablation ablation = Ablation::kNone,
                                bool resume = false) {
  cfg.validate();
  const fs::path run_dir(cfg.paths.run_dir);
  const fs::path data_dir(cfg.paths.dataset_dir);
  if (!fs::exists(data_dir / "manifest.tsv")) {
    throw ConfigError("train: dataset manifest not found in " + data_dir.string() +
                      " (run gen-data first)");
  }
  datagen::Dataset<T> data = datagen::load_dataset<T>(data_dir);
  write_run_preamble(cfg, run_dir);

  std::vector<train::StagePlan<T>> plans = cfg.plans<T>();
  train::TrainerConfig<T> tcfg = cfg.trainer_config<T>();
  Rng base(cfg.seed);

  auto need = [&](train::StageId s) -> Checkpoint<T> {
    const fs::path p = run_dir / train::stage_checkpoint_name(s);
    if (!fs::exists(p)) {
      throw ConfigError("train: missing prerequisite checkpoint " + p.string());
    }
    return load_checkpoint<T>(p, cfg.net);
  };

  ModelSet<T> models;
  train::StagePlan<T> plan;
  if (stage == train::StageId::k1_1) {
    plan = plans[0];
    if (resume && fs::exists(run_dir / "stage1_1.ckpt")) {
      models = need(train::StageId::k1_1).models;
    } else {
      ModelSet<T> fresh = nets::init_models<T>(cfg.net, base);
      models["enc_h"] = std::move(fresh.at("enc_h"));
    }
  } else if (stage == train::StageId::k1_2) {
    plan = plans[1];
    if (resume && fs::exists(run_dir / "stage1_2.ckpt")) {
      models = need(train::StageId::k1_2).models;
    } else {
      Checkpoint<T> prev = need(train::StageId::k1_1);
      models = nets::init_models<T>(cfg.net, base);
      models.at("enc_h") = std::move(prev.models.at("enc_h"));
    }
  } else if (stage == train::StageId::k2) {
    plan = plans[2];
    apply_ablation(ablation, plan, tcfg);
    if (resume && fs::exists(run_dir / "stage2.ckpt")) {
      models = need(train::StageId::k2).models;
    } else {
      Checkpoint<T> prev = need(train::StageId::k1_2);
      models = std::move(prev.models);
      models.erase("fc");  // FC is not part of stage 2
      Rng enc_l_rng = base.fork(106);
      models["enc_l"] =
          train::init_enc_l<T>(models, train::EncLInit::kEncHCopy, cfg.net, enc_l_rng);
    }
  } else {  // finetune
    plan = plans[2];
    apply_ablation(ablation, plan, tcfg);
    Checkpoint<T> prev = need(train::StageId::k2);
    models = std::move(prev.models);
  }

  TrainOutcome<T> outcome;
  try {
    if (stage == train::StageId::kFinetune) {
      train::StageResult<T> res = train::finetune<T>(
          models, data, cfg.train.finetune_iterations, T(cfg.train.finetune_lr),
          plan, base.fork(4), tcfg, cfg.net);
      outcome.steps = res.steps;
      outcome.metrics = res.metrics;
    } else {
      const std::uint64_t stream =
          stage == train::StageId::k1_1 ? 1 : stage == train::StageId::k1_2 ? 2 : 3;
      train::StageResult<T> res = train::run_stage<T>(
          plan, models, data, base.fork(stream), tcfg, cfg.net);
      outcome.steps = res.steps;
      outcome.metrics = res.metrics;
    }
  } catch (const DivergenceError&) {
    save_checkpoint(run_dir / "diverged.ckpt", cfg.net,
                    train::stage_tag(stage) + "-diverged", 0, models);
    throw;
  }

  const fs::path ckpt = run_dir / train::stage_checkpoint_name(stage);
  save_checkpoint(ckpt, cfg.net, train::stage_tag(stage), outcome.steps, models);
  append_metrics<T>(outcome.metrics, run_dir / "metrics.tsv");
  outcome.checkpoint = ckpt;
  outcome.models = std::move(models);
  return outcome;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

template <typename T>
eval::EvalReport eval_cmd(const RunConfig& cfg, const fs::path& checkpoint,
                          const std::string& protocol,
                          const std::string& encoder_name = "") {
  cfg.validate();
  Checkpoint<T> ckpt = load_checkpoint<T>(checkpoint, cfg.net);
  datagen::Dataset<T> data = datagen::load_dataset<T>(fs::path(cfg.paths.dataset_dir));

  std::string enc = encoder_name;
  if (enc.empty()) enc = ckpt.models.count("enc_l") ? "enc_l" : "enc_h";
  if (!ckpt.models.count(enc)) {
    throw ConfigError("eval: checkpoint has no encoder '" + enc + "'");
  }

  Rng eval_rng(cfg.evalp.seed);
  eval::EvalReport report;
  if (protocol == "verify-rsa" || protocol == "verify-fixed8x") {
    Rng pair_rng = eval_rng.fork(1);
    Rng degrade_rng = eval_rng.fork(2);
    auto pairs = eval::build_pairs<T>(data, cfg.evalp.n_pairs, pair_rng);
    datagen::DegradationConfig dcfg = cfg.degradation;
    eval::PairDegradation mode = eval::PairDegradation::kRsa;
    if (protocol == "verify-fixed8x") {
      mode = eval::PairDegradation::kFixed;
      dcfg.fixed_factor = cfg.evalp.fixed_protocol_factor;
      require(cfg.net.image_side % dcfg.fixed_factor == 0,
              "verify-fixed8x: factor must divide image side");
    }
    auto inputs = eval::degrade_pairs<T>(data, pairs, dcfg, mode, degrade_rng);
    report = eval::verify_with_encoder<T>(ckpt.models.at(enc), cfg.net, inputs,
                                          cfg.evalp, protocol);
  } else if (protocol == "identify") {
    Rng probe_rng = eval_rng.fork(3);
    auto inputs = eval::build_identification_inputs<T>(
        data, cfg.degradation, cfg.evalp.probes_per_sample, probe_rng);
    report = eval::identify_with_encoder<T>(ckpt.models.at(enc), cfg.net,
                                            inputs, cfg.evalp);
  } else if (protocol == "probe") {
    report = eval::probe_protocol<T>(ckpt.models, cfg.net, data, cfg.evalp.seed);
  } else if (protocol == "psnr-baseline") {
    report = eval::psnr_protocol<T>(&ckpt.models, cfg.net, data, cfg.degradation);
  } else if (protocol == "feature-distance") {
    Rng probe_rng = eval_rng.fork(3);
    auto inputs = eval::build_identification_inputs<T>(
        data, cfg.degradation, cfg.evalp.probes_per_sample, probe_rng);
    report = eval::feature_distance_report<T>(ckpt.models, cfg.net, inputs);
  } else {
    throw ValidationError("eval: unknown protocol '" + protocol + "'");
  }
  report.info.emplace_back("encoder", enc);
  report.info.emplace_back("checkpoint_checksum", hex64(checksum(ckpt.models)));
  report.info.emplace_back("config_fingerprint", hex64(config_fingerprint(cfg)));
  report.info.emplace_back("eval_seed", std::to_string(cfg.evalp.seed));
  return report;
}

// ---------------------------------------------------------------------------
// normalize
// ---------------------------------------------------------------------------

template <typename T>
void normalize_cmd(const RunConfig& cfg, const fs::path& checkpoint,
                   const fs::path& input, const fs::path& output) {
  Checkpoint<T> ckpt = load_checkpoint<T>(checkpoint, cfg.net);
  Image<T> img;
  img.pixels = read_pgm16<T>(input);
  require(img.pixels.shape[0] == img.pixels.shape[1],
          "normalize: input image must be square");
  require(img.pixels.shape[0] >= cfg.degradation.n_low,
          "normalize: input resolution below n_low");
  img.native_resolution = std::min(img.pixels.shape[0], cfg.net.image_side);
  const std::string enc = ckpt.models.count("enc_l") ? "enc_l" : "enc_h";
  Image<T> norm = eval::normalize_face<T>(ckpt.models.at(enc),
                                          ckpt.models.at("dec"), cfg.net, img);
  write_pgm16(output, norm.pixels);
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

inline std::string report_summary(const RunConfig& cfg) {
  std::ostringstream os;
  const fs::path run_dir(cfg.paths.run_dir);
  os << "run directory: " << run_dir.string() << "\n";
  os << "config fingerprint: " << hex64(config_fingerprint(cfg)) << "\n";
  if (!fs::exists(run_dir)) {
    os << "(run directory does not exist yet)\n";
    return os.str();
  }
  for (const char* name :
       {"stage1_1.ckpt", "stage1_2.ckpt", "stage2.ckpt", "finetune.ckpt"}) {
    const fs::path p = run_dir / name;
    if (fs::exists(p)) {
      os << "checkpoint " << name << " (" << fs::file_size(p) << " bytes)\n";
    }
  }
  const fs::path metrics = run_dir / "metrics.tsv";
  if (fs::exists(metrics)) {
    std::ifstream in(metrics);
    std::string line;
    std::map<std::string, std::string> last_by_stage;
    while (std::getline(in, line)) {
      std::istringstream row(line);
      std::string step, stage, term, value;
      if (row >> step >> stage >> term >> value && term == "total") {
        last_by_stage[stage] = "step " + step + " total " + value;
      }
    }
    for (const auto& [stage, text] : last_by_stage) {
      os << "stage " << stage << ": " << text << "\n";
    }
  }
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    if (entry.path().extension() == ".tsv" &&
        entry.path().filename() != "metrics.tsv") {
      os << "report file: " << entry.path().filename().string() << "\n";
    }
  }
  return os.str();
}

}  // namespace fan::pipeline
