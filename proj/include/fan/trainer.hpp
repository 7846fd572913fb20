#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fan/datagen.hpp"
#include "fan/nets.hpp"
#include "fan/objectives.hpp"
#include "fan/optimizer.hpp"
#include "fan/rng.hpp"

namespace fan::train {

using datagen::Dataset;
using datagen::DegradationConfig;
using nets::NetConfig;

enum class StageId { k1_1, k1_2, k2, kFinetune };

inline std::string stage_tag(StageId s) {
  switch (s) {
    case StageId::k1_1: return "1.1";
    case StageId::k1_2: return "1.2";
    case StageId::k2: return "2";
    case StageId::kFinetune: return "finetune";
  }
  return "?";
}

inline std::string stage_checkpoint_name(StageId s) {
  switch (s) {
    case StageId::k1_1: return "stage1_1.ckpt";
    case StageId::k1_2: return "stage1_2.ckpt";
    case StageId::k2: return "stage2.ckpt";
    case StageId::kFinetune: return "finetune.ckpt";
  }
  return "unknown.ckpt";
}

enum class DataMode { kHrPlusLr, kHrOnly, kPaired, kUnpaired, kMixed };

/// One stage of the training schedule: what trains, what stays fixed, and how
/// batches are composed.
template <typename T>
struct StagePlan {
  StageId stage = StageId::k1_1;
  std::set<std::string> trainable;
  std::set<std::string> frozen;
  int epochs = 1;
  T learning_rate = T(2e-4);
  int batch_size = 32;
  objectives::LossWeights<T> weights;
  DataMode data_mode = DataMode::kHrOnly;

  /// Trainable and frozen sets must be disjoint and together cover exactly
  /// the instantiated models.
  void validate(const std::set<std::string>& instantiated) const {
    require(epochs >= 0 && batch_size >= 1, "StagePlan: bad epochs/batch size");
    require(std::isfinite(static_cast<double>(learning_rate)) && learning_rate >= T(0),
            "StagePlan: bad learning rate");
    std::set<std::string> uni;
    for (const auto& n : trainable) {
      require(!frozen.count(n), "StagePlan: '" + n + "' both trainable and frozen");
      uni.insert(n);
    }
    for (const auto& n : frozen) uni.insert(n);
    require(uni == instantiated,
            "StagePlan: trainable+frozen must cover exactly the instantiated models");
  }
};

/// The published schedule: stage 1.1 (identity encoder pretraining, lr 2e-4,
/// 12 epochs), stage 1.2 (disentanglement, lr 2e-4, 8 epochs), stage 2
/// (feature adaptation, lr 2e-5, 6 epochs). Epoch counts scale by a
/// desk-scale multiplier, never below one epoch.
template <typename T>
std::vector<StagePlan<T>> default_plans(const NetConfig& cfg,
                                        double epoch_multiplier = 1.0,
                                        int batch_size = 32) {
  cfg.validate();
  require(epoch_multiplier > 0.0, "default_plans: multiplier must be positive");
  auto scaled = [epoch_multiplier](int e) {
    return std::max(1, static_cast<int>(std::llround(e * epoch_multiplier)));
  };
  StagePlan<T> s11;
  s11.stage = StageId::k1_1;
  s11.trainable = {"enc_h"};
  s11.frozen = {};
  s11.epochs = scaled(12);
  s11.learning_rate = T(2e-4);
  s11.batch_size = batch_size;
  s11.data_mode = DataMode::kHrPlusLr;

  StagePlan<T> s12;
  s12.stage = StageId::k1_2;
  s12.trainable = {"enc_z", "fc", "dec", "dis"};
  s12.frozen = {"enc_h"};
  s12.epochs = scaled(8);
  s12.learning_rate = T(2e-4);
  s12.batch_size = batch_size;
  s12.data_mode = DataMode::kHrOnly;

  StagePlan<T> s2;
  s2.stage = StageId::k2;
  s2.trainable = {"enc_l"};
  s2.frozen = {"enc_h", "enc_z", "dec", "dis"};
  s2.epochs = scaled(6);
  s2.learning_rate = T(2e-5);
  s2.batch_size = batch_size;
  s2.data_mode = DataMode::kPaired;

  return {s11, s12, s2};
}

enum class EncLInit { kRandom, kEncHCopy };

/// Creates the LR encoder. The default warm-starts from a copy of the trained
/// HR encoder, since the adaptation loss regresses onto its feature space.
template <typename T>
ParamStore<T> init_enc_l(const ModelSet<T>& models, EncLInit mode,
                         const NetConfig& cfg, Rng& rng) {
  if (mode == EncLInit::kEncHCopy) {
    auto it = models.find("enc_h");
    if (it == models.end()) {
      throw ConfigError("init_enc_l: enc_h required for enc_h_copy init");
    }
    ParamStore<T> copy = it->second;
    copy.set_name("enc_l");
    copy.set_all_trainable(true);
    return copy;
  }
  return nets::init_encoder<T>(cfg, rng, "enc_l");
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct MetricsRow {
  long long step = 0;
  std::string stage;
  std::string term;
  double value = 0.0;
};

struct MetricsLog {
  std::vector<MetricsRow> rows;

  void add(long long step, const std::string& stage, const std::string& term,
           double value) {
    rows.push_back({step, stage, term, value});
  }

  void append(const MetricsLog& other) {
    rows.insert(rows.end(), other.rows.begin(), other.rows.end());
  }
};

// ---------------------------------------------------------------------------
// Trainer configuration shared across stages
// ---------------------------------------------------------------------------

template <typename T>
struct TrainerConfig {
  DegradationConfig degradation;
  objectives::PretrainSettings<T> pretrain;
  AdamHyper<T> adam;
  bool use_rsa = true;  // stage-2 scale draws; false = fixed-factor ablation
};

template <typename T>
struct StageResult {
  std::uint64_t steps = 0;
  T final_total = T(0);
  MetricsLog metrics;
};

namespace detail {

template <typename T>
Tensor<T> pack_indices(const Dataset<T>& data, const std::vector<int>& idx) {
  std::vector<Image<T>> imgs;
  imgs.reserve(idx.size());
  for (int i : idx) imgs.push_back(data.samples[static_cast<std::size_t>(i)].image);
  return pack_batch(imgs);
}

template <typename T>
std::vector<int> labels_of(const Dataset<T>& data, const std::vector<int>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(data.samples[static_cast<std::size_t>(i)].identity_id);
  return out;
}

/// Degrades one HR image for stage-2 style batches (paired branch).
template <typename T>
Image<T> paired_lr(const Image<T>& hr, const TrainerConfig<T>& tcfg, Rng& rng) {
  if (tcfg.use_rsa) return datagen::rsa_degrade(hr, tcfg.degradation, rng).first;
  return datagen::fixed_degrade(hr, tcfg.degradation.fixed_factor);
}

/// Builds (x_h, x_l) for stage 2 / finetune. Paired rows degrade the HR image
/// itself; unpaired rows degrade a different same-identity sample, so the LR
/// side has no pixel correspondence with the HR target. Mixed alternates by
/// position within the batch.
template <typename T>
objectives::StageBatch<T> stage2_batch(const Dataset<T>& data,
                                       const std::vector<int>& idx,
                                       DataMode mode,
                                       const TrainerConfig<T>& tcfg, Rng& rng) {
  std::vector<Image<T>> hr, lr;
  hr.reserve(idx.size());
  lr.reserve(idx.size());
  const auto groups = data.by_identity(datagen::Split::kTrain);
  const int fixed_override = tcfg.use_rsa ? 0 : tcfg.degradation.fixed_factor;
  for (std::size_t pos = 0; pos < idx.size(); ++pos) {
    const int i = idx[pos];
    const auto& sample = data.samples[static_cast<std::size_t>(i)];
    const bool unpaired = mode == DataMode::kUnpaired ||
                          (mode == DataMode::kMixed && pos % 2 == 1);
    hr.push_back(sample.image);
    if (!unpaired) {
      lr.push_back(paired_lr(sample.image, tcfg, rng));
      continue;
    }
    const auto& peers = groups.at(sample.identity_id);
    int src = i;
    if (peers.size() > 1) {
      // draw a different sample of the same identity
      const auto pick = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<long long>(peers.size()) - 2));
      std::size_t chosen = pick;
      for (std::size_t p = 0, seen = 0; p < peers.size(); ++p) {
        if (peers[p] == i) continue;
        if (seen++ == chosen) {
          src = peers[p];
          break;
        }
      }
    }
    lr.push_back(datagen::unpaired_degrade(
        data.samples[static_cast<std::size_t>(src)].image, tcfg.degradation,
        rng, fixed_override));
  }
  objectives::StageBatch<T> batch;
  batch.x_h = pack_batch(hr);
  batch.x_l = pack_batch(lr);
  return batch;
}

template <typename T>
void apply_freeze_flags(const StagePlan<T>& plan, ModelSet<T>& models) {
  for (const auto& name : plan.trainable) {
    auto it = models.find(name);
    require(it != models.end(), "run_stage: trainable model '" + name + "' missing");
    it->second.set_all_trainable(true);
  }
  for (const auto& name : plan.frozen) {
    auto it = models.find(name);
    require(it != models.end(), "run_stage: frozen model '" + name + "' missing");
    it->second.set_all_trainable(false);
  }
}

template <typename T>
void check_finite(T total, StageId stage, long long step) {
  if (!std::isfinite(static_cast<double>(total))) {
    throw DivergenceError("non-finite loss at stage " + stage_tag(stage) +
                          " step " + std::to_string(step));
  }
}

template <typename T>
objectives::Stage to_objective_stage(StageId s) {
  switch (s) {
    case StageId::k1_1: return objectives::Stage::k1_1;
    case StageId::k1_2: return objectives::Stage::k1_2;
    default: return objectives::Stage::k2;
  }
}

}  // namespace detail

/// Runs one full stage over the dataset's train split. Fully deterministic
/// given (plan, models, data, rng seed). Stage 1.2 alternates, per step,
/// discriminator update, FC adversary update, then the generator-side update.
/// The rng streams for shuffling and degradation are forked from `rng` by
/// label, so batch composition does not depend on evaluation order.
template <typename T>
StageResult<T> run_stage(const StagePlan<T>& plan, ModelSet<T>& models,
                         const Dataset<T>& data, const Rng& rng,
                         const TrainerConfig<T>& tcfg, const NetConfig& cfg) {
  std::set<std::string> instantiated;
  for (const auto& [name, store] : models) instantiated.insert(name);
  plan.validate(instantiated);
  detail::apply_freeze_flags(plan, models);

  Rng shuffle_rng = rng.fork(11);
  Rng degrade_rng = rng.fork(12);

  Adam<T> opt(tcfg.adam);
  Adam<T> opt_dis(tcfg.adam);
  Adam<T> opt_fc(tcfg.adam);

  std::vector<int> train_idx = data.indices(datagen::Split::kTrain);
  require(!train_idx.empty(), "run_stage: empty train split");
  const int steps_per_epoch =
      static_cast<int>((train_idx.size() + plan.batch_size - 1) / plan.batch_size);

  StageResult<T> result;
  const std::string tag = stage_tag(plan.stage);
  long long step = 0;

  for (int epoch = 0; epoch < plan.epochs; ++epoch) {
    deterministic_shuffle(train_idx, shuffle_rng);
    for (int s = 0; s < steps_per_epoch; ++s, ++step) {
      const std::size_t lo = static_cast<std::size_t>(s) * plan.batch_size;
      const std::size_t hi = std::min(lo + plan.batch_size, train_idx.size());
      std::vector<int> idx(train_idx.begin() + static_cast<std::ptrdiff_t>(lo),
                           train_idx.begin() + static_cast<std::ptrdiff_t>(hi));

      if (plan.stage == StageId::k1_1) {
        // HR plus random-scale LR composite, labels duplicated.
        Tensor<T> x_h = detail::pack_indices(data, idx);
        std::vector<Image<T>> lr;
        lr.reserve(idx.size());
        for (int i : idx) {
          lr.push_back(datagen::rsa_degrade(
                           data.samples[static_cast<std::size_t>(i)].image,
                           tcfg.degradation, degrade_rng)
                           .first);
        }
        Tensor<T> x_l = pack_batch(lr);
        objectives::StageBatch<T> batch;
        batch.x_h = Tensor<T>({2 * x_h.shape[0], 1, cfg.image_side, cfg.image_side});
        std::copy(x_h.data.begin(), x_h.data.end(), batch.x_h.data.begin());
        std::copy(x_l.data.begin(), x_l.data.end(),
                  batch.x_h.data.begin() + x_h.numel());
        batch.labels = detail::labels_of(data, idx);
        std::vector<int> dup = batch.labels;
        batch.labels.insert(batch.labels.end(), dup.begin(), dup.end());

        Tape<T> t;
        auto res = objectives::stage_loss(t, objectives::Stage::k1_1, batch,
                                          models, plan.weights, cfg, tcfg.pretrain);
        const T total = t.scalar(res.total);
        detail::check_finite(total, plan.stage, step);
        t.backward(res.total);
        GradMap<T> g = t.grads_for(models.at("enc_h"));
        opt.step(plan.learning_rate, models.at("enc_h"), g);
        for (const auto& term : res.terms)
          result.metrics.add(step, tag, term.name, static_cast<double>(term.value));
        result.metrics.add(step, tag, "total", static_cast<double>(total));
        result.final_total = total;
      } else if (plan.stage == StageId::k1_2) {
        Tensor<T> x = detail::pack_indices(data, idx);
        std::vector<int> labels = detail::labels_of(data, idx);

        // 1) discriminator on real vs detached fakes
        Tensor<T> fakes = objectives::make_stage12_fakes(models, cfg, x);
        {
          Tape<T> t;
          Var<T> real = nets::discriminator_forward(t, models.at("dis"), cfg,
                                                    t.constant(x));
          Var<T> fake = nets::discriminator_forward(t, models.at("dis"), cfg,
                                                    t.constant(fakes));
          Var<T> ld = objectives::loss_gan_d(t, real, fake);
          const T v = t.scalar(ld);
          detail::check_finite(v, plan.stage, step);
          t.backward(ld);
          GradMap<T> g = t.grads_for(models.at("dis"));
          opt_dis.step(plan.learning_rate, models.at("dis"), g);
          result.metrics.add(step, tag, "dis_bce", static_cast<double>(v));
        }

        // 2) FC adversary on detached non-identity features
        Tensor<T> z = nets::eval_encoder(models.at("enc_z"), cfg, x);
        {
          Tape<T> t;
          Var<T> probs = nets::fc_forward(t, models.at("fc"), cfg, t.constant(z));
          Var<T> lfc = objectives::loss_fc_adversary(t, probs, labels);
          const T v = t.scalar(lfc);
          detail::check_finite(v, plan.stage, step);
          t.backward(lfc);
          GradMap<T> g = t.grads_for(models.at("fc"));
          opt_fc.step(plan.learning_rate, models.at("fc"), g);
          result.metrics.add(step, tag, "fc_nll", static_cast<double>(v));
        }

        // 3) generator side: Enc_Z and Dec through the stage objective
        {
          objectives::StageBatch<T> batch;
          batch.x_h = x;
          batch.labels = labels;
          Tape<T> t;
          auto res = objectives::stage_loss(t, objectives::Stage::k1_2, batch,
                                            models, plan.weights, cfg);
          const T total = t.scalar(res.total);
          detail::check_finite(total, plan.stage, step);
          t.backward(res.total);
          GradMap<T> gz = t.grads_for(models.at("enc_z"));
          GradMap<T> gd = t.grads_for(models.at("dec"));
          opt.step(plan.learning_rate,
                   {{&models.at("enc_z"), &gz}, {&models.at("dec"), &gd}});
          for (const auto& term : res.terms)
            result.metrics.add(step, tag, term.name, static_cast<double>(term.value));
          result.metrics.add(step, tag, "total", static_cast<double>(total));
          result.final_total = total;
        }
      } else {  // k2 or kFinetune
        objectives::StageBatch<T> batch = detail::stage2_batch(
            data, idx, plan.data_mode, tcfg, degrade_rng);
        Tape<T> t;
        auto res = objectives::stage_loss(t, objectives::Stage::k2, batch,
                                          models, plan.weights, cfg);
        const T total = t.scalar(res.total);
        detail::check_finite(total, plan.stage, step);
        t.backward(res.total);
        GradMap<T> g = t.grads_for(models.at("enc_l"));
        opt.step(plan.learning_rate, models.at("enc_l"), g);
        for (const auto& term : res.terms)
          result.metrics.add(step, tag, term.name, static_cast<double>(term.value));
        result.metrics.add(step, tag, "total", static_cast<double>(total));
        result.final_total = total;
      }
    }
  }
  result.steps = static_cast<std::uint64_t>(step);
  return result;
}

/// Fine-tuning: exactly `iterations` optimizer steps on mixed paired/unpaired
/// batches at the given learning rate. iterations = 0 leaves the models
/// bitwise unchanged.
template <typename T>
StageResult<T> finetune(ModelSet<T>& models, const Dataset<T>& data,
                        int iterations, T lr, const StagePlan<T>& stage2_plan,
                        const Rng& rng, const TrainerConfig<T>& tcfg,
                        const NetConfig& cfg) {
  require(iterations >= 0, "finetune: negative iteration count");
  StagePlan<T> plan = stage2_plan;
  plan.stage = StageId::kFinetune;
  plan.learning_rate = lr;
  plan.data_mode = DataMode::kMixed;

  std::set<std::string> instantiated;
  for (const auto& [name, store] : models) instantiated.insert(name);
  plan.validate(instantiated);
  if (iterations == 0) {
    StageResult<T> empty;
    return empty;
  }
  detail::apply_freeze_flags(plan, models);

  Rng shuffle_rng = rng.fork(11);
  Rng degrade_rng = rng.fork(12);
  Adam<T> opt(tcfg.adam);
  std::vector<int> train_idx = data.indices(datagen::Split::kTrain);
  require(!train_idx.empty(), "finetune: empty train split");

  StageResult<T> result;
  const std::string tag = stage_tag(plan.stage);
  std::vector<int> order;
  for (long long step = 0; step < iterations; ++step) {
    std::vector<int> idx;
    while (static_cast<int>(idx.size()) < plan.batch_size) {
      if (order.empty()) {
        order = train_idx;
        deterministic_shuffle(order, shuffle_rng);
      }
      idx.push_back(order.back());
      order.pop_back();
    }
    objectives::StageBatch<T> batch =
        detail::stage2_batch(data, idx, plan.data_mode, tcfg, degrade_rng);
    Tape<T> t;
    auto res = objectives::stage_loss(t, objectives::Stage::k2, batch, models,
                                      plan.weights, cfg);
    const T total = t.scalar(res.total);
    detail::check_finite(total, plan.stage, step);
    t.backward(res.total);
    GradMap<T> g = t.grads_for(models.at("enc_l"));
    opt.step(plan.learning_rate, models.at("enc_l"), g);
    for (const auto& term : res.terms)
      result.metrics.add(step, tag, term.name, static_cast<double>(term.value));
    result.metrics.add(step, tag, "total", static_cast<double>(total));
    result.final_total = total;
    ++result.steps;
  }
  return result;
}

}  // namespace fan::train
