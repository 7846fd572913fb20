#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "fan/datagen.hpp"
#include "fan/eval.hpp"
#include "fan/nets.hpp"
#include "fan/objectives.hpp"
#include "fan/trainer.hpp"

namespace fan {

/// Everything one reproducible run needs: architecture, data synthesis,
/// degradation, schedule and evaluation parameters, plus paths and the seed.
struct RunConfig {
  std::uint64_t seed = 7;
  nets::NetConfig net;
  datagen::DegradationConfig degradation;
  datagen::DataParams data;

  struct Train {
    int batch_size = 32;
    double epoch_multiplier = 1.0;
    objectives::LossWeights<double> weights;
    train::AdamHyper<double> adam;
    double pretrain_margin = 10.0;
    double pretrain_lambda_m = 0.01;
    int finetune_iterations = 1000;
    double finetune_lr = 1e-5;
  } train;

  eval::EvalParams evalp;

  struct Paths {
    std::string dataset_dir = "data";
    std::string run_dir = "runs/default";
  } paths;

  void validate() const {
    net.validate();
    degradation.validate();
    data.validate();
    require(net.image_side == degradation.n_high,
            "RunConfig: net.image_side must equal degradation.n_high");
    require(net.n_identities == data.train_identities,
            "RunConfig: net.n_identities must equal data.train_identities");
    require(train.batch_size >= 1 && train.epoch_multiplier > 0.0,
            "RunConfig: bad train settings");
    require(train.finetune_iterations >= 0 && train.finetune_lr >= 0.0,
            "RunConfig: bad finetune settings");
  }

  template <typename T>
  objectives::LossWeights<T> weights() const {
    objectives::LossWeights<T> w;
    w.dec = T(train.weights.dec);
    w.id = T(train.weights.id);
    w.gan = T(train.weights.gan);
    w.z = T(train.weights.z);
    w.enc = T(train.weights.enc);
    w.enc_dec = T(train.weights.enc_dec);
    return w;
  }

  template <typename T>
  train::TrainerConfig<T> trainer_config() const {
    train::TrainerConfig<T> t;
    t.degradation = degradation;
    t.pretrain.margin = T(train.pretrain_margin);
    t.pretrain.lambda_m = T(train.pretrain_lambda_m);
    t.adam.beta1 = T(train.adam.beta1);
    t.adam.beta2 = T(train.adam.beta2);
    t.adam.eps = T(train.adam.eps);
    return t;
  }

  template <typename T>
  std::vector<train::StagePlan<T>> plans() const {
    auto out = train::default_plans<T>(net, train.epoch_multiplier, train.batch_size);
    for (auto& plan : out) plan.weights = weights<T>();
    return out;
  }
};

// ---------------------------------------------------------------------------
// JSON (all fields optional on load; defaults fill the gaps)
// ---------------------------------------------------------------------------

namespace cfgjson {

using nlohmann::json;

inline json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["net"] = {{"image_side", c.net.image_side},
              {"d_f", c.net.d_f},
              {"d_z", c.net.d_z},
              {"n_identities", c.net.n_identities},
              {"enc_widths", c.net.enc_widths},
              {"dec_widths", c.net.dec_widths},
              {"dis_widths", c.net.dis_widths}};
  j["degradation"] = {
      {"n_low", c.degradation.n_low},
      {"n_high", c.degradation.n_high},
      {"fixed_factor", c.degradation.fixed_factor},
      {"unpaired",
       {{"max_shift_px", c.degradation.unpaired.max_shift_px},
        {"blur_sigma_range",
         {c.degradation.unpaired.blur_sigma_lo, c.degradation.unpaired.blur_sigma_hi}},
        {"noise_std", c.degradation.unpaired.noise_std}}}};
  j["data"] = {{"train_identities", c.data.train_identities},
               {"eval_identities", c.data.eval_identities},
               {"poses", c.data.poses},
               {"illuminations", c.data.illuminations},
               {"occluded_per_identity", c.data.occluded_per_identity}};
  j["train"] = {{"batch_size", c.train.batch_size},
                {"epoch_multiplier", c.train.epoch_multiplier},
                {"weights",
                 {{"dec", c.train.weights.dec},
                  {"id", c.train.weights.id},
                  {"gan", c.train.weights.gan},
                  {"z", c.train.weights.z},
                  {"enc", c.train.weights.enc},
                  {"enc_dec", c.train.weights.enc_dec}}},
                {"adam",
                 {{"beta1", c.train.adam.beta1},
                  {"beta2", c.train.adam.beta2},
                  {"eps", c.train.adam.eps}}},
                {"pretrain_margin", c.train.pretrain_margin},
                {"pretrain_lambda_m", c.train.pretrain_lambda_m},
                {"finetune_iterations", c.train.finetune_iterations},
                {"finetune_lr", c.train.finetune_lr}};
  json buckets = json::array();
  for (const auto& b : c.evalp.buckets) buckets.push_back({b.first, b.second});
  j["eval"] = {{"n_pairs", c.evalp.n_pairs},
               {"folds", c.evalp.folds},
               {"fixed_protocol_factor", c.evalp.fixed_protocol_factor},
               {"far_levels", c.evalp.far_levels},
               {"probes_per_sample", c.evalp.probes_per_sample},
               {"buckets", buckets},
               {"seed", c.evalp.seed}};
  j["paths"] = {{"dataset_dir", c.paths.dataset_dir},
                {"run_dir", c.paths.run_dir}};
  return j;
}

inline RunConfig from_json(const json& j) {
  RunConfig c;
  c.seed = j.value("seed", c.seed);
  if (j.contains("net")) {
    const json& n = j["net"];
    c.net.image_side = n.value("image_side", c.net.image_side);
    c.net.d_f = n.value("d_f", c.net.d_f);
    c.net.d_z = n.value("d_z", c.net.d_z);
    c.net.n_identities = n.value("n_identities", c.net.n_identities);
    c.net.enc_widths = n.value("enc_widths", c.net.enc_widths);
    c.net.dec_widths = n.value("dec_widths", c.net.dec_widths);
    c.net.dis_widths = n.value("dis_widths", c.net.dis_widths);
  }
  if (j.contains("degradation")) {
    const json& d = j["degradation"];
    c.degradation.n_low = d.value("n_low", c.degradation.n_low);
    c.degradation.n_high = d.value("n_high", c.degradation.n_high);
    c.degradation.fixed_factor = d.value("fixed_factor", c.degradation.fixed_factor);
    if (d.contains("unpaired")) {
      const json& u = d["unpaired"];
      c.degradation.unpaired.max_shift_px =
          u.value("max_shift_px", c.degradation.unpaired.max_shift_px);
      if (u.contains("blur_sigma_range")) {
        c.degradation.unpaired.blur_sigma_lo = u["blur_sigma_range"][0];
        c.degradation.unpaired.blur_sigma_hi = u["blur_sigma_range"][1];
      }
      c.degradation.unpaired.noise_std =
          u.value("noise_std", c.degradation.unpaired.noise_std);
    }
  }
  if (j.contains("data")) {
    const json& d = j["data"];
    c.data.train_identities = d.value("train_identities", c.data.train_identities);
    c.data.eval_identities = d.value("eval_identities", c.data.eval_identities);
    c.data.poses = d.value("poses", c.data.poses);
    c.data.illuminations = d.value("illuminations", c.data.illuminations);
    c.data.occluded_per_identity =
        d.value("occluded_per_identity", c.data.occluded_per_identity);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.epoch_multiplier = t.value("epoch_multiplier", c.train.epoch_multiplier);
    if (t.contains("weights")) {
      const json& w = t["weights"];
      c.train.weights.dec = w.value("dec", c.train.weights.dec);
      c.train.weights.id = w.value("id", c.train.weights.id);
      c.train.weights.gan = w.value("gan", c.train.weights.gan);
      c.train.weights.z = w.value("z", c.train.weights.z);
      c.train.weights.enc = w.value("enc", c.train.weights.enc);
      c.train.weights.enc_dec = w.value("enc_dec", c.train.weights.enc_dec);
    }
    if (t.contains("adam")) {
      const json& a = t["adam"];
      c.train.adam.beta1 = a.value("beta1", c.train.adam.beta1);
      c.train.adam.beta2 = a.value("beta2", c.train.adam.beta2);
      c.train.adam.eps = a.value("eps", c.train.adam.eps);
    }
    c.train.pretrain_margin = t.value("pretrain_margin", c.train.pretrain_margin);
    c.train.pretrain_lambda_m =
        t.value("pretrain_lambda_m", c.train.pretrain_lambda_m);
    c.train.finetune_iterations =
        t.value("finetune_iterations", c.train.finetune_iterations);
    c.train.finetune_lr = t.value("finetune_lr", c.train.finetune_lr);
  }
  if (j.contains("eval")) {
    const json& e = j["eval"];
    c.evalp.n_pairs = e.value("n_pairs", c.evalp.n_pairs);
    c.evalp.folds = e.value("folds", c.evalp.folds);
    c.evalp.fixed_protocol_factor =
        e.value("fixed_protocol_factor", c.evalp.fixed_protocol_factor);
    c.evalp.far_levels = e.value("far_levels", c.evalp.far_levels);
    c.evalp.probes_per_sample =
        e.value("probes_per_sample", c.evalp.probes_per_sample);
    if (e.contains("buckets")) {
      c.evalp.buckets.clear();
      for (const auto& b : e["buckets"]) {
        c.evalp.buckets.emplace_back(int(b[0]), int(b[1]));
      }
    }
    c.evalp.seed = e.value("seed", c.evalp.seed);
  }
  if (j.contains("paths")) {
    const json& p = j["paths"];
    c.paths.dataset_dir = p.value("dataset_dir", c.paths.dataset_dir);
    c.paths.run_dir = p.value("run_dir", c.paths.run_dir);
  }
  return c;
}

}  // namespace cfgjson

inline std::string config_to_string(const RunConfig& c) {
  return cfgjson::to_json(c).dump(2) + "\n";
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_config: cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("load_config: " + std::string(e.what()));
  }
  RunConfig c = cfgjson::from_json(j);
  c.validate();
  return c;
}

inline void save_config(const RunConfig& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("save_config: cannot open " + path.string());
  out << config_to_string(c);
}

/// Stable fingerprint of the canonical JSON form.
inline std::uint64_t config_fingerprint(const RunConfig& c) {
  return fnv1a64(config_to_string(c));
}

}  // namespace fan
