#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "fan/nets.hpp"
#include "fan/params.hpp"
#include "fan/tape.hpp"

namespace fan::objectives {

using nets::NetConfig;

/// Per-term weights of the stage objectives. The pixel term dominates and the
/// adversarial term is kept small; all exposed via config.
template <typename T>
struct LossWeights {
  T dec = T(1.0);
  T id = T(0.1);
  T gan = T(0.01);
  T z = T(0.1);
  T enc = T(1.0);
  T enc_dec = T(1.0);

  void validate() const {
    for (T v : {dec, id, gan, z, enc, enc_dec}) {
      require(std::isfinite(static_cast<double>(v)) && v >= T(0),
              "LossWeights: weights must be finite and >= 0");
    }
  }
};

template <typename T>
struct PretrainSettings {
  T margin = T(10.0);    // target feature norm
  T lambda_m = T(0.01);  // weight of the norm penalty
};

namespace detail {

/// Mean over the batch of the squared L2 row distance: (1/B) sum_b ||a_b-b_b||^2.
template <typename T>
Var<T> row_sqdist_mean(Tape<T>& t, Var<T> a, Var<T> b) {
  const Tensor<T>& ta = t.val(a);
  require(ta.ndim() == 2, "row_sqdist_mean: expected [B,D]");
  require(ta.same_shape(t.val(b)), "row_sqdist_mean: shape mismatch");
  const T inv = T(1) / static_cast<T>(ta.shape[0]);
  return t.scale(t.sum_all(t.square(t.sub(a, b))), inv);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Individual losses. Each documents its gradient routing; routing is enforced
// on the tape itself (frozen stores and ParamMode::kConst bindings), so a step
// driven by one loss can only move the documented parameter set.
// ---------------------------------------------------------------------------

/// Pixel reconstruction: mean squared error over all pixels and the batch.
template <typename T>
Var<T> loss_dec(Tape<T>& t, Var<T> x_rec, Var<T> x_target) {
  require(t.val(x_rec).same_shape(t.val(x_target)), "loss_dec: shape mismatch");
  return t.mean_all(t.square(t.sub(x_rec, x_target)));
}

/// Uniform-classification loss on FC outputs: mean_b ||p_b - y_z||^2 with
/// y_z = [1/N_D, ..., 1/N_D]. Gradient reaches the producer of `fc_out`; the
/// classifier itself must be bound kConst by the caller so FC never moves.
template <typename T>
Var<T> loss_z(Tape<T>& t, Var<T> fc_out, int n_identities) {
  const Tensor<T>& tp = t.val(fc_out);
  require(tp.ndim() == 2, "loss_z: expected [B,N_D]");
  require(tp.shape[1] == n_identities, "loss_z: N_D mismatch with row length");
  Var<T> uniform = t.constant(
      Tensor<T>::full({tp.shape[0], n_identities}, T(1) / T(n_identities)));
  return detail::row_sqdist_mean(t, fc_out, uniform);
}

/// FC's own objective: cross-entropy identity classification on detached z.
/// The caller passes fc_out built from a constant z, so only FC receives
/// gradient.
template <typename T>
Var<T> loss_fc_adversary(Tape<T>& t, Var<T> fc_out, std::vector<int> labels) {
  return t.nll_probs_mean(fc_out, std::move(labels));
}

/// Identity regularization: mean_b ||Enc_H(x_gen)_b - f_target_b||^2.
/// Enc_H enters kConst; gradient flows through it into x_gen's producers only.
template <typename T>
Var<T> loss_id(Tape<T>& t, const ParamStore<T>& enc_h, const NetConfig& cfg,
               Var<T> x_gen, Var<T> f_target) {
  Var<T> f = nets::encoder_forward(t, enc_h, cfg, x_gen, ParamMode::kConst);
  return detail::row_sqdist_mean(t, f, f_target);
}

/// Discriminator objective: BCE(real -> 1) + BCE(fake -> 0).
template <typename T>
Var<T> loss_gan_d(Tape<T>& t, Var<T> logits_real, Var<T> logits_fake) {
  return t.add(t.bce_logits_mean(logits_real, T(1)),
               t.bce_logits_mean(logits_fake, T(0)));
}

/// Non-saturating generator objective: BCE(fake -> 1).
template <typename T>
Var<T> loss_gan_g(Tape<T>& t, Var<T> logits_fake) {
  return t.bce_logits_mean(logits_fake, T(1));
}

/// Pretraining objective: softmax cross-entropy plus the feature-norm margin
/// penalty lambda_m * mean_b (||f_b|| - m)^2.
template <typename T>
Var<T> loss_pretrain(Tape<T>& t, Var<T> features, Var<T> logits,
                     std::vector<int> labels, T m, T lambda_m) {
  require(m > T(0), "loss_pretrain: margin must be positive");
  Var<T> ce = t.softmax_xent_mean(logits, std::move(labels));
  Var<T> reg = t.norm_margin_penalty_mean(features, m);
  return t.add(ce, t.scale(reg, lambda_m));
}

/// Feature adaptation: mean_b ||f_l_b - f_h_b||^2.
template <typename T>
Var<T> loss_enc(Tape<T>& t, Var<T> f_l, Var<T> f_h) {
  return detail::row_sqdist_mean(t, f_l, f_h);
}

/// Image-level adaptation: MSE between Dec(f_l, Enc_Z(x_h)) and x_h. Enc_Z and
/// Dec enter kConst; only f_l's producer receives gradient. Because z comes
/// from the HR image, the HR image is a valid target even for unpaired LR
/// sources.
template <typename T>
Var<T> loss_enc_dec(Tape<T>& t, const ParamStore<T>& enc_z,
                    const ParamStore<T>& dec, const NetConfig& cfg, Var<T> f_l,
                    Var<T> x_h) {
  Var<T> z = nets::encoder_forward(t, enc_z, cfg, x_h, ParamMode::kConst);
  Var<T> rec = nets::decoder_forward(t, dec, cfg, f_l, z, ParamMode::kConst);
  return loss_dec(t, rec, x_h);
}

// ---------------------------------------------------------------------------
// Stage objectives.
// ---------------------------------------------------------------------------

enum class Stage { k1_1, k1_2, k2 };

inline std::string stage_name(Stage s) {
  switch (s) {
    case Stage::k1_1: return "1.1";
    case Stage::k1_2: return "1.2";
    case Stage::k2: return "2";
  }
  return "?";
}

/// One batch as consumed by stage_loss.
///  - stage 1.1: x_h holds the HR+LR composite batch, labels per row.
///  - stage 1.2: x_h holds HR images, labels per row (for FC's adversary).
///  - stage 2:   x_h HR targets, x_l degraded inputs (paired or unpaired).
template <typename T>
struct StageBatch {
  Tensor<T> x_h;
  Tensor<T> x_l;
  std::vector<int> labels;
};

template <typename T>
struct TermValue {
  std::string name;
  T weight;
  T value;
};

template <typename T>
struct StageLossResult {
  Var<T> total;
  std::vector<TermValue<T>> terms;
};

namespace detail {

template <typename T>
const ParamStore<T>& model(const ModelSet<T>& models, const std::string& name,
                           Stage stage) {
  auto it = models.find(name);
  if (it == models.end()) {
    throw ConfigError("stage " + stage_name(stage) + " requires model '" +
                      name + "'");
  }
  return it->second;
}

}  // namespace detail

/// Builds the generator-side objective of the given stage on `t` and returns
/// the weighted total plus the per-term breakdown (raw values and weights).
/// Terms with zero weight are skipped entirely. The discriminator and FC
/// updates of stage 1.2 are separate objectives driven by the trainer, not
/// part of this total.
template <typename T>
StageLossResult<T> stage_loss(Tape<T>& t, Stage stage,
                              const StageBatch<T>& batch, ModelSet<T>& models,
                              const LossWeights<T>& weights,
                              const NetConfig& cfg,
                              const PretrainSettings<T>& pretrain = {}) {
  weights.validate();
  StageLossResult<T> result;
  Var<T> total = t.constant(Tensor<T>::zeros({1}));
  auto add_term = [&](const std::string& name, T weight, Var<T> term) {
    total = t.add(total, t.scale(term, weight));
    result.terms.push_back({name, weight, t.scalar(term)});
  };

  if (stage == Stage::k1_1) {
    const ParamStore<T>& enc_h = detail::model(models, "enc_h", stage);
    Var<T> x = t.constant(batch.x_h);
    Var<T> f = nets::encoder_forward(t, enc_h, cfg, x);
    Var<T> logits = nets::encoder_class_logits(t, enc_h, f);
    Var<T> lp = loss_pretrain(t, f, logits, batch.labels, pretrain.margin,
                              pretrain.lambda_m);
    add_term("pretrain", T(1), lp);
  } else if (stage == Stage::k1_2) {
    const ParamStore<T>& enc_h = detail::model(models, "enc_h", stage);
    const ParamStore<T>& enc_z = detail::model(models, "enc_z", stage);
    const ParamStore<T>& dec = detail::model(models, "dec", stage);
    const ParamStore<T>& dis = detail::model(models, "dis", stage);
    const ParamStore<T>& fc = detail::model(models, "fc", stage);

    Var<T> x = t.constant(batch.x_h);
    const int B = batch.x_h.shape[0];
    Var<T> f_h = nets::encoder_forward(t, enc_h, cfg, x, ParamMode::kConst);
    Var<T> z = nets::encoder_forward(t, enc_z, cfg, x);
    Var<T> x_rec = nets::decoder_forward(t, dec, cfg, f_h, z);
    Var<T> x_norm =
        nets::decoder_forward(t, dec, cfg, f_h, t.zeros({B, cfg.d_z}));

    if (weights.dec > T(0)) add_term("dec", weights.dec, loss_dec(t, x_rec, x));
    if (weights.id > T(0)) {
      add_term("id_rec", weights.id, loss_id(t, enc_h, cfg, x_rec, f_h));
      add_term("id_norm", weights.id, loss_id(t, enc_h, cfg, x_norm, f_h));
    }
    if (weights.gan > T(0)) {
      Var<T> d_rec = nets::discriminator_forward(t, dis, cfg, x_rec, ParamMode::kConst);
      Var<T> d_norm = nets::discriminator_forward(t, dis, cfg, x_norm, ParamMode::kConst);
      add_term("gan_rec", weights.gan, loss_gan_g(t, d_rec));
      add_term("gan_norm", weights.gan, loss_gan_g(t, d_norm));
    }
    if (weights.z > T(0)) {
      Var<T> probs = nets::fc_forward(t, fc, cfg, z, ParamMode::kConst);
      add_term("z", weights.z, loss_z(t, probs, cfg.n_identities));
    }
  } else {  // Stage::k2
    const ParamStore<T>& enc_h = detail::model(models, "enc_h", stage);
    const ParamStore<T>& enc_l = detail::model(models, "enc_l", stage);
    const ParamStore<T>& enc_z = detail::model(models, "enc_z", stage);
    const ParamStore<T>& dec = detail::model(models, "dec", stage);
    const ParamStore<T>& dis = detail::model(models, "dis", stage);

    Var<T> x_h = t.constant(batch.x_h);
    Var<T> x_l = t.constant(batch.x_l);
    const int B = batch.x_h.shape[0];
    Var<T> f_l = nets::encoder_forward(t, enc_l, cfg, x_l);
    Var<T> f_h = nets::encoder_forward(t, enc_h, cfg, x_h, ParamMode::kConst);

    if (weights.enc > T(0)) add_term("enc", weights.enc, loss_enc(t, f_l, f_h));
    if (weights.enc_dec > T(0)) {
      add_term("enc_dec", weights.enc_dec,
               loss_enc_dec(t, enc_z, dec, cfg, f_l, x_h));
    }
    if (weights.id > T(0) || weights.gan > T(0)) {
      Var<T> x_norm = nets::decoder_forward(t, dec, cfg, f_l,
                                            t.zeros({B, cfg.d_z}),
                                            ParamMode::kConst);
      if (weights.id > T(0)) {
        add_term("id_norm", weights.id, loss_id(t, enc_h, cfg, x_norm, f_h));
      }
      if (weights.gan > T(0)) {
        Var<T> d_norm =
            nets::discriminator_forward(t, dis, cfg, x_norm, ParamMode::kConst);
        add_term("gan_norm", weights.gan, loss_gan_g(t, d_norm));
      }
    }
  }

  result.total = total;
  return result;
}

/// Value-only fakes for the stage-1.2 discriminator update: reconstruction
/// Dec(f_h, z_h) stacked over normalization Dec(f_h, 0), detached.
template <typename T>
Tensor<T> make_stage12_fakes(const ModelSet<T>& models, const NetConfig& cfg,
                             const Tensor<T>& x_h) {
  const ParamStore<T>& enc_h = detail::model(models, "enc_h", Stage::k1_2);
  const ParamStore<T>& enc_z = detail::model(models, "enc_z", Stage::k1_2);
  const ParamStore<T>& dec = detail::model(models, "dec", Stage::k1_2);
  Tensor<T> f = nets::eval_encoder(enc_h, cfg, x_h);
  Tensor<T> z = nets::eval_encoder(enc_z, cfg, x_h);
  Tensor<T> rec = nets::eval_decoder(dec, cfg, f, z);
  Tensor<T> norm = nets::eval_decoder(
      dec, cfg, f, Tensor<T>::zeros({x_h.shape[0], cfg.d_z}));
  Tensor<T> out({2 * x_h.shape[0], 1, cfg.image_side, cfg.image_side});
  std::copy(rec.data.begin(), rec.data.end(), out.data.begin());
  std::copy(norm.data.begin(), norm.data.end(),
            out.data.begin() + rec.numel());
  return out;
}

}  // namespace fan::objectives
