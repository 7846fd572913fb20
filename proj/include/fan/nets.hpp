#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fan/params.hpp"
#include "fan/rng.hpp"
#include "fan/tape.hpp"
#include "fan/tensor.hpp"

namespace fan::nets {

/// Architecture hyperparameters shared by all six models.
struct NetConfig {
  int image_side = 32;    // N_h; power of two, >= 8
  int d_f = 64;           // identity feature dimension
  int d_z = 16;           // non-identity feature dimension
  int n_identities = 20;  // N_D, training identity count
  std::vector<int> enc_widths = {8, 16, 32, 32};
  std::vector<int> dec_widths = {32, 16, 8, 4};
  std::vector<int> dis_widths = {8, 16, 16, 16};

  bool operator==(const NetConfig&) const = default;

  void validate() const {
    require(d_f > 0 && d_z > 0 && n_identities > 0, "NetConfig: dims must be positive");
    require(image_side >= 8 && (image_side & (image_side - 1)) == 0,
            "NetConfig: image_side must be a power of two >= 8");
    require(!enc_widths.empty() && !dec_widths.empty() && !dis_widths.empty(),
            "NetConfig: empty width list");
    for (int w : enc_widths) require(w > 0, "NetConfig: enc width <= 0");
    for (int w : dec_widths) require(w > 0, "NetConfig: dec width <= 0");
    for (int w : dis_widths) require(w > 0, "NetConfig: dis width <= 0");
  }

  /// Number of 2x upsampling blocks in the decoder (2x2 seed up to full side).
  int decoder_ups() const {
    int ups = 0, s = 2;
    while (s < image_side) {
      s *= 2;
      ++ups;
    }
    return ups;
  }

  int decoder_channels(int i) const {
    const int last = static_cast<int>(dec_widths.size()) - 1;
    return dec_widths[static_cast<std::size_t>(std::min(i, last))];
  }
};

constexpr double kLeakySlope = 0.2;

namespace detail {

// Spatial side after one k3/s2/p1 conv block.
inline int down_side(int s) { return (s - 1) / 2 + 1; }

inline int trunk_flat_dim(int side, const std::vector<int>& widths) {
  int s = side;
  for (std::size_t i = 0; i < widths.size(); ++i) s = down_side(s);
  return widths.back() * s * s;
}

template <typename T>
void init_conv_trunk(ParamStore<T>& store, const std::vector<int>& widths,
                     Rng& rng) {
  int cin = 1;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const int cout = widths[i];
    store.add("conv" + std::to_string(i + 1) + ".w",
              he_uniform<T>({cout, cin, 3, 3}, cin * 9, rng));
    store.add("conv" + std::to_string(i + 1) + ".b", Tensor<T>::zeros({cout}));
    cin = cout;
  }
}

// Stride-2 conv stack over [B,1,side,side]; returns flattened activations.
template <typename T>
Var<T> conv_trunk(Tape<T>& t, const ParamStore<T>& store,
                  const std::vector<int>& widths, Var<T> x, ParamMode mode) {
  const Tensor<T>& tx = t.val(x);
  require(tx.ndim() == 4 && tx.shape[1] == 1, "conv_trunk: expected [B,1,H,W]");
  require(tx.shape[2] == tx.shape[3], "conv_trunk: expected square input");
  Var<T> h = x;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const std::string tag = "conv" + std::to_string(i + 1);
    h = t.conv2d(h, t.param(store, tag + ".w", mode),
                 t.param(store, tag + ".b", mode), 2, 1);
    h = t.leaky_relu(h, T(kLeakySlope));
  }
  const Tensor<T>& th = t.val(h);
  const int flat = th.shape[1] * th.shape[2] * th.shape[3];
  return t.reshape(h, {th.shape[0], flat});
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Model construction. Parameter layout is fixed by these builders and recorded
// in checkpoints; loading validates against the NetConfig.
// ---------------------------------------------------------------------------

/// Identity encoder (used for both the HR and LR instances). The `cls.*` head
/// is the pretraining softmax classifier; feature extraction ignores it.
template <typename T>
ParamStore<T> init_encoder(const NetConfig& cfg, Rng& rng,
                           const std::string& name) {
  cfg.validate();
  ParamStore<T> store(name);
  detail::init_conv_trunk(store, cfg.enc_widths, rng);
  const int flat = detail::trunk_flat_dim(cfg.image_side, cfg.enc_widths);
  store.add("head.w", he_uniform<T>({flat, cfg.d_f}, flat, rng));
  store.add("head.b", Tensor<T>::zeros({cfg.d_f}));
  store.add("cls.w", he_uniform<T>({cfg.d_f, cfg.n_identities}, cfg.d_f, rng));
  store.add("cls.b", Tensor<T>::zeros({cfg.n_identities}));
  return store;
}

/// Non-identity encoder: same trunk, head to d_z, no classifier.
template <typename T>
ParamStore<T> init_enc_z(const NetConfig& cfg, Rng& rng) {
  cfg.validate();
  ParamStore<T> store("enc_z");
  detail::init_conv_trunk(store, cfg.enc_widths, rng);
  const int flat = detail::trunk_flat_dim(cfg.image_side, cfg.enc_widths);
  store.add("head.w", he_uniform<T>({flat, cfg.d_z}, flat, rng));
  store.add("head.b", Tensor<T>::zeros({cfg.d_z}));
  return store;
}

template <typename T>
ParamStore<T> init_decoder(const NetConfig& cfg, Rng& rng) {
  cfg.validate();
  ParamStore<T> store("dec");
  const int ups = cfg.decoder_ups();
  const int c0 = cfg.decoder_channels(0);
  const int din = cfg.d_f + cfg.d_z;
  store.add("lin.w", he_uniform<T>({din, c0 * 4}, din, rng));
  store.add("lin.b", Tensor<T>::zeros({c0 * 4}));
  for (int i = 1; i <= ups; ++i) {
    const int cin = cfg.decoder_channels(i - 1);
    const int cout = cfg.decoder_channels(i);
    store.add("conv" + std::to_string(i) + ".w",
              he_uniform<T>({cout, cin, 3, 3}, cin * 9, rng));
    store.add("conv" + std::to_string(i) + ".b", Tensor<T>::zeros({cout}));
  }
  const int clast = cfg.decoder_channels(ups);
  store.add("out.w", he_uniform<T>({1, clast, 3, 3}, clast * 9, rng));
  store.add("out.b", Tensor<T>::zeros({1}));
  return store;
}

template <typename T>
ParamStore<T> init_discriminator(const NetConfig& cfg, Rng& rng) {
  cfg.validate();
  ParamStore<T> store("dis");
  detail::init_conv_trunk(store, cfg.dis_widths, rng);
  const int flat = detail::trunk_flat_dim(cfg.image_side, cfg.dis_widths);
  store.add("head.w", he_uniform<T>({flat, 1}, flat, rng));
  store.add("head.b", Tensor<T>::zeros({1}));
  return store;
}

template <typename T>
ParamStore<T> init_fc(const NetConfig& cfg, Rng& rng) {
  cfg.validate();
  ParamStore<T> store("fc");
  store.add("w", he_uniform<T>({cfg.d_z, cfg.n_identities}, cfg.d_z, rng));
  store.add("b", Tensor<T>::zeros({cfg.n_identities}));
  return store;
}

// ---------------------------------------------------------------------------
// Tape-level forwards.
// ---------------------------------------------------------------------------

/// Feature head of an identity or non-identity encoder: [B,1,N,N] -> [B,d].
template <typename T>
Var<T> encoder_forward(Tape<T>& t, const ParamStore<T>& store, const NetConfig& cfg,
                       Var<T> x, ParamMode mode = ParamMode::kTracked) {
  const Tensor<T>& tx = t.val(x);
  require(tx.ndim() == 4 && tx.shape[1] == 1 && tx.shape[2] == cfg.image_side &&
              tx.shape[3] == cfg.image_side,
          "encoder_forward: input must be [B,1," + std::to_string(cfg.image_side) +
              "," + std::to_string(cfg.image_side) + "]");
  Var<T> flat = detail::conv_trunk(t, store, cfg.enc_widths, x, mode);
  return t.linear(flat, t.param(store, "head.w", mode),
                  t.param(store, "head.b", mode));
}

/// Pretraining classifier logits from encoder features.
template <typename T>
Var<T> encoder_class_logits(Tape<T>& t, const ParamStore<T>& store, Var<T> features,
                            ParamMode mode = ParamMode::kTracked) {
  return t.linear(features, t.param(store, "cls.w", mode),
                  t.param(store, "cls.b", mode));
}

/// Decoder: identity features f [B,d_f] plus non-identity z [B,d_z] to an
/// image batch in [-1,1]. Upsampling is nearest-neighbor + conv per block.
template <typename T>
Var<T> decoder_forward(Tape<T>& t, const ParamStore<T>& store, const NetConfig& cfg,
                       Var<T> f, Var<T> z, ParamMode mode = ParamMode::kTracked) {
  const Tensor<T>& tf = t.val(f);
  const Tensor<T>& tz = t.val(z);
  require(tf.ndim() == 2 && tf.shape[1] == cfg.d_f,
          "decoder_forward: f must be [B,d_f]");
  require(tz.ndim() == 2 && tz.shape[1] == cfg.d_z,
          "decoder_forward: z must be [B,d_z]");
  require(tf.shape[0] == tz.shape[0], "decoder_forward: batch mismatch");
  const int B = tf.shape[0];
  const int ups = cfg.decoder_ups();

  Var<T> h = t.concat_cols(f, z);
  h = t.linear(h, t.param(store, "lin.w", mode), t.param(store, "lin.b", mode));
  h = t.leaky_relu(h, T(kLeakySlope));
  h = t.reshape(h, {B, cfg.decoder_channels(0), 2, 2});
  for (int i = 1; i <= ups; ++i) {
    const std::string tag = "conv" + std::to_string(i);
    h = t.upsample2_nearest(h);
    h = t.conv2d(h, t.param(store, tag + ".w", mode),
                 t.param(store, tag + ".b", mode), 1, 1);
    h = t.leaky_relu(h, T(kLeakySlope));
  }
  h = t.conv2d(h, t.param(store, "out.w", mode), t.param(store, "out.b", mode),
               1, 1);
  return t.tanh_act(h);
}

/// Realness logits, one scalar per image: [B,1,N,N] -> [B,1].
template <typename T>
Var<T> discriminator_forward(Tape<T>& t, const ParamStore<T>& store,
                             const NetConfig& cfg, Var<T> x,
                             ParamMode mode = ParamMode::kTracked) {
  const Tensor<T>& tx = t.val(x);
  require(tx.ndim() == 4 && tx.shape[1] == 1 && tx.shape[2] == cfg.image_side &&
              tx.shape[3] == cfg.image_side,
          "discriminator_forward: bad input shape");
  Var<T> flat = detail::conv_trunk(t, store, cfg.dis_widths, x, mode);
  return t.linear(flat, t.param(store, "head.w", mode),
                  t.param(store, "head.b", mode));
}

/// Linear classifier on non-identity features; rows are softmax-normalized.
template <typename T>
Var<T> fc_forward(Tape<T>& t, const ParamStore<T>& store, const NetConfig& cfg,
                  Var<T> z, ParamMode mode = ParamMode::kTracked) {
  const Tensor<T>& tz = t.val(z);
  require(tz.ndim() == 2 && tz.shape[1] == cfg.d_z, "fc_forward: z must be [B,d_z]");
  Var<T> logits = t.linear(z, t.param(store, "w", mode), t.param(store, "b", mode));
  return t.softmax_rows(logits);
}

// ---------------------------------------------------------------------------
// Value-only (inference) wrappers. Deterministic given parameters and input.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> eval_encoder(const ParamStore<T>& store, const NetConfig& cfg,
                       const Tensor<T>& batch) {
  Tape<T> t(false);
  return t.val(encoder_forward(t, store, cfg, t.constant(batch), ParamMode::kConst));
}

template <typename T>
Tensor<T> eval_encoder_logits(const ParamStore<T>& store, const NetConfig& cfg,
                              const Tensor<T>& batch) {
  Tape<T> t(false);
  Var<T> f = encoder_forward(t, store, cfg, t.constant(batch), ParamMode::kConst);
  return t.val(encoder_class_logits(t, store, f, ParamMode::kConst));
}

template <typename T>
Tensor<T> eval_decoder(const ParamStore<T>& store, const NetConfig& cfg,
                       const Tensor<T>& f, const Tensor<T>& z) {
  Tape<T> t(false);
  return t.val(decoder_forward(t, store, cfg, t.constant(f), t.constant(z),
                               ParamMode::kConst));
}

template <typename T>
Tensor<T> eval_discriminator(const ParamStore<T>& store, const NetConfig& cfg,
                             const Tensor<T>& batch) {
  Tape<T> t(false);
  return t.val(
      discriminator_forward(t, store, cfg, t.constant(batch), ParamMode::kConst));
}

template <typename T>
Tensor<T> eval_fc(const ParamStore<T>& store, const NetConfig& cfg,
                  const Tensor<T>& z) {
  Tape<T> t(false);
  return t.val(fc_forward(t, store, cfg, t.constant(z), ParamMode::kConst));
}

/// Builds the full model family with deterministic, stream-separated seeding.
template <typename T>
ModelSet<T> init_models(const NetConfig& cfg, const Rng& base) {
  ModelSet<T> models;
  Rng r_h = base.fork(101), r_z = base.fork(102), r_d = base.fork(103),
      r_s = base.fork(104), r_f = base.fork(105);
  models["enc_h"] = init_encoder<T>(cfg, r_h, "enc_h");
  models["enc_z"] = init_enc_z<T>(cfg, r_z);
  models["dec"] = init_decoder<T>(cfg, r_d);
  models["dis"] = init_discriminator<T>(cfg, r_s);
  models["fc"] = init_fc<T>(cfg, r_f);
  return models;
}

}  // namespace fan::nets
