#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fan/objectives.hpp"
#include "fan/params.hpp"
#include "fan/tape.hpp"

namespace fan {

/// Central finite differences against the tape's reverse-mode gradients.
///
/// `build` must reconstruct the same scalar objective from the current store
/// values on any tape it is given (value-only tapes included); the checker
/// perturbs one parameter element at a time and compares. The returned figure
/// is the worst per-tensor relative error  ||g_an - g_fd|| / (||g_an|| +
/// ||g_fd||), floored to avoid 0/0 on identically zero gradients.
template <typename T>
double fd_max_rel_err(const std::function<Var<T>(Tape<T>&)>& build,
                      const std::vector<ParamStore<T>*>& stores,
                      double eps_scale) {
  // analytic gradients
  Tape<T> tape;
  Var<T> root = build(tape);
  tape.backward(root);

  auto eval_scalar = [&build]() {
    Tape<T> tv(false);  // value-only rebuild
    Var<T> r = build(tv);
    return static_cast<double>(tv.scalar(r));
  };

  double worst = 0.0;
  for (ParamStore<T>* store : stores) {
    GradMap<T> analytic = tape.grads_for(*store);
    for (auto& [key, ga] : analytic) {
      Tensor<T>& theta = store->mutable_value(key);
      Tensor<T> gn = Tensor<T>::zeros(theta.shape);
      for (std::int64_t i = 0; i < theta.numel(); ++i) {
        const T saved = theta[i];
        const double eps = eps_scale * (1.0 + std::fabs(double(saved)));
        theta[i] = static_cast<T>(double(saved) + eps);
        const double up = eval_scalar();
        theta[i] = static_cast<T>(double(saved) - eps);
        const double down = eval_scalar();
        theta[i] = saved;
        gn[i] = static_cast<T>((up - down) / (2.0 * eps));
      }
      double na = 0.0, nn = 0.0, nd = 0.0;
      for (std::int64_t i = 0; i < gn.numel(); ++i) {
        na += double(ga[i]) * ga[i];
        nn += double(gn[i]) * gn[i];
        const double d = double(ga[i]) - double(gn[i]);
        nd += d * d;
      }
      const double rel =
          std::sqrt(nd) / std::max(std::sqrt(na) + std::sqrt(nn), 1e-8);
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

/// Compares a provided analytic gradient map against finite differences of
/// `build` over one store. Lets tests verify the checker itself flags a
/// corrupted adjoint.
template <typename T>
double fd_rel_err_against(const std::function<Var<T>(Tape<T>&)>& build,
                          ParamStore<T>* store, const GradMap<T>& analytic,
                          double eps_scale) {
  auto eval_scalar = [&build]() {
    Tape<T> tv(false);
    Var<T> r = build(tv);
    return static_cast<double>(tv.scalar(r));
  };
  double worst = 0.0;
  for (const auto& [key, ga] : analytic) {
    Tensor<T>& theta = store->mutable_value(key);
    double na = 0.0, nn = 0.0, nd = 0.0;
    for (std::int64_t i = 0; i < theta.numel(); ++i) {
      const T saved = theta[i];
      const double eps = eps_scale * (1.0 + std::fabs(double(saved)));
      theta[i] = static_cast<T>(double(saved) + eps);
      const double up = eval_scalar();
      theta[i] = static_cast<T>(double(saved) - eps);
      const double down = eval_scalar();
      theta[i] = saved;
      const double gfd = (up - down) / (2.0 * eps);
      na += double(ga[i]) * ga[i];
      nn += gfd * gfd;
      const double d = double(ga[i]) - gfd;
      nd += d * d;
    }
    worst = std::max(
        worst, std::sqrt(nd) / std::max(std::sqrt(na) + std::sqrt(nn), 1e-8));
  }
  return worst;
}

struct GradCheckRow {
  std::string name;
  double rel_err = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

template <typename T>
constexpr double fd_default_eps() {
  return sizeof(T) == 8 ? 1e-5 : 2e-3;
}

template <typename T>
constexpr double fd_default_threshold() {
  return sizeof(T) == 8 ? 1e-5 : 1e-3;
}

/// Runs the finite-difference suite over every net forward and every loss on
/// reduced instances (B=2, side 8). Deterministic for a fixed seed.
template <typename T>
std::vector<GradCheckRow> gradcheck_suite(std::uint64_t seed) {
  using objectives::Stage;
  const double eps = fd_default_eps<T>();
  const double threshold = fd_default_threshold<T>();

  nets::NetConfig cfg;
  cfg.image_side = 8;
  cfg.d_f = 8;
  cfg.d_z = 4;
  cfg.n_identities = 5;
  cfg.enc_widths = {4, 8, 8, 8};
  cfg.dec_widths = {8, 8, 4};
  cfg.dis_widths = {4, 8, 8, 8};

  Rng base(seed);
  ModelSet<T> models = nets::init_models<T>(cfg, base);
  {
    Rng r_l = base.fork(106);
    models["enc_l"] = nets::init_encoder<T>(cfg, r_l, "enc_l");
  }
  const int B = 2;
  Rng data_rng = base.fork(200);
  auto rand_tensor = [&data_rng](std::vector<int> shape, double lo, double hi) {
    Tensor<T> t(std::move(shape));
    for (T& v : t.data) v = static_cast<T>(data_rng.uniform(lo, hi));
    return t;
  };
  const Tensor<T> x = rand_tensor({B, 1, 8, 8}, -0.9, 0.9);
  const Tensor<T> x2 = rand_tensor({B, 1, 8, 8}, -0.9, 0.9);
  const Tensor<T> c_f = rand_tensor({B, cfg.d_f}, -1.0, 1.0);
  const Tensor<T> c_z = rand_tensor({B, cfg.d_z}, -1.0, 1.0);
  const Tensor<T> c_img = rand_tensor({B, 1, 8, 8}, -1.0, 1.0);
  const Tensor<T> c_dis = rand_tensor({B, 1}, -1.0, 1.0);
  const Tensor<T> c_fc = rand_tensor({B, cfg.n_identities}, -1.0, 1.0);
  const std::vector<int> labels = {1, 3};

  // probe inputs live in a store so the same FD machinery covers them
  ParamStore<T> inputs("inputs");
  inputs.add("f", rand_tensor({B, cfg.d_f}, -1.0, 1.0));
  inputs.add("z", rand_tensor({B, cfg.d_z}, -1.0, 1.0));
  inputs.add("f_l", rand_tensor({B, cfg.d_f}, -1.0, 1.0));
  inputs.add("f_h", rand_tensor({B, cfg.d_f}, -1.0, 1.0));
  inputs.add("x_rec", rand_tensor({B, 1, 8, 8}, -0.9, 0.9));
  inputs.add("logits_real", rand_tensor({B, 1}, -2.0, 2.0));
  inputs.add("logits_fake", rand_tensor({B, 1}, -2.0, 2.0));

  std::vector<GradCheckRow> rows;
  auto run = [&](const std::string& name,
                 const std::function<Var<T>(Tape<T>&)>& build,
                 std::vector<ParamStore<T>*> stores) {
    const double err = fd_max_rel_err<T>(build, stores, eps);
    rows.push_back({name, err, threshold, err < threshold});
  };

  // scalar probe: sum of squared deviation from fixed coefficients
  auto probe = [](Tape<T>& t, Var<T> out, const Tensor<T>& coeffs) {
    return t.sum_all(t.square(t.sub(out, t.constant(coeffs))));
  };

  run("enc_forward",
      [&](Tape<T>& t) {
        Var<T> f = nets::encoder_forward(t, models.at("enc_h"), cfg,
                                         t.constant(x));
        return probe(t, f, c_f);
      },
      {&models.at("enc_h")});

  run("enc_z_forward",
      [&](Tape<T>& t) {
        Var<T> z = nets::encoder_forward(t, models.at("enc_z"), cfg,
                                         t.constant(x));
        return probe(t, z, c_z);
      },
      {&models.at("enc_z")});

  run("dec_forward",
      [&](Tape<T>& t) {
        Var<T> f = t.leaf(inputs.value("f"), true);
        Var<T> z = t.leaf(inputs.value("z"), true);
        Var<T> img = nets::decoder_forward(t, models.at("dec"), cfg, f, z);
        return probe(t, img, c_img);
      },
      {&models.at("dec")});

  run("dec_forward_inputs",
      [&](Tape<T>& t) {
        Var<T> f = t.param(inputs, "f");
        Var<T> z = t.param(inputs, "z");
        Var<T> img = nets::decoder_forward(t, models.at("dec"), cfg, f, z,
                                           ParamMode::kConst);
        return probe(t, img, c_img);
      },
      {&inputs});

  run("dis_forward",
      [&](Tape<T>& t) {
        Var<T> d = nets::discriminator_forward(t, models.at("dis"), cfg,
                                               t.constant(x));
        return probe(t, d, c_dis);
      },
      {&models.at("dis")});

  run("fc_forward",
      [&](Tape<T>& t) {
        Var<T> p = nets::fc_forward(t, models.at("fc"), cfg,
                                    t.param(inputs, "z"));
        return probe(t, p, c_fc);
      },
      {&models.at("fc"), &inputs});

  run("loss_dec",
      [&](Tape<T>& t) {
        return objectives::loss_dec(t, t.param(inputs, "x_rec"), t.constant(x));
      },
      {&inputs});

  run("loss_z",
      [&](Tape<T>& t) {
        Var<T> p = nets::fc_forward(t, models.at("fc"), cfg,
                                    t.param(inputs, "z"), ParamMode::kConst);
        return objectives::loss_z(t, p, cfg.n_identities);
      },
      {&inputs});

  run("loss_fc_adversary",
      [&](Tape<T>& t) {
        Var<T> p = nets::fc_forward(t, models.at("fc"), cfg,
                                    t.constant(inputs.value("z")));
        return objectives::loss_fc_adversary(t, p, labels);
      },
      {&models.at("fc")});

  run("loss_id",
      [&](Tape<T>& t) {
        return objectives::loss_id(t, models.at("enc_h"), cfg,
                                   t.param(inputs, "x_rec"),
                                   t.constant(c_f));
      },
      {&inputs});

  run("loss_gan_d",
      [&](Tape<T>& t) {
        return objectives::loss_gan_d(t, t.param(inputs, "logits_real"),
                                      t.param(inputs, "logits_fake"));
      },
      {&inputs});

  run("loss_gan_g",
      [&](Tape<T>& t) {
        Var<T> d = nets::discriminator_forward(t, models.at("dis"), cfg,
                                               t.param(inputs, "x_rec"));
        return objectives::loss_gan_g(t, d);
      },
      {&models.at("dis"), &inputs});

  run("loss_pretrain",
      [&](Tape<T>& t) {
        Var<T> f = nets::encoder_forward(t, models.at("enc_h"), cfg,
                                         t.constant(x));
        Var<T> logits = nets::encoder_class_logits(t, models.at("enc_h"), f);
        return objectives::loss_pretrain(t, f, logits, labels, T(3), T(0.01));
      },
      {&models.at("enc_h")});

  run("loss_enc",
      [&](Tape<T>& t) {
        return objectives::loss_enc(t, t.param(inputs, "f_l"),
                                    t.param(inputs, "f_h"));
      },
      {&inputs});

  run("loss_enc_dec",
      [&](Tape<T>& t) {
        return objectives::loss_enc_dec(t, models.at("enc_z"), models.at("dec"),
                                        cfg, t.param(inputs, "f_l"),
                                        t.constant(x));
      },
      {&inputs});

  // full stage composites over their trainable model sets
  run("stage_loss_1_1",
      [&](Tape<T>& t) {
        objectives::StageBatch<T> batch;
        batch.x_h = x;
        batch.labels = labels;
        return objectives::stage_loss(t, Stage::k1_1, batch, models, {}, cfg)
            .total;
      },
      {&models.at("enc_h")});

  run("stage_loss_1_2",
      [&](Tape<T>& t) {
        objectives::StageBatch<T> batch;
        batch.x_h = x;
        batch.labels = labels;
        return objectives::stage_loss(t, Stage::k1_2, batch, models, {}, cfg)
            .total;
      },
      {&models.at("enc_z"), &models.at("dec")});

  run("stage_loss_2",
      [&](Tape<T>& t) {
        objectives::StageBatch<T> batch;
        batch.x_h = x;
        batch.x_l = x2;
        return objectives::stage_loss(t, Stage::k2, batch, models, {}, cfg)
            .total;
      },
      {&models.at("enc_l")});

  return rows;
}

}  // namespace fan
