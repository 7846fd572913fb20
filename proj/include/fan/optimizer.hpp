#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fan/params.hpp"
#include "fan/tensor.hpp"

namespace fan::train {

/// Adam hyperparameters. beta1 = 0.5 is the GAN-stable convention.
template <typename T>
struct AdamHyper {
  T beta1 = T(0.5);
  T beta2 = T(0.999);
  T eps = T(1e-8);
};

/// Adam with bias correction over one or more parameter stores.
///
/// Moments are keyed by "store_name/param_name" and shaped like their
/// parameters. A single step counter covers every target of one `step` call.
/// Untrainable (frozen) parameters are never touched, bitwise.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamHyper<T> hyper = {}) : hyper_(hyper) {}

  long long step_count() const { return t_; }
  const AdamHyper<T>& hyper() const { return hyper_; }

  using Target = std::pair<ParamStore<T>*, const GradMap<T>*>;

  /// Applies one bias-corrected Adam update at learning rate `lr` to every
  /// trainable parameter that has a gradient entry.
  void step(T lr, const std::vector<Target>& targets) {
    ++t_;
    const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(hyper_.beta1), t_));
    const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(hyper_.beta2), t_));
    for (const auto& [store, grads] : targets) {
      require(store != nullptr && grads != nullptr, "Adam::step: null target");
      for (const auto& [key, g] : *grads) {
        if (!store->trainable(key)) continue;
        const Tensor<T>& cur = store->value(key);
        require(cur.same_shape(g),
                "Adam::step: gradient shape mismatch for " + store->name() +
                    "/" + key);
        Moment& mom = moment(store->name() + "/" + key, cur.shape);
        Tensor<T>& p = store->mutable_value(key);
        for (std::int64_t i = 0; i < p.numel(); ++i) {
          mom.m[i] = hyper_.beta1 * mom.m[i] + (T(1) - hyper_.beta1) * g[i];
          mom.v[i] = hyper_.beta2 * mom.v[i] + (T(1) - hyper_.beta2) * g[i] * g[i];
          const T mhat = mom.m[i] / bc1;
          const T vhat = mom.v[i] / bc2;
          p[i] -= lr * mhat / (std::sqrt(vhat) + hyper_.eps);
        }
      }
    }
  }

  void step(T lr, ParamStore<T>& store, const GradMap<T>& grads) {
    step(lr, {Target{&store, &grads}});
  }

 private:
  struct Moment {
    Tensor<T> m, v;
  };

  Moment& moment(const std::string& key, const std::vector<int>& shape) {
    auto it = moments_.find(key);
    if (it == moments_.end()) {
      it = moments_.emplace(key, Moment{Tensor<T>::zeros(shape),
                                        Tensor<T>::zeros(shape)}).first;
    }
    return it->second;
  }

  AdamHyper<T> hyper_;
  long long t_ = 0;
  std::map<std::string, Moment> moments_;
};

}  // namespace fan::train
