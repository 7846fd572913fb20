#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fan/params.hpp"
#include "fan/tensor.hpp"

namespace fan {

/// How parameters enter a tape. kConst treats them as fixed data: no gradient
/// is computed for them even when their trainable flag is set. Loss functions
/// use this to pin their documented gradient routing (e.g. the uniformity loss
/// reaches the non-identity encoder but never the classifier).
enum class ParamMode { kTracked, kConst };

template <typename T>
class Tape;

/// Handle to a tape node. Cheap to copy; only valid for its owning tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;
};

/// Reverse-mode autodiff tape over Tensor<T>.
///
/// Values are computed eagerly as ops are recorded; `backward` then walks the
/// recorded nodes once in reverse creation order, which is already a valid
/// topological order. A fresh tape is built per training step. Parameter
/// leaves copy the current values out of their ParamStore, so the store may be
/// updated freely once gradients have been exported with `grads_for`.
template <typename T>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  // -- leaves -----------------------------------------------------------------

  Var<T> leaf(Tensor<T> v, bool needs_grad = false) {
    return make(std::move(v), needs_grad && grad_enabled_, {});
  }

  Var<T> constant(Tensor<T> v) { return leaf(std::move(v), false); }

  Var<T> zeros(std::vector<int> shape) {
    return constant(Tensor<T>::zeros(std::move(shape)));
  }

  /// Registers a parameter as a leaf. Tracked parameters with their trainable
  /// flag set participate in `backward` and appear in `grads_for`. Repeated
  /// registration of the same tracked parameter reuses the existing leaf.
  Var<T> param(const ParamStore<T>& store, const std::string& key,
               ParamMode mode = ParamMode::kTracked) {
    const ParamKey pk{&store, key};
    if (mode == ParamMode::kTracked) {
      auto it = param_vars_.find(pk);
      if (it != param_vars_.end()) return Var<T>{this, it->second};
    }
    const bool track = mode == ParamMode::kTracked && store.trainable(key);
    Var<T> v = leaf(store.value(key), track);
    if (track) param_vars_[pk] = v.id;
    return v;
  }

  // -- elementwise and structural ops -------------------------------------------

  Var<T> add(Var<T> a, Var<T> b) {
    check(a), check(b);
    require(val(a).same_shape(val(b)), "tape add: shape mismatch");
    Tensor<T> out = val(a);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += val(b)[i];
    const int ia = a.id, ib = b.id;
    return make(std::move(out), needs(ia) || needs(ib),
                [this, ia, ib](int, const Tensor<T>& g) {
                  add_to(ia, g, T(1));
                  add_to(ib, g, T(1));
                });
  }

  Var<T> sub(Var<T> a, Var<T> b) {
    check(a), check(b);
    require(val(a).same_shape(val(b)), "tape sub: shape mismatch");
    Tensor<T> out = val(a);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= val(b)[i];
    const int ia = a.id, ib = b.id;
    return make(std::move(out), needs(ia) || needs(ib),
                [this, ia, ib](int, const Tensor<T>& g) {
                  add_to(ia, g, T(1));
                  add_to(ib, g, T(-1));
                });
  }

  Var<T> scale(Var<T> a, T c) {
    check(a);
    Tensor<T> out = val(a);
    for (T& v : out.data) v *= c;
    const int ia = a.id;
    return make(std::move(out), needs(ia),
                [this, ia, c](int, const Tensor<T>& g) { add_to(ia, g, c); });
  }

  Var<T> square(Var<T> a) {
    check(a);
    Tensor<T> out = val(a);
    for (T& v : out.data) v *= v;
    const int ia = a.id;
    return make(std::move(out), needs(ia), [this, ia](int, const Tensor<T>& g) {
      if (!needs(ia)) return;
      const Tensor<T>& x = node(ia).value;
      Tensor<T>& gx = node(ia).grad;
      for (std::int64_t i = 0; i < g.numel(); ++i) gx[i] += T(2) * x[i] * g[i];
    });
  }

  Var<T> tanh_act(Var<T> a) {
    check(a);
    Tensor<T> out = val(a);
    for (T& v : out.data) v = std::tanh(v);
    const int ia = a.id;
    return make(std::move(out), needs(ia), [this, ia](int self, const Tensor<T>& g) {
      if (!needs(ia)) return;
      const Tensor<T>& y = node(self).value;
      Tensor<T>& gx = node(ia).grad;
      for (std::int64_t i = 0; i < g.numel(); ++i)
        gx[i] += (T(1) - y[i] * y[i]) * g[i];
    });
  }

  Var<T> leaky_relu(Var<T> a, T slope) {
    check(a);
    Tensor<T> out = val(a);
    for (T& v : out.data) v = v > T(0) ? v : slope * v;
    const int ia = a.id;
    return make(std::move(out), needs(ia),
                [this, ia, slope](int, const Tensor<T>& g) {
      if (!needs(ia)) return;
      const Tensor<T>& x = node(ia).value;
      Tensor<T>& gx = node(ia).grad;
      for (std::int64_t i = 0; i < g.numel(); ++i)
        gx[i] += (x[i] > T(0) ? g[i] : slope * g[i]);
    });
  }

  Var<T> reshape(Var<T> a, std::vector<int> shape) {
    check(a);
    Tensor<T> out = Tensor<T>::from(std::move(shape), val(a).data);
    const int ia = a.id;
    return make(std::move(out), needs(ia), [this, ia](int, const Tensor<T>& g) {
      add_to(ia, g, T(1));  // same element order
    });
  }

  /// Concatenates two [B, Da] / [B, Db] matrices along columns.
  Var<T> concat_cols(Var<T> a, Var<T> b) {
    check(a), check(b);
    const Tensor<T>& ta = val(a);
    const Tensor<T>& tb = val(b);
    require(ta.ndim() == 2 && tb.ndim() == 2 && ta.shape[0] == tb.shape[0],
            "concat_cols: expected matching [B,*] matrices");
    const int rows = ta.shape[0], ca = ta.shape[1], cb = tb.shape[1];
    Tensor<T> out({rows, ca + cb});
    for (int r = 0; r < rows; ++r) {
      for (int j = 0; j < ca; ++j) out.at(r, j) = ta.at(r, j);
      for (int j = 0; j < cb; ++j) out.at(r, ca + j) = tb.at(r, j);
    }
    const int ia = a.id, ib = b.id;
    return make(std::move(out), needs(ia) || needs(ib),
                [this, ia, ib, rows, ca, cb](int, const Tensor<T>& g) {
      if (needs(ia)) {
        Tensor<T>& ga = node(ia).grad;
        for (int r = 0; r < rows; ++r)
          for (int j = 0; j < ca; ++j) ga.at(r, j) += g.at(r, j);
      }
      if (needs(ib)) {
        Tensor<T>& gb = node(ib).grad;
        for (int r = 0; r < rows; ++r)
          for (int j = 0; j < cb; ++j) gb.at(r, j) += g.at(r, ca + j);
      }
    });
  }

  // -- layers -------------------------------------------------------------------

  /// 2-D convolution. x: [B,Ci,H,W], w: [Co,Ci,kh,kw], b: [Co]; zero padding.
  Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
    check(x), check(w), check(b);
    const Tensor<T>& tx = val(x);
    const Tensor<T>& tw = val(w);
    const Tensor<T>& tb = val(b);
    require(tx.ndim() == 4, "conv2d: input must be [B,Ci,H,W]");
    require(tw.ndim() == 4, "conv2d: weight must be [Co,Ci,kh,kw]");
    require(tb.ndim() == 1 && tb.shape[0] == tw.shape[0],
            "conv2d: bias must be [Co]");
    require(tx.shape[1] == tw.shape[1], "conv2d: channel mismatch");
    require(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
    const int B = tx.shape[0], Ci = tx.shape[1], H = tx.shape[2], W = tx.shape[3];
    const int Co = tw.shape[0], kh = tw.shape[2], kw = tw.shape[3];
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    require(Ho >= 1 && Wo >= 1, "conv2d: kernel larger than padded input");

    Tensor<T> out({B, Co, Ho, Wo});
    for (int n = 0; n < B; ++n) {
      for (int co = 0; co < Co; ++co) {
        T* op = &out.at4(n, co, 0, 0);
        const T bias = tb[co];
        for (std::int64_t i = 0; i < std::int64_t(Ho) * Wo; ++i) op[i] = bias;
        for (int ci = 0; ci < Ci; ++ci) {
          const T* xp = &tx.at4(n, ci, 0, 0);
          for (int u = 0; u < kh; ++u) {
            for (int v = 0; v < kw; ++v) {
              const T wv = tw.at4(co, ci, u, v);
              for (int ho = 0; ho < Ho; ++ho) {
                const int hi = ho * stride - pad + u;
                if (hi < 0 || hi >= H) continue;
                T* orow = op + std::int64_t(ho) * Wo;
                const T* xrow = xp + std::int64_t(hi) * W;
                for (int wo = 0; wo < Wo; ++wo) {
                  const int wi = wo * stride - pad + v;
                  if (wi < 0 || wi >= W) continue;
                  orow[wo] += wv * xrow[wi];
                }
              }
            }
          }
        }
      }
    }

    const int ix = x.id, iw = w.id, ib2 = b.id;
    return make(std::move(out), needs(ix) || needs(iw) || needs(ib2),
                [this, ix, iw, ib2, stride, pad, B, Ci, H, W, Co, kh, kw, Ho,
                 Wo](int, const Tensor<T>& g) {
      const Tensor<T>& tx2 = node(ix).value;
      const Tensor<T>& tw2 = node(iw).value;
      const bool nx = needs(ix), nw = needs(iw), nb = needs(ib2);
      for (int n = 0; n < B; ++n) {
        for (int co = 0; co < Co; ++co) {
          const T* gp = &g.at4(n, co, 0, 0);
          if (nb) {
            T acc = T(0);
            for (std::int64_t i = 0; i < std::int64_t(Ho) * Wo; ++i) acc += gp[i];
            node(ib2).grad[co] += acc;
          }
          if (!nx && !nw) continue;
          for (int ci = 0; ci < Ci; ++ci) {
            for (int u = 0; u < kh; ++u) {
              for (int v = 0; v < kw; ++v) {
                const T wv = tw2.at4(co, ci, u, v);
                T wacc = T(0);
                for (int ho = 0; ho < Ho; ++ho) {
                  const int hi = ho * stride - pad + u;
                  if (hi < 0 || hi >= H) continue;
                  const T* grow = gp + std::int64_t(ho) * Wo;
                  const T* xrow = &tx2.at4(n, ci, hi, 0);
                  T* dxrow = nx ? &node(ix).grad.at4(n, ci, hi, 0) : nullptr;
                  for (int wo = 0; wo < Wo; ++wo) {
                    const int wi = wo * stride - pad + v;
                    if (wi < 0 || wi >= W) continue;
                    const T gv = grow[wo];
                    if (nw) wacc += gv * xrow[wi];
                    if (nx) dxrow[wi] += gv * wv;
                  }
                }
                if (nw) node(iw).grad.at4(co, ci, u, v) += wacc;
              }
            }
          }
        }
      }
    });
  }

  /// Fully connected layer. x: [B,Di], w: [Di,Do], b: [Do].
  Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
    check(x), check(w), check(b);
    const Tensor<T>& tx = val(x);
    const Tensor<T>& tw = val(w);
    const Tensor<T>& tb = val(b);
    require(tx.ndim() == 2 && tw.ndim() == 2 && tb.ndim() == 1,
            "linear: expected x[B,Di], w[Di,Do], b[Do]");
    require(tx.shape[1] == tw.shape[0] && tw.shape[1] == tb.shape[0],
            "linear: dimension mismatch");
    const int B = tx.shape[0], Di = tx.shape[1], Do = tw.shape[1];
    Tensor<T> out({B, Do});
    for (int n = 0; n < B; ++n) {
      T* orow = &out.at(n, 0);
      for (int j = 0; j < Do; ++j) orow[j] = tb[j];
      for (int i = 0; i < Di; ++i) {
        const T xv = tx.at(n, i);
        if (xv == T(0)) continue;
        const T* wrow = &tw.at(i, 0);
        for (int j = 0; j < Do; ++j) orow[j] += xv * wrow[j];
      }
    }
    const int ix = x.id, iw = w.id, ib = b.id;
    return make(std::move(out), needs(ix) || needs(iw) || needs(ib),
                [this, ix, iw, ib, B, Di, Do](int, const Tensor<T>& g) {
      const Tensor<T>& tx2 = node(ix).value;
      const Tensor<T>& tw2 = node(iw).value;
      if (needs(ib)) {
        Tensor<T>& gb = node(ib).grad;
        for (int n = 0; n < B; ++n)
          for (int j = 0; j < Do; ++j) gb[j] += g.at(n, j);
      }
      if (needs(iw)) {
        Tensor<T>& gw = node(iw).grad;
        for (int n = 0; n < B; ++n) {
          const T* grow = &g.at(n, 0);
          for (int i = 0; i < Di; ++i) {
            const T xv = tx2.at(n, i);
            if (xv == T(0)) continue;
            T* gwrow = &gw.at(i, 0);
            for (int j = 0; j < Do; ++j) gwrow[j] += xv * grow[j];
          }
        }
      }
      if (needs(ix)) {
        Tensor<T>& gx = node(ix).grad;
        for (int n = 0; n < B; ++n) {
          const T* grow = &g.at(n, 0);
          for (int i = 0; i < Di; ++i) {
            const T* wrow = &tw2.at(i, 0);
            T acc = T(0);
            for (int j = 0; j < Do; ++j) acc += wrow[j] * grow[j];
            gx.at(n, i) += acc;
          }
        }
      }
    });
  }

  /// Nearest-neighbor 2x upsampling of [B,C,H,W].
  Var<T> upsample2_nearest(Var<T> x) {
    check(x);
    const Tensor<T>& tx = val(x);
    require(tx.ndim() == 4, "upsample2: expected [B,C,H,W]");
    const int B = tx.shape[0], C = tx.shape[1], H = tx.shape[2], W = tx.shape[3];
    Tensor<T> out({B, C, 2 * H, 2 * W});
    for (int n = 0; n < B; ++n)
      for (int c = 0; c < C; ++c)
        for (int h = 0; h < H; ++h)
          for (int w2 = 0; w2 < W; ++w2) {
            const T v = tx.at4(n, c, h, w2);
            out.at4(n, c, 2 * h, 2 * w2) = v;
            out.at4(n, c, 2 * h, 2 * w2 + 1) = v;
            out.at4(n, c, 2 * h + 1, 2 * w2) = v;
            out.at4(n, c, 2 * h + 1, 2 * w2 + 1) = v;
          }
    const int ix = x.id;
    return make(std::move(out), needs(ix),
                [this, ix, B, C, H, W](int, const Tensor<T>& g) {
      if (!needs(ix)) return;
      Tensor<T>& gx = node(ix).grad;
      for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c)
          for (int h = 0; h < H; ++h)
            for (int w2 = 0; w2 < W; ++w2) {
              gx.at4(n, c, h, w2) += g.at4(n, c, 2 * h, 2 * w2) +
                                     g.at4(n, c, 2 * h, 2 * w2 + 1) +
                                     g.at4(n, c, 2 * h + 1, 2 * w2) +
                                     g.at4(n, c, 2 * h + 1, 2 * w2 + 1);
            }
    });
  }

  /// Row-wise softmax of [B,D] with max-shift for stability.
  Var<T> softmax_rows(Var<T> x) {
    check(x);
    const Tensor<T>& tx = val(x);
    require(tx.ndim() == 2, "softmax_rows: expected [B,D]");
    const int B = tx.shape[0], D = tx.shape[1];
    Tensor<T> out({B, D});
    for (int n = 0; n < B; ++n) {
      T mx = tx.at(n, 0);
      for (int j = 1; j < D; ++j) mx = std::max(mx, tx.at(n, j));
      T sum = T(0);
      for (int j = 0; j < D; ++j) {
        const T e = std::exp(tx.at(n, j) - mx);
        out.at(n, j) = e;
        sum += e;
      }
      for (int j = 0; j < D; ++j) out.at(n, j) /= sum;
    }
    const int ix = x.id;
    return make(std::move(out), needs(ix),
                [this, ix, B, D](int self, const Tensor<T>& g) {
      if (!needs(ix)) return;
      const Tensor<T>& y = node(self).value;
      Tensor<T>& gx = node(ix).grad;
      for (int n = 0; n < B; ++n) {
        T dot = T(0);
        for (int j = 0; j < D; ++j) dot += g.at(n, j) * y.at(n, j);
        for (int j = 0; j < D; ++j)
          gx.at(n, j) += y.at(n, j) * (g.at(n, j) - dot);
      }
    });
  }

  // -- reductions and fused losses -------------------------------------------------

  Var<T> sum_all(Var<T> x) {
    check(x);
    T acc = T(0);
    for (const T& v : val(x).data) acc += v;
    const int ix = x.id;
    return make(Tensor<T>::full({1}, acc), needs(ix),
                [this, ix](int, const Tensor<T>& g) {
      if (!needs(ix)) return;
      const T gv = g[0];
      for (T& v : node(ix).grad.data) v += gv;
    });
  }

  Var<T> mean_all(Var<T> x) {
    check(x);
    const T inv = T(1) / static_cast<T>(val(x).numel());
    return scale(sum_all(x), inv);
  }

  /// Mean binary cross-entropy with logits against a constant target in {0,1}.
  Var<T> bce_logits_mean(Var<T> logits, T target) {
    check(logits);
    const Tensor<T>& tx = val(logits);
    const T inv = T(1) / static_cast<T>(tx.numel());
    T acc = T(0);
    for (const T& v : tx.data) {
      // softplus(x) - t*x, evaluated stably
      acc += std::max(v, T(0)) - target * v + std::log1p(std::exp(-std::fabs(v)));
    }
    const int ix = logits.id;
    return make(Tensor<T>::full({1}, acc * inv), needs(ix),
                [this, ix, target, inv](int, const Tensor<T>& g) {
      if (!needs(ix)) return;
      const T g0 = g[0];
      const Tensor<T>& x = node(ix).value;
      Tensor<T>& gx = node(ix).grad;
      for (std::int64_t i = 0; i < x.numel(); ++i) {
        const T sig = T(1) / (T(1) + std::exp(-x[i]));
        gx[i] += g0 * (sig - target) * inv;
      }
    });
  }

  /// Mean softmax cross-entropy of [B,D] logits against integer labels.
  Var<T> softmax_xent_mean(Var<T> logits, std::vector<int> labels) {
    check(logits);
    const Tensor<T>& tx = val(logits);
    require(tx.ndim() == 2, "softmax_xent: expected [B,D]");
    const int B = tx.shape[0], D = tx.shape[1];
    require(static_cast<int>(labels.size()) == B, "softmax_xent: label count");
    for (int lab : labels)
      require(lab >= 0 && lab < D, "softmax_xent: label out of range");
    T acc = T(0);
    for (int n = 0; n < B; ++n) {
      T mx = tx.at(n, 0);
      for (int j = 1; j < D; ++j) mx = std::max(mx, tx.at(n, j));
      T sum = T(0);
      for (int j = 0; j < D; ++j) sum += std::exp(tx.at(n, j) - mx);
      acc += std::log(sum) + mx - tx.at(n, labels[static_cast<std::size_t>(n)]);
    }
    const T inv = T(1) / static_cast<T>(B);
    const int ix = logits.id;
    return make(Tensor<T>::full({1}, acc * inv), needs(ix),
                [this, ix, labels = std::move(labels), B, D,
                 inv](int, const Tensor<T>& g) {
      if (!needs(ix)) return;
      const T g0 = g[0];
      const Tensor<T>& x = node(ix).value;
      Tensor<T>& gx = node(ix).grad;
      for (int n = 0; n < B; ++n) {
        T mx = x.at(n, 0);
        for (int j = 1; j < D; ++j) mx = std::max(mx, x.at(n, j));
        T sum = T(0);
        for (int j = 0; j < D; ++j) sum += std::exp(x.at(n, j) - mx);
        for (int j = 0; j < D; ++j) {
          T p = std::exp(x.at(n, j) - mx) / sum;
          if (j == labels[static_cast<std::size_t>(n)]) p -= T(1);
          gx.at(n, j) += g0 * p * inv;
        }
      }
    });
  }

  /// Mean negative log-likelihood of [B,D] probability rows at integer labels.
  Var<T> nll_probs_mean(Var<T> probs, std::vector<int> labels) {
    check(probs);
    const Tensor<T>& tp = val(probs);
    require(tp.ndim() == 2, "nll_probs: expected [B,D]");
    const int B = tp.shape[0], D = tp.shape[1];
    require(static_cast<int>(labels.size()) == B, "nll_probs: label count");
    for (int lab : labels)
      require(lab >= 0 && lab < D, "nll_probs: label out of range");
    T acc = T(0);
    for (int n = 0; n < B; ++n) {
      acc -= std::log(std::max(tp.at(n, labels[static_cast<std::size_t>(n)]),
                               T(1e-30)));
    }
    const T inv = T(1) / static_cast<T>(B);
    const int ip = probs.id;
    return make(Tensor<T>::full({1}, acc * inv), needs(ip),
                [this, ip, labels = std::move(labels), B,
                 inv](int, const Tensor<T>& g) {
      if (!needs(ip)) return;
      const T g0 = g[0];
      const Tensor<T>& p = node(ip).value;
      Tensor<T>& gp = node(ip).grad;
      for (int n = 0; n < B; ++n) {
        const int lab = labels[static_cast<std::size_t>(n)];
        const T pv = std::max(p.at(n, lab), T(1e-30));
        gp.at(n, lab) += -g0 * inv / pv;
      }
    });
  }

  /// mean_b (||row_b||_2 - margin)^2 over a [B,D] matrix.
  Var<T> norm_margin_penalty_mean(Var<T> rows, T margin) {
    check(rows);
    const Tensor<T>& tx = val(rows);
    require(tx.ndim() == 2, "norm_margin_penalty: expected [B,D]");
    const int B = tx.shape[0], D = tx.shape[1];
    T acc = T(0);
    for (int n = 0; n < B; ++n) {
      T s = T(0);
      for (int j = 0; j < D; ++j) s += tx.at(n, j) * tx.at(n, j);
      const T nrm = std::sqrt(s);
      acc += (nrm - margin) * (nrm - margin);
    }
    const T inv = T(1) / static_cast<T>(B);
    const int ix = rows.id;
    return make(Tensor<T>::full({1}, acc * inv), needs(ix),
                [this, ix, margin, B, D, inv](int, const Tensor<T>& g) {
      if (!needs(ix)) return;
      const T g0 = g[0];
      const Tensor<T>& x = node(ix).value;
      Tensor<T>& gx = node(ix).grad;
      for (int n = 0; n < B; ++n) {
        T s = T(0);
        for (int j = 0; j < D; ++j) s += x.at(n, j) * x.at(n, j);
        const T nrm = std::max(std::sqrt(s), T(1e-12));
        const T coef = g0 * inv * T(2) * (nrm - margin) / nrm;
        for (int j = 0; j < D; ++j) gx.at(n, j) += coef * x.at(n, j);
      }
    });
  }

  // -- driving ----------------------------------------------------------------------

  /// Runs reverse accumulation from a scalar root.
  void backward(Var<T> root) {
    check(root);
    require(grad_enabled_, "backward: tape was built with gradients disabled");
    require(val(root).numel() == 1, "backward: root must be scalar");
    for (Node& n : nodes_) {
      if (n.needs_grad) n.grad = Tensor<T>::zeros(n.value.shape);
    }
    Node& r = nodes_[static_cast<std::size_t>(root.id)];
    if (!r.needs_grad) return;
    r.grad.fill(T(1));
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.needs_grad && n.bwd) n.bwd(i, n.grad);
    }
  }

  const Tensor<T>& val(Var<T> v) const {
    return nodes_[static_cast<std::size_t>(v.id)].value;
  }

  const Tensor<T>& grad(Var<T> v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    require(n.needs_grad && n.grad.numel() > 0, "grad: node has no gradient");
    return n.grad;
  }

  T scalar(Var<T> v) const {
    require(val(v).numel() == 1, "scalar: not a scalar node");
    return val(v)[0];
  }

  /// Gradients of all tracked parameters registered from `store`.
  /// Parameters not reached by backward report zero gradients.
  GradMap<T> grads_for(const ParamStore<T>& store) const {
    GradMap<T> out;
    for (const auto& [pk, id] : param_vars_) {
      if (pk.first != &store) continue;
      const Node& n = nodes_[static_cast<std::size_t>(id)];
      out[pk.second] =
          n.grad.numel() > 0 ? n.grad : Tensor<T>::zeros(n.value.shape);
    }
    return out;
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    std::function<void(int, const Tensor<T>&)> bwd;
  };

  using ParamKey = std::pair<const void*, std::string>;

  Var<T> make(Tensor<T> value, bool needs_grad,
              std::function<void(int, const Tensor<T>&)> bwd) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.bwd = std::move(bwd);
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }

  bool needs(int id) const {
    return nodes_[static_cast<std::size_t>(id)].needs_grad;
  }

  void check(Var<T> v) const {
    require(v.tape == this && v.id >= 0 &&
                v.id < static_cast<int>(nodes_.size()),
            "tape: Var does not belong to this tape");
  }

  void add_to(int id, const Tensor<T>& g, T factor) {
    if (!needs(id)) return;
    Tensor<T>& dst = node(id).grad;
    for (std::int64_t i = 0; i < g.numel(); ++i) dst[i] += factor * g[i];
  }

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::map<ParamKey, int> param_vars_;
};

}  // namespace fan
