#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "fan/image.hpp"
#include "fan/rng.hpp"
#include "fan/tensor.hpp"

namespace fan {

/// Catmull-Rom cubic kernel (cubic convolution with a = -0.5).
inline double catmull_rom_weight(double x) {
  constexpr double a = -0.5;
  x = std::fabs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
  return 0.0;
}

namespace detail {

// Resamples the rows of `src` ([H, W]) to `out_w` columns. Pixel centers map
// via src_x = (dst_x + 0.5) * W/out_w - 0.5; taps are edge-clamped.
template <typename T>
Tensor<double> bicubic_pass_cols(const Tensor<T>& src, int out_w) {
  const int h = src.shape[0], w = src.shape[1];
  Tensor<double> dst({h, out_w});
  const double scale = static_cast<double>(w) / out_w;
  for (int ox = 0; ox < out_w; ++ox) {
    const double sx = (ox + 0.5) * scale - 0.5;
    const int ix = static_cast<int>(std::floor(sx));
    const double t = sx - ix;
    const double wgt[4] = {catmull_rom_weight(t + 1.0), catmull_rom_weight(t),
                           catmull_rom_weight(1.0 - t),
                           catmull_rom_weight(2.0 - t)};
    int tap[4];
    for (int j = 0; j < 4; ++j) tap[j] = std::clamp(ix - 1 + j, 0, w - 1);
    for (int y = 0; y < h; ++y) {
      double acc = 0.0;
      for (int j = 0; j < 4; ++j) {
        acc += wgt[j] * static_cast<double>(src.at(y, tap[j]));
      }
      dst.at(y, ox) = acc;
    }
  }
  return dst;
}

inline Tensor<double> transpose(const Tensor<double>& t) {
  Tensor<double> out({t.shape[1], t.shape[0]});
  for (int i = 0; i < t.shape[0]; ++i)
    for (int j = 0; j < t.shape[1]; ++j) out.at(j, i) = t.at(i, j);
  return out;
}

}  // namespace detail

/// Separable Catmull-Rom bicubic resize of an [H, W] tensor to target x target,
/// edge-clamped, with the result clamped to [-1, 1].
template <typename T>
Tensor<T> bicubic_resize_raw(const Tensor<T>& src, int target) {
  require(src.ndim() == 2, "bicubic_resize: expected [H,W] tensor");
  require(target >= 1, "bicubic_resize: target must be >= 1");
  Tensor<double> cols = detail::bicubic_pass_cols(src, target);
  Tensor<double> full = detail::transpose(
      detail::bicubic_pass_cols(detail::transpose(cols), target));
  Tensor<T> out({target, target});
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    out[i] = static_cast<T>(std::min(1.0, std::max(-1.0, full[i])));
  }
  return out;
}

/// Bicubic resize of an Image. native_resolution carries over from the input,
/// clamped to the new side so the `native <= H` invariant holds on downsample.
template <typename T>
Image<T> bicubic_resize(const Image<T>& img, int target) {
  validate_image(img);
  require(target >= 1, "bicubic_resize: target must be >= 1");
  Image<T> out;
  out.pixels = bicubic_resize_raw(img.pixels, target);
  out.native_resolution = std::min(img.native_resolution, target);
  return out;
}

/// Separable Gaussian blur with kernel radius ceil(3*sigma), edge-clamped.
/// sigma <= 0 returns the input unchanged.
template <typename T>
Tensor<T> gaussian_blur_raw(const Tensor<T>& src, double sigma) {
  require(src.ndim() == 2, "gaussian_blur: expected [H,W] tensor");
  if (sigma <= 0.0) return src;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] =
        std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[static_cast<std::size_t>(i + radius)];
  }
  for (double& v : k) v /= sum;

  const int h = src.shape[0], w = src.shape[1];
  Tensor<double> tmp({h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int xx = std::clamp(x + i, 0, w - 1);
        acc += k[static_cast<std::size_t>(i + radius)] *
               static_cast<double>(src.at(y, xx));
      }
      tmp.at(y, x) = acc;
    }
  }
  Tensor<T> out({h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int yy = std::clamp(y + i, 0, h - 1);
        acc += k[static_cast<std::size_t>(i + radius)] * tmp.at(yy, x);
      }
      out.at(y, x) = static_cast<T>(acc);
    }
  }
  return out;
}

/// Integer translation with replicated borders.
template <typename T>
Tensor<T> shift_raw(const Tensor<T>& src, int dx, int dy) {
  require(src.ndim() == 2, "shift: expected [H,W] tensor");
  const int h = src.shape[0], w = src.shape[1];
  Tensor<T> out({h, w});
  for (int y = 0; y < h; ++y) {
    const int sy = std::clamp(y - dy, 0, h - 1);
    for (int x = 0; x < w; ++x) {
      const int sx = std::clamp(x - dx, 0, w - 1);
      out.at(y, x) = src.at(sy, sx);
    }
  }
  return out;
}

/// Additive Gaussian pixel noise, clamped back to [-1, 1].
template <typename T>
Tensor<T> add_noise_raw(const Tensor<T>& src, double std_dev, Rng& rng) {
  Tensor<T> out = src;
  if (std_dev <= 0.0) return out;
  for (T& v : out.data) {
    v = static_cast<T>(
        std::min(1.0, std::max(-1.0, static_cast<double>(v) +
                                         rng.normal(0.0, std_dev))));
  }
  return out;
}

}  // namespace fan
