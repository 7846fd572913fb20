#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <utility>
#include <vector>

#include "fan/tensor.hpp"

namespace fan {

/// Single-channel raster with values in [-1, 1].
///
/// `native_resolution` records the side length at which the content was last
/// genuinely sampled; a degraded 32x32 image that went through an 8x8
/// bottleneck keeps native_resolution = 8. Invariant: native_resolution <= H.
template <typename T>
struct Image {
  Tensor<T> pixels;  // shape [H, W]
  int native_resolution = 0;

  int height() const { return pixels.ndim() == 2 ? pixels.shape[0] : 0; }
  int width() const { return pixels.ndim() == 2 ? pixels.shape[1] : 0; }
};

template <typename T>
void validate_image(const Image<T>& img) {
  require(img.pixels.ndim() == 2, "Image: pixels must be 2-D");
  require(img.native_resolution >= 1, "Image: native_resolution must be >= 1");
  require(img.native_resolution <= img.height(),
          "Image: native_resolution exceeds image height");
  require(img.pixels.all_finite(), "Image: non-finite pixel values");
  for (const T& v : img.pixels.data) {
    require(v >= T(-1) && v <= T(1), "Image: pixel outside [-1, 1]");
  }
}

/// Packs images into a network batch of shape [B, 1, H, W].
template <typename T>
Tensor<T> pack_batch(const std::vector<Image<T>>& imgs) {
  require(!imgs.empty(), "pack_batch: empty batch");
  const int h = imgs[0].height(), w = imgs[0].width();
  Tensor<T> out({static_cast<int>(imgs.size()), 1, h, w});
  for (std::size_t b = 0; b < imgs.size(); ++b) {
    require(imgs[b].height() == h && imgs[b].width() == w,
            "pack_batch: mixed image sizes");
    std::copy(imgs[b].pixels.data.begin(), imgs[b].pixels.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(b) * h * w);
  }
  return out;
}

/// Extracts image `b` from a [B, 1, H, W] batch.
template <typename T>
Image<T> unpack_one(const Tensor<T>& batch, int b, int native_resolution) {
  require(batch.ndim() == 4 && batch.shape[1] == 1, "unpack_one: expected [B,1,H,W]");
  require(b >= 0 && b < batch.shape[0], "unpack_one: index out of range");
  const int h = batch.shape[2], w = batch.shape[3];
  Image<T> img;
  img.pixels = Tensor<T>({h, w});
  const auto off = static_cast<std::ptrdiff_t>(b) * h * w;
  std::copy(batch.data.begin() + off, batch.data.begin() + off + h * w,
            img.pixels.data.begin());
  img.native_resolution = native_resolution;
  return img;
}

// ---------------------------------------------------------------------------
// 16-bit binary PGM I/O. Pixel mapping: v in [-1,1] <-> round((v+1)/2 * 65535).
// PGM stores 16-bit samples most-significant byte first.
// ---------------------------------------------------------------------------

template <typename T>
void write_pgm16(const std::filesystem::path& path, const Tensor<T>& hw) {
  require(hw.ndim() == 2, "write_pgm16: expected [H,W] tensor");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_pgm16: cannot open " + path.string());
  out << "P5\n" << hw.shape[1] << " " << hw.shape[0] << "\n65535\n";
  std::vector<unsigned char> buf;
  buf.reserve(static_cast<std::size_t>(hw.numel()) * 2);
  for (const T& v : hw.data) {
    double x = (static_cast<double>(v) + 1.0) * 0.5 * 65535.0;
    x = std::min(65535.0, std::max(0.0, x));
    const auto q = static_cast<std::uint16_t>(std::lround(x));
    buf.push_back(static_cast<unsigned char>(q >> 8));
    buf.push_back(static_cast<unsigned char>(q & 0xff));
  }
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write_pgm16: write failed for " + path.string());
}

template <typename T>
Tensor<T> read_pgm16(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_pgm16: cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 65535 || w <= 0 || h <= 0) {
    throw IoError("read_pgm16: unsupported PGM header in " + path.string());
  }
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 2);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  if (!in) throw IoError("read_pgm16: truncated file " + path.string());
  Tensor<T> t({h, w});
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    const std::uint16_t q = static_cast<std::uint16_t>(
        (buf[2 * i] << 8) | buf[2 * i + 1]);
    t[i] = static_cast<T>(static_cast<double>(q) / 65535.0 * 2.0 - 1.0);
  }
  return t;
}

}  // namespace fan
