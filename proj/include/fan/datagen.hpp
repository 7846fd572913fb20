#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fan/image.hpp"
#include "fan/resample.hpp"
#include "fan/rng.hpp"

namespace fan::datagen {

// ---------------------------------------------------------------------------
// Degradation configuration
// ---------------------------------------------------------------------------

struct DegradationConfig {
  int n_low = 8;         // lowest resolution of interest
  int n_high = 32;       // network input resolution
  int fixed_factor = 4;  // fixed-scale protocol factor

  struct Unpaired {
    int max_shift_px = 2;
    double blur_sigma_lo = 0.3;
    double blur_sigma_hi = 1.0;
    double noise_std = 0.03;
  } unpaired;

  void validate() const {
    require(n_low >= 1 && n_low < n_high, "DegradationConfig: need 1 <= n_low < n_high");
    require(fixed_factor >= 1 && n_high % fixed_factor == 0,
            "DegradationConfig: fixed_factor must divide n_high");
    require(unpaired.max_shift_px >= 0, "DegradationConfig: negative shift");
    require(unpaired.blur_sigma_lo >= 0.0 &&
                unpaired.blur_sigma_hi >= unpaired.blur_sigma_lo,
            "DegradationConfig: bad blur sigma range");
    require(unpaired.noise_std >= 0.0, "DegradationConfig: negative noise std");
  }
};

// ---------------------------------------------------------------------------
// Samples
// ---------------------------------------------------------------------------

enum class Split { kTrain, kEval };

inline std::string split_name(Split s) { return s == Split::kTrain ? "train" : "eval"; }

template <typename T>
struct Sample {
  Image<T> image;
  int identity_id = 0;
  double pose_deg = 0.0;       // in [-45, 45]
  double illumination = 1.0;   // gain in [0.5, 1.5]
  bool occlusion = false;
  Split split = Split::kTrain;
};

// ---------------------------------------------------------------------------
// Identity bank: deterministic per-identity glyph templates. An identity is a
// constellation of anisotropic Gaussian blobs plus oriented bars; pose
// rotates the whole constellation, illumination scales brightness, occlusion
// overlays a grey patch. Identity = constellation geometry.
// ---------------------------------------------------------------------------

struct BlobSpec {
  double cx, cy, sx, sy, theta, amp;
};

struct BarSpec {
  double cx, cy, len, wid, theta, amp;
};

struct IdentityTemplate {
  std::vector<BlobSpec> blobs;
  std::vector<BarSpec> bars;
};

class IdentityBank {
 public:
  IdentityBank(std::uint64_t seed, int n_identities) {
    require(n_identities >= 1, "IdentityBank: need at least one identity");
    templates_.reserve(static_cast<std::size_t>(n_identities));
    for (int id = 0; id < n_identities; ++id) {
      Rng rng(splitmix64(seed ^ (0x51ed2701a9b3c1f5ull * (id + 1))));
      IdentityTemplate tpl;
      const int n_blobs = 3 + static_cast<int>(rng.uniform_int(0, 2));
      for (int i = 0; i < n_blobs; ++i) {
        BlobSpec b;
        b.cx = rng.uniform(-0.55, 0.55);
        b.cy = rng.uniform(-0.55, 0.55);
        b.sx = rng.uniform(0.08, 0.25);
        b.sy = rng.uniform(0.08, 0.25);
        b.theta = rng.uniform(0.0, 3.14159265358979323846);
        b.amp = rng.uniform(0.55, 1.0);
        tpl.blobs.push_back(b);
      }
      const int n_bars = 1 + static_cast<int>(rng.uniform_int(0, 1));
      for (int i = 0; i < n_bars; ++i) {
        BarSpec b;
        b.cx = rng.uniform(-0.4, 0.4);
        b.cy = rng.uniform(-0.4, 0.4);
        b.len = rng.uniform(0.5, 1.1);
        b.wid = rng.uniform(0.06, 0.16);
        b.theta = rng.uniform(0.0, 3.14159265358979323846);
        b.amp = rng.uniform(0.55, 1.0);
        tpl.bars.push_back(b);
      }
      templates_.push_back(std::move(tpl));
    }
  }

  int size() const { return static_cast<int>(templates_.size()); }

  const IdentityTemplate& at(int id) const {
    require(id >= 0 && id < size(),
            "IdentityBank: unknown identity_id " + std::to_string(id));
    return templates_[static_cast<std::size_t>(id)];
  }

 private:
  std::vector<IdentityTemplate> templates_;
};

namespace detail {

// Template luminance at unit-square coordinates, in [0, ~n_primitives].
inline double template_luminance(const IdentityTemplate& tpl, double u, double v) {
  double acc = 0.0;
  for (const BlobSpec& b : tpl.blobs) {
    const double du = u - b.cx, dv = v - b.cy;
    const double c = std::cos(b.theta), s = std::sin(b.theta);
    const double lx = (c * du + s * dv) / b.sx;
    const double ly = (-s * du + c * dv) / b.sy;
    acc += b.amp * std::exp(-0.5 * (lx * lx + ly * ly));
  }
  for (const BarSpec& b : tpl.bars) {
    const double du = u - b.cx, dv = v - b.cy;
    const double c = std::cos(b.theta), s = std::sin(b.theta);
    const double lx = c * du + s * dv;
    const double ly = -s * du + c * dv;
    if (std::fabs(lx) <= 0.5 * b.len && std::fabs(ly) <= 0.5 * b.wid) acc += b.amp;
  }
  return acc;
}

}  // namespace detail

/// Renders one sample at side x side with 4x4 supersampling. Deterministic
/// given all arguments; rng_seed only places the occluding patch.
template <typename T>
Sample<T> render_sample(const IdentityBank& bank, int identity_id,
                        double pose_deg, double illumination, bool occlusion,
                        std::uint64_t rng_seed, int side) {
  const IdentityTemplate& tpl = bank.at(identity_id);
  require(pose_deg >= -45.0 && pose_deg <= 45.0,
          "render_sample: pose outside [-45, 45]");
  require(illumination >= 0.5 && illumination <= 1.5,
          "render_sample: illumination outside [0.5, 1.5]");
  require(side >= 4, "render_sample: side too small");

  double occ_cx = 0.0, occ_cy = 0.0;
  if (occlusion) {
    Rng rng(splitmix64(rng_seed ^ 0x9d3f07226ce1b3adull));
    occ_cx = rng.uniform(-0.5, 0.5);
    occ_cy = rng.uniform(-0.5, 0.5);
  }
  constexpr double kOccHalf = 0.25;
  constexpr double kOccValue = 0.25;  // grey patch in [0,1] brightness

  const double rad = -pose_deg * 3.14159265358979323846 / 180.0;
  const double cr = std::cos(rad), sr = std::sin(rad);
  constexpr int kSuper = 4;

  Sample<T> out;
  out.image.pixels = Tensor<T>({side, side});
  out.image.native_resolution = side;
  out.identity_id = identity_id;
  out.pose_deg = pose_deg;
  out.illumination = illumination;
  out.occlusion = occlusion;

  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      double acc = 0.0;
      for (int a = 0; a < kSuper; ++a) {
        for (int b = 0; b < kSuper; ++b) {
          const double u = ((x + (b + 0.5) / kSuper) / side) * 2.0 - 1.0;
          const double v = ((y + (a + 0.5) / kSuper) / side) * 2.0 - 1.0;
          double bright;
          if (occlusion && std::fabs(u - occ_cx) <= kOccHalf &&
              std::fabs(v - occ_cy) <= kOccHalf) {
            bright = kOccValue;
          } else {
            const double ru = cr * u + sr * v;
            const double rv = -sr * u + cr * v;
            const double lum = std::min(detail::template_luminance(tpl, ru, rv), 1.0);
            bright = std::min(1.0, std::max(0.0, lum * illumination));
          }
          acc += bright;
        }
      }
      const double mean = acc / (kSuper * kSuper);
      out.image.pixels.at(y, x) = static_cast<T>(2.0 * mean - 1.0);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Degradation paths. All outputs stay n_high x n_high in [-1, 1].
// ---------------------------------------------------------------------------

/// Random scale augmentation: bicubic down to a uniform k in [n_low, n_high],
/// bicubic back up. Returns the image and the drawn k; native_resolution = k.
template <typename T>
std::pair<Image<T>, int> rsa_degrade(const Image<T>& img_hr,
                                     const DegradationConfig& cfg, Rng& rng) {
  cfg.validate();
  require(img_hr.height() == cfg.n_high && img_hr.width() == cfg.n_high,
          "rsa_degrade: input must be n_high x n_high");
  const int k = static_cast<int>(rng.uniform_int(cfg.n_low, cfg.n_high));
  Image<T> down = bicubic_resize(img_hr, k);
  Image<T> up = bicubic_resize(down, cfg.n_high);
  return {std::move(up), k};
}

/// Fixed-scale degradation: down by `factor`, bicubic back up. Deterministic.
template <typename T>
Image<T> fixed_degrade(const Image<T>& img, int factor) {
  require(factor >= 1, "fixed_degrade: factor must be >= 1");
  const int side = img.height();
  require(side == img.width(), "fixed_degrade: image must be square");
  require(side % factor == 0, "fixed_degrade: factor must divide image side");
  Image<T> down = bicubic_resize(img, side / factor);
  return bicubic_resize(down, side);
}

/// Unpaired-source simulator: random shift, Gaussian blur, pixel noise, then
/// random scale degradation. The result intentionally lacks pixel
/// correspondence to the input. With `fixed_scale_factor` > 0 the final RSA
/// draw is replaced by that fixed factor (no-RSA ablation).
template <typename T>
Image<T> unpaired_degrade(const Image<T>& img_hr, const DegradationConfig& cfg,
                          Rng& rng, int fixed_scale_factor = 0) {
  cfg.validate();
  require(img_hr.height() == cfg.n_high && img_hr.width() == cfg.n_high,
          "unpaired_degrade: input must be n_high x n_high");
  const int dx = static_cast<int>(
      rng.uniform_int(-cfg.unpaired.max_shift_px, cfg.unpaired.max_shift_px));
  const int dy = static_cast<int>(
      rng.uniform_int(-cfg.unpaired.max_shift_px, cfg.unpaired.max_shift_px));
  const double sigma = rng.uniform(cfg.unpaired.blur_sigma_lo, cfg.unpaired.blur_sigma_hi);

  Image<T> work;
  work.native_resolution = img_hr.native_resolution;
  work.pixels = shift_raw(img_hr.pixels, dx, dy);
  work.pixels = gaussian_blur_raw(work.pixels, sigma);
  work.pixels = add_noise_raw(work.pixels, cfg.unpaired.noise_std, rng);
  if (fixed_scale_factor > 0) {
    return fixed_degrade(work, fixed_scale_factor);
  }
  return rsa_degrade(work, cfg, rng).first;
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

struct DataParams {
  int train_identities = 20;
  int eval_identities = 10;
  std::vector<double> poses = {-30.0, -15.0, 0.0, 15.0, 30.0};
  std::vector<double> illuminations = {0.7, 1.0, 1.3};
  int occluded_per_identity = 3;

  void validate() const {
    require(train_identities >= 1 && eval_identities >= 0, "DataParams: identity counts");
    require(!poses.empty() && !illuminations.empty(), "DataParams: empty factor grid");
    require(occluded_per_identity >= 0, "DataParams: negative occlusion count");
  }

  int total_identities() const { return train_identities + eval_identities; }
  int samples_per_identity() const {
    return static_cast<int>(poses.size() * illuminations.size()) +
           occluded_per_identity;
  }
};

template <typename T>
struct Dataset {
  int image_side = 32;
  int n_train_identities = 0;
  int n_eval_identities = 0;
  std::vector<Sample<T>> samples;

  std::vector<int> indices(Split split) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].split == split) out.push_back(static_cast<int>(i));
    }
    return out;
  }

  /// Sample indices per identity, in dataset order.
  std::map<int, std::vector<int>> by_identity(Split split) const {
    std::map<int, std::vector<int>> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].split == split) {
        out[samples[i].identity_id].push_back(static_cast<int>(i));
      }
    }
    return out;
  }

  void validate() const {
    for (const Sample<T>& s : samples) {
      validate_image(s.image);
      const bool should_train = s.identity_id < n_train_identities;
      require((s.split == Split::kTrain) == should_train,
              "Dataset: identity appears in the wrong split");
    }
  }
};

/// Renders the full factor grid for every identity. Identities
/// [0, train_identities) are the train split; the rest are eval. Deterministic
/// and idempotent for a fixed seed.
template <typename T>
Dataset<T> generate_dataset(const DataParams& params,
                            std::uint64_t seed, int image_side) {
  params.validate();
  Dataset<T> ds;
  ds.image_side = image_side;
  ds.n_train_identities = params.train_identities;
  ds.n_eval_identities = params.eval_identities;
  IdentityBank bank(splitmix64(seed ^ 0xb10bba5e5ca1ab1eull),
                    params.total_identities());

  for (int id = 0; id < params.total_identities(); ++id) {
    const Split split = id < params.train_identities ? Split::kTrain : Split::kEval;
    int index_in_id = 0;
    for (double pose : params.poses) {
      for (double illum : params.illuminations) {
        const std::uint64_t s = splitmix64(seed + 0x1000003ull * id + index_in_id);
        Sample<T> smp = render_sample<T>(bank, id, pose, illum, false, s, image_side);
        smp.split = split;
        ds.samples.push_back(std::move(smp));
        ++index_in_id;
      }
    }
    Rng occ_rng = Rng(seed).fork(0xacc0 + static_cast<std::uint64_t>(id));
    for (int i = 0; i < params.occluded_per_identity; ++i) {
      const double pose =
          params.poses[static_cast<std::size_t>(occ_rng.uniform_int(
              0, static_cast<long long>(params.poses.size()) - 1))];
      const double illum =
          params.illuminations[static_cast<std::size_t>(occ_rng.uniform_int(
              0, static_cast<long long>(params.illuminations.size()) - 1))];
      const std::uint64_t s = splitmix64(seed + 0x2000003ull * id + i);
      Sample<T> smp = render_sample<T>(bank, id, pose, illum, true, s, image_side);
      smp.split = split;
      ds.samples.push_back(std::move(smp));
      ++index_in_id;
    }
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// On-disk format: manifest.tsv plus one 16-bit PGM per sample.
// Manifest fields, tab-separated, in this fixed order:
//   path  identity_id  pose  illumination  occlusion  split  native_resolution
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

template <typename T>
void write_dataset(const Dataset<T>& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "img");
  std::ofstream man(dir / "manifest.tsv");
  if (!man) throw IoError("write_dataset: cannot write manifest in " + dir.string());
  man << "# fan-dataset v1\n";
  man << "# image_side=" << ds.image_side
      << " train_identities=" << ds.n_train_identities
      << " eval_identities=" << ds.n_eval_identities << "\n";
  man << "# pixel_format=pgm16 lo=-1 hi=1 maxval=65535\n";
  man << "# fields: path\tidentity_id\tpose\tillumination\tocclusion\tsplit\t"
         "native_resolution\n";
  std::map<int, int> per_id_counter;
  for (const Sample<T>& s : ds.samples) {
    char name[64];
    std::snprintf(name, sizeof(name), "img/id%03d_s%03d.pgm", s.identity_id,
                  per_id_counter[s.identity_id]++);
    write_pgm16(dir / name, s.image.pixels);
    man << name << "\t" << s.identity_id << "\t" << format_double(s.pose_deg)
        << "\t" << format_double(s.illumination) << "\t" << (s.occlusion ? 1 : 0)
        << "\t" << split_name(s.split) << "\t" << s.image.native_resolution
        << "\n";
  }
  if (!man) throw IoError("write_dataset: manifest write failed");
}

template <typename T>
Dataset<T> load_dataset(const std::filesystem::path& dir) {
  std::ifstream man(dir / "manifest.tsv");
  if (!man) throw IoError("load_dataset: cannot open manifest in " + dir.string());
  Dataset<T> ds;
  std::string line;
  bool header_seen = false;
  while (std::getline(man, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("# image_side=", 0) == 0) {
        std::sscanf(line.c_str(),
                    "# image_side=%d train_identities=%d eval_identities=%d",
                    &ds.image_side, &ds.n_train_identities,
                    &ds.n_eval_identities);
        header_seen = true;
      }
      continue;
    }
    std::istringstream row(line);
    std::string path, split;
    Sample<T> s;
    int occ = 0;
    if (!(row >> path >> s.identity_id >> s.pose_deg >> s.illumination >> occ >>
          split >> s.image.native_resolution)) {
      throw IoError("load_dataset: malformed manifest row: " + line);
    }
    s.occlusion = occ != 0;
    if (split == "train") {
      s.split = Split::kTrain;
    } else if (split == "eval") {
      s.split = Split::kEval;
    } else {
      throw IoError("load_dataset: unknown split '" + split + "'");
    }
    s.image.pixels = read_pgm16<T>(dir / path);
    ds.samples.push_back(std::move(s));
  }
  if (!header_seen) throw IoError("load_dataset: missing header in manifest");
  ds.validate();
  return ds;
}

}  // namespace fan::datagen
