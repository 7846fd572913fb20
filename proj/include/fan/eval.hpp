#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fan/datagen.hpp"
#include "fan/nets.hpp"
#include "fan/optimizer.hpp"
#include "fan/tape.hpp"

namespace fan::eval {

using datagen::Dataset;
using datagen::DegradationConfig;
using nets::NetConfig;

// ---------------------------------------------------------------------------
// Features and distances
// ---------------------------------------------------------------------------

/// Identity features for a batch; rows unit-L2-normalized unless disabled.
/// The raw (un-normalized) features are what the decoder consumes; the
/// normalized ones are for matching.
template <typename T>
Tensor<T> extract_features(const ParamStore<T>& encoder, const NetConfig& cfg,
                           const Tensor<T>& batch, bool l2_normalize = true) {
  Tensor<T> f = nets::eval_encoder(encoder, cfg, batch);
  if (!l2_normalize) return f;
  const int B = f.shape[0], D = f.shape[1];
  for (int n = 0; n < B; ++n) {
    double s = 0.0;
    for (int j = 0; j < D; ++j) s += double(f.at(n, j)) * f.at(n, j);
    const double nrm = std::sqrt(s);
    if (nrm > 0.0) {
      for (int j = 0; j < D; ++j) f.at(n, j) = static_cast<T>(f.at(n, j) / nrm);
    }
  }
  return f;
}

/// Cosine similarity of two feature rows; zero vectors compare as similarity 0.
template <typename T>
double cosine_similarity(const Tensor<T>& a, int ra, const Tensor<T>& b, int rb) {
  const int D = a.shape[1];
  require(b.shape[1] == D, "cosine_similarity: dim mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int j = 0; j < D; ++j) {
    dot += double(a.at(ra, j)) * b.at(rb, j);
    na += double(a.at(ra, j)) * a.at(ra, j);
    nb += double(b.at(rb, j)) * b.at(rb, j);
  }
  if (na <= 0.0 || nb <= 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

template <typename T>
double cosine_distance(const Tensor<T>& a, int ra, const Tensor<T>& b, int rb) {
  return 1.0 - cosine_similarity(a, ra, b, rb);
}

// ---------------------------------------------------------------------------
// Verification: k-fold threshold protocol on distances
// ---------------------------------------------------------------------------

struct VerificationResult {
  double accuracy = 0.0;
  std::vector<double> fold_accuracy;
};

namespace detail {

/// Candidate thresholds: midpoints of consecutive sorted distances plus one
/// candidate below the minimum and one above the maximum.
inline std::vector<double> threshold_candidates(std::vector<double> d) {
  std::sort(d.begin(), d.end());
  std::vector<double> out;
  out.push_back(d.front() - 1.0);
  for (std::size_t i = 0; i + 1 < d.size(); ++i) {
    out.push_back(0.5 * (d[i] + d[i + 1]));
  }
  out.push_back(d.back() + 1.0);
  return out;
}

/// Pairs classified same iff distance < threshold.
inline double threshold_accuracy(const std::vector<double>& d,
                                 const std::vector<int>& same, double thr) {
  int correct = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const bool predicted_same = d[i] < thr;
    if (predicted_same == (same[i] != 0)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(d.size());
}

}  // namespace detail

/// 10-fold (or k-fold) verification: per fold, the threshold maximizing
/// accuracy on the remaining folds is applied to the held-out fold; ties in
/// the threshold choice break toward the smaller threshold. Folds are
/// contiguous chunks of the pair order. Every fold must contain both classes.
inline VerificationResult verification(const std::vector<double>& distances,
                                       const std::vector<int>& same,
                                       int folds = 10) {
  const std::size_t n = distances.size();
  require(n == same.size(), "verification: size mismatch");
  require(folds >= 2, "verification: need at least 2 folds");
  require(n >= 2 * static_cast<std::size_t>(folds),
          "verification: need >= 2 pairs per fold");

  auto fold_lo = [&](int f) { return n * static_cast<std::size_t>(f) / folds; };
  VerificationResult result;
  for (int f = 0; f < folds; ++f) {
    const std::size_t lo = fold_lo(f), hi = fold_lo(f + 1);
    bool has_pos = false, has_neg = false;
    for (std::size_t i = lo; i < hi; ++i) (same[i] ? has_pos : has_neg) = true;
    require(has_pos && has_neg, "verification: fold without both classes");

    std::vector<double> train_d;
    std::vector<int> train_s;
    std::vector<double> test_d;
    std::vector<int> test_s;
    for (std::size_t i = 0; i < n; ++i) {
      if (i >= lo && i < hi) {
        test_d.push_back(distances[i]);
        test_s.push_back(same[i]);
      } else {
        train_d.push_back(distances[i]);
        train_s.push_back(same[i]);
      }
    }
    double best_thr = 0.0, best_acc = -1.0;
    for (double thr : detail::threshold_candidates(train_d)) {
      const double acc = detail::threshold_accuracy(train_d, train_s, thr);
      if (acc > best_acc) {  // strict: first (smallest) threshold wins ties
        best_acc = acc;
        best_thr = thr;
      }
    }
    result.fold_accuracy.push_back(
        detail::threshold_accuracy(test_d, test_s, best_thr));
  }
  double sum = 0.0;
  for (double a : result.fold_accuracy) sum += a;
  result.accuracy = sum / static_cast<double>(folds);
  return result;
}

// ---------------------------------------------------------------------------
// ROC: TAR at fixed FAR levels, AUC
// ---------------------------------------------------------------------------

struct RocReport {
  // (FAR, TAR) points with FAR and TAR non-decreasing along the sweep.
  std::vector<std::pair<double, double>> points;
  std::map<double, double> tar_at_far;
  double auc = 0.0;
};

/// Scores are similarities (higher = more likely same identity). The ROC is
/// swept over descending unique score thresholds starting from (0,0); accept
/// iff score >= threshold. TAR at a requested FAR interpolates linearly in FAR
/// between bracketing sweep points; exact hits return the point's (maximal)
/// TAR. AUC is the trapezoid area under the polyline.
inline RocReport tar_far_auc(const std::vector<double>& scores_same,
                             const std::vector<double>& scores_diff,
                             const std::vector<double>& far_levels) {
  require(!scores_same.empty() && !scores_diff.empty(),
          "tar_far_auc: empty score sets");
  std::vector<double> thresholds = scores_same;
  thresholds.insert(thresholds.end(), scores_diff.begin(), scores_diff.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<double>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());

  RocReport report;
  report.points.emplace_back(0.0, 0.0);
  const double inv_same = 1.0 / static_cast<double>(scores_same.size());
  const double inv_diff = 1.0 / static_cast<double>(scores_diff.size());
  for (double thr : thresholds) {
    int ns = 0, nd = 0;
    for (double s : scores_same) ns += s >= thr ? 1 : 0;
    for (double s : scores_diff) nd += s >= thr ? 1 : 0;
    report.points.emplace_back(nd * inv_diff, ns * inv_same);
  }

  for (double level : far_levels) {
    double tar = 0.0;
    const auto& pts = report.points;
    std::size_t next = pts.size();
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (pts[i].first > level) {
        next = i;
        break;
      }
    }
    if (next == pts.size()) {
      tar = pts.back().second;  // level >= max FAR
    } else if (next == 0) {
      tar = 0.0;  // level below the first point (cannot happen: first is 0)
    } else {
      const auto& lo = pts[next - 1];
      const auto& hi = pts[next];
      if (lo.first == level) {
        tar = lo.second;
      } else {
        tar = lo.second +
              (hi.second - lo.second) * (level - lo.first) / (hi.first - lo.first);
      }
    }
    report.tar_at_far[level] = tar;
  }

  double auc = 0.0;
  for (std::size_t i = 0; i + 1 < report.points.size(); ++i) {
    const auto& a = report.points[i];
    const auto& b = report.points[i + 1];
    auc += (b.first - a.first) * 0.5 * (a.second + b.second);
  }
  report.auc = auc;
  return report;
}

// ---------------------------------------------------------------------------
// Rank-1 identification
// ---------------------------------------------------------------------------

struct Rank1Result {
  double overall = 0.0;
  std::map<std::string, double> per_bucket;
  std::map<std::string, int> bucket_counts;
};

inline std::string bucket_label(const std::pair<int, int>& b) {
  return std::to_string(b.first) + "-" + std::to_string(b.second);
}

/// Nearest-gallery assignment under cosine distance; ties break toward the
/// lower gallery index. Rates are reported overall and per probe
/// native-resolution bucket.
template <typename T>
Rank1Result rank1_identification(const Tensor<T>& gallery_feats,
                                 const std::vector<int>& gallery_ids,
                                 const Tensor<T>& probe_feats,
                                 const std::vector<int>& probe_ids,
                                 const std::vector<int>& probe_resolutions,
                                 const std::vector<std::pair<int, int>>& buckets) {
  const int G = gallery_feats.shape[0], P = probe_feats.shape[0];
  require(static_cast<int>(gallery_ids.size()) == G, "rank1: gallery id count");
  require(static_cast<int>(probe_ids.size()) == P &&
              static_cast<int>(probe_resolutions.size()) == P,
          "rank1: probe metadata count");
  {
    std::vector<int> ids = gallery_ids;
    std::sort(ids.begin(), ids.end());
    require(std::adjacent_find(ids.begin(), ids.end()) == ids.end(),
            "rank1: gallery ids must be unique");
  }

  std::map<std::string, int> correct_per_bucket, count_per_bucket;
  int correct = 0;
  for (int p = 0; p < P; ++p) {
    int best_g = 0;
    double best_d = cosine_distance(probe_feats, p, gallery_feats, 0);
    for (int g = 1; g < G; ++g) {
      const double d = cosine_distance(probe_feats, p, gallery_feats, g);
      if (d < best_d) {  // strict: earlier gallery index wins ties
        best_d = d;
        best_g = g;
      }
    }
    const bool ok = gallery_ids[static_cast<std::size_t>(best_g)] ==
                    probe_ids[static_cast<std::size_t>(p)];
    correct += ok ? 1 : 0;
    for (const auto& b : buckets) {
      const int r = probe_resolutions[static_cast<std::size_t>(p)];
      if (r >= b.first && r <= b.second) {
        count_per_bucket[bucket_label(b)] += 1;
        correct_per_bucket[bucket_label(b)] += ok ? 1 : 0;
        break;
      }
    }
  }
  Rank1Result result;
  result.overall = P > 0 ? static_cast<double>(correct) / P : 0.0;
  for (const auto& [label, cnt] : count_per_bucket) {
    result.bucket_counts[label] = cnt;
    result.per_bucket[label] =
        static_cast<double>(correct_per_bucket[label]) / cnt;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Linear probes for disentanglement
// ---------------------------------------------------------------------------

struct ProbeReport {
  double acc_identity_f = 0.0;
  double acc_identity_z = 0.0;
  double acc_pose_z = 0.0;
  double chance = 0.0;
  int n_classes = 0;
};

namespace detail {

/// Multinomial logistic probe: fit on even-position samples of every class,
/// report held-out accuracy on the rest. Deterministic.
template <typename T>
double linear_probe_accuracy(const Tensor<T>& feats,
                             const std::vector<int>& labels, int n_classes,
                             std::uint64_t seed) {
  const int N = feats.shape[0], D = feats.shape[1];
  require(static_cast<int>(labels.size()) == N, "probe: label count");
  std::map<int, int> seen;
  std::vector<int> fit_rows, test_rows;
  for (int i = 0; i < N; ++i) {
    const int k = seen[labels[static_cast<std::size_t>(i)]]++;
    (k % 2 == 0 ? fit_rows : test_rows).push_back(i);
  }
  require(!fit_rows.empty() && !test_rows.empty(), "probe: degenerate split");

  auto gather = [&](const std::vector<int>& rows, Tensor<T>& x, std::vector<int>& y) {
    x = Tensor<T>({static_cast<int>(rows.size()), D});
    y.clear();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (int j = 0; j < D; ++j) x.at(static_cast<int>(r), j) = feats.at(rows[r], j);
      y.push_back(labels[static_cast<std::size_t>(rows[r])]);
    }
  };
  Tensor<T> x_fit, x_test;
  std::vector<int> y_fit, y_test;
  gather(fit_rows, x_fit, y_fit);
  gather(test_rows, x_test, y_test);

  Rng rng(seed);
  ParamStore<T> probe("probe");
  probe.add("w", he_uniform<T>({D, n_classes}, D, rng));
  probe.add("b", Tensor<T>::zeros({n_classes}));
  train::AdamHyper<T> hyper;
  hyper.beta1 = T(0.9);
  train::Adam<T> opt(hyper);
  for (int it = 0; it < 200; ++it) {
    Tape<T> t;
    Var<T> logits = t.linear(t.constant(x_fit), t.param(probe, "w"),
                             t.param(probe, "b"));
    Var<T> loss = t.softmax_xent_mean(logits, y_fit);
    t.backward(loss);
    GradMap<T> g = t.grads_for(probe);
    opt.step(T(0.05), probe, g);
  }

  Tape<T> t(false);
  Var<T> logits = t.linear(t.constant(x_test), t.param(probe, "w", ParamMode::kConst),
                           t.param(probe, "b", ParamMode::kConst));
  const Tensor<T>& out = t.val(logits);
  int correct = 0;
  for (int n = 0; n < out.shape[0]; ++n) {
    int arg = 0;
    for (int j = 1; j < n_classes; ++j) {
      if (out.at(n, j) > out.at(n, arg)) arg = j;
    }
    if (arg == y_test[static_cast<std::size_t>(n)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(out.shape[0]);
}

inline int pose_bucket(double pose_deg) {
  if (pose_deg < -10.0) return 0;
  if (pose_deg > 10.0) return 2;
  return 1;
}

}  // namespace detail

/// Trains linear identity probes on f and z separately (same split), plus a
/// pose-bucket probe on z. Labels are remapped to a dense class range; the
/// caller guarantees these samples come from identities the encoders never
/// trained on.
template <typename T>
ProbeReport disentanglement_probe(const Tensor<T>& features_f,
                                  const Tensor<T>& features_z,
                                  const std::vector<int>& identity_labels,
                                  const std::vector<double>& pose_degrees,
                                  std::uint64_t seed = 42) {
  require(features_f.shape[0] == features_z.shape[0], "probe: row mismatch");
  require(features_f.shape[0] == static_cast<int>(identity_labels.size()),
          "probe: label count mismatch");
  std::map<int, int> remap;
  std::vector<int> labels;
  for (int id : identity_labels) {
    auto [it, inserted] = remap.emplace(id, static_cast<int>(remap.size()));
    labels.push_back(it->second);
  }
  const int n_classes = static_cast<int>(remap.size());
  require(n_classes >= 2, "probe: need at least two identities");

  ProbeReport report;
  report.n_classes = n_classes;
  report.chance = 1.0 / n_classes;
  report.acc_identity_f =
      detail::linear_probe_accuracy(features_f, labels, n_classes, seed);
  report.acc_identity_z =
      detail::linear_probe_accuracy(features_z, labels, n_classes, seed + 1);
  if (!pose_degrees.empty()) {
    require(pose_degrees.size() == identity_labels.size(), "probe: pose count");
    std::vector<int> pose_labels;
    for (double p : pose_degrees) pose_labels.push_back(detail::pose_bucket(p));
    report.acc_pose_z =
        detail::linear_probe_accuracy(features_z, pose_labels, 3, seed + 2);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Normalization, transfer, PSNR
// ---------------------------------------------------------------------------

/// Face normalization: decode the (raw) identity features with z = 0. Inputs
/// of any resolution are bicubic-resized to the network side first.
template <typename T>
Image<T> normalize_face(const ParamStore<T>& encoder, const ParamStore<T>& dec,
                        const NetConfig& cfg, const Image<T>& img) {
  validate_image(img);
  Image<T> sized = img;
  if (img.height() != cfg.image_side || img.width() != cfg.image_side) {
    sized = bicubic_resize(img, cfg.image_side);
  }
  Tensor<T> batch = pack_batch<T>({sized});
  Tensor<T> f = nets::eval_encoder(encoder, cfg, batch);
  Tensor<T> out =
      nets::eval_decoder(dec, cfg, f, Tensor<T>::zeros({1, cfg.d_z}));
  return unpack_one(out, 0, cfg.image_side);
}

/// Swaps non-identity features between two images:
/// returns (Dec(f1, z2), Dec(f2, z1)).
template <typename T>
std::pair<Image<T>, Image<T>> feature_transfer(const ParamStore<T>& enc_h,
                                               const ParamStore<T>& enc_z,
                                               const ParamStore<T>& dec,
                                               const NetConfig& cfg,
                                               const Image<T>& img_1,
                                               const Image<T>& img_2) {
  Tensor<T> batch = pack_batch<T>({img_1, img_2});
  Tensor<T> f = nets::eval_encoder(enc_h, cfg, batch);
  Tensor<T> z = nets::eval_encoder(enc_z, cfg, batch);
  Tensor<T> f1z2({2, cfg.d_f}), z_swap({2, cfg.d_z});
  for (int j = 0; j < cfg.d_f; ++j) {
    f1z2.at(0, j) = f.at(0, j);
    f1z2.at(1, j) = f.at(1, j);
  }
  for (int j = 0; j < cfg.d_z; ++j) {
    z_swap.at(0, j) = z.at(1, j);
    z_swap.at(1, j) = z.at(0, j);
  }
  Tensor<T> out = nets::eval_decoder(dec, cfg, f1z2, z_swap);
  return {unpack_one(out, 0, cfg.image_side), unpack_one(out, 1, cfg.image_side)};
}

/// PSNR in dB with peak = 2 (range [-1,1]); capped at the 99 dB sentinel.
template <typename T>
double psnr(const Image<T>& a, const Image<T>& b) {
  require(a.pixels.same_shape(b.pixels), "psnr: shape mismatch");
  double mse = 0.0;
  for (std::int64_t i = 0; i < a.pixels.numel(); ++i) {
    const double d = double(a.pixels[i]) - double(b.pixels[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(a.pixels.numel());
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(4.0 / mse));
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct EvalReport {
  std::string protocol;
  std::vector<std::pair<std::string, std::string>> info;   // fingerprints etc.
  std::vector<std::pair<std::string, double>> metrics;     // ordered rows

  void add_metric(const std::string& name, double value) {
    metrics.emplace_back(name, value);
  }

  double metric(const std::string& name) const {
    for (const auto& [k, v] : metrics) {
      if (k == name) return v;
    }
    throw ValidationError("EvalReport: no metric '" + name + "'");
  }
};

inline void save_report(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("save_report: cannot open " + path.string());
  out << "# fan-eval-report v1\n";
  out << "# protocol=" << report.protocol << "\n";
  for (const auto& [k, v] : report.info) out << "# " << k << "=" << v << "\n";
  char buf[64];
  for (const auto& [k, v] : report.metrics) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << k << "\t" << buf << "\n";
  }
  if (!out) throw IoError("save_report: write failed");
}

inline EvalReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_report: cannot open " + path.string());
  EvalReport report;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (line.rfind("# protocol=", 0) == 0) {
        report.protocol = line.substr(11);
      } else if (eq != std::string::npos && line.size() > 2) {
        report.info.emplace_back(line.substr(2, eq - 2), line.substr(eq + 1));
      }
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw IoError("load_report: malformed row");
    report.metrics.emplace_back(line.substr(0, tab),
                                std::strtod(line.c_str() + tab + 1, nullptr));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Protocol drivers over a dataset's eval split
// ---------------------------------------------------------------------------

struct EvalParams {
  int n_pairs = 300;  // balanced same/different verification pairs
  int folds = 10;
  int fixed_protocol_factor = 8;  // the "8x" fixed-scale verification column
  std::vector<double> far_levels = {0.3, 0.1, 0.01, 0.001};
  int probes_per_sample = 2;
  std::vector<std::pair<int, int>> buckets = {{8, 12}, {13, 20}, {21, 32}};
  std::uint64_t seed = 1234;
};

struct PairRecord {
  int a = 0;
  int b = 0;
  bool same = false;
};

/// Balanced verification pairs over eval identities, interleaved
/// same/different so contiguous folds stay class-balanced.
template <typename T>
std::vector<PairRecord> build_pairs(const Dataset<T>& data, int n_pairs, Rng& rng) {
  const auto groups = data.by_identity(datagen::Split::kEval);
  require(groups.size() >= 2, "build_pairs: need >= 2 eval identities");
  std::vector<int> ids;
  for (const auto& [id, v] : groups) {
    require(v.size() >= 2, "build_pairs: identity with a single sample");
    ids.push_back(id);
  }
  std::vector<PairRecord> pairs;
  for (int i = 0; i < n_pairs; ++i) {
    PairRecord p;
    p.same = i % 2 == 0;
    if (p.same) {
      const int id = ids[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<long long>(ids.size()) - 1))];
      const auto& v = groups.at(id);
      const auto ia = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<long long>(v.size()) - 1));
      auto ib = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<long long>(v.size()) - 2));
      if (ib >= ia) ++ib;
      p.a = v[ia];
      p.b = v[ib];
    } else {
      const auto ka = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<long long>(ids.size()) - 1));
      auto kb = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<long long>(ids.size()) - 2));
      if (kb >= ka) ++kb;
      const auto& va = groups.at(ids[ka]);
      const auto& vb = groups.at(ids[kb]);
      p.a = va[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<long long>(va.size()) - 1))];
      p.b = vb[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<long long>(vb.size()) - 1))];
    }
    pairs.push_back(p);
  }
  return pairs;
}

enum class PairDegradation { kRsa, kFixed };

/// Degrades both pair sides and scores them with the given encoder. The same
/// degraded pixels are used for every encoder evaluated on this pair list, so
/// encoder comparisons see identical inputs.
template <typename T>
struct VerifyInputs {
  std::vector<PairRecord> pairs;
  Tensor<T> side_a;  // [P,1,N,N]
  Tensor<T> side_b;
};

template <typename T>
VerifyInputs<T> degrade_pairs(const Dataset<T>& data,
                              const std::vector<PairRecord>& pairs,
                              const DegradationConfig& dcfg,
                              PairDegradation mode, Rng& rng) {
  std::vector<Image<T>> a, b;
  for (const PairRecord& p : pairs) {
    const Image<T>& ia = data.samples[static_cast<std::size_t>(p.a)].image;
    const Image<T>& ib = data.samples[static_cast<std::size_t>(p.b)].image;
    if (mode == PairDegradation::kRsa) {
      a.push_back(datagen::rsa_degrade(ia, dcfg, rng).first);
      b.push_back(datagen::rsa_degrade(ib, dcfg, rng).first);
    } else {
      a.push_back(datagen::fixed_degrade(ia, dcfg.fixed_factor));
      b.push_back(datagen::fixed_degrade(ib, dcfg.fixed_factor));
    }
  }
  VerifyInputs<T> out;
  out.pairs = pairs;
  out.side_a = pack_batch(a);
  out.side_b = pack_batch(b);
  return out;
}

/// Verification accuracy + ROC for one encoder on prepared pair inputs.
template <typename T>
EvalReport verify_with_encoder(const ParamStore<T>& encoder, const NetConfig& cfg,
                               const VerifyInputs<T>& inputs,
                               const EvalParams& params,
                               const std::string& protocol_name) {
  Tensor<T> fa = extract_features(encoder, cfg, inputs.side_a);
  Tensor<T> fb = extract_features(encoder, cfg, inputs.side_b);
  std::vector<double> distances;
  std::vector<int> same;
  std::vector<double> sims_same, sims_diff;
  for (std::size_t i = 0; i < inputs.pairs.size(); ++i) {
    const double sim = cosine_similarity(fa, static_cast<int>(i), fb, static_cast<int>(i));
    distances.push_back(1.0 - sim);
    same.push_back(inputs.pairs[i].same ? 1 : 0);
    (inputs.pairs[i].same ? sims_same : sims_diff).push_back(sim);
  }
  const VerificationResult ver = verification(distances, same, params.folds);
  const RocReport roc = tar_far_auc(sims_same, sims_diff, params.far_levels);

  EvalReport report;
  report.protocol = protocol_name;
  report.add_metric("accuracy", ver.accuracy);
  for (double level : params.far_levels) {
    report.add_metric("tar@far=" + datagen::format_double(level),
                      roc.tar_at_far.at(level));
  }
  report.add_metric("auc", roc.auc);
  report.add_metric("n_pairs", static_cast<double>(inputs.pairs.size()));
  return report;
}

/// Identification inputs: one canonical HR gallery image per eval identity
/// (front pose, unit gain, unoccluded when available), probes degraded at
/// seeded random scales.
template <typename T>
struct IdentifyInputs {
  Tensor<T> gallery;  // [G,1,N,N]
  std::vector<int> gallery_ids;
  Tensor<T> probes;  // [P,1,N,N]
  std::vector<int> probe_ids;
  std::vector<int> probe_resolutions;
};

template <typename T>
IdentifyInputs<T> build_identification_inputs(const Dataset<T>& data,
                                              const DegradationConfig& dcfg,
                                              int probes_per_sample, Rng& rng) {
  const auto groups = data.by_identity(datagen::Split::kEval);
  require(!groups.empty(), "identification: no eval identities");
  IdentifyInputs<T> out;
  std::vector<Image<T>> gallery_imgs;
  for (const auto& [id, members] : groups) {
    int canonical = members.front();
    for (int idx : members) {
      const auto& s = data.samples[static_cast<std::size_t>(idx)];
      if (!s.occlusion && s.pose_deg == 0.0 && s.illumination == 1.0) {
        canonical = idx;
        break;
      }
    }
    gallery_imgs.push_back(data.samples[static_cast<std::size_t>(canonical)].image);
    out.gallery_ids.push_back(id);
  }
  out.gallery = pack_batch(gallery_imgs);

  std::vector<Image<T>> probe_imgs;
  for (const auto& [id, members] : groups) {
    for (int idx : members) {
      for (int r = 0; r < probes_per_sample; ++r) {
        auto [img, k] = datagen::rsa_degrade(
            data.samples[static_cast<std::size_t>(idx)].image, dcfg, rng);
        probe_imgs.push_back(std::move(img));
        out.probe_ids.push_back(id);
        out.probe_resolutions.push_back(k);
      }
    }
  }
  out.probes = pack_batch(probe_imgs);
  return out;
}

template <typename T>
EvalReport identify_with_encoder(const ParamStore<T>& encoder,
                                 const NetConfig& cfg,
                                 const IdentifyInputs<T>& inputs,
                                 const EvalParams& params) {
  Tensor<T> gf = extract_features(encoder, cfg, inputs.gallery);
  Tensor<T> pf = extract_features(encoder, cfg, inputs.probes);
  const Rank1Result r1 =
      rank1_identification(gf, inputs.gallery_ids, pf, inputs.probe_ids,
                           inputs.probe_resolutions, params.buckets);
  EvalReport report;
  report.protocol = "identify";
  report.add_metric("rank1", r1.overall);
  for (const auto& [label, rate] : r1.per_bucket) {
    report.add_metric("rank1@" + label, rate);
  }
  report.add_metric("n_probes", static_cast<double>(inputs.probe_ids.size()));
  return report;
}

/// Fraction of probes whose normalized face sits closer to the same-identity
/// HR gallery image than the raw degraded probe does, in the HR encoder's
/// feature space. Mirrors the feature-distance figures on the gallery/probe
/// protocol.
template <typename T>
EvalReport feature_distance_report(const ModelSet<T>& models, const NetConfig& cfg,
                                   const IdentifyInputs<T>& inputs) {
  const ParamStore<T>& enc_h = models.at("enc_h");
  const ParamStore<T>& enc_l = models.at("enc_l");
  const ParamStore<T>& dec = models.at("dec");

  Tensor<T> gallery_f = extract_features(enc_h, cfg, inputs.gallery);
  std::map<int, int> gallery_row;
  for (std::size_t g = 0; g < inputs.gallery_ids.size(); ++g) {
    gallery_row[inputs.gallery_ids[g]] = static_cast<int>(g);
  }

  // normalized probes: Dec(raw Enc_L features, 0)
  Tensor<T> probe_raw_f = extract_features(enc_l, cfg, inputs.probes, false);
  Tensor<T> normalized = nets::eval_decoder(
      dec, cfg, probe_raw_f,
      Tensor<T>::zeros({probe_raw_f.shape[0], cfg.d_z}));

  Tensor<T> f_norm = extract_features(enc_h, cfg, normalized);
  Tensor<T> f_input = extract_features(enc_h, cfg, inputs.probes);

  int wins = 0;
  double mean_norm = 0.0, mean_input = 0.0;
  const int P = f_norm.shape[0];
  for (int p = 0; p < P; ++p) {
    const int row = gallery_row.at(inputs.probe_ids[static_cast<std::size_t>(p)]);
    const double d_norm = cosine_distance(f_norm, p, gallery_f, row);
    const double d_input = cosine_distance(f_input, p, gallery_f, row);
    wins += d_norm < d_input ? 1 : 0;
    mean_norm += d_norm;
    mean_input += d_input;
  }
  EvalReport report;
  report.protocol = "feature-distance";
  report.add_metric("win_fraction", static_cast<double>(wins) / P);
  report.add_metric("mean_distance_normalized", mean_norm / P);
  report.add_metric("mean_distance_input", mean_input / P);
  report.add_metric("n_probes", static_cast<double>(P));
  return report;
}

/// Disentanglement probe over eval-split HR images of a stage-1 model family.
template <typename T>
EvalReport probe_protocol(const ModelSet<T>& models, const NetConfig& cfg,
                          const Dataset<T>& data, std::uint64_t seed) {
  const std::vector<int> idx = data.indices(datagen::Split::kEval);
  require(!idx.empty(), "probe_protocol: empty eval split");
  std::vector<Image<T>> imgs;
  std::vector<int> labels;
  std::vector<double> poses;
  for (int i : idx) {
    const auto& s = data.samples[static_cast<std::size_t>(i)];
    imgs.push_back(s.image);
    labels.push_back(s.identity_id);
    poses.push_back(s.pose_deg);
  }
  Tensor<T> batch = pack_batch(imgs);
  Tensor<T> f = extract_features(models.at("enc_h"), cfg, batch);
  Tensor<T> z = extract_features(models.at("enc_z"), cfg, batch);
  const ProbeReport pr = disentanglement_probe(f, z, labels, poses, seed);

  EvalReport report;
  report.protocol = "probe";
  report.add_metric("identity_probe_f", pr.acc_identity_f);
  report.add_metric("identity_probe_z", pr.acc_identity_z);
  report.add_metric("pose_probe_z", pr.acc_pose_z);
  report.add_metric("chance", pr.chance);
  report.add_metric("n_classes", static_cast<double>(pr.n_classes));
  return report;
}

/// PSNR of the plain bicubic pipeline (and of normalization when a stage-2
/// model family is given) against the HR eval images at the fixed factor.
template <typename T>
EvalReport psnr_protocol(const ModelSet<T>* models, const NetConfig& cfg,
                         const Dataset<T>& data, const DegradationConfig& dcfg) {
  const std::vector<int> idx = data.indices(datagen::Split::kEval);
  require(!idx.empty(), "psnr_protocol: empty eval split");
  double sum_bicubic = 0.0, sum_norm = 0.0;
  int n = 0;
  const bool with_norm = models != nullptr && models->count("enc_l") &&
                         models->count("dec");
  for (int i : idx) {
    const Image<T>& hr = data.samples[static_cast<std::size_t>(i)].image;
    const Image<T> degraded = datagen::fixed_degrade(hr, dcfg.fixed_factor);
    sum_bicubic += psnr(degraded, hr);
    if (with_norm) {
      const Image<T> norm = normalize_face(models->at("enc_l"),
                                           models->at("dec"), cfg, degraded);
      sum_norm += psnr(norm, hr);
    }
    ++n;
  }
  EvalReport report;
  report.protocol = "psnr-baseline";
  report.add_metric("psnr_bicubic", sum_bicubic / n);
  if (with_norm) report.add_metric("psnr_normalized", sum_norm / n);
  report.add_metric("n_images", static_cast<double>(n));
  return report;
}

}  // namespace fan::eval
