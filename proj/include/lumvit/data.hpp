#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lumvit/errors.hpp"
#include "lumvit/hsc.hpp"
#include "lumvit/rng.hpp"

namespace lumvit {

// Sample extraction, per-band standardization, the synthetic fixture
// generator, and the stage-dependent augmentations.

struct SampleRef {
  int y = 0;
  int x = 0;
  int label = 0;  // 0-based class id
};

struct SampleSet {
  std::vector<SampleRef> samples;
  int num_classes = 0;
};

inline int reflect_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

// window x window x bands patch centered at (cy, cx), reflect-padded at the
// image border.
template <class Real>
void extract_window(const Cube<Real>& cube, int cy, int cx, int window, Real* out) {
  const int half = window / 2;
  for (int dy = 0; dy < window; ++dy) {
    const int y = reflect_index(cy - half + dy, cube.H);
    for (int dx = 0; dx < window; ++dx) {
      const int x = reflect_index(cx - half + dx, cube.W);
      const Real* src = cube.pixel(y, x);
      std::copy_n(src, cube.bands,
                  out + (static_cast<std::int64_t>(dy) * window + dx) * cube.bands);
    }
  }
}

// One sample per labeled pixel (class 0 excluded), split at the pixel level
// with a seeded, per-class (stratified) shuffle. split_ratio is
// (train_parts, val_parts); the paper protocol is (4, 6).
template <class Real>
std::pair<SampleSet, SampleSet> extract_samples(const Cube<Real>& cube, const LabelMap& labels,
                                                int window, std::pair<int, int> split_ratio,
                                                std::uint64_t seed) {
  if (labels.H != cube.H || labels.W != cube.W)
    throw DimensionError("extract_samples: label map dims do not match cube");
  if (window <= 0 || window % 2 == 0)
    throw ValidationError("extract_samples: window must be odd and positive");

  int max_label = 0;
  for (auto v : labels.labels) max_label = std::max(max_label, static_cast<int>(v));
  if (max_label == 0) throw ValidationError("extract_samples: no labeled pixels");

  std::vector<std::vector<SampleRef>> by_class(static_cast<std::size_t>(max_label));
  for (int y = 0; y < labels.H; ++y)
    for (int x = 0; x < labels.W; ++x) {
      const int v = labels.at(y, x);
      if (v == 0) continue;
      by_class[static_cast<std::size_t>(v - 1)].push_back({y, x, v - 1});
    }

  const double train_frac = static_cast<double>(split_ratio.first) /
                            static_cast<double>(split_ratio.first + split_ratio.second);
  SampleSet train, val;
  train.num_classes = val.num_classes = max_label;
  for (int c = 0; c < max_label; ++c) {
    auto& pixels = by_class[static_cast<std::size_t>(c)];
    if (pixels.empty())
      throw ValidationError("extract_samples: class " + std::to_string(c + 1) +
                            " has no labeled pixels");
    auto rng = make_engine(seed, "split", static_cast<std::uint64_t>(c));
    std::shuffle(pixels.begin(), pixels.end(), rng);
    const std::int64_t k = std::llround(train_frac * static_cast<double>(pixels.size()));
    if (k == 0 || k == static_cast<std::int64_t>(pixels.size()))
      throw ValidationError("extract_samples: class " + std::to_string(c + 1) +
                            " would be empty in one split");
    for (std::size_t i = 0; i < pixels.size(); ++i)
      (static_cast<std::int64_t>(i) < k ? train : val).samples.push_back(pixels[i]);
  }
  return {train, val};
}

// Per-band mean/std over the training-split source pixels; applied before
// training and stored with the checkpoint so evaluation matches.
struct BandStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

template <class Real>
BandStats compute_band_stats(const Cube<Real>& cube, const SampleSet& train) {
  BandStats st;
  st.mean.assign(static_cast<std::size_t>(cube.bands), 0.0);
  st.stddev.assign(static_cast<std::size_t>(cube.bands), 0.0);
  for (const auto& s : train.samples) {
    const Real* px = cube.pixel(s.y, s.x);
    for (int b = 0; b < cube.bands; ++b) st.mean[static_cast<std::size_t>(b)] += px[b];
  }
  const double n = static_cast<double>(train.samples.size());
  for (auto& m : st.mean) m /= n;
  for (const auto& s : train.samples) {
    const Real* px = cube.pixel(s.y, s.x);
    for (int b = 0; b < cube.bands; ++b) {
      const double d = static_cast<double>(px[b]) - st.mean[static_cast<std::size_t>(b)];
      st.stddev[static_cast<std::size_t>(b)] += d * d;
    }
  }
  for (auto& v : st.stddev) v = std::max(std::sqrt(v / n), 1e-8);
  return st;
}

template <class Real>
void standardize_window(Real* window, int pixels, const BandStats& st) {
  const int bands = static_cast<int>(st.mean.size());
  for (int p = 0; p < pixels; ++p)
    for (int b = 0; b < bands; ++b) {
      Real& v = window[static_cast<std::int64_t>(p) * bands + b];
      v = static_cast<Real>((static_cast<double>(v) - st.mean[static_cast<std::size_t>(b)]) /
                            st.stddev[static_cast<std::size_t>(b)]);
    }
}

// Nearest-neighbor integer upsample: out[z*i+a, z*j+b] = in[i, j].
template <class Real>
std::vector<Real> upsample_nn(const Real* in, int h, int w, int ch, int z) {
  std::vector<Real> out(static_cast<std::size_t>(h) * z * w * z * ch);
  const int W2 = w * z;
  for (int y = 0; y < h * z; ++y) {
    const int sy = y / z;
    for (int x = 0; x < W2; ++x) {
      const int sx = x / z;
      std::copy_n(in + (static_cast<std::int64_t>(sy) * w + sx) * ch, ch,
                  out.data() + (static_cast<std::int64_t>(y) * W2 + x) * ch);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic hyperspectral fixture: per class a mixture of three Gaussian
// spectral bumps (centers confined to a class-reserved band range, so class
// spectra have essentially disjoint support), blended by spatially smooth,
// sharply-peaked abundance fields. Pixels without a dominant class stay
// unlabeled.
// ---------------------------------------------------------------------------

struct SynthConfig {
  int num_classes = 8;
  int bands = 64;
  int size = 96;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

inline std::pair<Cube<float>, LabelMap> gen_synthetic(const SynthConfig& cfg) {
  if (cfg.num_classes < 2) throw ValidationError("gen_synthetic: need at least 2 classes");
  if (cfg.bands < cfg.num_classes) throw ValidationError("gen_synthetic: need bands >= classes");
  if (cfg.noise_sigma < 0) throw ValidationError("gen_synthetic: negative noise");
  const int K = cfg.num_classes, B = cfg.bands, S = cfg.size;

  // Class spectral signatures.
  std::vector<std::vector<double>> sig(static_cast<std::size_t>(K),
                                       std::vector<double>(static_cast<std::size_t>(B), 0.0));
  {
    auto rng = make_engine(cfg.seed, "synth-spectra");
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double span = static_cast<double>(B) / K;
    for (int k = 0; k < K; ++k)
      for (int bump = 0; bump < 3; ++bump) {
        const double center = span * k + span * (0.15 + 0.7 * uni(rng));
        const double width = span * (0.05 + 0.10 * uni(rng));
        const double amp = 0.5 + 0.5 * uni(rng);
        for (int b = 0; b < B; ++b) {
          const double d = (b - center) / width;
          sig[static_cast<std::size_t>(k)][static_cast<std::size_t>(b)] +=
              amp * std::exp(-0.5 * d * d);
        }
      }
  }

  // Smooth class score fields: sums of random spatial Gaussian blobs.
  std::vector<std::vector<double>> score(static_cast<std::size_t>(K),
                                         std::vector<double>(static_cast<std::size_t>(S) * S, 0.0));
  {
    auto rng = make_engine(cfg.seed, "synth-fields");
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int k = 0; k < K; ++k)
      for (int blob = 0; blob < 6; ++blob) {
        const double cy = S * uni(rng), cx = S * uni(rng);
        const double r = S * (0.10 + 0.20 * uni(rng));
        const double amp = 0.5 + 0.5 * uni(rng);
        for (int y = 0; y < S; ++y)
          for (int x = 0; x < S; ++x) {
            const double d2 = ((y - cy) * (y - cy) + (x - cx) * (x - cx)) / (r * r);
            score[static_cast<std::size_t>(k)][static_cast<std::size_t>(y) * S + x] +=
                amp * std::exp(-0.5 * d2);
          }
      }
  }

  Cube<float> cube;
  cube.H = cube.W = S;
  cube.bands = cube.source_bands = B;
  for (int b = 0; b < B; ++b) cube.band_mask.push_back(b);
  cube.data.assign(static_cast<std::size_t>(S) * S * B, 0.0f);
  LabelMap labels;
  labels.H = labels.W = S;
  labels.labels.assign(static_cast<std::size_t>(S) * S, 0);

  auto noise_rng = make_engine(cfg.seed, "synth-noise");
  std::normal_distribution<double> gauss(0.0, 1.0);
  constexpr double kSharpness = 0.05;  // abundance softmax temperature
  std::vector<double> abundance(static_cast<std::size_t>(K));
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * S + x;
      double mx = -1e300;
      int top = 0;
      for (int k = 0; k < K; ++k)
        if (score[static_cast<std::size_t>(k)][p] > mx) {
          mx = score[static_cast<std::size_t>(k)][p];
          top = k;
        }
      double denom = 0;
      for (int k = 0; k < K; ++k) {
        abundance[static_cast<std::size_t>(k)] =
            std::exp((score[static_cast<std::size_t>(k)][p] - mx) / kSharpness);
        denom += abundance[static_cast<std::size_t>(k)];
      }
      for (int k = 0; k < K; ++k) abundance[static_cast<std::size_t>(k)] /= denom;
      if (abundance[static_cast<std::size_t>(top)] >= 0.99)
        labels.labels[p] = static_cast<std::uint16_t>(top + 1);
      float* px = cube.data.data() + p * static_cast<std::size_t>(B);
      for (int b = 0; b < B; ++b) {
        double v = 0;
        for (int k = 0; k < K; ++k)
          v += abundance[static_cast<std::size_t>(k)] *
               sig[static_cast<std::size_t>(k)][static_cast<std::size_t>(b)];
        if (cfg.noise_sigma > 0) v += cfg.noise_sigma * gauss(noise_rng);
        px[b] = static_cast<float>(v);
      }
    }
  return {cube, labels};
}

// ---------------------------------------------------------------------------
// Augmentations (mixup, cutmix, random erase, label smoothing).
// ---------------------------------------------------------------------------

struct AugmentConfig {
  double label_smoothing = 0.1;
  double random_erase_p = 0.0;
  double mixup_alpha = 0.0;
  double cutmix_alpha = 0.0;

  bool mixing_active() const { return mixup_alpha > 0.0 || cutmix_alpha > 0.0; }
};

namespace detail {
inline double sample_beta(double alpha, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(alpha, 1.0);
  const double x = g(rng);
  const double y = g(rng);
  return x / (x + y);
}
}  // namespace detail

// In-place batch augmentation over h x w x ch inputs with hard labels;
// returns soft labels [B * num_classes] with smoothing folded in. Partner
// pairing for mixup/cutmix is the reversed batch. When both mixup and cutmix
// are active one of them is chosen per batch with equal probability.
template <class Real>
std::vector<Real> augment_batch(std::vector<std::vector<Real>>& inputs, int h, int w, int ch,
                                const std::vector<int>& hard_labels, int num_classes,
                                const AugmentConfig& cfg, std::mt19937_64& rng) {
  const std::size_t B = inputs.size();
  if (hard_labels.size() != B) throw DimensionError("augment_batch: labels size mismatch");
  if (cfg.mixing_active() && B < 2)
    throw ValidationError("augment_batch: mixup/cutmix need batch size >= 2");
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  // Soft labels start as one-hot.
  std::vector<double> soft(B * static_cast<std::size_t>(num_classes), 0.0);
  for (std::size_t i = 0; i < B; ++i)
    soft[i * num_classes + static_cast<std::size_t>(hard_labels[i])] = 1.0;

  enum class Mix { none, mixup, cutmix };
  Mix mode = Mix::none;
  if (cfg.mixup_alpha > 0 && cfg.cutmix_alpha > 0)
    mode = uni(rng) < 0.5 ? Mix::mixup : Mix::cutmix;
  else if (cfg.mixup_alpha > 0)
    mode = Mix::mixup;
  else if (cfg.cutmix_alpha > 0)
    mode = Mix::cutmix;

  if (mode == Mix::mixup) {
    const double lam = detail::sample_beta(cfg.mixup_alpha, rng);
    std::vector<std::vector<Real>> orig = inputs;
    for (std::size_t i = 0; i < B; ++i) {
      const std::size_t j = B - 1 - i;
      for (std::size_t p = 0; p < inputs[i].size(); ++p)
        inputs[i][p] = static_cast<Real>(lam * orig[i][p] + (1.0 - lam) * orig[j][p]);
    }
    std::vector<double> mixed(soft.size());
    for (std::size_t i = 0; i < B; ++i) {
      const std::size_t j = B - 1 - i;
      for (int k = 0; k < num_classes; ++k)
        mixed[i * num_classes + static_cast<std::size_t>(k)] =
            lam * soft[i * num_classes + static_cast<std::size_t>(k)] +
            (1.0 - lam) * soft[j * num_classes + static_cast<std::size_t>(k)];
    }
    soft = std::move(mixed);
  } else if (mode == Mix::cutmix) {
    const double lam = detail::sample_beta(cfg.cutmix_alpha, rng);
    const double ratio = std::sqrt(1.0 - lam);
    int rh = static_cast<int>(std::lround(h * ratio));
    int rw = static_cast<int>(std::lround(w * ratio));
    rh = std::clamp(rh, 0, h);
    rw = std::clamp(rw, 0, w);
    const int cy = static_cast<int>(uni(rng) * h);
    const int cx = static_cast<int>(uni(rng) * w);
    const int y0 = std::clamp(cy - rh / 2, 0, h), y1 = std::clamp(cy + (rh + 1) / 2, 0, h);
    const int x0 = std::clamp(cx - rw / 2, 0, w), x1 = std::clamp(cx + (rw + 1) / 2, 0, w);
    const double cut_frac =
        static_cast<double>((y1 - y0) * (x1 - x0)) / (static_cast<double>(h) * w);
    std::vector<std::vector<Real>> orig = inputs;
    for (std::size_t i = 0; i < B; ++i) {
      const std::size_t j = B - 1 - i;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
          std::copy_n(orig[j].data() + (static_cast<std::int64_t>(y) * w + x) * ch, ch,
                      inputs[i].data() + (static_cast<std::int64_t>(y) * w + x) * ch);
    }
    std::vector<double> mixed(soft.size());
    for (std::size_t i = 0; i < B; ++i) {
      const std::size_t j = B - 1 - i;
      for (int k = 0; k < num_classes; ++k)
        mixed[i * num_classes + static_cast<std::size_t>(k)] =
            (1.0 - cut_frac) * soft[i * num_classes + static_cast<std::size_t>(k)] +
            cut_frac * soft[j * num_classes + static_cast<std::size_t>(k)];
    }
    soft = std::move(mixed);
  }

  if (cfg.random_erase_p > 0) {
    for (std::size_t i = 0; i < B; ++i) {
      if (uni(rng) >= cfg.random_erase_p) continue;
      const double area = (0.02 + uni(rng) * (1.0 / 3 - 0.02)) * h * w;
      const double aspect = std::exp(std::log(0.3) + uni(rng) * (std::log(3.3) - std::log(0.3)));
      int rh = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 1, h);
      int rw = std::clamp(static_cast<int>(std::lround(std::sqrt(area / aspect))), 1, w);
      const int y0 = static_cast<int>(uni(rng) * (h - rh + 1));
      const int x0 = static_cast<int>(uni(rng) * (w - rw + 1));
      for (int y = y0; y < y0 + rh; ++y)
        for (int x = x0; x < x0 + rw; ++x)
          std::fill_n(inputs[i].data() + (static_cast<std::int64_t>(y) * w + x) * ch, ch, Real(0));
    }
  }

  // Label smoothing: (1 - eps) * soft + eps / K.
  std::vector<Real> out(soft.size());
  const double eps = cfg.label_smoothing;
  for (std::size_t i = 0; i < soft.size(); ++i)
    out[i] = static_cast<Real>((1.0 - eps) * soft[i] + eps / num_classes);
  return out;
}

}  // namespace lumvit
