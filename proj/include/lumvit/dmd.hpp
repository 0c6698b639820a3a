#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "lumvit/errors.hpp"
#include "lumvit/rng.hpp"

namespace lumvit {

// Simulator of the optical acquisition front end: a micromirror array
// displays a binary pattern, the detector reads one intensity per spectral
// channel. One displayed pattern + one read = one operation; the operation
// count is the quantity the under-sampling mask is meant to reduce, so the
// simulator accounts for it exactly.

struct BinaryPattern {
  int K = 0;
  std::vector<std::uint8_t> bits;  // K*K values in {0,1}, row-major
  double scale = 1.0;              // nonnegative, applied post-modulation

  void validate() const {
    if (static_cast<int>(bits.size()) != K * K)
      throw DimensionError("BinaryPattern: bits size != K*K");
    for (auto b : bits)
      if (b > 1) throw ValidationError("BinaryPattern: bits must be 0 or 1");
    if (scale < 0) throw ValidationError("BinaryPattern: scale must be nonnegative");
  }
};

// The full display schedule: C spatial patterns with per-kernel scales, plus
// one spectral weight vector per kernel.
template <class Real>
struct BinaryKernelBank {
  int K = 0;
  int C = 0;
  int Ch = 0;
  std::vector<BinaryPattern> patterns;  // C entries
  std::vector<Real> spectral;           // C x Ch row-major (v_j)
};

template <class Real>
struct AcquisitionResult {
  std::int64_t N = 0;
  std::int64_t C = 0;
  std::vector<Real> tokens;          // N*C, zeros at bypassed positions
  std::vector<std::uint8_t> validity;  // N*C, mirrors the mask
  std::int64_t op_count = 0;
};

enum class NoiseKind { none, additive_gaussian };

struct NoiseModel {
  NoiseKind kind = NoiseKind::none;
  double sigma = 0.0;  // relative standard deviation

  void validate() const {
    if (sigma < 0) throw ValidationError("NoiseModel: sigma must be nonnegative");
  }
};

// One DMD operation: spatial binary modulation shared across all channels,
// optical sum per channel, then the kernel scale.
// patch layout: K*K*Ch, pixel-major (row-major spatial), channel-minor.
// Accumulation is in double regardless of Real: the simulator is the
// reference arithmetic the trained network is checked against.
template <class Real>
void dmd_apply(const Real* patch, int K, int Ch, const BinaryPattern& pattern, Real* out,
               std::int64_t* op_counter = nullptr) {
  if (pattern.K != K) throw DimensionError("dmd_apply: pattern size does not match patch");
  std::vector<double> acc(static_cast<std::size_t>(Ch), 0.0);
  for (int p = 0; p < K * K; ++p) {
    if (!pattern.bits[static_cast<std::size_t>(p)]) continue;
    const Real* px = patch + static_cast<std::int64_t>(p) * Ch;
    for (int c = 0; c < Ch; ++c) acc[static_cast<std::size_t>(c)] += static_cast<double>(px[c]);
  }
  for (int c = 0; c < Ch; ++c)
    out[c] = static_cast<Real>(acc[static_cast<std::size_t>(c)] * pattern.scale);
  if (op_counter) ++(*op_counter);
}

template <class Real>
std::vector<Real> dmd_apply(const std::vector<Real>& patch, int K, int Ch,
                            const BinaryPattern& pattern, std::int64_t* op_counter = nullptr) {
  if (static_cast<std::int64_t>(patch.size()) != static_cast<std::int64_t>(K) * K * Ch)
    throw DimensionError("dmd_apply: patch size != K*K*Ch");
  std::vector<Real> out(static_cast<std::size_t>(Ch));
  dmd_apply(patch.data(), K, Ch, pattern, out.data(), op_counter);
  return out;
}

// Copies patch (pi, pj) of an H x W x Ch image into K*K*Ch pixel-major form.
template <class Real>
void copy_patch(const Real* image, int H, int W, int Ch, int K, int pi, int pj, Real* out) {
  (void)H;
  for (int a = 0; a < K; ++a) {
    const Real* src = image + ((static_cast<std::int64_t>(pi) * K + a) * W +
                               static_cast<std::int64_t>(pj) * K) * Ch;
    std::copy_n(src, static_cast<std::int64_t>(K) * Ch, out + static_cast<std::int64_t>(a) * K * Ch);
  }
}

// Masked acquisition of a whole image. For each retained (patch, kernel)
// position one DMD operation runs and the channel reads are folded with the
// kernel's spectral weights; bypassed positions never touch the device.
//
// mask may be null (acquire everything). Layout: N*C, patch-major.
template <class Real>
AcquisitionResult<Real> acquire(const Real* image, int H, int W, int Ch,
                                const BinaryKernelBank<Real>& bank,
                                const std::uint8_t* mask = nullptr) {
  if (bank.Ch != Ch) throw DimensionError("acquire: channel count mismatch");
  if (H % bank.K != 0 || W % bank.K != 0)
    throw DimensionError("acquire: image dims " + std::to_string(H) + "x" + std::to_string(W) +
                         " not divisible by patch size " + std::to_string(bank.K));
  if (static_cast<int>(bank.patterns.size()) != bank.C)
    throw DimensionError("acquire: bank pattern count != C");
  const int K = bank.K;
  const int rows = H / K, cols = W / K;
  const std::int64_t N = static_cast<std::int64_t>(rows) * cols;
  const std::int64_t C = bank.C;

  AcquisitionResult<Real> res;
  res.N = N;
  res.C = C;
  res.tokens.assign(static_cast<std::size_t>(N * C), Real(0));
  res.validity.assign(static_cast<std::size_t>(N * C), 0);

  std::vector<Real> patch(static_cast<std::size_t>(K) * K * Ch);
  std::vector<Real> reads(static_cast<std::size_t>(Ch));
  std::int64_t ops = 0;
  for (int pi = 0; pi < rows; ++pi)
    for (int pj = 0; pj < cols; ++pj) {
      const std::int64_t i = static_cast<std::int64_t>(pi) * cols + pj;
      bool patch_needed = false;
      for (std::int64_t j = 0; j < C; ++j)
        if (mask == nullptr || mask[i * C + j]) {
          patch_needed = true;
          break;
        }
      if (!patch_needed) continue;
      copy_patch(image, H, W, Ch, K, pi, pj, patch.data());
      for (std::int64_t j = 0; j < C; ++j) {
        if (mask != nullptr && !mask[i * C + j]) continue;
        dmd_apply(patch.data(), K, Ch, bank.patterns[static_cast<std::size_t>(j)], reads.data(),
                  &ops);
        const Real* v = bank.spectral.data() + j * Ch;
        double dot = 0;
        for (int c = 0; c < Ch; ++c) dot += static_cast<double>(reads[static_cast<std::size_t>(c)]) *
                                            static_cast<double>(v[c]);
        res.tokens[static_cast<std::size_t>(i * C + j)] = static_cast<Real>(dot);
        res.validity[static_cast<std::size_t>(i * C + j)] = 1;
      }
    }
  res.op_count = ops;
  return res;
}

// Relative Gaussian perturbation of the retained reads; bypassed positions
// stay exactly zero. Seeded and deterministic.
template <class Real>
AcquisitionResult<Real> apply_noise(AcquisitionResult<Real> result, const NoiseModel& model,
                                    std::mt19937_64& rng) {
  model.validate();
  if (model.kind == NoiseKind::none || model.sigma == 0.0) return result;
  std::normal_distribution<double> dist(0.0, 1.0);
  for (std::size_t i = 0; i < result.tokens.size(); ++i) {
    if (!result.validity[i]) continue;
    const double v = static_cast<double>(result.tokens[i]);
    result.tokens[i] = static_cast<Real>(v + model.sigma * std::abs(v) * dist(rng));
  }
  return result;
}

}  // namespace lumvit
