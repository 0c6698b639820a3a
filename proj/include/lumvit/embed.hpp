#pragma once

#include <cstdint>
#include <vector>

#include "lumvit/dmd.hpp"
#include "lumvit/ops.hpp"
#include "lumvit/tensor.hpp"

namespace lumvit {

// Patch-embedding layer with kernel-level weight binarization. Each of the C
// kernels is a K x K spatial pattern plus a spectral weight vector; in
// binarized mode the pattern is step(w) scaled by the mean positive part of
// the latent weights, so the effective kernel takes exactly the two values
// {0, s_i} a micromirror array can realize.

enum class EmbedMode { full_precision, binarized };

template <class Real>
struct EmbedParams {
  int K = 0;
  int Ch = 0;
  int C = 0;
  Tensor<Real> W;  // latent spatial weights, [K*K, C]
  Tensor<Real> V;  // spectral weights, [C, Ch]
  EmbedMode mode = EmbedMode::full_precision;
  bool layer_level_scale = false;  // ablation: one shared s across kernels

  static EmbedParams init(int K, int Ch, int C, std::mt19937_64& rng, double stddev = 0.02) {
    EmbedParams p;
    p.K = K;
    p.Ch = Ch;
    p.C = C;
    p.W = Tensor<Real>::trunc_normal({static_cast<std::int64_t>(K) * K, C}, stddev, rng);
    p.V = Tensor<Real>::trunc_normal({C, Ch}, stddev, rng);
    return p;
  }
};

// step(w) with step(0) = 1, and the per-kernel scale
// s_i = (1/K^2) * sum_jk max(0, w_jk). Plain (non-autodiff) path.
template <class Real>
void binarize_weights(const std::vector<Real>& W, int K, int C, std::vector<std::uint8_t>& bits,
                      std::vector<double>& s, bool layer_level = false) {
  const int P = K * K;
  if (static_cast<int>(W.size()) != P * C)
    throw DimensionError("binarize_weights: W size != K*K*C");
  bits.assign(W.size(), 0);
  s.assign(static_cast<std::size_t>(C), 0.0);
  for (int p = 0; p < P; ++p)
    for (int j = 0; j < C; ++j) {
      const double w = static_cast<double>(W[static_cast<std::size_t>(p) * C + j]);
      if (w >= 0) bits[static_cast<std::size_t>(p) * C + j] = 1;
      s[static_cast<std::size_t>(j)] += std::max(0.0, w);
    }
  for (int j = 0; j < C; ++j) s[static_cast<std::size_t>(j)] /= static_cast<double>(P);
  if (layer_level) {
    double mean = 0;
    for (int j = 0; j < C; ++j) mean += s[static_cast<std::size_t>(j)];
    mean /= static_cast<double>(C);
    for (int j = 0; j < C; ++j) s[static_cast<std::size_t>(j)] = mean;
  }
}

// Display schedule for the simulator / hardware driver. Scales and spectral
// weights are derived in double so exported files are precision-independent.
template <class Real>
BinaryKernelBank<double> make_bank(const EmbedParams<Real>& params) {
  std::vector<std::uint8_t> bits;
  std::vector<double> s;
  std::vector<Real> w = params.W.values();
  binarize_weights(w, params.K, params.C, bits, s, params.layer_level_scale);
  BinaryKernelBank<double> bank;
  bank.K = params.K;
  bank.C = params.C;
  bank.Ch = params.Ch;
  bank.patterns.resize(static_cast<std::size_t>(params.C));
  for (int j = 0; j < params.C; ++j) {
    auto& pat = bank.patterns[static_cast<std::size_t>(j)];
    pat.K = params.K;
    pat.scale = s[static_cast<std::size_t>(j)];
    pat.bits.resize(static_cast<std::size_t>(params.K) * params.K);
    for (int p = 0; p < params.K * params.K; ++p)
      pat.bits[static_cast<std::size_t>(p)] = bits[static_cast<std::size_t>(p) * params.C + j];
  }
  bank.spectral.resize(static_cast<std::size_t>(params.C) * params.Ch);
  const Real* pv = params.V.data();
  for (std::size_t i = 0; i < bank.spectral.size(); ++i)
    bank.spectral[i] = static_cast<double>(pv[i]);
  return bank;
}

// Effective spatial kernels as a differentiable graph. In binarized mode the
// step path uses the straight-through estimator (unless ste is false, which
// freezes the binary pattern and leaves only the scale path differentiable).
template <class Real>
Tensor<Real> effective_kernels(const EmbedParams<Real>& params, bool ste = true) {
  if (params.mode == EmbedMode::full_precision) return params.W;
  Tensor<Real> wb = ste ? ops::step_ste(params.W) : ops::detach(ops::step_ste(params.W));
  Tensor<Real> s = ops::scale(ops::sum_last(ops::transpose2d(ops::relu(params.W))),
                              1.0 / static_cast<double>(params.K * params.K));
  if (params.layer_level_scale) return ops::mul(wb, ops::mean_all(s));
  return ops::mul_bias(wb, s);
}

// Rows of the patch matrix: one row per patch, pixel-major / channel-minor,
// matching ops::outer_embed. Patch size `k` need not equal params.K (the
// zoom path embeds original pixels against block-summed kernels).
template <class Real>
Tensor<Real> patchify(const Real* image, int H, int W, int Ch, int k) {
  if (H % k != 0 || W % k != 0)
    throw DimensionError("patchify: image dims not divisible by patch size");
  const int rows = H / k, cols = W / k;
  const std::int64_t N = static_cast<std::int64_t>(rows) * cols;
  const std::int64_t stride = static_cast<std::int64_t>(k) * k * Ch;
  Tensor<Real> out = Tensor<Real>::zeros({N, stride});
  Real* po = out.data();
  for (int pi = 0; pi < rows; ++pi)
    for (int pj = 0; pj < cols; ++pj)
      copy_patch(image, H, W, Ch, k, pi, pj, po + (static_cast<std::int64_t>(pi) * cols + pj) * stride);
  return out;
}

// Dense patch-embedding: every (patch, kernel) position computed.
// patches: [R, (K/zoom)^2 * Ch] built by patchify with patch size K/zoom.
// zoom > 1 embeds a nearest-neighbor-enlarged image without materializing
// the enlargement: block-summed kernels against original pixels.
template <class Real>
Tensor<Real> embed_tokens(const Tensor<Real>& patches, const EmbedParams<Real>& params,
                          int zoom = 1, bool ste = true) {
  Tensor<Real> theta = effective_kernels(params, ste);
  if (zoom > 1) theta = ops::blocksum_kernels(theta, params.K, zoom);
  const int kr = params.K / zoom;
  if (patches.dim(1) != static_cast<std::int64_t>(kr) * kr * params.Ch)
    throw DimensionError("embed_tokens: patch row length mismatch");
  Tensor<Real> E = ops::outer_embed(theta, params.V);
  return ops::matmul(patches, E);
}

// Whole-image convenience: Y[N, C] for an H x W x Ch image.
template <class Real>
Tensor<Real> embed_forward(const Real* image, int H, int W, const EmbedParams<Real>& params) {
  Tensor<Real> patches = patchify(image, H, W, params.Ch, params.K);
  return embed_tokens(patches, params);
}

}  // namespace lumvit
